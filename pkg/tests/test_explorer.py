from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GraphSketch, accel
from sramgate.errors import InfeasibleError, ValidationError
from sramgate.explorer import (
    CHAR_COLUMNS,
    CharEntry,
    GatingMode,
    GatingPolicy,
    MemCharacterization,
    SynthBase,
    apply_gating,
    breakeven_met,
    dynamic_energy,
    leakage_energy,
    load_characterization,
    size_sram,
    sweep,
    sweep_from_csv,
    sweep_multilevel,
    sweep_to_csv,
    switching_energy,
    synth_characterization,
    synth_grid,
)
from sramgate.hardware import MiB
from sramgate.memory import AccessStats, OccupancyTrace, Segment
from sramgate.traces import BankActivityTimeline, BankingParams, TimelineSegment, bank_activity
from sramgate.workload import OpKind

HEADER = ",".join(CHAR_COLUMNS)
CAPS = [c * MiB for c in (48, 64, 80, 96, 112, 128)]
BANKS = [1, 2, 4, 8, 16, 32]


def entry(p_leak=1.0, e_sw=40.0, e_read=10.0, e_write=15.0, t_access=2.0, area=1.0):
    return CharEntry(e_read, e_write, p_leak, e_sw, t_access, area)


def timeline(banks, rows, alpha=1.0):
    return BankActivityTimeline(BankingParams(banks * 64, banks, alpha), [TimelineSegment(*r) for r in rows])


def trace_of(capacity, rows):
    segs, t = [], 0
    for dur, n, o in rows:
        segs.append(Segment(t, dur, n, o))
        t += dur
    return OccupancyTrace(capacity, segs)


# -- characterization ------------------------------------------------------------


def test_full_grid_loads_36_entries():
    char = load_characterization(synth_grid(CAPS, BANKS).to_csv())
    assert len(char.entries) == 36
    assert char.missing(CAPS, BANKS) == []
    assert char.get(64 * MiB, 4) == synth_characterization(64 * MiB, 4)


@pytest.mark.parametrize("text, message", [
    ("", "no entries"),
    (HEADER + "\n", "no entries"),
    ("capacity,banks\n1,1\n", "header"),
    (HEADER + "\n1024,1,1,1,1,1,1\n", "expected 8 fields"),
    (HEADER + "\n1024,one,1,1,1,1,1,1\n", "malformed"),
    (HEADER + "\n1024,1,1,1,-1,1,1,1\n", "p_leak_bank_mw"),
    (HEADER + "\n1024,1,1,1,nan,1,1,1\n", "finite"),
    (HEADER + f"\n{64 * MiB},4,1,1,1,1,1,1\n{64 * MiB},4,2,2,2,2,2,2\n", r"duplicate entry \(C=64 MiB, B=4\)"),
])
def test_bad_characterizations(text, message):
    with pytest.raises(ValidationError, match=message):
        load_characterization(text)


def test_missing_entry_is_named():
    with pytest.raises(ValidationError, match=r"\(C=80 MiB, B=16\)"):
        MemCharacterization().get(80 * MiB, 16)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(CAPS), st.sampled_from(BANKS[:-1]))
def test_synthetic_scaling(capacity, banks):
    base = SynthBase()
    one, two = synth_characterization(capacity, banks), synth_characterization(capacity, 2 * banks)
    assert two.p_leak_bank_mw == pytest.approx(one.p_leak_bank_mw / 2)
    assert two.p_leak_bank_mw * 2 * banks == pytest.approx(one.p_leak_bank_mw * banks)
    assert two.t_access_ns == pytest.approx(one.t_access_ns / math.sqrt(2))
    assert two.area_mm2 - one.area_mm2 == pytest.approx(base.bank_overhead_mm2 * banks)
    # gating a bank breaks even after the configured idle time
    assert 2 * one.e_sw_bank_pj == pytest.approx(one.p_leak_bank_mw * base.breakeven_ns)


def test_synthetic_area_is_linear_in_capacity_plus_bank_overhead():
    a64, a128 = synth_characterization(64 * MiB, 8), synth_characterization(128 * MiB, 8)
    assert a64.area_mm2 == 17 * 64 + 4 * 8
    assert a128.area_mm2 == 2 * a64.area_mm2 - 4 * 8
    assert a128.area_mm2 / a64.area_mm2 == pytest.approx(1.97, abs=0.01)


def test_synthetic_unbanked_reference():
    e = synth_characterization(64 * MiB, 1)
    assert (e.e_read_pj, e.e_write_pj) == (1100.0, 1200.0)
    assert e.p_leak_bank_mw == 48_000.0


# -- energy terms ------------------------------------------------------------------


@pytest.mark.parametrize("reads, writes, e_r, e_w, pj", [
    (0, 0, 10, 15, 0), (1000, 500, 10, 15, 17_500), (1, 0, 7, 0, 7),
])
def test_dynamic_energy(reads, writes, e_r, e_w, pj):
    assert dynamic_energy(AccessStats(reads, writes), entry(e_read=e_r, e_write=e_w)) == pj


def test_breakeven_examples():
    assert breakeven_met(100, entry(p_leak=1.0, e_sw=40.0))  # 100 > 80
    assert not breakeven_met(100, entry(p_leak=1.0, e_sw=60.0))  # 100 <= 120
    assert not breakeven_met(100, entry(p_leak=1.0, e_sw=50.0))  # boundary is not gated


def test_gating_at_breakeven_boundary_is_skipped():
    tl = timeline(2, [(0, 100, 1), (100, 10, 2)])
    out = apply_gating(tl, GatingPolicy.conservative(0.9), entry(p_leak=1.0, e_sw=50.0))
    assert out.gated == [] and len(out.skipped) == 1 and out.n_sw == 0
    out = apply_gating(tl, GatingPolicy.conservative(0.9), entry(p_leak=1.0, e_sw=40.0))
    assert len(out.gated) == 1 and out.n_sw == 2
    assert out.on_timeline.segments == [TimelineSegment(0, 100, 1), TimelineSegment(100, 10, 2)]


def test_no_gating_keeps_every_bank_on():
    tl = timeline(4, [(0, 30, 0), (30, 20, 3)])
    out = apply_gating(tl, GatingPolicy.none(), entry())
    assert out.on_timeline.segments == [TimelineSegment(0, 50, 4)] and out.n_sw == 0
    assert leakage_energy(out.on_timeline, entry(p_leak=2.5)) == 2.5 * 4 * 50


def test_leakage_example():
    tl = timeline(2, [(0, 10, 2), (10, 5, 1)])
    assert leakage_energy(tl, entry(p_leak=1.0)) == 25.0
    assert leakage_energy(timeline(2, []), entry()) == 0.0


def test_switching_energy():
    assert switching_energy(0, entry(e_sw=50)) == 0
    assert switching_energy(10, entry(e_sw=50)) == 500
    with pytest.raises(ValidationError):
        switching_energy(-1, entry())


def test_wake_latency_counts_banks_waking_together():
    tl = timeline(4, [(0, 500, 1), (500, 100, 4), (600, 500, 3), (1100, 10, 4)])
    out = apply_gating(tl, GatingPolicy.aggressive(), entry(e_sw=0.0))
    assert out.max_simultaneous_wakeups == 3


@pytest.mark.parametrize("label, policy", [
    ("none", GatingPolicy.none()),
    ("aggressive", GatingPolicy.aggressive()),
    ("conservative@0.8", GatingPolicy.conservative(0.8)),
    ("conservative", GatingPolicy.conservative(0.9)),
])
def test_policy_labels(label, policy):
    assert GatingPolicy.from_label(label) == policy
    assert GatingPolicy.from_label(policy.label) == policy


@pytest.mark.parametrize("kwargs", [
    dict(mode=GatingMode.AGGRESSIVE, alpha=0.9),
    dict(mode=GatingMode.CONSERVATIVE, alpha=1.0, enforce_breakeven=True),
    dict(mode=GatingMode.CONSERVATIVE, alpha=0.9, enforce_breakeven=False),
])
def test_policy_invariants(kwargs):
    with pytest.raises(ValidationError):
        GatingPolicy(**kwargs)


def test_unknown_policy_label():
    with pytest.raises(ValidationError, match="unknown gating policy"):
        GatingPolicy.from_label("sometimes")


# -- oracle and properties ---------------------------------------------------------


@st.composite
def cases(draw):
    banks = draw(st.sampled_from([1, 2, 4, 8]))
    capacity = banks * draw(st.integers(1, 32))
    rows = draw(st.lists(st.tuples(st.integers(1, 40), st.integers(0, capacity)), min_size=1, max_size=10))
    trace = trace_of(capacity, [(d, n, 0) for d, n in rows])
    e = entry(
        p_leak=draw(st.sampled_from([0.5, 1.0, 3.0])),
        e_sw=draw(st.sampled_from([0.0, 5.0, 20.0, 30.0])),
        e_read=draw(st.sampled_from([1.0, 10.0])),
    )
    policy = draw(st.sampled_from([GatingPolicy.none(), GatingPolicy.aggressive(),
                                   GatingPolicy.conservative(0.6), GatingPolicy.conservative(0.9)]))
    return trace, capacity, banks, e, policy


def brute_leakage(trace, capacity, banks, e, policy):
    """Integrate leakage one nanosecond at a time from the raw trace."""
    end = trace.segments[-1].t_end
    if policy.mode is GatingMode.NONE:
        return e.p_leak_bank_mw * banks * end
    per_bank = Fraction(str(policy.alpha)) * Fraction(capacity, banks)
    needed = [s.needed for s in trace.segments for _ in range(s.duration)]
    active = []
    for o in needed:
        k = 0
        while k < banks and k * per_bank < o:
            k += 1
        active.append(k)
    on_ns = 0
    for j in range(banks):
        t = 0
        while t < end:
            if active[t] > j:
                on_ns += 1
                t += 1
                continue
            run = t
            while run < end and active[run] <= j:
                run += 1
            length = run - t
            gate = not policy.enforce_breakeven or length * e.p_leak_bank_mw > 2 * e.e_sw_bank_pj
            if not gate:
                on_ns += length
            t = run
    return e.p_leak_bank_mw * on_ns


@settings(max_examples=400, deadline=None)
@given(cases())
def test_leakage_matches_nanosecond_integration(case):
    trace, capacity, banks, e, policy = case
    params = BankingParams(capacity, banks, policy.alpha)
    out = apply_gating(bank_activity(trace, params), policy, e)
    out.on_timeline.validate()
    assert leakage_energy(out.on_timeline, e) == pytest.approx(brute_leakage(*case), rel=1e-12)
    assert out.n_sw == 2 * len(out.gated)
    # gating never leaves a bank off while it is required
    for t in range(trace.segments[-1].t_end):
        assert out.on_timeline.at(t) >= bank_activity(trace, params).at(t)


@settings(max_examples=200, deadline=None)
@given(cases())
def test_policy_ordering_and_energy_identity(case):
    trace, capacity, banks, e, _ = case
    stats = AccessStats(reads=123, writes=45)
    char = MemCharacterization({(capacity, banks): e})
    if banks != 1:
        char.entries[(capacity, 1)] = e
    pols = [GatingPolicy.none(), GatingPolicy.aggressive(), GatingPolicy.conservative(0.9)]
    rows = {r.policy.mode: r for r in sweep(trace, stats, [capacity], [banks], pols, char)}
    none, aggr, cons = rows[GatingMode.NONE], rows[GatingMode.AGGRESSIVE], rows[GatingMode.CONSERVATIVE]
    assert aggr.e_leak_mj <= cons.e_leak_mj <= none.e_leak_mj
    assert cons.e_tot_mj <= none.e_tot_mj
    assert none.e_sw_mj == 0 <= aggr.e_sw_mj
    assert none.e_dyn_mj == aggr.e_dyn_mj == cons.e_dyn_mj
    for r in rows.values():
        assert r.e_tot_mj == r.e_dyn_mj + r.e_leak_mj + r.e_sw_mj


# -- sweeps ------------------------------------------------------------------------


SAW = trace_of(64 * MiB, [(1000, 10 * MiB, 0), (3000, 40 * MiB, 0), (2000, 5 * MiB, 2 * MiB)])
STATS = AccessStats(reads=10_000, writes=5_000)


def test_single_unbanked_candidate_is_its_own_reference():
    (r,) = sweep(SAW, STATS, [64 * MiB], [1], [GatingPolicy.none()], synth_grid([64 * MiB], [1]))
    assert (r.d_e_pct, r.d_a_pct) == (0.0, 0.0)


def test_sweep_orders_by_capacity_banks_policy():
    caps, banks = [80 * MiB, 64 * MiB], [4, 1, 2]
    pols = [GatingPolicy.conservative(0.9), GatingPolicy.none()]
    rows = sweep(SAW, STATS, caps, banks, pols, synth_grid(caps, banks))
    keys = [(r.capacity, r.banks, r.policy.sort_key()) for r in rows]
    assert keys == sorted(keys) and len(rows) == 12
    assert all(r.d_e_pct is not None for r in rows)


def test_deltas_empty_without_unbanked_reference():
    rows = sweep(SAW, STATS, [64 * MiB], [2, 4], [GatingPolicy.none()], synth_grid([64 * MiB], [2, 4]))
    assert all(r.d_e_pct is None and r.d_a_pct is None for r in rows)


def test_sweep_errors():
    char = synth_grid([64 * MiB], [1, 2])
    with pytest.raises(ValidationError, match="empty"):
        sweep(SAW, STATS, [], [1], [GatingPolicy.none()], char)
    with pytest.raises(ValidationError, match=r"\(C=64 MiB, B=4\)"):
        sweep(SAW, STATS, [64 * MiB], [4], [GatingPolicy.none()], char)
    with pytest.raises(InfeasibleError, match="capacity below peak requirement"):
        sweep(SAW, STATS, [32 * MiB], [1], [GatingPolicy.none()], synth_grid([32 * MiB], [1]))


def test_sweep_table_round_trip():
    caps = [64 * MiB, 80 * MiB]
    rows = sweep(SAW, STATS, caps, [1, 4], [GatingPolicy.conservative(0.9)], synth_grid(caps, [1, 4]))
    parsed = sweep_from_csv(sweep_to_csv(rows))
    assert [(p.c_mib, p.banks, p.e_mj, p.d_e_pct, p.n_sw, p.policy) for p in parsed] == [
        (r.capacity / MiB, r.banks, r.e_tot_mj, r.d_e_pct, r.n_sw, r.policy.label) for r in rows
    ]


def test_banking_saves_energy_on_idle_trace():
    rows = sweep(SAW, STATS, [64 * MiB], [1, 2, 4, 8], [GatingPolicy.conservative(0.9)],
                 synth_grid([64 * MiB], [1, 2, 4, 8]))
    assert any(r.d_e_pct < 0 for r in rows if r.banks > 1)


def test_multilevel_with_one_memory_matches_plain_sweep():
    pols = [GatingPolicy.conservative(0.9)]
    char = synth_grid([64 * MiB], [1, 4])
    multi = sweep_multilevel({"sram": SAW}, {"sram": STATS}, [64 * MiB], [1, 4], pols, char)
    assert multi == {"sram": sweep(SAW, STATS, [64 * MiB], [1, 4], pols, char)}


def test_multilevel_needs_stats_per_memory():
    with pytest.raises(ValidationError, match="no access statistics"):
        sweep_multilevel({"a": SAW}, {}, [64 * MiB], [1], [GatingPolicy.none()], synth_grid([64 * MiB], [1]))


# -- sizing ------------------------------------------------------------------------


def live_set_graph(width=1024, fan_in=3):
    """One op that needs ``fan_in`` inputs of ``width`` bytes plus its output resident at once."""
    g = GraphSketch()
    ins = [g.tensor(f"x{i}", 1, width) for i in range(fan_in)]
    g.eltwise("sum", OpKind.ELEMENTWISE, ins)
    return g.build()


def test_sizing_finds_smallest_grid_point_holding_the_live_set():
    graph = live_set_graph()
    result = size_sram(graph, accel(), 1024, 1024, ceiling=8192)
    assert result.capacity == 4096
    assert result.peak["sram"] >= 4096
    assert [s.capacity for s in result.steps] == [1024, 2048, 3072, 4096]
    assert all(s.outcome != "feasible" for s in result.steps[:-1])


def test_sizing_walks_down_from_a_feasible_start():
    result = size_sram(live_set_graph(), accel(), 8192, 1024)
    assert result.capacity == 4096
    assert result.steps[-1].outcome == "tensor exceeds capacity"


def test_sizing_infeasible_below_ceiling():
    with pytest.raises(InfeasibleError, match="no feasible capacity"):
        size_sram(live_set_graph(width=4096), accel(), 1024, 1024, ceiling=8192)


def test_sizing_rejects_bad_step():
    with pytest.raises(ValidationError, match="step"):
        size_sram(live_set_graph(), accel(), 1024, 0)
