"""Banking and power-gating exploration over a fixed occupancy trace.

Energy of a banked SRAM candidate is the sum of dynamic access energy
(reads and writes times per-access energies), leakage of the banks that are
powered on, and the cost of the on/off transitions of gated banks. The
trace is never re-simulated: gating is evaluated offline on the timeline
the workload already produced.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from sramgate.errors import CapacityError, DeadlockError, InfeasibleError, ValidationError
from sramgate.hardware import MiB, AcceleratorSpec
from sramgate.memory import AccessStats, OccupancyTrace
from sramgate.sim import build_plan, simulate
from sramgate.traces import (
    BankActivityTimeline,
    BankingParams,
    IdleInterval,
    TimelineSegment,
    bank_activity,
    idle_intervals,
    merge_segments,
    peak,
)
from sramgate.workload import WorkloadGraph

CHAR_COLUMNS = (
    "capacity_bytes",
    "banks",
    "e_read_pJ",
    "e_write_pJ",
    "p_leak_bank_mW",
    "e_sw_bank_pJ",
    "t_access_ns",
    "area_mm2",
)
SWEEP_COLUMNS = ("C_MiB", "B", "E_mJ", "A_mm2", "dE_pct", "dA_pct", "N_sw", "policy")

PJ_PER_MJ = 1e9


# -- characterization --------------------------------------------------------


@dataclass(frozen=True)
class CharEntry:
    e_read_pj: float
    e_write_pj: float
    p_leak_bank_mw: float
    e_sw_bank_pj: float
    t_access_ns: float
    area_mm2: float

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"characterization value {name} must be finite and >= 0, got {value}")


def _key_label(capacity: int, banks: int) -> str:
    return f"(C={capacity / MiB:g} MiB, B={banks})"


@dataclass
class MemCharacterization:
    entries: dict[tuple[int, int], CharEntry] = field(default_factory=dict)

    def get(self, capacity: int, banks: int) -> CharEntry:
        try:
            return self.entries[(capacity, banks)]
        except KeyError:
            raise ValidationError(f"no characterization entry for {_key_label(capacity, banks)}") from None

    def missing(self, capacities: Iterable[int], bank_counts: Iterable[int]) -> list[tuple[int, int]]:
        bank_counts = list(bank_counts)
        return [(c, b) for c in capacities for b in bank_counts if (c, b) not in self.entries]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CHAR_COLUMNS)
        for (c, b), e in sorted(self.entries.items()):
            w.writerow((c, b, e.e_read_pj, e.e_write_pj, e.p_leak_bank_mw, e.e_sw_bank_pj, e.t_access_ns, e.area_mm2))
        return buf.getvalue()


def load_characterization(text: str) -> MemCharacterization:
    """Parse a characterization table (header row, one row per (capacity, banks))."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(x.strip() for x in r)]
    if not rows:
        raise ValidationError("characterization has no entries")
    header = tuple(x.strip() for x in rows[0])
    if header != CHAR_COLUMNS:
        raise ValidationError(f"characterization header must be {','.join(CHAR_COLUMNS)}")
    if len(rows) == 1:
        raise ValidationError("characterization has no entries")
    char = MemCharacterization()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CHAR_COLUMNS):
            raise ValidationError(f"characterization line {lineno}: expected {len(CHAR_COLUMNS)} fields, got {len(row)}")
        try:
            capacity, banks = int(row[0]), int(row[1])
            values = [float(x) for x in row[2:]]
        except ValueError:
            raise ValidationError(f"characterization line {lineno}: malformed row {row!r}") from None
        if capacity <= 0 or banks <= 0:
            raise ValidationError(f"characterization line {lineno}: capacity and banks must be positive")
        if (capacity, banks) in char.entries:
            raise ValidationError(f"characterization line {lineno}: duplicate entry {_key_label(capacity, banks)}")
        try:
            char.entries[(capacity, banks)] = CharEntry(*values)
        except ValidationError as exc:
            raise ValidationError(f"characterization line {lineno}: {exc}") from None
    return char


@dataclass(frozen=True)
class SynthBase:
    """Reference point and constants of the built-in analytic characterization.

    This is a stand-in with plausible scaling, not a calibrated memory
    model. Values refer to one unbanked memory of ``capacity`` bytes.
    """

    capacity: int = 64 * MiB
    e_read_pj: float = 1000.0
    e_write_pj: float = 1100.0
    # bank select and routing cost per access, per bank
    route_pj_per_bank: float = 100.0
    leak_mw_per_mib: float = 750.0
    # idle time at which gating a bank breaks even
    breakeven_ns: float = 200.0
    t_access_ns: float = 22.0
    area_mm2_per_mib: float = 17.0
    bank_overhead_mm2: float = 4.0


def synth_characterization(capacity: int, banks: int, base: SynthBase = SynthBase()) -> CharEntry:
    """Analytic entry for ``banks`` equal banks of a ``capacity``-byte memory.

    Per-bank leakage scales with bank size, so total leakage does not depend
    on the bank count. Access energy and access time scale with the square
    root of bank size; access energy adds a routing term linear in the bank
    count. Area is linear in capacity plus a fixed overhead per bank.
    """
    if capacity <= 0 or banks <= 0:
        raise ValidationError("capacity and bank count must be positive")
    bank = capacity / banks
    shrink = math.sqrt(bank / base.capacity)
    p_leak_bank = base.leak_mw_per_mib * bank / MiB
    return CharEntry(
        e_read_pj=base.e_read_pj * shrink + base.route_pj_per_bank * banks,
        e_write_pj=base.e_write_pj * shrink + base.route_pj_per_bank * banks,
        p_leak_bank_mw=p_leak_bank,
        e_sw_bank_pj=p_leak_bank * base.breakeven_ns / 2,
        t_access_ns=base.t_access_ns * shrink,
        area_mm2=base.area_mm2_per_mib * capacity / MiB + base.bank_overhead_mm2 * banks,
    )


def synth_grid(capacities: Iterable[int], bank_counts: Iterable[int], base: SynthBase = SynthBase()) -> MemCharacterization:
    bank_counts = list(bank_counts)
    return MemCharacterization(
        {(c, b): synth_characterization(c, b, base) for c in capacities for b in bank_counts}
    )


# -- gating ------------------------------------------------------------------


class GatingMode(str, Enum):
    NONE = "none"
    AGGRESSIVE = "aggressive"
    CONSERVATIVE = "conservative"


@dataclass(frozen=True)
class GatingPolicy:
    mode: GatingMode
    alpha: float = 1.0
    enforce_breakeven: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", GatingMode(self.mode))
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"headroom alpha must be in (0, 1], got {self.alpha}")
        if self.mode is GatingMode.AGGRESSIVE and self.alpha != 1.0:
            raise ValidationError(f"aggressive gating uses alpha = 1.0, got {self.alpha}")
        if self.mode is GatingMode.CONSERVATIVE and not (self.alpha < 1 and self.enforce_breakeven):
            raise ValidationError("conservative gating needs alpha < 1 and the break-even check")

    @classmethod
    def none(cls) -> GatingPolicy:
        return cls(GatingMode.NONE)

    @classmethod
    def aggressive(cls) -> GatingPolicy:
        return cls(GatingMode.AGGRESSIVE, 1.0, False)

    @classmethod
    def conservative(cls, alpha: float = 0.9) -> GatingPolicy:
        return cls(GatingMode.CONSERVATIVE, alpha, True)

    @property
    def label(self) -> str:
        if self.mode is GatingMode.CONSERVATIVE:
            return f"conservative@{self.alpha:g}"
        return self.mode.value

    @classmethod
    def from_label(cls, label: str) -> GatingPolicy:
        name, _, alpha = label.strip().partition("@")
        if name == "conservative":
            try:
                return cls.conservative(float(alpha) if alpha else 0.9)
            except ValueError:
                raise ValidationError(f"bad policy alpha in {label!r}") from None
        if alpha:
            raise ValidationError(f"policy {name!r} takes no alpha, got {label!r}")
        if name == "aggressive":
            return cls.aggressive()
        if name == "none":
            return cls.none()
        raise ValidationError(f"unknown gating policy {label!r} (none, aggressive, conservative@ALPHA)")

    def sort_key(self) -> tuple[int, float]:
        order = {GatingMode.NONE: 0, GatingMode.AGGRESSIVE: 1, GatingMode.CONSERVATIVE: 2}
        return order[self.mode], self.alpha


@dataclass
class GatingOutcome:
    on_timeline: BankActivityTimeline
    n_sw: int
    gated: list[IdleInterval]
    skipped: list[IdleInterval]
    # largest number of banks woken at the same instant
    max_simultaneous_wakeups: int


def breakeven_met(duration_ns: int, entry: CharEntry) -> bool:
    """Gating pays off only if the leakage saved beats one off and one on transition."""
    return duration_ns * entry.p_leak_bank_mw > 2 * entry.e_sw_bank_pj


def apply_gating(timeline: BankActivityTimeline, policy: GatingPolicy, entry: CharEntry) -> GatingOutcome:
    banks = timeline.params.banks
    if policy.mode is GatingMode.NONE:
        segs = [TimelineSegment(timeline.t_start, timeline.duration, banks)] if timeline.duration else []
        return GatingOutcome(BankActivityTimeline(timeline.params, segs), 0, [], [], 0)

    gated, skipped = [], []
    for iv in idle_intervals(timeline):
        if not policy.enforce_breakeven or breakeven_met(iv.duration, entry):
            gated.append(iv)
        else:
            skipped.append(iv)

    delta: dict[int, int] = {}
    for iv in gated:
        delta[iv.t_start] = delta.get(iv.t_start, 0) - 1
        delta[iv.t_end] = delta.get(iv.t_end, 0) + 1
    bounds = sorted({s.t_start for s in timeline.segments} | {timeline.t_end} | set(delta))
    segments = []
    on = banks
    wake = 0
    for t0, t1 in zip(bounds, bounds[1:]):
        step = delta.get(t0, 0)
        if step > 0 and t0 != timeline.t_start:
            wake = max(wake, step)
        on += step
        segments.append(TimelineSegment(t0, t1 - t0, on))
    # intervals ending at the trace end wake at the boundary too
    wake = max(wake, delta.get(timeline.t_end, 0))
    on_timeline = BankActivityTimeline(timeline.params, merge_segments(segments))
    return GatingOutcome(on_timeline, 2 * len(gated), gated, skipped, wake)


# -- energy terms (pJ) -------------------------------------------------------


def dynamic_energy(stats: AccessStats, entry: CharEntry) -> float:
    return stats.reads * entry.e_read_pj + stats.writes * entry.e_write_pj


def leakage_energy(on_timeline: BankActivityTimeline, entry: CharEntry) -> float:
    """Powered bank-nanoseconds times per-bank leakage (1 mW for 1 ns is 1 pJ)."""
    bank_ns = sum(s.active * s.duration for s in on_timeline.segments)
    return entry.p_leak_bank_mw * bank_ns


def switching_energy(n_sw: int, entry: CharEntry) -> float:
    if n_sw < 0:
        raise ValidationError(f"transition count must be >= 0, got {n_sw}")
    return n_sw * entry.e_sw_bank_pj


# -- candidates and sweeps ---------------------------------------------------


@dataclass(frozen=True)
class CandidateResult:
    capacity: int
    banks: int
    policy: GatingPolicy
    e_dyn_mj: float
    e_leak_mj: float
    e_sw_mj: float
    e_tot_mj: float
    area_mm2: float
    n_sw: int
    d_e_pct: float | None = None
    d_a_pct: float | None = None
    skipped_intervals: int = 0
    wake_latency_ns: float = 0.0

    def to_row(self) -> tuple:
        return (
            f"{self.capacity / MiB:g}",
            self.banks,
            repr(self.e_tot_mj),
            repr(self.area_mm2),
            "" if self.d_e_pct is None else repr(self.d_e_pct),
            "" if self.d_a_pct is None else repr(self.d_a_pct),
            self.n_sw,
            self.policy.label,
        )


def evaluate_candidate(
    trace: OccupancyTrace,
    stats: AccessStats,
    capacity: int,
    banks: int,
    policy: GatingPolicy,
    entry: CharEntry,
) -> CandidateResult:
    params = BankingParams(capacity, banks, policy.alpha)
    outcome = apply_gating(bank_activity(trace, params), policy, entry)
    e_dyn = dynamic_energy(stats, entry) / PJ_PER_MJ
    e_leak = leakage_energy(outcome.on_timeline, entry) / PJ_PER_MJ
    e_sw = switching_energy(outcome.n_sw, entry) / PJ_PER_MJ
    return CandidateResult(
        capacity=capacity,
        banks=banks,
        policy=policy,
        e_dyn_mj=e_dyn,
        e_leak_mj=e_leak,
        e_sw_mj=e_sw,
        e_tot_mj=e_dyn + e_leak + e_sw,
        area_mm2=entry.area_mm2,
        n_sw=outcome.n_sw,
        skipped_intervals=len(outcome.skipped),
        # banks wake one after another, each taking one access time
        wake_latency_ns=outcome.max_simultaneous_wakeups * entry.t_access_ns,
    )


def _pct(value: float, ref: float) -> float:
    return 100.0 * (value - ref) / ref if ref else 0.0


def sweep(
    trace: OccupancyTrace,
    stats: AccessStats,
    capacities: Sequence[int],
    bank_counts: Sequence[int],
    policies: Sequence[GatingPolicy],
    char: MemCharacterization,
) -> list[CandidateResult]:
    """Evaluate every (capacity, banks, policy) candidate, ordered by that key.

    Deltas are relative to one bank at the same capacity and policy, and
    left empty when one bank is not part of the grid.
    """
    if not capacities or not bank_counts or not policies:
        raise ValidationError("sweep grid is empty")
    missing = char.missing(capacities, bank_counts)
    if missing:
        raise ValidationError(f"no characterization entry for {_key_label(*missing[0])}")
    need = peak(trace)
    for c in capacities:
        if c < need:
            raise InfeasibleError(
                f"capacity below peak requirement: {c / MiB:g} MiB < {need / MiB:.2f} MiB"
            )
    results = []
    for c in sorted(set(capacities)):
        for pol in sorted(set(policies), key=GatingPolicy.sort_key):
            row = {b: evaluate_candidate(trace, stats, c, b, pol, char.get(c, b)) for b in sorted(set(bank_counts))}
            ref = row.get(1)
            for b, res in row.items():
                if ref is not None:
                    res = _with_deltas(res, ref)
                results.append(res)
    results.sort(key=lambda r: (r.capacity, r.banks, r.policy.sort_key()))
    return results


def _with_deltas(res: CandidateResult, ref: CandidateResult) -> CandidateResult:
    return replace(res, d_e_pct=_pct(res.e_tot_mj, ref.e_tot_mj), d_a_pct=_pct(res.area_mm2, ref.area_mm2))


def sweep_multilevel(
    traces: Mapping[str, OccupancyTrace],
    stats: Mapping[str, AccessStats],
    capacities: Sequence[int],
    bank_counts: Sequence[int],
    policies: Sequence[GatingPolicy],
    char: MemCharacterization,
) -> dict[str, list[CandidateResult]]:
    """Sweep each on-chip memory independently, keyed by memory id."""
    if not traces:
        raise ValidationError("multi-level sweep needs at least one memory trace")
    out = {}
    for mem_id in sorted(traces):
        if mem_id not in stats:
            raise ValidationError(f"no access statistics for memory {mem_id}")
        out[mem_id] = sweep(traces[mem_id], stats[mem_id], capacities, bank_counts, policies, char)
    return out


def sweep_to_csv(results: Iterable[CandidateResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in results:
        w.writerow(r.to_row())
    return buf.getvalue()


@dataclass(frozen=True)
class SweepRow:
    """One parsed row of a sweep table."""

    c_mib: float
    banks: int
    e_mj: float
    a_mm2: float
    d_e_pct: float | None
    d_a_pct: float | None
    n_sw: int
    policy: str


def sweep_from_csv(text: str) -> list[SweepRow]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != SWEEP_COLUMNS:
        raise ValidationError(f"sweep header must be {','.join(SWEEP_COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            c, b, e, a, de, da, nsw, pol = row
            out.append(SweepRow(
                float(c), int(b), float(e), float(a),
                float(de) if de else None, float(da) if da else None, int(nsw), pol,
            ))
        except ValueError:
            raise ValidationError(f"sweep line {lineno}: malformed row {row!r}") from None
    return out


# -- Stage I sizing loop -----------------------------------------------------


@dataclass(frozen=True)
class SizingStep:
    capacity: int
    writebacks: int | None
    outcome: str


@dataclass
class SizingResult:
    capacity: int
    peak: dict[str, int]
    steps: list[SizingStep]

    @property
    def peak_max(self) -> int:
        return max(self.peak.values(), default=0)


def size_sram(
    graph: WorkloadGraph,
    spec: AcceleratorSpec,
    start_capacity: int,
    step: int,
    ceiling: int | None = None,
    mem_ids: list[str] | None = None,
) -> SizingResult:
    """Smallest capacity on ``start + k * step`` that runs with zero capacity write-backs.

    All on-chip memories (or ``mem_ids``) get the same capacity. Runs that
    overflow a single tensor or deadlock count as infeasible. Feasibility is
    assumed monotone in capacity: the search walks down from a feasible
    start, or up from an infeasible one until ``ceiling``.
    """
    if step <= 0:
        raise ValidationError(f"sizing step must be positive, got {step}")
    if start_capacity <= 0:
        raise ValidationError(f"start capacity must be positive, got {start_capacity}")
    ceiling = ceiling if ceiling is not None else max(start_capacity, spec.root.capacity)
    if ceiling < start_capacity:
        raise ValidationError(f"ceiling {ceiling} B is below the start capacity {start_capacity} B")
    plan = build_plan(graph, spec)
    steps: list[SizingStep] = []
    peaks: dict[int, dict[str, int]] = {}

    def feasible(capacity: int) -> bool:
        sized = spec.with_capacity(capacity, mem_ids)
        try:
            result = simulate(plan, graph, sized)
        except CapacityError:
            steps.append(SizingStep(capacity, None, "tensor exceeds capacity"))
            return False
        except DeadlockError:
            steps.append(SizingStep(capacity, None, "deadlock"))
            return False
        ok = result.capacity_writebacks == 0
        steps.append(SizingStep(capacity, result.capacity_writebacks, "feasible" if ok else "write-backs"))
        if ok:
            peaks[capacity] = dict(result.peak_needed)
        return ok

    cap = start_capacity
    if feasible(cap):
        while cap - step > 0 and feasible(cap - step):
            cap -= step
        return SizingResult(cap, peaks[cap], steps)
    while cap + step <= ceiling:
        cap += step
        if feasible(cap):
            return SizingResult(cap, peaks[cap], steps)
    raise InfeasibleError(
        f"no feasible capacity up to {ceiling / MiB:g} MiB "
        f"(tried {', '.join(f'{s.capacity / MiB:g}' for s in steps)} MiB)"
    )
