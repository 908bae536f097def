"""Discrete-event replay of an execution plan with memory residency and port timing.

Each array runs its planned queue in order. A queued sub-op becomes active
once the array is free and its producers have finished; it then reserves
space in the array's memory, pulls missing inputs through the memory tree,
waits for a port on its memory and streams operands while computing.

Time is integer nanoseconds throughout.
"""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from math import ceil
from typing import Iterable

from sramgate.errors import CapacityError, DeadlockError
from sramgate.hardware import AcceleratorSpec, MemLevelSpec, peak_throughput
from sramgate.memory import AccessStats, InsufficientSpace, OccupancyTrace, ResidencyState, Status
from sramgate.sim.energy import compute_energy
from sramgate.sim.plan import ExecutionPlan, op_compute_cycles
from sramgate.workload import WorkloadGraph

_COMPLETE = 0
_DATA_READY = 1


@dataclass
class SubOpRecord:
    index: int
    name: str
    kind: str
    array: str
    queued: int  # array became free for this sub-op
    active: int
    data_ready: int
    start: int  # port granted, streaming/compute begins
    end: int
    compute_ns: int

    @property
    def idle_ns(self) -> int:
        return self.active - self.queued

    @property
    def memory_ns(self) -> int:
        return self.end - self.active - self.compute_ns


@dataclass
class SimResult:
    total_latency: int
    per_op_breakdown: dict[str, tuple[int, int, int]]
    avg_pe_utilization: float
    traces: dict[str, OccupancyTrace]
    access_stats: dict[str, AccessStats]
    energy_breakdown: dict[str, float]
    capacity_writebacks: int
    total_macs: int = 0
    writebacks_by_memory: dict[str, int] = field(default_factory=dict)
    peak_needed: dict[str, int] = field(default_factory=dict)
    peak_total: dict[str, int] = field(default_factory=dict)
    records: list[SubOpRecord] = field(default_factory=list)

    def stats_dict(self) -> dict:
        return {
            "total_latency_ns": self.total_latency,
            "avg_pe_utilization": self.avg_pe_utilization,
            "total_macs": self.total_macs,
            "capacity_writebacks": self.capacity_writebacks,
            "writebacks_by_memory": dict(sorted(self.writebacks_by_memory.items())),
            "peak_needed_bytes": dict(sorted(self.peak_needed.items())),
            "peak_occupied_bytes": dict(sorted(self.peak_total.items())),
            "access_stats": {k: v.to_dict() for k, v in sorted(self.access_stats.items())},
            "per_op_breakdown_ns": {
                k: {"compute": c, "memory": m, "idle": i}
                for k, (c, m, i) in sorted(self.per_op_breakdown.items())
            },
            "energy_breakdown_j": dict(sorted(self.energy_breakdown.items())),
        }


def _ns(cycles: float, clock_hz: float) -> int:
    return ceil(cycles * 1e9 / clock_hz)


def _beats(nbytes: int, mem: MemLevelSpec) -> int:
    return ceil(nbytes / mem.bytes_per_beat)


class _Simulator:
    def __init__(self, plan: ExecutionPlan, graph: WorkloadGraph, spec: AcceleratorSpec,
                 preload: Iterable[int]) -> None:
        self.plan = plan
        self.graph = graph
        self.spec = spec
        self.root = spec.root.mem_id
        self.res = {m.mem_id: ResidencyState(m.mem_id, m.capacity) for m in spec.on_chip}
        self.root_stats = AccessStats()
        self.mem_order = {m.mem_id: i for i, m in enumerate(spec.memories)}
        self.port_free = {m.mem_id: [0] * m.ports for m in spec.memories}
        self.locations: dict[int, set[str]] = defaultdict(set)
        self.arrival: dict[tuple[str, int], int] = {}
        self.remaining = {t.tid: len(t.consumers) for t in plan.tensors}
        self.waiting_deps = {s.index: len(plan.ready_deps[s.index]) for s in plan.subops}
        self.users: dict[int, list[int]] = defaultdict(list)
        for s, ds in plan.ready_deps.items():
            for d in ds:
                self.users[d].append(s)
        self.array_mem = {a.array_id: spec.memory_of(a.array_id).mem_id for a in spec.arrays}
        self.queues = {a: list(q) for a, q in plan.array_order.items()}
        self.qpos = {a.array_id: 0 for a in spec.arrays}
        self.busy: dict[str, int | None] = {a.array_id: None for a in spec.arrays}
        self.free_since = {a.array_id: 0 for a in spec.arrays}
        self.mem_blocked: set[str] = set()
        self.records: dict[int, SubOpRecord] = {}
        self.events: list[tuple[int, int, int, int]] = []
        self.seq = 0
        self.done = 0
        self._routes: dict[tuple[str, str], list[str]] = {}

        for t in plan.tensors:
            if t.external:
                self.locations[t.tid].add(self.root)
        preload = set(preload)
        for t in plan.tensors:
            if t.graph_tensor in preload and t.external:
                for mem_id in sorted(set(self.array_mem.values()), key=self.mem_order.get):
                    self.res[mem_id].insert(t.tid, t.size, Status.NEEDED, 0)
                    self.locations[t.tid].add(mem_id)
                    self.arrival[(mem_id, t.tid)] = 0

    # -- ports and transfers ----------------------------------------------

    def _reserve_port(self, mem_id: str, t: int, busy_ns: int) -> tuple[int, int]:
        ports = self.port_free[mem_id]
        i = min(range(len(ports)), key=lambda j: (ports[j], j))
        start = max(t, ports[i])
        end = start + busy_ns
        ports[i] = end
        return start, end

    def _transfer_ns(self, mem_id: str, nbytes: int) -> int:
        m = self.spec.memory(mem_id)
        return ceil(m.access_latency_ns) + _ns(_beats(nbytes, m), m.clock_hz)

    def _count(self, mem_id: str, nbytes: int, is_write: bool) -> None:
        m = self.spec.memory(mem_id)
        stats = self.res[mem_id].stats if mem_id in self.res else self.root_stats
        if is_write:
            stats.writes += _beats(nbytes, m)
            stats.write_bytes += nbytes
        else:
            stats.reads += _beats(nbytes, m)
            stats.read_bytes += nbytes

    def _hop(self, src: str, dst: str, nbytes: int, t: int) -> int:
        """Move ``nbytes`` from ``src`` into ``dst`` using a ``src`` port; returns arrival time."""
        _, end = self._reserve_port(src, t, self._transfer_ns(src, nbytes))
        self._count(src, nbytes, is_write=False)
        self._count(dst, nbytes, is_write=True)
        return end

    def _spill(self, mem_id: str, tid: int, size: int, now: int) -> int:
        """Capacity-induced write-back of ``tid`` from ``mem_id``; returns completion time."""
        self.locations[tid].discard(mem_id)
        self.arrival.pop((mem_id, tid), None)
        end = now
        src = mem_id
        parent = self.spec.memory(mem_id).parent
        while parent is not None and parent not in self.locations[tid]:
            end = self._hop(src, parent, size, end)
            end = max(end, self._place(parent, tid, size, now))
            if parent not in self.res or self.res[parent].resident(tid):
                self.locations[tid].add(parent)
                self.arrival[(parent, tid)] = end
                break
            src, parent = parent, self.spec.memory(parent).parent
        return end

    def _place(self, mem_id: str, tid: int, size: int, now: int) -> int:
        """Allocate a copy in an intermediate/parent memory, spilling further up if needed."""
        if mem_id not in self.res or self.remaining[tid] == 0:
            return now
        state = self.res[mem_id]
        try:
            result = state.allocate(tid, size, now)
        except InsufficientSpace:
            # pinned data blocks a relay copy; pass the data through without keeping it
            return now
        end = now
        for victim, vsize in result.written_back:
            end = max(end, self._spill(mem_id, victim, vsize, now))
        for victim in result.evicted:
            self.locations[victim].discard(mem_id)
            self.arrival.pop((mem_id, victim), None)
        return end

    def _route(self, src: str, dst: str) -> list[str]:
        key = (src, dst)
        if key not in self._routes:
            self._routes[key] = self.spec.route(src, dst)
        return self._routes[key]

    def _source_for(self, tid: int, dst: str) -> str:
        return min(
            self.locations[tid],
            key=lambda m: (len(self._route(m, dst)), self.mem_order[m]),
        )

    # -- sub-op lifecycle ---------------------------------------------------

    def _push(self, t: int, kind: int, idx: int) -> None:
        heapq.heappush(self.events, (t, kind, self.seq, idx))
        self.seq += 1

    def _try_start(self, array: str, now: int) -> None:
        if self.busy[array] is not None:
            return
        q = self.queues[array]
        pos = self.qpos[array]
        if pos >= len(q):
            return
        idx = q[pos]
        if self.waiting_deps[idx]:
            return
        s = self.plan.subops[idx]
        mem_id = self.array_mem[array]
        state = self.res[mem_id]
        missing = [t for t in s.inputs if not state.resident(t)]
        out_size = 0 if s.inplace else self.plan.tensors[s.output].size
        working = sum(self.plan.tensors[t].size for t in s.inputs) + out_size
        if working > state.capacity:
            # every input and the output must be resident at once
            raise CapacityError(
                f"tensor exceeds memory capacity: sub-op {s.name} needs {working} B resident in "
                f"{mem_id} ({state.capacity} B)"
            )
        need = sum(self.plan.tensors[t].size for t in missing) + out_size
        present = [t for t in s.inputs if state.resident(t)]
        for t in present:
            state.pin(t)
        if need > state.reclaimable():
            for t in present:
                state.unpin(t)
            self.mem_blocked.add(array)
            return
        self.mem_blocked.discard(array)
        self.qpos[array] += 1
        self.busy[array] = idx

        ready = now
        for t in present:
            ready = max(ready, self.arrival.get((mem_id, t), now))
        allocs = list(missing)
        if not s.inplace:
            allocs.append(s.output)
        for t in allocs:
            size = self.plan.tensors[t].size
            result = state.allocate(t, size, now)
            state.pin(t)
            for victim in result.evicted:
                self.locations[victim].discard(mem_id)
                self.arrival.pop((mem_id, victim), None)
            for victim, vsize in result.written_back:
                ready = max(ready, self._spill(mem_id, victim, vsize, now))
        for t in missing:
            ready = max(ready, self._fetch(t, mem_id, now))
        self.records[idx] = SubOpRecord(
            idx, s.name, s.kind.value, array, self.free_since[array], now, ready, 0, 0, 0
        )
        self._push(ready, _DATA_READY, idx)

    def _fetch(self, tid: int, dst: str, now: int) -> int:
        size = self.plan.tensors[tid].size
        src = self._source_for(tid, dst)
        path = self._route(src, dst)
        t = max(now, self.arrival.get((src, tid), now))
        for a, b in zip(path, path[1:]):
            t = self._hop(a, b, size, t)
            if b != dst and b in self.res and not self.res[b].resident(tid):
                t = max(t, self._place(b, tid, size, now))
                if self.res[b].resident(tid):
                    self.locations[tid].add(b)
                    self.arrival[(b, tid)] = t
        self.locations[tid].add(dst)
        self.arrival[(dst, tid)] = t
        return t

    def _on_data_ready(self, idx: int, now: int) -> None:
        s = self.plan.subops[idx]
        rec = self.records[idx]
        array = self.spec.array(rec.array)
        mem = self.spec.memory(self.array_mem[rec.array])
        compute = _ns(op_compute_cycles(s.tile, array, s.kind), array.clock_hz)
        stream = _ns(_beats(s.read_bytes + self.plan.tensors[s.output].size, mem), mem.clock_hz)
        busy = ceil(mem.access_latency_ns) + max(compute, stream)
        start, end = self._reserve_port(mem.mem_id, now, busy)
        rec.start, rec.end, rec.compute_ns = start, end, compute
        self._push(end, _COMPLETE, idx)

    def _on_complete(self, idx: int, now: int) -> None:
        s = self.plan.subops[idx]
        rec = self.records[idx]
        mem_id = self.array_mem[rec.array]
        mem = self.spec.memory(mem_id)
        state = self.res[mem_id]
        for t, nbytes in zip(s.inputs, s.input_read_bytes):
            state.touch(t, now, is_write=False, accesses=_beats(nbytes, mem), nbytes=nbytes)
            state.unpin(t)
        out_size = self.plan.tensors[s.output].size
        if s.inplace:
            state.rename(s.inplace, s.output, now)
            for t in s.inplace:
                self.locations[t].discard(mem_id)
                self.arrival.pop((mem_id, t), None)
        else:
            state.unpin(s.output)
        state.touch(s.output, now, is_write=True, accesses=_beats(out_size, mem), nbytes=out_size)
        self.locations[s.output].add(mem_id)
        self.arrival[(mem_id, s.output)] = now
        for t in s.inputs:
            self.remaining[t] -= 1
            if self.remaining[t] == 0:
                self._retire(t, now)
        if self.remaining[s.output] == 0:
            self._retire(s.output, now)
        for u in self.users[idx]:
            self.waiting_deps[u] -= 1
        self.busy[rec.array] = None
        self.free_since[rec.array] = now
        self.done += 1

    def _retire(self, tid: int, now: int) -> None:
        for mem_id in self.locations[tid]:
            if mem_id in self.res:
                self.res[mem_id].mark_obsolete(tid, now)

    def _blocked_report(self) -> str:
        lines = []
        for a, q in self.queues.items():
            pos = self.qpos[a]
            if self.busy[a] is None and pos < len(q):
                s = self.plan.subops[q[pos]]
                if self.waiting_deps[s.index]:
                    deps = [self.plan.subops[d].name for d in self.plan.ready_deps[s.index]
                            if d not in self.records or self.records[d].end == 0]
                    lines.append(f"{a}: {s.name} waits on producers {deps}")
                else:
                    lines.append(f"{a}: {s.name} waits on space in {self.array_mem[a]}")
        return "; ".join(lines)

    def run(self) -> int:
        for state in self.res.values():
            state.record(0)
        arrays = [a.array_id for a in self.spec.arrays]
        for a in arrays:
            self._try_start(a, 0)
        now = 0
        while self.events:
            now = self.events[0][0]
            # completions at one instant all land before any new allocation,
            # so the recorded value at ``now`` is the instant's maximum
            while self.events and self.events[0][0] == now:
                while self.events and self.events[0][0] == now:
                    _, kind, _, idx = heapq.heappop(self.events)
                    if kind == _DATA_READY:
                        self._on_data_ready(idx, now)
                    else:
                        self._on_complete(idx, now)
                for a in arrays:
                    self._try_start(a, now)
            for state in self.res.values():
                state.record(now)
        if self.done < len(self.plan.subops):
            raise DeadlockError(f"no runnable sub-op and none in flight: {self._blocked_report()}")
        return now


def simulate(plan: ExecutionPlan, graph: WorkloadGraph, spec: AcceleratorSpec,
             preload: Iterable[int] = ()) -> SimResult:
    """Run ``plan`` to completion.

    ``preload`` lists graph tensor ids of external inputs/weights that start
    resident in every array-attached memory instead of in the root memory.
    """
    sim = _Simulator(plan, graph, spec, preload)
    total = sim.run()
    total_macs = sum(s.macs for s in plan.subops)
    breakdown: dict[str, list[int]] = {}
    for rec in sim.records.values():
        b = breakdown.setdefault(rec.kind, [0, 0, 0])
        b[0] += rec.compute_ns
        b[1] += rec.memory_ns
        b[2] += rec.idle_ns
    peak = peak_throughput(spec)
    util = total_macs / (peak * total * 1e-9) if total > 0 else 0.0
    stats = {m: st.stats for m, st in sim.res.items()}
    stats[sim.root] = sim.root_stats
    result = SimResult(
        total_latency=total,
        per_op_breakdown={k: tuple(v) for k, v in sorted(breakdown.items())},
        avg_pe_utilization=util,
        traces={m: st.trace(end=total) for m, st in sim.res.items()},
        access_stats=stats,
        energy_breakdown={},
        capacity_writebacks=sum(st.capacity_writebacks for st in sim.res.values()),
        total_macs=total_macs,
        writebacks_by_memory={m: st.capacity_writebacks for m, st in sim.res.items()},
        peak_needed={m: st.peak_needed for m, st in sim.res.items()},
        peak_total={m: st.peak_total for m, st in sim.res.items()},
        records=[sim.records[i] for i in sorted(sim.records)],
    )
    result.energy_breakdown = compute_energy(
        result,
        spec.pe_energy_pj_per_mac,
        {m.mem_id: (m.e_read_pj, m.e_write_pj) for m in spec.memories},
        {m.mem_id: m.leak_mw for m in spec.memories},
    )
    return result
