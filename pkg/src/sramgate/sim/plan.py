"""Execution plans: sub-tiling of MatMuls and static list scheduling onto arrays."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from math import ceil

from sramgate.errors import ValidationError
from sramgate.hardware import AcceleratorSpec, SystolicArraySpec
from sramgate.workload import OpKind, TensorKind, WorkloadGraph


class PlanError(ValidationError):
    pass


def op_compute_cycles(tile: tuple[int, ...], array: SystolicArraySpec, kind: OpKind = OpKind.MATMUL) -> int:
    """Cycles for one tile on ``array``.

    A ``(R, K, C)`` MatMul makes ``ceil(R/rows) * ceil(C/cols)`` passes, each
    streaming K operands plus the pipeline fill/drain of ``rows + cols - 2``.
    Other ops process ``rows * cols`` elements per cycle.
    """
    if kind is OpKind.MATMUL:
        r, k, c = tile
        passes = ceil(r / array.rows) * ceil(c / array.cols)
        return passes * (k + array.rows + array.cols - 2)
    (elements,) = tile
    return ceil(elements / (array.rows * array.cols))


@dataclass(frozen=True)
class PlanTensor:
    """A schedulable buffer: a whole graph tensor or one column slice of it."""

    tid: int
    name: str
    size: int
    kind: TensorKind
    graph_tensor: int
    cols: tuple[int, int] | None
    producer: int | None
    consumers: tuple[int, ...]

    @property
    def external(self) -> bool:
        return self.producer is None


@dataclass(frozen=True)
class SubOp:
    index: int
    op_id: int
    name: str
    part: int
    nparts: int
    kind: OpKind
    tile: tuple[int, ...]
    inputs: tuple[int, ...]
    input_read_bytes: tuple[int, ...]
    output: int
    # input buffers whose storage the output takes over
    inplace: tuple[int, ...]
    macs: int
    depth: int

    @property
    def read_bytes(self) -> int:
        return sum(self.input_read_bytes)


@dataclass
class ExecutionPlan:
    subops: list[SubOp]
    tensors: list[PlanTensor]
    assignments: list[tuple[int, int, str, tuple[int, ...]]]
    ready_deps: dict[int, tuple[int, ...]]
    array_order: dict[str, list[int]] = field(default_factory=dict)
    estimated_ns: int = 0

    def array_of(self) -> dict[int, str]:
        return {s: a for s, _, a, _ in self.assignments}


def _split_cols(cols: int, parts: int) -> list[tuple[int, int]]:
    base, rem = divmod(cols, parts)
    bounds, lo = [], 0
    for i in range(parts):
        hi = lo + base + (1 if i < rem else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def _is_ancestor(graph: WorkloadGraph, anc: int, op: int, pos: dict[int, int]) -> bool:
    """True when ``anc`` reaches ``op`` through producer/consumer edges."""
    stop = pos[anc]
    stack, seen = [op], {op}
    while stack:
        cur = stack.pop()
        for p in graph.predecessors(cur):
            if p == anc:
                return True
            if p not in seen and pos[p] > stop:
                seen.add(p)
                stack.append(p)
    return False


def _inplace_ok(graph: WorkloadGraph, op_id: int, pos: dict[int, int]) -> bool:
    op = graph.op(op_id)
    if op.kind is OpKind.MATMUL:
        return False
    src = graph.tensor(op.inputs[0])
    if src.kind is TensorKind.WEIGHT or src.producer is None:
        return False
    if src.size != graph.tensor(op.output).size:
        return False
    return all(c == op_id or _is_ancestor(graph, c, op_id, pos) for c in src.consumers)


def build_plan(graph: WorkloadGraph, spec: AcceleratorSpec) -> ExecutionPlan:
    """Split wide MatMuls into ``spec.subops`` column slices and list-schedule them.

    The schedule is static: sub-ops are assigned to arrays with a
    compute-only cost estimate, ready sub-ops ordered by (topological depth,
    op id, part). The simulator later replays each array's queue in order
    with real memory timing.
    """
    ob = graph.spec.operand_bytes
    pos = {oid: i for i, oid in enumerate(graph.topo_order)}
    depths = graph.depths() if graph.ops else []
    min_cols = max(spec.subops, spec.subops * spec.subop_min_cols)

    tensors: list[dict] = []
    # graph tensor id -> [(plan tid, column window)] of its buffers
    views: dict[int, list[tuple[int, tuple[int, int] | None]]] = {}

    def new_tensor(name, size, kind, gt, cols, producer):
        tid = len(tensors)
        tensors.append(dict(tid=tid, name=name, size=size, kind=kind, graph_tensor=gt,
                            cols=cols, producer=producer, consumers=[]))
        return tid

    for t in graph.tensors:
        if t.producer is None and t.kind is not TensorKind.WEIGHT:
            views[t.tensor_id] = [(new_tensor(t.name, t.size, t.kind, t.tensor_id, None, None), None)]

    subops: list[SubOp] = []
    for oid in graph.topo_order:
        op = graph.op(oid)
        for d in op.dims:
            if d <= 0:
                raise PlanError(f"op {op.name} has non-positive dimension {op.dims}")
        out_t = graph.tensor(op.output)
        if op.kind is OpKind.MATMUL:
            rows, inner, cols = op.dims
            nparts = spec.subops if spec.subops > 1 and cols >= min_cols else 1
            windows = _split_cols(cols, nparts) if nparts > 1 else [None]
        else:
            nparts, windows = 1, [None]
        inplace_src = _inplace_ok(graph, oid, pos)
        out_views = []
        for part, win in enumerate(windows):
            sidx = len(subops)
            if win is None:
                size, name = out_t.size, out_t.name
            else:
                size, name = out_t.shape[0] * (win[1] - win[0]) * ob, f"{out_t.name}[{part}]"
            out_tid = new_tensor(name, size, out_t.kind, out_t.tensor_id, win, sidx)
            out_views.append((out_tid, win))

            ins: list[int] = []
            reads: list[int] = []
            last = len(op.inputs) - 1
            for i, gtid in enumerate(op.inputs):
                gt = graph.tensor(gtid)
                if gt.kind is TensorKind.WEIGHT:
                    if win is None:
                        wt = new_tensor(gt.name, gt.size, gt.kind, gtid, None, None)
                        nbytes = gt.size
                    else:
                        nbytes = gt.shape[0] * (win[1] - win[0]) * ob
                        wt = new_tensor(f"{gt.name}[{part}]", nbytes, gt.kind, gtid, win, None)
                    ins.append(wt)
                    reads.append(nbytes)
                    continue
                chosen = [tid for tid, _ in views[gtid]]
                if op.kind is OpKind.MATMUL:
                    r, k, c = op.dims
                    if i == last:
                        c_part = c if win is None else win[1] - win[0]
                        nbytes = k * c_part * ob
                    else:
                        # A operand spread over its input tensors by size
                        a_total = r * k * ob
                        sizes = [graph.tensor(x).size for x in op.inputs[:last]]
                        nbytes = a_total * sizes[i] // sum(sizes)
                else:
                    nbytes = op.dims[0] * ob
                share = [nbytes // len(chosen)] * len(chosen)
                share[-1] += nbytes - sum(share)
                for tid, b in zip(chosen, share):
                    if tid in ins:
                        reads[ins.index(tid)] += b
                    else:
                        ins.append(tid)
                        reads.append(b)
            if op.kind is OpKind.MATMUL:
                r, k, c = op.dims
                tile = (r, k, c if win is None else win[1] - win[0])
                macs = tile[0] * tile[1] * tile[2]
            else:
                tile = op.dims
                macs = op.dims[0]
            inplace = tuple(tid for tid, _ in views[op.inputs[0]]) if inplace_src else ()
            subops.append(SubOp(sidx, oid, op.name, part, nparts, op.kind, tile, tuple(ins),
                                tuple(reads), out_tid, inplace, macs, depths[oid]))
            for tid in ins:
                tensors[tid]["consumers"].append(sidx)
        views[op.output] = out_views

    plan_tensors = [PlanTensor(**{**t, "consumers": tuple(t["consumers"])}) for t in tensors]
    ready_deps = {
        s.index: tuple(sorted({plan_tensors[t].producer for t in s.inputs if plan_tensors[t].producer is not None}))
        for s in subops
    }
    assignments, order, est = _list_schedule(subops, ready_deps, spec)
    return ExecutionPlan(subops, plan_tensors, assignments, ready_deps, order, est)


def _list_schedule(subops: list[SubOp], deps: dict[int, tuple[int, ...]], spec: AcceleratorSpec):
    arrays = list(spec.arrays)
    durations = {
        a.array_id: [ceil(op_compute_cycles(s.tile, a, s.kind) * 1e9 / a.clock_hz) for s in subops]
        for a in arrays
    }
    waiting = {s.index: len(deps[s.index]) for s in subops}
    users: dict[int, list[int]] = {s.index: [] for s in subops}
    for s, ds in deps.items():
        for d in ds:
            users[d].append(s)
    ready: list[tuple[int, int, int, int]] = []
    for s in subops:
        if waiting[s.index] == 0:
            heapq.heappush(ready, (s.depth, s.op_id, s.part, s.index))
    free_at = {a.array_id: 0 for a in arrays}
    running: list[tuple[int, int, str]] = []
    now = 0
    assignments = []
    order: dict[str, list[int]] = {a.array_id: [] for a in arrays}
    done = 0
    while done < len(subops):
        for a in arrays:
            if free_at[a.array_id] <= now and ready:
                *_, idx = heapq.heappop(ready)
                s = subops[idx]
                end = now + durations[a.array_id][idx]
                free_at[a.array_id] = end
                heapq.heappush(running, (end, idx, a.array_id))
                assignments.append((idx, s.op_id, a.array_id, s.tile))
                order[a.array_id].append(idx)
        if not running:
            raise PlanError("plan has unsatisfiable dependencies")
        now = running[0][0]
        while running and running[0][0] == now:
            _, idx, _ = heapq.heappop(running)
            done += 1
            for u in users[idx]:
                waiting[u] -= 1
                if waiting[u] == 0:
                    heapq.heappush(ready, (subops[u].depth, subops[u].op_id, subops[u].part, u))
    return assignments, order, now
