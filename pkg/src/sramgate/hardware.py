"""Accelerator description: systolic arrays, FIFO feeders and a memory tree."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import yaml

from sramgate.errors import ValidationError

MiB = 1 << 20
GiB = 1 << 30

_SIZE_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(B|KiB|MiB|GiB|KB|MB|GB)?\s*$")
_SIZE_UNITS = {None: 1, "B": 1, "KiB": 1 << 10, "MiB": MiB, "GiB": GiB, "KB": 1000, "MB": 10**6, "GB": 10**9}


def parse_size(value: Any, what: str = "size") -> int:
    """Accept an integer byte count or a string such as ``"128 MiB"``."""
    if isinstance(value, bool):
        raise ValidationError(f"{what}: expected a byte count, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        m = _SIZE_RE.match(value)
        if m:
            n = float(m.group(1)) * _SIZE_UNITS[m.group(2)]
            if n.is_integer():
                return int(n)
    raise ValidationError(f"{what}: cannot interpret {value!r} as a byte count")


@dataclass(frozen=True)
class SystolicArraySpec:
    array_id: str
    rows: int
    cols: int
    clock_hz: float = 1e9
    macs_per_pe_cycle: int = 1

    @property
    def pes(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class FifoSpec:
    lanes: int
    depth: int
    element_bytes: int = 1


@dataclass(frozen=True)
class MemLevelSpec:
    mem_id: str
    capacity: int
    ports: int
    interface_width: int
    access_latency_ns: float
    clock_hz: float = 1e9
    parent: str | None = None
    attached_arrays: tuple[str, ...] = ()
    # energy/leakage coefficients for the Stage I energy tally
    e_read_pj: float = 0.0
    e_write_pj: float = 0.0
    leak_mw: float = 0.0

    @property
    def bytes_per_beat(self) -> int:
        return max(1, self.interface_width // 8)

    @property
    def is_root(self) -> bool:
        return self.parent is None


@dataclass(frozen=True)
class AcceleratorSpec:
    arrays: tuple[SystolicArraySpec, ...]
    row_fifo: FifoSpec
    col_fifo: FifoSpec
    memories: tuple[MemLevelSpec, ...]
    subops: int = 1
    # MatMuls narrower than subops * this many output columns are not split
    subop_min_cols: int = 0
    pe_energy_pj_per_mac: float = 1.0
    name: str = ""
    _mem_index: dict[str, MemLevelSpec] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_mem_index", {m.mem_id: m for m in self.memories})

    def memory(self, mem_id: str) -> MemLevelSpec:
        return self._mem_index[mem_id]

    def array(self, array_id: str) -> SystolicArraySpec:
        for a in self.arrays:
            if a.array_id == array_id:
                return a
        raise KeyError(array_id)

    @property
    def root(self) -> MemLevelSpec:
        return next(m for m in self.memories if m.parent is None)

    @property
    def on_chip(self) -> tuple[MemLevelSpec, ...]:
        return tuple(m for m in self.memories if m.parent is not None)

    def memory_of(self, array_id: str) -> MemLevelSpec:
        for m in self.memories:
            if array_id in m.attached_arrays:
                return m
        raise KeyError(array_id)

    def path_to_root(self, mem_id: str) -> list[str]:
        path = [mem_id]
        while (parent := self.memory(path[-1]).parent) is not None:
            path.append(parent)
        return path

    def route(self, src: str, dst: str) -> list[str]:
        """Memories visited moving data from ``src`` to ``dst`` through the tree."""
        up = self.path_to_root(src)
        down = self.path_to_root(dst)
        common = next(m for m in up if m in down)
        return up[: up.index(common) + 1] + list(reversed(down[: down.index(common)]))

    def with_capacity(self, capacity: int, mem_ids: list[str] | None = None) -> AcceleratorSpec:
        """Copy with the given on-chip memories (default: all) resized."""
        targets = set(mem_ids) if mem_ids is not None else {m.mem_id for m in self.on_chip}
        mems = tuple(
            replace(m, capacity=capacity) if m.mem_id in targets else m for m in self.memories
        )
        spec = AcceleratorSpec(
            self.arrays, self.row_fifo, self.col_fifo, mems, self.subops,
            self.subop_min_cols, self.pe_energy_pj_per_mac, self.name,
        )
        validate_accelerator(spec)
        return spec

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.name:
            out["name"] = self.name
        out["subops"] = self.subops
        out["subop_min_cols"] = self.subop_min_cols
        out["pe_energy_pj_per_mac"] = self.pe_energy_pj_per_mac
        out["arrays"] = [
            {"id": a.array_id, "rows": a.rows, "cols": a.cols, "clock_hz": a.clock_hz,
             "macs_per_pe_cycle": a.macs_per_pe_cycle}
            for a in self.arrays
        ]
        out["row_fifo"] = _fifo_dict(self.row_fifo)
        out["col_fifo"] = _fifo_dict(self.col_fifo)
        out["memories"] = [
            {
                "id": m.mem_id,
                "capacity_bytes": m.capacity,
                "ports": m.ports,
                "interface_width_bits": m.interface_width,
                "access_latency_ns": m.access_latency_ns,
                "clock_hz": m.clock_hz,
                "parent": m.parent,
                "attached_arrays": list(m.attached_arrays),
                "e_read_pj": m.e_read_pj,
                "e_write_pj": m.e_write_pj,
                "leak_mw": m.leak_mw,
            }
            for m in self.memories
        ]
        return out


def _fifo_dict(f: FifoSpec) -> dict[str, int]:
    return {"lanes": f.lanes, "depth": f.depth, "element_bytes": f.element_bytes}


def _req(d: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in d:
        raise ValidationError(f"{where}: missing field {key!r}")
    return d[key]


def _num(value: Any, where: str, integer: bool = False) -> Any:
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a sign ("1.0e9") as strings
        try:
            value = float(value)
        except ValueError:
            raise ValidationError(f"{where}: expected a number, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _fifo(d: Any, where: str) -> FifoSpec:
    if not isinstance(d, Mapping):
        raise ValidationError(f"{where}: expected a mapping")
    return FifoSpec(
        lanes=_num(_req(d, "lanes", where), f"{where}.lanes", integer=True),
        depth=_num(_req(d, "depth", where), f"{where}.depth", integer=True),
        element_bytes=_num(d.get("element_bytes", 1), f"{where}.element_bytes", integer=True),
    )


def accelerator_from_mapping(data: Mapping[str, Any]) -> AcceleratorSpec:
    if not isinstance(data, Mapping):
        raise ValidationError("accelerator spec must be a mapping")
    arrays = []
    for i, a in enumerate(_req(data, "arrays", "accelerator") or []):
        where = f"arrays[{i}]"
        if not isinstance(a, Mapping):
            raise ValidationError(f"{where}: expected a mapping")
        arrays.append(
            SystolicArraySpec(
                array_id=str(_req(a, "id", where)),
                rows=_num(_req(a, "rows", where), f"{where}.rows", integer=True),
                cols=_num(_req(a, "cols", where), f"{where}.cols", integer=True),
                clock_hz=_num(a.get("clock_hz", 1e9), f"{where}.clock_hz"),
                macs_per_pe_cycle=_num(a.get("macs_per_pe_cycle", 1), f"{where}.macs_per_pe_cycle", integer=True),
            )
        )
    mems = []
    for i, m in enumerate(_req(data, "memories", "accelerator") or []):
        where = f"memories[{i}]"
        if not isinstance(m, Mapping):
            raise ValidationError(f"{where}: expected a mapping")
        parent = m.get("parent")
        mems.append(
            MemLevelSpec(
                mem_id=str(_req(m, "id", where)),
                capacity=parse_size(_req(m, "capacity_bytes", where), f"{where}.capacity_bytes"),
                ports=_num(_req(m, "ports", where), f"{where}.ports", integer=True),
                interface_width=_num(_req(m, "interface_width_bits", where), f"{where}.interface_width_bits", integer=True),
                access_latency_ns=_num(_req(m, "access_latency_ns", where), f"{where}.access_latency_ns"),
                clock_hz=_num(m.get("clock_hz", 1e9), f"{where}.clock_hz"),
                parent=None if parent is None else str(parent),
                attached_arrays=tuple(str(x) for x in m.get("attached_arrays") or ()),
                e_read_pj=_num(m.get("e_read_pj", 0.0), f"{where}.e_read_pj"),
                e_write_pj=_num(m.get("e_write_pj", 0.0), f"{where}.e_write_pj"),
                leak_mw=_num(m.get("leak_mw", 0.0), f"{where}.leak_mw"),
            )
        )
    spec = AcceleratorSpec(
        arrays=tuple(arrays),
        row_fifo=_fifo(_req(data, "row_fifo", "accelerator"), "row_fifo"),
        col_fifo=_fifo(_req(data, "col_fifo", "accelerator"), "col_fifo"),
        memories=tuple(mems),
        subops=_num(data.get("subops", 1), "subops", integer=True),
        subop_min_cols=_num(data.get("subop_min_cols", 0), "subop_min_cols", integer=True),
        pe_energy_pj_per_mac=_num(data.get("pe_energy_pj_per_mac", 1.0), "pe_energy_pj_per_mac"),
        name=str(data.get("name", "")),
    )
    validate_accelerator(spec)
    return spec


def validate_accelerator(spec: AcceleratorSpec) -> None:
    if not spec.arrays:
        raise ValidationError("arrays: at least one systolic array is required")
    ids = [a.array_id for a in spec.arrays]
    if len(set(ids)) != len(ids):
        raise ValidationError("arrays: duplicate array id")
    for a in spec.arrays:
        for key in ("rows", "cols", "clock_hz", "macs_per_pe_cycle"):
            if getattr(a, key) <= 0:
                raise ValidationError(f"arrays[{a.array_id}].{key} must be > 0")
    for name, f in (("row_fifo", spec.row_fifo), ("col_fifo", spec.col_fifo)):
        if f.lanes <= 0 or f.depth <= 0 or f.element_bytes <= 0:
            raise ValidationError(f"{name}: lanes, depth and element_bytes must be > 0")
    if spec.subops < 1:
        raise ValidationError("subops must be >= 1")
    if spec.subop_min_cols < 0:
        raise ValidationError("subop_min_cols must be >= 0")
    if spec.pe_energy_pj_per_mac < 0:
        raise ValidationError("pe_energy_pj_per_mac must be >= 0")

    mem_ids = [m.mem_id for m in spec.memories]
    if len(set(mem_ids)) != len(mem_ids):
        raise ValidationError("memories: duplicate memory id")
    for m in spec.memories:
        where = f"memories[{m.mem_id}]"
        if m.capacity <= 0:
            raise ValidationError(f"{where}.capacity_bytes must be > 0")
        if m.ports < 1:
            raise ValidationError(f"{where}.ports must be >= 1")
        if m.interface_width < 8:
            raise ValidationError(f"{where}.interface_width_bits must be >= 8")
        if m.access_latency_ns <= 0:
            raise ValidationError(f"{where}.access_latency_ns must be > 0")
        if m.clock_hz <= 0:
            raise ValidationError(f"{where}.clock_hz must be > 0")
        for key in ("e_read_pj", "e_write_pj", "leak_mw"):
            if getattr(m, key) < 0:
                raise ValidationError(f"{where}.{key} must be >= 0")
        if m.parent is not None and m.parent not in mem_ids:
            raise ValidationError(f"{where}.parent refers to unknown memory {m.parent!r}")
    roots = [m for m in spec.memories if m.parent is None]
    if len(roots) != 1:
        raise ValidationError(
            f"memory hierarchy must be a single tree (found {len(roots)} roots: "
            f"{', '.join(m.mem_id for m in roots) or 'none'})"
        )
    parents = {m.mem_id: m.parent for m in spec.memories}
    for start in mem_ids:
        seen = set()
        node: str | None = start
        while node is not None:
            if node in seen:
                raise ValidationError(f"memory hierarchy must be a single tree (cycle through {node!r})")
            seen.add(node)
            node = parents[node]
    if roots[0].attached_arrays:
        raise ValidationError(f"memories[{roots[0].mem_id}]: arrays must attach to an on-chip memory, not the root")
    for a in ids:
        owners = [m.mem_id for m in spec.memories if a in m.attached_arrays]
        if len(owners) != 1:
            raise ValidationError(f"array {a!r} must be attached to exactly one on-chip memory (found {len(owners)})")
    for m in spec.memories:
        for a in m.attached_arrays:
            if a not in ids:
                raise ValidationError(f"memories[{m.mem_id}].attached_arrays refers to unknown array {a!r}")


def parse_accelerator_spec(text: str) -> AcceleratorSpec:
    """Parse and validate a YAML accelerator description."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ValidationError(f"accelerator spec parse error{where}: {getattr(exc, 'problem', exc)}") from None
    return accelerator_from_mapping(data or {})


def dump_accelerator_spec(spec: AcceleratorSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


def peak_throughput(spec: AcceleratorSpec) -> float:
    """Peak MAC/s summed over all arrays."""
    return float(sum(a.rows * a.cols * a.clock_hz * a.macs_per_pe_cycle for a in spec.arrays))
