from __future__ import annotations

import sys
from importlib.resources import files
from typing import Any

import pytest

from sramgate.hardware import AcceleratorSpec, accelerator_from_mapping, parse_accelerator_spec
from sramgate.sim import SimResult, build_plan, simulate
from sramgate.workload import (
    DS_R1D_Q15B,
    GPT2_XL,
    AttnKind,
    FfnKind,
    ModelSpec,
    OpKind,
    OpNode,
    TensorDesc,
    TensorKind,
    WorkloadGraph,
    build_workload,
)

MINIMAL = ModelSpec(
    seq_len=2, layers=1, embed_dim=4, ffn_dim=8, attn_kind=AttnKind.MHA,
    query_heads=2, kv_heads=2, ffn_kind=FfnKind.FFN, operand_bytes=1,
)


def preset_text(name: str) -> str:
    return files("sramgate.presets").joinpath(name).read_text()


def accel(
    arrays: int = 1,
    rows: int = 128,
    cols: int = 128,
    sram: int = 1 << 20,
    sram_ports: int = 4,
    sram_width: int = 512,
    sram_latency: float = 32,
    dram_ports: int = 2,
    dram_latency: float = 80,
    subops: int = 1,
    subop_min_cols: int = 0,
    **extra: Any,
) -> AcceleratorSpec:
    ids = [f"sa{i}" for i in range(arrays)]
    data = {
        "subops": subops,
        "subop_min_cols": subop_min_cols,
        "arrays": [{"id": a, "rows": rows, "cols": cols, "clock_hz": 1e9} for a in ids],
        "row_fifo": {"lanes": rows, "depth": 256},
        "col_fifo": {"lanes": cols, "depth": 256},
        "memories": [
            {"id": "dram", "capacity_bytes": 1 << 30, "ports": dram_ports, "interface_width_bits": 512,
             "access_latency_ns": dram_latency},
            {"id": "sram", "capacity_bytes": sram, "ports": sram_ports, "interface_width_bits": sram_width,
             "access_latency_ns": sram_latency, "parent": "dram", "attached_arrays": ids},
        ],
        **extra,
    }
    return accelerator_from_mapping(data)


class GraphSketch:
    """Hand-built graphs for engine and planner tests."""

    def __init__(self, operand_bytes: int = 1) -> None:
        self.spec = ModelSpec(1, 1, 1, 1, AttnKind.MHA, 1, 1, FfnKind.FFN, operand_bytes)
        self.tensors: list[dict] = []
        self.ops: list[OpNode] = []

    def tensor(self, name: str, rows: int, cols: int, kind: TensorKind = TensorKind.ACTIVATION) -> int:
        self.tensors.append(dict(name=name, shape=(rows, cols), kind=kind, producer=None, consumers=[]))
        return len(self.tensors) - 1

    def weight(self, name: str, rows: int, cols: int) -> int:
        return self.tensor(name, rows, cols, TensorKind.WEIGHT)

    def matmul(self, name: str, a: int, b: int) -> int:
        r, k = self.tensors[a]["shape"]
        k2, c = self.tensors[b]["shape"]
        assert k == k2
        return self._op(name, OpKind.MATMUL, (r, k, c), [a, b], (r, c))

    def eltwise(self, name: str, kind: OpKind, inputs: list[int]) -> int:
        shape = self.tensors[inputs[0]]["shape"]
        return self._op(name, kind, (shape[0] * shape[1],), inputs, shape)

    def _op(self, name, kind, dims, inputs, out_shape) -> int:
        oid = len(self.ops)
        out = self.tensor(name, *out_shape)
        self.tensors[out]["producer"] = oid
        for t in inputs:
            self.tensors[t]["consumers"].append(oid)
        self.ops.append(OpNode(oid, name, kind, dims, tuple(inputs), out, 0))
        return out

    def build(self) -> WorkloadGraph:
        tensors = [
            TensorDesc(i, t["name"], t["shape"], t["kind"], self.spec.operand_bytes, t["producer"], tuple(t["consumers"]))
            for i, t in enumerate(self.tensors)
        ]
        g = WorkloadGraph(self.spec, list(self.ops), tensors, [op.op_id for op in self.ops])
        return g


@pytest.fixture(scope="session")
def baseline() -> AcceleratorSpec:
    return parse_accelerator_spec(preset_text("baseline.yaml"))


@pytest.fixture(scope="session")
def multilevel() -> AcceleratorSpec:
    return parse_accelerator_spec(preset_text("multilevel.yaml"))


def _run(spec: ModelSpec, acc: AcceleratorSpec) -> SimResult:
    g = build_workload(spec)
    return simulate(build_plan(g, acc), g, acc)


@pytest.fixture(scope="session")
def ds_run(baseline) -> SimResult:
    return _run(DS_R1D_Q15B, baseline)


@pytest.fixture(scope="session")
def gpt_run(baseline) -> SimResult:
    return _run(GPT2_XL, baseline)


@pytest.fixture(scope="session")
def ds_multilevel_run(multilevel) -> SimResult:
    return _run(DS_R1D_Q15B, multilevel)


def pytest_terminal_summary(terminalreporter) -> None:
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.result_lines():
        terminalreporter.write_line(line)
