"""Transformer inference workload graphs.

A workload is a DAG of tensor operations for one prefill-style forward pass
over ``seq_len`` tokens. Attention is expanded per KV head group: the query
heads sharing one key/value head are stacked into the row dimension of a
single score MatMul and a single score-times-value MatMul.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from math import prod
from typing import Any, Mapping

import yaml

from sramgate.errors import ValidationError


class AttnKind(str, Enum):
    MHA = "MHA"
    GQA = "GQA"
    MQA = "MQA"


class FfnKind(str, Enum):
    FFN = "FFN"
    SWIGLU = "SwiGLU"


class OpKind(str, Enum):
    MATMUL = "MatMul"
    SOFTMAX = "Softmax"
    LAYERNORM = "LayerNorm"
    ELEMENTWISE = "ElementwiseMulAdd"
    ACTIVATION = "Activation"


class TensorKind(str, Enum):
    WEIGHT = "weight"
    ACTIVATION = "activation"
    KV_KEY = "kv_key"
    KV_VALUE = "kv_value"


MODEL_SPEC_KEYS = (
    "seq_len",
    "layers",
    "embed_dim",
    "ffn_dim",
    "attn_kind",
    "query_heads",
    "kv_heads",
    "ffn_kind",
    "operand_bytes",
)


@dataclass(frozen=True)
class ModelSpec:
    seq_len: int
    layers: int
    embed_dim: int
    ffn_dim: int
    attn_kind: AttnKind
    query_heads: int
    kv_heads: int
    ffn_kind: FfnKind
    operand_bytes: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "attn_kind", AttnKind(self.attn_kind))
        object.__setattr__(self, "ffn_kind", FfnKind(self.ffn_kind))

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.query_heads

    @property
    def group_size(self) -> int:
        """Query heads sharing one key/value head."""
        return self.query_heads // self.kv_heads

    def validate(self, allow_empty_sequence: bool = False) -> None:
        """Raise :class:`ValidationError` naming the first violated invariant."""
        min_seq = 0 if allow_empty_sequence else 1
        if self.seq_len < min_seq:
            raise ValidationError(f"seq_len must be >= {min_seq}, got {self.seq_len}")
        for key in ("layers", "embed_dim", "ffn_dim", "query_heads", "kv_heads", "operand_bytes"):
            if getattr(self, key) <= 0:
                raise ValidationError(f"{key} must be strictly positive, got {getattr(self, key)}")
        if self.embed_dim % self.query_heads:
            raise ValidationError(
                f"embed_dim ({self.embed_dim}) must be divisible by query_heads ({self.query_heads})"
            )
        h, hkv = self.query_heads, self.kv_heads
        if self.attn_kind is AttnKind.MHA and hkv != h:
            raise ValidationError(f"MHA requires kv_heads == query_heads, got {hkv} != {h}")
        if self.attn_kind is AttnKind.MQA and hkv != 1:
            raise ValidationError(f"MQA requires kv_heads == 1, got {hkv}")
        if self.attn_kind is AttnKind.GQA:
            if not 1 < hkv < h:
                raise ValidationError(f"GQA requires 1 < kv_heads < query_heads, got {hkv} / {h}")
            if h % hkv:
                raise ValidationError(f"GQA requires query_heads % kv_heads == 0, got {h} % {hkv}")

    def to_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in MODEL_SPEC_KEYS}
        d["attn_kind"] = self.attn_kind.value
        d["ffn_kind"] = self.ffn_kind.value
        if self.name:
            d = {"name": self.name, **d}
        return d


def model_spec_from_mapping(data: Mapping[str, Any]) -> ModelSpec:
    if not isinstance(data, Mapping):
        raise ValidationError("model spec must be a mapping of keys to values")
    missing = [k for k in MODEL_SPEC_KEYS if k not in data and k != "kv_heads"]
    if missing:
        raise ValidationError(f"model spec missing keys: {', '.join(missing)}")
    unknown = sorted(set(data) - set(MODEL_SPEC_KEYS) - {"name"})
    if unknown:
        raise ValidationError(f"model spec has unknown keys: {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key in MODEL_SPEC_KEYS:
        if key not in data:
            continue
        value = data[key]
        if key in ("attn_kind", "ffn_kind"):
            kwargs[key] = str(value)
        else:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValidationError(f"model spec field {key!r} must be an integer, got {value!r}")
            kwargs[key] = value
    try:
        attn = AttnKind(kwargs["attn_kind"])
    except ValueError:
        raise ValidationError(f"attn_kind must be one of MHA/GQA/MQA, got {kwargs['attn_kind']!r}") from None
    try:
        FfnKind(kwargs["ffn_kind"])
    except ValueError:
        raise ValidationError(f"ffn_kind must be FFN or SwiGLU, got {kwargs['ffn_kind']!r}") from None
    if "kv_heads" not in kwargs:
        # MHA tables commonly leave the KV head column blank
        if attn is AttnKind.MHA:
            kwargs["kv_heads"] = kwargs["query_heads"]
        elif attn is AttnKind.MQA:
            kwargs["kv_heads"] = 1
        else:
            raise ValidationError("GQA model spec requires kv_heads")
    spec = ModelSpec(name=str(data.get("name", "")), **kwargs)
    spec.validate()
    return spec


def parse_model_spec(text: str) -> ModelSpec:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse model spec: {exc}") from None
    return model_spec_from_mapping(data or {})


def dump_model_spec(spec: ModelSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


GPT2_XL = ModelSpec(
    name="GPT-2 XL",
    seq_len=2048,
    layers=48,
    embed_dim=1600,
    ffn_dim=6400,
    attn_kind=AttnKind.MHA,
    query_heads=25,
    kv_heads=25,
    ffn_kind=FfnKind.FFN,
    operand_bytes=1,
)

DS_R1D_Q15B = ModelSpec(
    name="DS-R1D Q-1.5B",
    seq_len=2048,
    layers=28,
    embed_dim=1536,
    ffn_dim=8960,
    attn_kind=AttnKind.GQA,
    query_heads=12,
    kv_heads=2,
    ffn_kind=FfnKind.SWIGLU,
    operand_bytes=1,
)

PRESETS = {"gpt2-xl": GPT2_XL, "ds-r1d-q1.5b": DS_R1D_Q15B}


@dataclass(frozen=True)
class TensorDesc:
    tensor_id: int
    name: str
    shape: tuple[int, int]
    kind: TensorKind
    operand_bytes: int
    producer: int | None = None
    consumers: tuple[int, ...] = ()

    @property
    def elements(self) -> int:
        return prod(self.shape)

    @property
    def size(self) -> int:
        return self.elements * self.operand_bytes


@dataclass(frozen=True)
class OpNode:
    """One tensor operation.

    ``dims`` is ``(rows_out, inner_k, cols_out)`` for MatMul and
    ``(elements,)`` otherwise. Ops consume whole input tensors even when
    their dims only touch a slice (per-group attention reads a head slice
    of Q/K/V); the dims decide how many bytes are actually streamed.
    """

    op_id: int
    name: str
    kind: OpKind
    dims: tuple[int, ...]
    inputs: tuple[int, ...]
    output: int
    layer: int

    @property
    def mac_count(self) -> int:
        if self.kind is OpKind.MATMUL:
            rows, inner, cols = self.dims
            return rows * inner * cols
        return self.dims[0]


@dataclass
class WorkloadGraph:
    spec: ModelSpec
    ops: list[OpNode] = field(default_factory=list)
    tensors: list[TensorDesc] = field(default_factory=list)
    topo_order: list[int] = field(default_factory=list)

    def op(self, op_id: int) -> OpNode:
        return self.ops[op_id]

    def tensor(self, tensor_id: int) -> TensorDesc:
        return self.tensors[tensor_id]

    def predecessors(self, op_id: int) -> list[int]:
        preds = []
        for tid in self.ops[op_id].inputs:
            producer = self.tensors[tid].producer
            if producer is not None and producer not in preds:
                preds.append(producer)
        return preds

    def successors(self, op_id: int) -> list[int]:
        return list(self.tensors[self.ops[op_id].output].consumers)

    def depths(self) -> list[int]:
        """Longest-path distance from any source op, per op id."""
        depth = [0] * len(self.ops)
        for oid in self.topo_order:
            preds = self.predecessors(oid)
            if preds:
                depth[oid] = 1 + max(depth[p] for p in preds)
        return depth

    def validate(self) -> None:
        ids = {op.op_id for op in self.ops}
        for t in self.tensors:
            if t.size <= 0:
                raise ValidationError(f"tensor {t.name} has non-positive size")
            for c in t.consumers:
                if c not in ids:
                    raise ValidationError(f"tensor {t.name} consumer {c} is not in the graph")
            if t.kind is not TensorKind.WEIGHT and t.producer is None and t.name != "input":
                raise ValidationError(f"non-weight tensor {t.name} has no producer")
        pos = {oid: i for i, oid in enumerate(self.topo_order)}
        if len(pos) != len(self.ops):
            raise ValidationError("topo_order does not cover every op exactly once")
        for op in self.ops:
            for p in self.predecessors(op.op_id):
                if pos[p] >= pos[op.op_id]:
                    raise ValidationError(f"topo_order places {op.name} before its producer")

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "ops": [
                {**asdict(op), "kind": op.kind.value, "mac_count": op.mac_count} for op in self.ops
            ],
            "tensors": [{**asdict(t), "kind": t.kind.value, "size": t.size} for t in self.tensors],
            "topo_order": self.topo_order,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class _GraphBuilder:
    def __init__(self, spec: ModelSpec) -> None:
        self.spec = spec
        self.ops: list[OpNode] = []
        self.tensors: list[TensorDesc] = []
        self._consumers: list[list[int]] = []

    def tensor(self, name: str, shape: tuple[int, int], kind: TensorKind = TensorKind.ACTIVATION) -> int:
        tid = len(self.tensors)
        self.tensors.append(TensorDesc(tid, name, shape, kind, self.spec.operand_bytes))
        self._consumers.append([])
        return tid

    def op(
        self,
        name: str,
        kind: OpKind,
        dims: tuple[int, ...],
        inputs: list[int],
        out_shape: tuple[int, int],
        layer: int,
        out_kind: TensorKind = TensorKind.ACTIVATION,
    ) -> int:
        oid = len(self.ops)
        out = self.tensor(name, out_shape, out_kind)
        self.tensors[out] = replace(self.tensors[out], producer=oid)
        for tid in inputs:
            self._consumers[tid].append(oid)
        self.ops.append(OpNode(oid, name, kind, dims, tuple(inputs), out, layer))
        return out

    def matmul(
        self,
        name: str,
        a: list[int],
        b: int,
        rows: int,
        inner: int,
        cols: int,
        layer: int,
        out_kind: TensorKind = TensorKind.ACTIVATION,
    ) -> int:
        return self.op(name, OpKind.MATMUL, (rows, inner, cols), [*a, b], (rows, cols), layer, out_kind)

    def weight(self, name: str, rows: int, cols: int) -> int:
        return self.tensor(name, (rows, cols), TensorKind.WEIGHT)

    def finish(self) -> WorkloadGraph:
        tensors = [replace(t, consumers=tuple(c)) for t, c in zip(self.tensors, self._consumers)]
        # ops are emitted in program order, which is already topological
        return WorkloadGraph(self.spec, self.ops, tensors, [op.op_id for op in self.ops])


def build_workload(spec: ModelSpec) -> WorkloadGraph:
    """Expand ``spec`` into a pre-LayerNorm decoder stack.

    Per layer: LayerNorm, Q/K/V projections, per-group score MatMul,
    softmax and score-times-value MatMul, output projection, residual add,
    LayerNorm, FFN (GELU MLP or SwiGLU) and a second residual add.
    Positional encodings, token embedding and the LM head are not modelled.
    """
    spec.validate(allow_empty_sequence=True)
    if spec.seq_len == 0:
        return WorkloadGraph(spec)
    m, d, dff = spec.seq_len, spec.embed_dim, spec.ffn_dim
    dh, hkv, g = spec.head_dim, spec.kv_heads, spec.group_size
    kv_cols = hkv * dh
    gb = _GraphBuilder(spec)
    x = gb.tensor("input", (m, d))
    for layer in range(spec.layers):
        p = f"L{layer:02d}"
        h1 = gb.op(f"{p}.ln1", OpKind.LAYERNORM, (m * d,), [x], (m, d), layer)
        q = gb.matmul(f"{p}.q_proj", [h1], gb.weight(f"{p}.wq", d, d), m, d, d, layer)
        k = gb.matmul(f"{p}.k_proj", [h1], gb.weight(f"{p}.wk", d, kv_cols), m, d, kv_cols, layer, TensorKind.KV_KEY)
        v = gb.matmul(f"{p}.v_proj", [h1], gb.weight(f"{p}.wv", d, kv_cols), m, d, kv_cols, layer, TensorKind.KV_VALUE)
        ctx = []
        for grp in range(hkv):
            s = gb.matmul(f"{p}.score.g{grp}", [q], k, g * m, dh, m, layer)
            pr = gb.op(f"{p}.softmax.g{grp}", OpKind.SOFTMAX, (g * m * m,), [s], (g * m, m), layer)
            ctx.append(gb.matmul(f"{p}.context.g{grp}", [pr], v, g * m, m, dh, layer))
        a = gb.matmul(f"{p}.o_proj", ctx, gb.weight(f"{p}.wo", d, d), m, d, d, layer)
        x2 = gb.op(f"{p}.residual1", OpKind.ELEMENTWISE, (m * d,), [x, a], (m, d), layer)
        h2 = gb.op(f"{p}.ln2", OpKind.LAYERNORM, (m * d,), [x2], (m, d), layer)
        if spec.ffn_kind is FfnKind.SWIGLU:
            up = gb.matmul(f"{p}.ffn_up", [h2], gb.weight(f"{p}.w_up", d, dff), m, d, dff, layer)
            gate = gb.matmul(f"{p}.ffn_gate", [h2], gb.weight(f"{p}.w_gate", d, dff), m, d, dff, layer)
            act = gb.op(f"{p}.ffn_silu", OpKind.ACTIVATION, (m * dff,), [gate], (m, dff), layer)
            hid = gb.op(f"{p}.ffn_mul", OpKind.ELEMENTWISE, (m * dff,), [act, up], (m, dff), layer)
        else:
            up = gb.matmul(f"{p}.ffn_up", [h2], gb.weight(f"{p}.w_up", d, dff), m, d, dff, layer)
            hid = gb.op(f"{p}.ffn_gelu", OpKind.ACTIVATION, (m * dff,), [up], (m, dff), layer)
        f = gb.matmul(f"{p}.ffn_down", [hid], gb.weight(f"{p}.w_down", dff, d), m, dff, d, layer)
        x = gb.op(f"{p}.residual2", OpKind.ELEMENTWISE, (m * d,), [x2, f], (m, d), layer)
    graph = gb.finish()
    graph.validate()
    return graph


def count_params(graph: WorkloadGraph) -> int:
    """Projection weights only: embeddings, LM head, biases and norm scales are excluded."""
    return sum(t.elements for t in graph.tensors if t.kind is TensorKind.WEIGHT)


def count_macs(graph: WorkloadGraph, seq_len: int | None = None) -> int:
    """Total MACs of one forward pass; non-MatMul ops count one per element.

    Passing ``seq_len`` different from the graph's own rebuilds the graph
    for that many tokens.
    """
    if seq_len is not None and seq_len != graph.spec.seq_len:
        graph = build_workload(replace(graph.spec, seq_len=seq_len))
    return sum(op.mac_count for op in graph.ops)


def kv_footprint(spec: ModelSpec) -> int:
    """Bytes of keys and values across all layers for ``seq_len`` tokens."""
    return 2 * spec.layers * spec.seq_len * spec.kv_heads * spec.head_dim * spec.operand_bytes
