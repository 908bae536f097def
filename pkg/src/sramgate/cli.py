"""Command-line front end: simulate, size, explore and report.

Every command reads a YAML run manifest. Stage II never re-runs the
simulator when Stage I artifacts are already on disk; it only reads the
stored trace and statistics files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path
from typing import Any, Sequence

import yaml

from sramgate.errors import InfeasibleError, ValidationError
from sramgate.explorer import (
    CandidateResult,
    GatingPolicy,
    MemCharacterization,
    load_characterization,
    size_sram,
    sweep,
    sweep_to_csv,
    synth_grid,
)
from sramgate.hardware import MiB, AcceleratorSpec, parse_accelerator_spec, parse_size
from sramgate.memory import AccessStats, OccupancyTrace
from sramgate.sim import build_plan, simulate
from sramgate.traces import BankingParams, bank_activity, peak
from sramgate.workload import PRESETS, ModelSpec, build_workload, parse_model_spec

log = logging.getLogger("sramgate")

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3

ACCELERATOR_PRESETS = {"baseline": "baseline.yaml", "multilevel": "multilevel.yaml"}
STAGES = ("simulate", "explore")


# -- manifest ----------------------------------------------------------------


@dataclass
class SweepGrid:
    capacities: list[int] = field(default_factory=list)
    banks: list[int] = field(default_factory=list)
    alphas: list[float] = field(default_factory=lambda: [0.9])
    policies: list[str] = field(default_factory=lambda: ["conservative"])
    # (capacity, banks, alphas) points that get bank-activity timelines
    timelines: list[tuple[int, int, list[float]]] = field(default_factory=list)
    memories: list[str] | None = None

    def gating_policies(self) -> list[GatingPolicy]:
        out: list[GatingPolicy] = []
        for name in self.policies:
            if name == "conservative":
                alphas = [a for a in self.alphas if a < 1]
                if not alphas:
                    raise ValidationError("conservative policy needs at least one alpha below 1")
                out.extend(GatingPolicy.conservative(a) for a in alphas)
            else:
                out.append(GatingPolicy.from_label(name))
        return out

    def validate(self) -> None:
        if not self.capacities or not self.banks or not self.policies:
            raise ValidationError("sweep grid is empty: capacities, banks and policies must be non-empty")
        for b in self.banks:
            if b <= 0:
                raise ValidationError(f"bank counts must be positive, got {b}")
        for a in self.alphas:
            if not 0 < a <= 1:
                raise ValidationError(f"alpha must be in (0, 1], got {a}")
        self.gating_policies()


@dataclass
class SizingConfig:
    start: int
    step: int
    ceiling: int | None = None
    memories: list[str] | None = None


@dataclass
class RunManifest:
    workload: ModelSpec
    accelerator: AcceleratorSpec
    characterization: str
    output: Path
    stages: tuple[str, ...] = STAGES
    sizing: SizingConfig | None = None
    grid: SweepGrid = field(default_factory=SweepGrid)
    base_dir: Path = Path(".")

    @property
    def stage1_dir(self) -> Path:
        return self.output / "stage1"

    @property
    def stage2_dir(self) -> Path:
        return self.output / "stage2"


def _resolve(base: Path, ref: str) -> Path:
    path = Path(ref)
    return path if path.is_absolute() else base / path


def _read(path: Path, what: str) -> str:
    try:
        return path.read_text()
    except FileNotFoundError:
        raise ValidationError(f"{what} file not found: {path}") from None
    except OSError as exc:
        raise ValidationError(f"cannot read {what} file {path}: {exc.strerror}") from None


def _load_workload(ref: str, base: Path) -> ModelSpec:
    if ref.startswith("preset:"):
        name = ref.removeprefix("preset:")
        if name not in PRESETS:
            raise ValidationError(f"unknown workload preset {name!r} (known: {', '.join(sorted(PRESETS))})")
        return PRESETS[name]
    return parse_model_spec(_read(_resolve(base, ref), "workload"))


def _load_accelerator(ref: str, base: Path) -> AcceleratorSpec:
    if ref.startswith("preset:"):
        name = ref.removeprefix("preset:")
        if name not in ACCELERATOR_PRESETS:
            raise ValidationError(
                f"unknown accelerator preset {name!r} (known: {', '.join(sorted(ACCELERATOR_PRESETS))})"
            )
        return parse_accelerator_spec(files("sramgate.presets").joinpath(ACCELERATOR_PRESETS[name]).read_text())
    return parse_accelerator_spec(_read(_resolve(base, ref), "accelerator"))


def _list(value: Any, key: str) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ValidationError(f"manifest field {key!r} must be a list")
    return value


def _grid(data: Any) -> SweepGrid:
    if data is None:
        return SweepGrid()
    if not isinstance(data, dict):
        raise ValidationError("manifest field 'sweep' must be a mapping")
    unknown = sorted(set(data) - {"capacities", "banks", "alphas", "policies", "timelines", "memories"})
    if unknown:
        raise ValidationError(f"sweep has unknown keys: {', '.join(unknown)}")
    grid = SweepGrid(
        capacities=[parse_size(c, "sweep capacity") for c in _list(data.get("capacities"), "capacities")],
        banks=[int(b) for b in _list(data.get("banks"), "banks")],
    )
    if "alphas" in data:
        grid.alphas = [float(a) for a in _list(data["alphas"], "alphas")]
    if "policies" in data:
        grid.policies = [str(p) for p in _list(data["policies"], "policies")]
    if "memories" in data:
        grid.memories = [str(m) for m in _list(data["memories"], "memories")]
    for i, point in enumerate(_list(data.get("timelines"), "timelines")):
        if not isinstance(point, dict) or "capacity" not in point or "banks" not in point:
            raise ValidationError(f"sweep timeline {i} needs capacity and banks")
        alphas = [float(a) for a in _list(point.get("alphas", grid.alphas), "alphas")]
        grid.timelines.append((parse_size(point["capacity"], "timeline capacity"), int(point["banks"]), alphas))
    return grid


def load_manifest(path: Path) -> RunManifest:
    text = _read(path, "manifest")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse manifest {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"manifest {path} must be a mapping")
    unknown = sorted(set(data) - {"workload", "accelerator", "characterization", "output", "stages", "sizing", "sweep"})
    if unknown:
        raise ValidationError(f"manifest has unknown keys: {', '.join(unknown)}")
    for key in ("workload", "accelerator"):
        if key not in data:
            raise ValidationError(f"manifest missing {key!r}")
    base = path.parent
    stages = tuple(_list(data.get("stages", list(STAGES)), "stages"))
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ValidationError(f"unknown stages {bad} (known: {', '.join(STAGES)})")
    sizing = None
    if data.get("sizing") is not None:
        s = data["sizing"]
        if not isinstance(s, dict) or "start" not in s or "step" not in s:
            raise ValidationError("manifest 'sizing' needs start and step")
        sizing = SizingConfig(
            start=parse_size(s["start"], "sizing start"),
            step=parse_size(s["step"], "sizing step"),
            ceiling=parse_size(s["ceiling"], "sizing ceiling") if s.get("ceiling") is not None else None,
            memories=[str(m) for m in _list(s.get("memories"), "memories")] or None,
        )
    char = str(data.get("characterization", "synthetic"))
    if char != "synthetic" and not _resolve(base, char).is_file():
        raise ValidationError(f"characterization file not found: {_resolve(base, char)}")
    return RunManifest(
        workload=_load_workload(str(data["workload"]), base),
        accelerator=_load_accelerator(str(data["accelerator"]), base),
        characterization=char,
        output=_resolve(base, str(data.get("output", "out"))),
        stages=stages,
        sizing=sizing,
        grid=_grid(data.get("sweep")),
        base_dir=base,
    )


# -- artifact writers ----------------------------------------------------------


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- commands ----------------------------------------------------------------


def cmd_simulate(m: RunManifest) -> dict[str, Any]:
    graph = build_workload(m.workload)
    plan = build_plan(graph, m.accelerator)
    result = simulate(plan, graph, m.accelerator)
    stats = result.stats_dict()
    stats["workload"] = m.workload.to_dict()
    stats["accelerator"] = m.accelerator.name
    stats["capacity_bytes"] = {mem.mem_id: mem.capacity for mem in m.accelerator.on_chip}
    stats["subops"] = len(plan.subops)
    out = m.stage1_dir
    _write(out / "stats.json", _json(stats))
    for mem_id, trace in sorted(result.traces.items()):
        _write(out / f"trace_{mem_id}.csv", trace.to_csv())
    _write(out / "breakdown.csv", _table(
        ("op_kind", "compute_ns", "memory_ns", "idle_ns"),
        [(k, c, mem, i) for k, (c, mem, i) in sorted(result.per_op_breakdown.items())],
    ))
    _write(out / "energy.csv", _table(
        ("component", "energy_J"), [(k, repr(v)) for k, v in sorted(result.energy_breakdown.items())]
    ))
    print(
        f"latency {result.total_latency / 1e6:.3f} ms, utilization {result.avg_pe_utilization:.3f}, "
        f"capacity write-backs {result.capacity_writebacks}, peak needed "
        + ", ".join(f"{k} {v / MiB:.2f} MiB" for k, v in sorted(result.peak_needed.items()))
    )
    return stats


def cmd_size(m: RunManifest) -> dict[str, Any]:
    if m.sizing is None:
        raise ValidationError("manifest has no 'sizing' section")
    graph = build_workload(m.workload)
    res = size_sram(graph, m.accelerator, m.sizing.start, m.sizing.step, m.sizing.ceiling, m.sizing.memories)
    report = {
        "capacity_bytes": res.capacity,
        "peak_needed_bytes": dict(sorted(res.peak.items())),
        "steps": [
            {"capacity_bytes": s.capacity, "writebacks": s.writebacks, "outcome": s.outcome} for s in res.steps
        ],
    }
    _write(m.output / "size" / "sizing.json", _json(report))
    for s in res.steps:
        print(f"{s.capacity / MiB:g} MiB: {s.outcome}" + (f" ({s.writebacks} write-backs)" if s.writebacks else ""))
    print(f"feasible capacity {res.capacity / MiB:g} MiB, peak needed {res.peak_max / MiB:.2f} MiB")
    return report


def load_stage1(directory: Path) -> tuple[dict[str, OccupancyTrace], dict[str, AccessStats], dict[str, Any]]:
    stats = json.loads(_read(directory / "stats.json", "Stage I statistics"))
    traces, access = {}, {}
    for mem_id in sorted(stats["capacity_bytes"]):
        traces[mem_id] = OccupancyTrace.from_csv(_read(directory / f"trace_{mem_id}.csv", "trace"))
        access[mem_id] = AccessStats(**stats["access_stats"][mem_id])
    return traces, access, stats


def _characterization(m: RunManifest, capacities: list[int], banks: list[int]) -> MemCharacterization:
    if m.characterization == "synthetic":
        return synth_grid(capacities, banks)
    return load_characterization(_read(_resolve(m.base_dir, m.characterization), "characterization"))


def _timeline_name(mem_id: str, capacity: int, banks: int, alpha: float) -> str:
    return f"{mem_id}_C{capacity // MiB}_B{banks}_a{alpha:g}.csv"


def cmd_explore(m: RunManifest, fresh: bool = False) -> dict[str, Any]:
    grid = m.grid
    grid.validate()
    if fresh or not (m.stage1_dir / "stats.json").is_file():
        if "simulate" not in m.stages:
            raise ValidationError(f"no Stage I artifacts in {m.stage1_dir} and the manifest disables simulate")
        log.info("no stored Stage I artifacts, simulating first")
        cmd_simulate(m)
    traces, access, _ = load_stage1(m.stage1_dir)
    mem_ids = grid.memories or sorted(traces)
    for mem_id in mem_ids:
        if mem_id not in traces:
            raise ValidationError(f"no Stage I trace for memory {mem_id!r}")
    policies = grid.gating_policies()
    summary: dict[str, Any] = {"memories": {}}
    all_caps = sorted(set(grid.capacities) | {c for c, _, _ in grid.timelines})
    all_banks = sorted(set(grid.banks) | {b for _, b, _ in grid.timelines})
    char = _characterization(m, all_caps, all_banks)
    for mem_id in mem_ids:
        need = peak(traces[mem_id])
        admitted = sorted(c for c in set(grid.capacities) if c >= need)
        excluded = sorted(set(grid.capacities) - set(admitted))
        for c in excluded:
            log.warning("%s: %g MiB is below the peak requirement %.2f MiB, skipped", mem_id, c / MiB, need / MiB)
        if not admitted:
            raise InfeasibleError(
                f"{mem_id}: every sweep capacity is below the peak requirement {need / MiB:.2f} MiB"
            )
        results = sweep(traces[mem_id], access[mem_id], admitted, grid.banks, policies, char)
        _write(m.stage2_dir / f"sweep_{mem_id}.csv", sweep_to_csv(results))
        _write(m.stage2_dir / f"candidates_{mem_id}.csv", _candidates_table(results))
        for capacity, banks, alphas in grid.timelines:
            for alpha in alphas:
                tl = bank_activity(traces[mem_id], BankingParams(capacity, banks, alpha))
                _write(m.stage2_dir / "timelines" / _timeline_name(mem_id, capacity, banks, alpha), tl.to_csv())
        best = min(results, key=lambda r: (r.e_tot_mj, r.capacity, r.banks))
        summary["memories"][mem_id] = {
            "peak_needed_bytes": need,
            "admitted_capacities_bytes": admitted,
            "excluded_capacities_bytes": excluded,
            "rows": len(results),
            "lowest_energy": {"capacity_bytes": best.capacity, "banks": best.banks,
                              "policy": best.policy.label, "E_mJ": best.e_tot_mj},
        }
        print(
            f"{mem_id}: {len(results)} candidates, lowest energy {best.e_tot_mj:.1f} mJ at "
            f"{best.capacity / MiB:g} MiB, B={best.banks}, {best.policy.label}"
        )
    summary["characterization"] = m.characterization
    _write(m.stage2_dir / "explore.json", _json(summary))
    return summary


def _candidates_table(results: Sequence[CandidateResult]) -> str:
    """Energy terms and gating details per candidate, beyond the sweep table."""
    return _table(
        ("C_MiB", "B", "policy", "E_dyn_mJ", "E_leak_mJ", "E_sw_mJ", "E_mJ",
         "N_sw", "skipped_intervals", "wake_latency_ns"),
        [
            (f"{r.capacity / MiB:g}", r.banks, r.policy.label, repr(r.e_dyn_mj), repr(r.e_leak_mj),
             repr(r.e_sw_mj), repr(r.e_tot_mj), r.n_sw, r.skipped_intervals, repr(r.wake_latency_ns))
            for r in results
        ],
    )


def cmd_report(m: RunManifest) -> str:
    lines = [f"# {m.workload.name or 'workload'} on {m.accelerator.name or 'accelerator'}", ""]
    stats_path = m.stage1_dir / "stats.json"
    if not stats_path.is_file():
        raise ValidationError(f"no Stage I artifacts in {m.stage1_dir}; run simulate first")
    stats = json.loads(stats_path.read_text())
    lines += [
        "## Stage I",
        f"- latency: {stats['total_latency_ns'] / 1e6:.3f} ms",
        f"- average PE utilization: {stats['avg_pe_utilization']:.3f}",
        f"- capacity write-backs: {stats['capacity_writebacks']}",
    ]
    for mem_id, b in sorted(stats["peak_needed_bytes"].items()):
        cap = stats["capacity_bytes"][mem_id]
        lines.append(f"- {mem_id}: peak needed {b / MiB:.2f} MiB of {cap / MiB:g} MiB")
    sizing = m.output / "size" / "sizing.json"
    if sizing.is_file():
        s = json.loads(sizing.read_text())
        lines += ["", "## Sizing", f"- feasible capacity: {s['capacity_bytes'] / MiB:g} MiB"]
    explore = m.stage2_dir / "explore.json"
    if explore.is_file():
        e = json.loads(explore.read_text())
        lines += ["", "## Stage II"]
        for mem_id, info in sorted(e["memories"].items()):
            best = info["lowest_energy"]
            lines.append(
                f"- {mem_id}: {info['rows']} candidates, lowest energy {best['E_mJ']:.1f} mJ at "
                f"{best['capacity_bytes'] / MiB:g} MiB, B={best['banks']} ({best['policy']})"
            )
    text = "\n".join(lines) + "\n"
    _write(m.output / "report.md", text)
    print(text, end="")
    return text


# -- entry point -------------------------------------------------------------


def _mib_list(text: str) -> list[int]:
    return [int(float(x) * MiB) for x in text.split(",") if x.strip()]


def _apply_overrides(m: RunManifest, args: argparse.Namespace) -> None:
    if getattr(args, "output", None):
        m.output = Path(args.output)
    if getattr(args, "capacities", None) is not None:
        m.grid.capacities = _mib_list(args.capacities)
    if getattr(args, "banks", None) is not None:
        m.grid.banks = [int(x) for x in args.banks.split(",") if x.strip()]
    if getattr(args, "alphas", None) is not None:
        m.grid.alphas = [float(x) for x in args.alphas.split(",") if x.strip()]
    if getattr(args, "policies", None) is not None:
        m.grid.policies = [x.strip() for x in args.policies.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sramgate", description="SRAM sizing and bank power-gating exploration")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run Stage I and write traces and statistics"),
        ("size", "find the smallest feasible on-chip capacity"),
        ("explore", "sweep banking and gating candidates over the Stage I trace"),
        ("report", "summarize the artifacts in the output directory"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("manifest", type=Path, help="run manifest (YAML)")
        p.add_argument("-o", "--output", help="output directory (overrides the manifest)")
        if name == "explore":
            p.add_argument("--capacities", help="comma-separated capacities in MiB")
            p.add_argument("--banks", help="comma-separated bank counts")
            p.add_argument("--alphas", help="comma-separated headroom factors")
            p.add_argument("--policies", help="comma-separated policies: none, aggressive, conservative")
            p.add_argument("--fresh", action="store_true", help="re-run Stage I even if artifacts exist")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        manifest = load_manifest(args.manifest)
        _apply_overrides(manifest, args)
        if args.command == "simulate":
            cmd_simulate(manifest)
        elif args.command == "size":
            cmd_size(manifest)
        elif args.command == "explore":
            cmd_explore(manifest, fresh=args.fresh)
        else:
            cmd_report(manifest)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
