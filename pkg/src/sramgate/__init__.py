"""Trace-driven SRAM sizing, banking and power-gating exploration for
Transformer inference accelerators.

Stage I simulates a workload graph on a systolic-array accelerator and
records time-resolved on-chip memory occupancy. Stage II replays those
traces offline against banked SRAM candidates and gating policies.
"""

from sramgate.explorer import (
    CandidateResult,
    GatingPolicy,
    MemCharacterization,
    load_characterization,
    size_sram,
    sweep,
    sweep_multilevel,
    synth_characterization,
)
from sramgate.hardware import AcceleratorSpec, parse_accelerator_spec, peak_throughput
from sramgate.memory import OccupancyTrace, ResidencyState
from sramgate.sim import SimResult, build_plan, simulate
from sramgate.traces import BankActivityTimeline, BankingParams, bank_activity, idle_intervals, peak
from sramgate.workload import ModelSpec, WorkloadGraph, build_workload, count_macs, count_params, kv_footprint

__all__ = [
    "AcceleratorSpec",
    "BankActivityTimeline",
    "BankingParams",
    "CandidateResult",
    "GatingPolicy",
    "MemCharacterization",
    "ModelSpec",
    "OccupancyTrace",
    "ResidencyState",
    "SimResult",
    "WorkloadGraph",
    "bank_activity",
    "build_plan",
    "build_workload",
    "count_macs",
    "count_params",
    "idle_intervals",
    "kv_footprint",
    "load_characterization",
    "parse_accelerator_spec",
    "peak",
    "peak_throughput",
    "simulate",
    "size_sram",
    "sweep",
    "sweep_multilevel",
    "synth_characterization",
]

__version__ = "0.1.0"
