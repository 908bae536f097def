from sramgate.sim.energy import compute_energy
from sramgate.sim.engine import SimResult, SubOpRecord, simulate
from sramgate.sim.plan import ExecutionPlan, PlanError, PlanTensor, SubOp, build_plan, op_compute_cycles

__all__ = [
    "ExecutionPlan",
    "PlanError",
    "PlanTensor",
    "SimResult",
    "SubOp",
    "SubOpRecord",
    "build_plan",
    "compute_energy",
    "op_compute_cycles",
    "simulate",
]
