"""Stage I energy tally: PE compute, per-memory access energy and leakage."""

from __future__ import annotations

from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:
    from sramgate.sim.engine import SimResult

PJ = 1e-12


def compute_energy(
    result: SimResult,
    per_mac_energy_pj: float,
    mem_access_energies: Mapping[str, tuple[float, float]],
    idle_powers_mw: Mapping[str, float] | None = None,
) -> dict[str, float]:
    """Energy breakdown in joules.

    Keys are ``pe_compute``, ``<mem>.dynamic`` (reads/writes times per-access
    energies, in pJ) and ``<mem>.leakage`` (power in mW held for the whole run).
    """
    if per_mac_energy_pj < 0:
        raise ValueError("per-MAC energy must be non-negative")
    out = {"pe_compute": result.total_macs * per_mac_energy_pj * PJ}
    for mem_id, stats in sorted(result.access_stats.items()):
        e_r, e_w = mem_access_energies.get(mem_id, (0.0, 0.0))
        if e_r < 0 or e_w < 0:
            raise ValueError(f"negative access energy for {mem_id}")
        out[f"{mem_id}.dynamic"] = (stats.reads * e_r + stats.writes * e_w) * PJ
    for mem_id, p_mw in sorted((idle_powers_mw or {}).items()):
        if p_mw < 0:
            raise ValueError(f"negative idle power for {mem_id}")
        # mW * ns = pJ
        out[f"{mem_id}.leakage"] = p_mw * result.total_latency * PJ
    return out
