"""Event-based energy accounting.

Energies are kept as integer femtojoules so that the total is the exact sum of
its parts.  Event coefficients are in pJ, static and idle powers in uW.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from egpu.config import EnergyCoeffs, SimConfig
from egpu.errors import EgpuError
from egpu.sim import engine as E

FJ_PER_NJ = 1_000_000


class MissingCoefficient(EgpuError):
    pass


# component -> ((counter, coefficient), ...); coefficients ending in the power
# suffix are converted from uW to pJ per cycle at the configured clock
DEVICE_TERMS: dict[str, tuple[tuple[str, str], ...]] = {
    "instructions": (("instructions", "e_instr_warp"), ("lane_instructions", "e_instr_lane")),
    "dcache": (("dcache_hits", "e_dcache_hit"), ("dcache_merges", "e_dcache_hit"),
               ("dcache_misses", "e_dcache_miss")),
    "icache": (("icache_hits", "e_icache_hit"), ("icache_misses", "e_icache_miss")),
    "bus": (("bus_reads", "e_bus_txn"), ("bus_writes", "e_bus_txn")),
    "cu_idle": (("cu_idle_cycles", "p_idle_ungated"), ("cu_gated_cycles", "p_idle_gated")),
    "host_idle": (("cycles", "p_host_idle"),),
}
# per compute unit, from the unit's own counters
CU_TERMS: dict[str, tuple[tuple[str, str], ...]] = {
    "instructions": (("instructions", "e_instr_warp"), ("lane_instructions", "e_instr_lane")),
    "idle": (("idle_cycles", "p_idle_ungated"), ("gated_cycles", "p_idle_gated")),
}
HOST_TERMS: dict[str, tuple[tuple[str, str], ...]] = {
    "instructions": (("instructions", "e_host_instr"),),
    "memory": (("mem_accesses", "e_host_mem"),),
}


@dataclass(frozen=True)
class Energy:
    """Per-component energy in femtojoules."""

    components_fj: dict[str, int]

    @property
    def total_fj(self) -> int:
        return sum(self.components_fj.values())

    @property
    def dynamic_fj(self) -> int:
        return self.total_fj - self.components_fj.get("leakage", 0)

    @property
    def total_nj(self) -> float:
        return self.total_fj / FJ_PER_NJ

    def nj(self) -> dict[str, float]:
        return {k: v / FJ_PER_NJ for k, v in self.components_fj.items()}

    def average_power_mw(self, cycles: int, clock_freq: float) -> float:
        return 0.0 if cycles == 0 else self.total_fj * 1e-15 / (cycles / clock_freq) * 1e3


def _coeff(coeffs: EnergyCoeffs, name: str) -> Fraction:
    if not hasattr(coeffs, name):
        raise MissingCoefficient(f"no energy coefficient {name!r}")
    v = getattr(coeffs, name)
    if v is None:
        raise MissingCoefficient(f"energy coefficient {name!r} is unset")
    return Fraction(str(v))


def _is_power(name: str) -> bool:
    return name.startswith("p_") or name.endswith("_power") or name == "leakage_power_total"


def account_energy(counters: dict[str, int], coeffs: EnergyCoeffs, cycles: int, clock_freq: float,
                   terms=None, leakage: str | None = "leakage_power_total") -> Energy:
    """Dynamic energy is the sum of event counts times coefficients, static energy
    is leakage power times elapsed time.  Each component is rounded once to fJ."""
    terms = DEVICE_TERMS if terms is None else terms
    f = Fraction(str(clock_freq))
    out: dict[str, int] = {}
    for comp, parts in terms.items():
        acc = Fraction(0)
        for counter, name in parts:
            if counter not in counters and counter != "cycles":
                raise MissingCoefficient(f"counter {counter!r} needed for {comp} is missing")
            n = cycles if counter == "cycles" else counters[counter]
            c = _coeff(coeffs, name)
            # pJ -> fJ is x1000; uW per cycle -> fJ is x1e9 / f
            acc += n * (c * 10**9 / f if _is_power(name) else c * 1000)
        out[comp] = round(acc)
    if leakage is not None:
        out["leakage"] = round(cycles * _coeff(coeffs, leakage) * 10**9 / f)
    return Energy(out)


def device_energy(counters: dict[str, int], cfg: SimConfig, cycles: int | None = None) -> Energy:
    cycles = counters["cycles"] if cycles is None else cycles
    return account_energy(counters, cfg.energy_coeffs, cycles, cfg.clock_freq)


def unit_energy(cu_counters, cfg: SimConfig) -> list[Energy]:
    """Dynamic energy of each compute unit; rows follow the engine's per-unit counter order."""
    out = []
    for row in cu_counters:
        c = {"instructions": int(row[E.CU_INSTR]), "lane_instructions": int(row[E.CU_LANE_INSTR]),
             "idle_cycles": int(row[E.CU_IDLE]), "gated_cycles": int(row[E.CU_GATED])}
        out.append(account_energy(c, cfg.energy_coeffs, 0, cfg.clock_freq, CU_TERMS, leakage=None))
    return out


def host_energy(result, cfg: SimConfig) -> Energy:
    counters = {"instructions": result.instructions, "mem_accesses": result.mem_accesses}
    return account_energy(counters, cfg.energy_coeffs, result.cycles, cfg.clock_freq, HOST_TERMS,
                          leakage="host_leakage_power")
