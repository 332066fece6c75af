"""Platform configuration: hardware knobs, software layout, timing and energy coefficients.

A configuration is built from a named preset, an optional flat ``key = value``
document and a list of ``key=value`` overrides (applied last).  The result is a
frozen :class:`SimConfig` that every other part of the simulator reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Iterable

from egpu.errors import EgpuError

CONTROLLER_BASE = 0xF000_0000


class ConfigError(EgpuError):
    pass


class UnknownKey(ConfigError):
    pass


class NotPowerOfTwo(ConfigError):
    pass


class RegionOverlap(ConfigError):
    pass


class ZeroResource(ConfigError):
    pass


class UnknownPreset(ConfigError):
    pass


@dataclass(frozen=True)
class EnergyCoeffs:
    """Event energies in pJ and static powers in uW.

    The defaults are the committed calibration (see README, "Calibration").
    """

    leakage_power_total: float = 130.13
    e_instr_warp: float = 14.0
    e_instr_lane: float = 4.0
    e_dcache_hit: float = 6.0
    e_dcache_miss: float = 14.0
    e_icache_hit: float = 1.6
    e_icache_miss: float = 4.0
    e_bus_txn: float = 5.0
    p_idle_gated: float = 0.0
    p_idle_ungated: float = 1500.0
    host_leakage_power: float = 29.50
    e_host_instr: float = 14.0
    e_host_mem: float = 4.0
    p_host_idle: float = 150.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"energy coefficient {f.name} must be nonnegative")


@dataclass(frozen=True)
class SimConfig:
    num_cus: int = 2
    threads_per_cu: int = 2
    warps_per_cu: int = 4
    icache_size_per_cu: int = 2048
    icache_banks: int = 1
    icache_line: int = 16
    dcache_size: int = 16384
    dcache_banks: int = 2
    dcache_line: int = 8
    kernel_base: int = 0x8000
    kernel_region_size: int = 0x8000
    args_base: int = 0x1000
    args_size: int = 0x400
    stack_base: int = 0x10000
    stack_size_per_thread: int = 1024
    main_mem_size: int = 4 << 20
    dcache_hit_latency: int = 4
    icache_hit_latency: int = 1
    host_mem_latency: int = 10
    mshr_depth: int = 0  # 0: warps_per_cu * num_cus
    ipdom_depth: int = 32
    gating: str = "clock"
    host_cpi_alu: int = 1
    host_cpi_mem: int = 1
    host_cpi_mul: int = 1
    host_cpi_div: int = 8
    host_cpi_branch_taken: int = 2
    clock_freq: float = 300e6
    energy_coeffs: EnergyCoeffs = field(default_factory=EnergyCoeffs)
    preset: str = "custom"

    @property
    def total_threads(self) -> int:
        return self.num_cus * self.warps_per_cu * self.threads_per_cu

    @property
    def effective_mshr_depth(self) -> int:
        return self.mshr_depth or self.warps_per_cu * self.num_cus

    @property
    def stack_region(self) -> tuple[int, int]:
        return self.stack_base, self.stack_base + self.total_threads * self.stack_size_per_thread

    @property
    def heap_base(self) -> int:
        end = max(self.kernel_base + self.kernel_region_size,
                  self.args_base + self.args_size, self.stack_region[1])
        return (end + 0xFFF) & ~0xFFF

    def validate(self) -> "SimConfig":
        counts = ("num_cus", "threads_per_cu", "warps_per_cu", "icache_banks", "dcache_banks",
                  "dcache_hit_latency", "icache_hit_latency", "host_mem_latency", "ipdom_depth",
                  "stack_size_per_thread", "args_size", "kernel_region_size")
        for name in counts:
            if getattr(self, name) < 1:
                raise ZeroResource(f"{name} must be >= 1 (got {getattr(self, name)})")
        if self.threads_per_cu > 32 or self.warps_per_cu > 32:
            raise ConfigError("threads_per_cu and warps_per_cu are limited to 32")
        for name in ("icache_size_per_cu", "icache_banks", "icache_line", "dcache_size",
                     "dcache_banks", "dcache_line", "main_mem_size"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                raise NotPowerOfTwo(f"{name} must be a power of two (got {v})")
        for prefix in ("icache", "dcache"):
            line = getattr(self, f"{prefix}_line")
            banks = getattr(self, f"{prefix}_banks")
            size = getattr(self, f"{prefix}_size_per_cu" if prefix == "icache" else "dcache_size")
            if line < 4:
                raise ConfigError(f"{prefix}_line must be at least 4 bytes")
            if size % (banks * line):
                raise ConfigError(f"{prefix} size {size} not divisible by banks x line")
        if self.gating not in ("clock", "power"):
            raise ConfigError("gating must be 'clock' or 'power'")
        if self.mshr_depth < 0:
            raise ConfigError("mshr_depth must be >= 0")
        if self.main_mem_size > CONTROLLER_BASE:
            raise RegionOverlap("main memory overlaps the controller aperture")
        for name in ("kernel_base", "args_base", "stack_base", "stack_size_per_thread",
                     "args_size", "kernel_region_size"):
            if getattr(self, name) % 4:
                raise ConfigError(f"{name} must be 4-byte aligned")
        regions = {
            "kernel": (self.kernel_base, self.kernel_base + self.kernel_region_size),
            "args": (self.args_base, self.args_base + self.args_size),
            "stacks": self.stack_region,
        }
        for name, (lo, hi) in regions.items():
            if lo < 0 or hi > self.main_mem_size:
                raise RegionOverlap(f"{name} region [{lo:#x}, {hi:#x}) lies outside main memory")
        names = list(regions)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                (alo, ahi), (blo, bhi) = regions[a], regions[b]
                if alo < bhi and blo < ahi:
                    raise RegionOverlap(f"{a} region overlaps {b} region")
        return self


# The three presets differ only in lane count and data-cache banking.
PRESETS: dict[str, dict] = {
    "egpu-4t": dict(threads_per_cu=2, dcache_banks=2, dcache_line=8),
    "egpu-8t": dict(threads_per_cu=4, dcache_banks=4, dcache_line=16),
    "egpu-16t": dict(threads_per_cu=8, dcache_banks=8, dcache_line=32),
}
PRESET_ALIASES = {"4t": "egpu-4t", "8t": "egpu-8t", "16t": "egpu-16t"}


@dataclass(frozen=True)
class StaticEntry:
    area_mm2: float
    leakage_uw: float
    estimated: bool = False


def _interp(a: float, b: float, frac: float) -> float:
    return round(a + (b - a) * frac, 4)


# Published area/leakage pairs.  The 8-thread system is not reported, so it is
# linearly interpolated in total thread count between the 4T and 16T rows.
STATIC_TABLE: dict[str, StaticEntry] = {
    "host-only": StaticEntry(0.15, 29.50),
    "egpu-4t": StaticEntry(0.24, 130.13),
    "egpu-8t": StaticEntry(_interp(0.24, 0.38, 1 / 3), _interp(130.13, 305.32, 1 / 3), estimated=True),
    "egpu-16t": StaticEntry(0.38, 305.32),
}


def canonical_preset(name: str) -> str:
    key = name.strip().lower()
    key = PRESET_ALIASES.get(key, key)
    if key not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return key


def static_report(name: str) -> dict:
    key = name.strip().lower()
    key = PRESET_ALIASES.get(key, key)
    if key not in STATIC_TABLE:
        raise UnknownPreset(f"no static data for {name!r}")
    e = STATIC_TABLE[key]
    return {"preset": key, "area_mm2": e.area_mm2, "leakage_uw": e.leakage_uw, "estimated": e.estimated}


_CFG_FIELDS = {f.name: f for f in fields(SimConfig) if f.name not in ("energy_coeffs", "preset")}
_ENERGY_FIELDS = {f.name: f for f in fields(EnergyCoeffs)}


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is int or kind == "int":
            return int(raw, 0)
        if kind is float or kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(document: str | None = None, overrides: Iterable[str] = (),
                preset: str | None = None) -> SimConfig:
    """Build and validate a configuration.

    Precedence, lowest first: dataclass defaults, preset (argument or the
    document's ``preset`` key), document pairs, overrides.
    """
    pairs = parse_pairs(document or "")
    over = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        over.append((k.strip(), v.strip()))

    for k, v in pairs + over:
        if k == "preset":
            preset = v
    base: dict = {}
    energy: dict = {}
    if preset is not None:
        key = canonical_preset(preset)
        base.update(PRESETS[key])
        base["preset"] = key
        energy["leakage_power_total"] = STATIC_TABLE[key].leakage_uw

    for k, v in pairs + over:
        if k == "preset":
            continue
        if k in _CFG_FIELDS:
            base[k] = _coerce(k, v, _CFG_FIELDS[k].type)
        elif k in _ENERGY_FIELDS:
            energy[k] = _coerce(k, v, float)
        else:
            raise UnknownKey(f"unknown configuration key {k!r}")
    cfg = SimConfig(energy_coeffs=EnergyCoeffs(**energy), **base)
    return cfg.validate()


def serialize(cfg: SimConfig) -> str:
    lines = [f"preset = {cfg.preset}"] if cfg.preset in PRESETS else []
    for name in _CFG_FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, int) and name.endswith(("_base", "_size")) and v >= 0x1000:
            v = hex(v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name} = {v}")
    for name in _ENERGY_FIELDS:
        lines.append(f"{name} = {getattr(cfg.energy_coeffs, name)!r}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: SimConfig, **changes) -> SimConfig:
    return replace(cfg, **changes).validate()


__all__ = [
    "SimConfig", "EnergyCoeffs", "StaticEntry", "STATIC_TABLE", "PRESETS", "load_config",
    "serialize", "static_report", "canonical_preset", "ConfigError", "UnknownKey",
    "NotPowerOfTwo", "RegionOverlap", "ZeroResource", "UnknownPreset", "CONTROLLER_BASE",
]

