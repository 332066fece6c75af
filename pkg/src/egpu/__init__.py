"""e-GPU: cycle-level simulator and Tiny-OpenCL toolchain for a small RISC-V SIMT accelerator."""

from egpu.config import SimConfig, EnergyCoeffs, load_config, static_report

__version__ = "0.1.0"

__all__ = ["SimConfig", "EnergyCoeffs", "load_config", "static_report", "__version__"]
