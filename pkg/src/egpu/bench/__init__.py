"""Experiments, energy accounting and reports."""

from egpu.bench.energy import Energy, MissingCoefficient, account_energy, device_energy, host_energy, unit_energy
from egpu.bench.report import (ComparisonRow, IoError, ReportError, RunReport, check_report, emit_report,
                               run_gemm_sweep, run_tinybio)

__all__ = ["Energy", "MissingCoefficient", "account_energy", "device_energy", "host_energy", "unit_energy", "ComparisonRow",
           "IoError", "ReportError", "RunReport", "check_report", "emit_report", "run_gemm_sweep", "run_tinybio"]
