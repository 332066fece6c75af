"""Kernel compiler: restricted OpenCL C to SIMT or scalar RV32IM code."""

from egpu.kernelc.check import SplitJoinImbalance, check_split_join
from egpu.kernelc.codegen import LoweredKernel, RegisterPressure, lower_scalar, lower_simt
from egpu.kernelc.frontend import (KernelAst, KernelcError, KernelSyntaxError, NotAKernel, UnsupportedConstruct,
                                   UnsupportedType, parse)
from egpu.kernelc.link import EntryMissing, MemoryImage, build_scalar, build_simt, link_image

__all__ = [
    "SplitJoinImbalance", "check_split_join", "LoweredKernel", "RegisterPressure", "lower_scalar", "lower_simt",
    "KernelAst", "KernelcError", "KernelSyntaxError", "NotAKernel", "UnsupportedConstruct", "UnsupportedType",
    "parse", "EntryMissing", "MemoryImage", "build_scalar", "build_simt", "link_image",
]
