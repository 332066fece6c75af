"""Exception root shared by every subsystem."""


class EgpuError(Exception):
    """Base class for all simulator, toolchain and runtime errors."""
