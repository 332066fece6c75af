"""Argument-region layout shared by the runtime, the linker and the firmware."""

from __future__ import annotations

from dataclasses import dataclass, field

FLAG_STATIC = 1
HEADER_WORDS = 5


@dataclass(frozen=True)
class ArgsLayout:
    """Launch geometry, kernel arguments and the list of input ranges to warm up.

    Word layout: gx, gy, lx, ly, nargs, args..., flags, nranges, (base, bytes)...,
    then one zeroed arrival word per compute unit for the end-of-transfer rendezvous.
    """

    global_size: tuple[int, int] = (0, 1)
    local_size: tuple[int, int] = (1, 1)
    args: tuple[int, ...] = ()
    static: bool = False
    ranges: tuple[tuple[int, int], ...] = field(default_factory=tuple)
    units: int = 0

    def words(self) -> list[int]:
        gx, gy = self.global_size
        lx, ly = self.local_size
        out = [gx, gy, lx, ly, len(self.args), *[a & 0xFFFFFFFF for a in self.args]]
        out += [FLAG_STATIC if self.static else 0, len(self.ranges)]
        for base, size in self.ranges:
            out += [base, size]
        return out + [0] * self.units

    def size_bytes(self) -> int:
        return 4 * (HEADER_WORDS + len(self.args) + 2 + 2 * len(self.ranges) + self.units)

    @property
    def total(self) -> int:
        return self.global_size[0] * self.global_size[1]
