"""Two-pass assembler and disassembler for the RV32IM + SIMT instruction set.

Syntax follows GNU ``as`` for RISC-V with two deliberate simplifications:
a numeric branch/jump operand is a byte offset relative to the instruction
(a label operand is resolved to its address), and the only directives are
``.org``, ``.word`` and ``.global``.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

from egpu.errors import EgpuError
from egpu.isa.encoding import (CSR_NAMES, SPECS, EncodingError, IllegalInstruction, Instruction,
                               decode, encode, format_instruction, sext)


class AssemblerError(EgpuError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


class AsmSyntaxError(AssemblerError):
    pass


class UndefinedLabel(AssemblerError):
    pass


class BranchOutOfRange(AssemblerError):
    pass


ABI_NAMES = ("zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 a6 a7 "
             "s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6").split()
REGS = {name: i for i, name in enumerate(ABI_NAMES)}
REGS.update({f"x{i}": i for i in range(32)})
REGS["fp"] = 8


@dataclass
class KernelBinary:
    base_address: int
    words: list[int]
    symbols: dict[str, int] = field(default_factory=dict)
    entry_point: int | None = None
    globals: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.base_address % 4:
            raise AssemblerError(f"base address {self.base_address:#x} is not word aligned")
        if self.entry_point is None:
            self.entry_point = self.base_address

    @property
    def end_address(self) -> int:
        return self.base_address + 4 * len(self.words)

    @property
    def size(self) -> int:
        return 4 * len(self.words)

    def to_bytes(self) -> bytes:
        return struct.pack(f"<{len(self.words)}I", *self.words)

    @classmethod
    def from_bytes(cls, data: bytes, base_address: int, symbols: dict[str, int] | None = None):
        if len(data) % 4:
            data = data + bytes(4 - len(data) % 4)
        words = list(struct.unpack(f"<{len(data) // 4}I", data))
        return cls(base_address, words, dict(symbols or {}))

    def symbol_listing(self) -> str:
        return "".join(f"{name} {addr:#010x}\n" for name, addr in sorted(self.symbols.items(),
                                                                       key=lambda kv: (kv[1], kv[0])))

    @staticmethod
    def parse_symbol_listing(text: str) -> dict[str, int]:
        out = {}
        for line in text.splitlines():
            if line.strip():
                name, addr = line.split()
                out[name] = int(addr, 0)
        return out

    def word_at(self, addr: int) -> int:
        return self.words[(addr - self.base_address) // 4]


_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*:")
_MEM_RE = re.compile(r"^(.*)\(\s*([\w$]+)\s*\)$")
_BRANCH_PSEUDO = {
    "beqz": ("beq", False), "bnez": ("bne", False), "blez": ("bge", True), "bgez": ("bge", False),
    "bltz": ("blt", False), "bgtz": ("blt", True),
}
_SWAPPED = {"bgt": "blt", "ble": "bge", "bgtu": "bltu", "bleu": "bgeu"}


def _strip_comment(line: str) -> str:
    for marker in ("#", "//"):
        idx = line.find(marker)
        if idx >= 0:
            line = line[:idx]
    return line.strip()


def _split_operands(text: str) -> list[str]:
    return [p.strip() for p in text.split(",")] if text.strip() else []


@dataclass
class _Item:
    line: int
    addr: int
    kind: str  # "ins" or "word"
    name: str
    ops: list[str]
    size: int


class _Assembler:
    def __init__(self, text: str, base: int | None, extern: dict[str, int] | None):
        self.text = text
        self.base = base
        self.symbols: dict[str, int] = {}
        self.extern = dict(extern or {})
        self.globals: set[str] = set()
        self.items: list[_Item] = []

    # -- operand helpers -------------------------------------------------
    def reg(self, tok: str, line: int) -> int:
        r = REGS.get(tok.strip().lower())
        if r is None:
            raise AsmSyntaxError(f"bad register {tok!r}", line)
        return r

    def value(self, tok: str, line: int, pass2: bool = True) -> int:
        tok = tok.strip()
        m = re.fullmatch(r"%(hi|lo)\((.+)\)", tok)
        if m:
            v = self.value(m.group(2), line, pass2)
            hi = ((v + 0x800) >> 12) & 0xFFFFF
            return hi if m.group(1) == "hi" else sext(v - (hi << 12), 12)
        try:
            return int(tok, 0)
        except ValueError:
            pass
        m = re.fullmatch(r"([A-Za-z_.$][\w.$]*)\s*([+-]\s*\w+)?", tok)
        if not m:
            raise AsmSyntaxError(f"bad expression {tok!r}", line)
        name = m.group(1)
        if name in self.symbols:
            v = self.symbols[name]
        elif name in self.extern:
            v = self.extern[name]
        elif name.lower() in CSR_NAMES:
            v = CSR_NAMES[name.lower()]
        elif not pass2:
            return 0
        else:
            raise UndefinedLabel(f"undefined symbol {name!r}", line)
        if m.group(2):
            v += int(m.group(2).replace(" ", ""), 0)
        return v

    def is_number(self, tok: str) -> bool:
        try:
            int(tok.strip(), 0)
            return True
        except ValueError:
            return False

    def mem(self, tok: str, line: int) -> tuple[int, int]:
        m = _MEM_RE.match(tok.strip())
        if not m:
            raise AsmSyntaxError(f"expected offset(register), got {tok!r}", line)
        off = m.group(1).strip()
        return (self.value(off, line) if off else 0), self.reg(m.group(2), line)

    # -- pass 1 ------------------------------------------------------------
    def size_of(self, name: str, ops: list[str], line: int) -> int:
        if name == "li":
            if len(ops) != 2:
                raise AsmSyntaxError("li takes 2 operands", line)
            if self.is_number(ops[1]):
                v = int(ops[1], 0)
                if not -(1 << 31) <= v < (1 << 32):
                    raise AsmSyntaxError(f"li immediate {v} out of 32-bit range", line)
                return 4 if -2048 <= v <= 2047 else 8
            return 8
        if name in ("la", "call"):
            return 8 if name == "la" else 4
        return 4

    def pass1(self):
        addr = self.base
        for lineno, raw in enumerate(self.text.splitlines(), 1):
            line = _strip_comment(raw)
            while True:
                m = _LABEL_RE.match(line)
                if not m:
                    break
                label = m.group(1)
                if label in self.symbols:
                    raise AsmSyntaxError(f"duplicate label {label!r}", lineno)
                if addr is None:
                    addr = self.base = 0
                self.symbols[label] = addr
                line = line[m.end():].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            name = parts[0].lower()
            ops = _split_operands(parts[1]) if len(parts) > 1 else []
            if name.startswith("."):
                if name == ".org":
                    if len(ops) != 1:
                        raise AsmSyntaxError(".org takes one address", lineno)
                    target = self.value(ops[0], lineno)
                    if target % 4:
                        raise AsmSyntaxError(".org address must be word aligned", lineno)
                    if addr is None:
                        addr = self.base = target
                    elif target < addr:
                        raise AsmSyntaxError(".org cannot move backwards", lineno)
                    else:
                        while addr < target:
                            self.items.append(_Item(lineno, addr, "word", ".word", ["0"], 4))
                            addr += 4
                elif name == ".word":
                    if not ops:
                        raise AsmSyntaxError(".word needs a value", lineno)
                    if addr is None:
                        addr = self.base = 0
                    for op in ops:
                        self.items.append(_Item(lineno, addr, "word", ".word", [op], 4))
                        addr += 4
                elif name in (".global", ".globl"):
                    self.globals.update(ops)
                else:
                    raise AsmSyntaxError(f"unsupported directive {name}", lineno)
                continue
            if addr is None:
                addr = self.base = 0
            size = self.size_of(name, ops, lineno)
            self.items.append(_Item(lineno, addr, "ins", name, ops, size))
            addr += size
        if self.base is None:
            self.base = 0

    # -- pass 2 ------------------------------------------------------------
    def target_offset(self, tok: str, pc: int, line: int, lo: int, hi: int) -> int:
        if self.is_number(tok):
            off = int(tok, 0)
        else:
            off = self.value(tok, line) - pc
        if not lo <= off <= hi:
            raise BranchOutOfRange(f"target {tok!r} at offset {off} outside [{lo}, {hi}]", line)
        if off % 2:
            raise BranchOutOfRange(f"target offset {off} is odd", line)
        return off

    def expand(self, it: _Item) -> list[Instruction]:
        n, ops, line, pc = it.name, it.ops, it.line, it.addr
        R = lambda i: self.reg(ops[i], line)  # noqa: E731

        def need(k):
            if len(ops) != k:
                raise AsmSyntaxError(f"{n} takes {k} operand(s), got {len(ops)}", line)

        if n == "nop":
            need(0)
            return [Instruction("addi")]
        if n == "li":
            rd = R(0)
            v = self.value(ops[1], line)
            if it.size == 4:
                return [Instruction("addi", rd, 0, 0, v)]
            v &= 0xFFFFFFFF
            hi = ((v + 0x800) >> 12) & 0xFFFFF
            lo = v - ((hi << 12) & 0xFFFFFFFF)
            lo = (lo + 0x800) % 0x1000 - 0x800
            return [Instruction("lui", rd, 0, 0, hi), Instruction("addi", rd, rd, 0, lo)]
        if n == "la":
            need(2)
            rd = R(0)
            off = (self.value(ops[1], line) - pc) & 0xFFFFFFFF
            hi = ((off + 0x800) >> 12) & 0xFFFFF
            lo = (off - (hi << 12)) & 0xFFF
            lo = lo - 0x1000 if lo >= 0x800 else lo
            return [Instruction("auipc", rd, 0, 0, hi), Instruction("addi", rd, rd, 0, lo)]
        if n == "mv":
            need(2)
            return [Instruction("addi", R(0), R(1), 0, 0)]
        if n == "not":
            need(2)
            return [Instruction("xori", R(0), R(1), 0, -1)]
        if n == "neg":
            need(2)
            return [Instruction("sub", R(0), 0, R(1))]
        if n == "seqz":
            need(2)
            return [Instruction("sltiu", R(0), R(1), 0, 1)]
        if n == "snez":
            need(2)
            return [Instruction("sltu", R(0), 0, R(1))]
        if n == "j":
            need(1)
            return [Instruction("jal", 0, 0, 0, self.target_offset(ops[0], pc, line, -(1 << 20), (1 << 20) - 2))]
        if n == "call":
            need(1)
            return [Instruction("jal", 1, 0, 0, self.target_offset(ops[0], pc, line, -(1 << 20), (1 << 20) - 2))]
        if n == "jr":
            need(1)
            return [Instruction("jalr", 0, R(0), 0, 0)]
        if n == "ret":
            need(0)
            return [Instruction("jalr", 0, 1, 0, 0)]
        if n == "csrr":
            need(2)
            return [Instruction("csrrs", R(0), 0, 0, self.value(ops[1], line))]
        if n in _BRANCH_PSEUDO:
            need(2)
            base, swap = _BRANCH_PSEUDO[n]
            a, b = (0, R(0)) if swap else (R(0), 0)
            return [Instruction(base, 0, a, b, self.target_offset(ops[1], pc, line, -4096, 4094))]
        if n in _SWAPPED:
            need(3)
            return [Instruction(_SWAPPED[n], 0, R(1), R(0), self.target_offset(ops[2], pc, line, -4096, 4094))]
        if n not in SPECS:
            raise AsmSyntaxError(f"unknown instruction {n!r}", line)
        fmt = SPECS[n].fmt
        if fmt == "R":
            need(3)
            return [Instruction(n, R(0), R(1), R(2))]
        if fmt in ("I", "IS"):
            need(3)
            return [Instruction(n, R(0), R(1), 0, self.value(ops[2], line))]
        if fmt == "L":
            need(2)
            off, base = self.mem(ops[1], line)
            return [Instruction(n, R(0), base, 0, off)]
        if fmt == "JALR":
            if len(ops) == 1:
                return [Instruction(n, 1, R(0), 0, 0)]
            need(2)
            if "(" in ops[1]:
                off, base = self.mem(ops[1], line)
            else:
                off, base = 0, R(1)
            return [Instruction(n, R(0), base, 0, off)]
        if fmt == "S":
            need(2)
            off, base = self.mem(ops[1], line)
            return [Instruction(n, 0, base, R(0), off)]
        if fmt == "B":
            need(3)
            return [Instruction(n, 0, R(0), R(1), self.target_offset(ops[2], pc, line, -4096, 4094))]
        if fmt == "U":
            need(2)
            return [Instruction(n, R(0), 0, 0, self.value(ops[1], line))]
        if fmt == "J":
            if len(ops) == 1:
                ops = ["x1", ops[0]]
            need(2)
            return [Instruction(n, R(0), 0, 0, self.target_offset(ops[1], pc, line, -(1 << 20), (1 << 20) - 2))]
        if fmt == "CSR":
            need(3)
            return [Instruction(n, R(0), R(2), 0, self.value(ops[1], line))]
        if fmt == "CSRI":
            need(3)
            z = self.value(ops[2], line)
            if not 0 <= z < 32:
                raise AsmSyntaxError(f"{n}: zimm {z} out of range", line)
            return [Instruction(n, R(0), z, 0, self.value(ops[1], line))]
        if fmt == "FENCE":
            if ops:
                need(1)
                return [Instruction(n, 0, 0, 0, self.value(ops[0], line))]
            return [Instruction(n, 0, 0, 0, 0x0FF)]
        if fmt in ("SYS", "X0"):
            need(0)
            return [Instruction(n)]
        if fmt == "X1":
            need(1)
            return [Instruction(n, 0, R(0))]
        if fmt == "X2":
            need(2)
            return [Instruction(n, 0, R(0), R(1))]
        need(2)  # XB: split rs1, target
        return [Instruction(n, 0, R(0), 0, self.target_offset(ops[1], pc, line, -4096, 4094))]

    def pass2(self) -> list[int]:
        words = []
        for it in self.items:
            if it.kind == "word":
                words.append(self.value(it.ops[0], it.line) & 0xFFFFFFFF)
                continue
            try:
                for ins in self.expand(it):
                    words.append(encode(ins))
            except EncodingError as e:
                raise AsmSyntaxError(str(e), it.line) from None
        return words


def assemble(text: str, base: int | None = None, symbols: dict[str, int] | None = None,
             entry: str | None = None) -> KernelBinary:
    """Assemble source text into a flat image.

    ``symbols`` supplies externally defined absolute values (link-time
    constants); ``entry`` names the entry symbol (default: the base address).
    """
    a = _Assembler(text, base, symbols)
    a.pass1()
    words = a.pass2()
    entry_point = None
    if entry is not None:
        if entry not in a.symbols:
            raise UndefinedLabel(f"entry symbol {entry!r} not defined")
        entry_point = a.symbols[entry]
    return KernelBinary(a.base, words, dict(a.symbols), entry_point, a.globals)


def disassemble(binary: KernelBinary, use_symbols: bool = True, org: bool = True) -> str:
    """Canonical text for an image; undecodable words become ``.word`` lines."""
    by_addr: dict[int, list[str]] = {}
    if use_symbols:
        for name, addr in binary.symbols.items():
            by_addr.setdefault(addr, []).append(name)
    lines = [f".org {binary.base_address:#x}"] if org else []
    for i, word in enumerate(binary.words):
        pc = binary.base_address + 4 * i
        for name in sorted(by_addr.get(pc, ())):
            lines.append(f"{name}:")
        try:
            ins = decode(word)
        except IllegalInstruction:
            lines.append(f".word {word:#010x}")
            continue
        target = None
        if use_symbols and ins.spec.fmt in ("B", "J", "XB"):
            names = by_addr.get(pc + ins.imm)
            if names:
                target = sorted(names)[0]
        lines.append(format_instruction(ins, target))
    end = binary.end_address
    for name in sorted(by_addr.get(end, ())):
        lines.append(f"{name}:")
    return "\n".join(lines) + "\n"
