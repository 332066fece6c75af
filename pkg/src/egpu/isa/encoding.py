"""RV32IM plus the SIMT custom-0 extension: encoding tables, decode and encode.

Every mnemonic maps to exactly one (opcode, funct3, funct7) pattern and unused
fields must be zero, so decode and encode are inverse bijections on the legal
subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from egpu.errors import EgpuError


class IllegalInstruction(EgpuError):
    def __init__(self, word: int, reason: str = "unknown encoding"):
        super().__init__(f"illegal instruction {word & 0xFFFFFFFF:#010x}: {reason}")
        self.word = word


class EncodingError(EgpuError):
    pass


class Op(IntEnum):
    ADD = 0
    SUB = 1
    SLL = 2
    SLT = 3
    SLTU = 4
    XOR = 5
    SRL = 6
    SRA = 7
    OR = 8
    AND = 9
    MUL = 10
    MULH = 11
    MULHSU = 12
    MULHU = 13
    DIV = 14
    DIVU = 15
    REM = 16
    REMU = 17
    ADDI = 18
    SLTI = 19
    SLTIU = 20
    XORI = 21
    ORI = 22
    ANDI = 23
    SLLI = 24
    SRLI = 25
    SRAI = 26
    LUI = 27
    AUIPC = 28
    JAL = 29
    JALR = 30
    BEQ = 31
    BNE = 32
    BLT = 33
    BGE = 34
    BLTU = 35
    BGEU = 36
    LB = 37
    LH = 38
    LW = 39
    LBU = 40
    LHU = 41
    SB = 42
    SH = 43
    SW = 44
    FENCE = 45
    ECALL = 46
    EBREAK = 47
    CSRRW = 48
    CSRRS = 49
    CSRRC = 50
    CSRRWI = 51
    CSRRSI = 52
    CSRRCI = 53
    TMC = 54
    WSPAWN = 55
    SPLIT = 56
    JOIN = 57
    BAR = 58
    SLEEP_REQ = 59


# Engine-side classification, used for host CPI and for energy/event counters.
class OpClass(IntEnum):
    ALU = 0
    MUL = 1
    DIV = 2
    LOAD = 3
    STORE = 4
    BRANCH = 5
    JUMP = 6
    CSR = 7
    SYSTEM = 8
    SIMT = 9


OPC_LOAD, OPC_CUSTOM0, OPC_FENCE, OPC_OPIMM, OPC_AUIPC = 0x03, 0x0B, 0x0F, 0x13, 0x17
OPC_STORE, OPC_OP, OPC_LUI, OPC_BRANCH, OPC_JALR, OPC_JAL, OPC_SYSTEM = 0x23, 0x33, 0x37, 0x63, 0x67, 0x6F, 0x73

SIMT_KINDS = ("TMC", "WSPAWN", "SPLIT", "JOIN", "BAR", "SLEEP_REQ")


@dataclass(frozen=True)
class OpSpec:
    op: Op
    fmt: str
    opcode: int
    funct3: int = 0
    funct7: int = 0
    cls: OpClass = OpClass.ALU


def _spec_table() -> dict[str, OpSpec]:
    t: dict[str, OpSpec] = {}
    r_ops = [("add", 0, 0x00), ("sub", 0, 0x20), ("sll", 1, 0), ("slt", 2, 0), ("sltu", 3, 0),
             ("xor", 4, 0), ("srl", 5, 0), ("sra", 5, 0x20), ("or", 6, 0), ("and", 7, 0)]
    for name, f3, f7 in r_ops:
        t[name] = OpSpec(Op[name.upper()], "R", OPC_OP, f3, f7)
    for i, name in enumerate(("mul", "mulh", "mulhsu", "mulhu")):
        t[name] = OpSpec(Op[name.upper()], "R", OPC_OP, i, 0x01, OpClass.MUL)
    for i, name in enumerate(("div", "divu", "rem", "remu")):
        t[name] = OpSpec(Op[name.upper()], "R", OPC_OP, 4 + i, 0x01, OpClass.DIV)
    for name, f3 in (("addi", 0), ("slti", 2), ("sltiu", 3), ("xori", 4), ("ori", 6), ("andi", 7)):
        t[name] = OpSpec(Op[name.upper()], "I", OPC_OPIMM, f3)
    t["slli"] = OpSpec(Op.SLLI, "IS", OPC_OPIMM, 1, 0x00)
    t["srli"] = OpSpec(Op.SRLI, "IS", OPC_OPIMM, 5, 0x00)
    t["srai"] = OpSpec(Op.SRAI, "IS", OPC_OPIMM, 5, 0x20)
    t["lui"] = OpSpec(Op.LUI, "U", OPC_LUI)
    t["auipc"] = OpSpec(Op.AUIPC, "U", OPC_AUIPC)
    t["jal"] = OpSpec(Op.JAL, "J", OPC_JAL, cls=OpClass.JUMP)
    t["jalr"] = OpSpec(Op.JALR, "JALR", OPC_JALR, 0, cls=OpClass.JUMP)
    for name, f3 in (("beq", 0), ("bne", 1), ("blt", 4), ("bge", 5), ("bltu", 6), ("bgeu", 7)):
        t[name] = OpSpec(Op[name.upper()], "B", OPC_BRANCH, f3, cls=OpClass.BRANCH)
    for name, f3 in (("lb", 0), ("lh", 1), ("lw", 2), ("lbu", 4), ("lhu", 5)):
        t[name] = OpSpec(Op[name.upper()], "L", OPC_LOAD, f3, cls=OpClass.LOAD)
    for name, f3 in (("sb", 0), ("sh", 1), ("sw", 2)):
        t[name] = OpSpec(Op[name.upper()], "S", OPC_STORE, f3, cls=OpClass.STORE)
    t["fence"] = OpSpec(Op.FENCE, "FENCE", OPC_FENCE, 0, cls=OpClass.SYSTEM)
    t["ecall"] = OpSpec(Op.ECALL, "SYS", OPC_SYSTEM, 0, 0, OpClass.SYSTEM)
    t["ebreak"] = OpSpec(Op.EBREAK, "SYS", OPC_SYSTEM, 0, 1, OpClass.SYSTEM)
    for name, f3 in (("csrrw", 1), ("csrrs", 2), ("csrrc", 3)):
        t[name] = OpSpec(Op[name.upper()], "CSR", OPC_SYSTEM, f3, cls=OpClass.CSR)
    for name, f3 in (("csrrwi", 5), ("csrrsi", 6), ("csrrci", 7)):
        t[name] = OpSpec(Op[name.upper()], "CSRI", OPC_SYSTEM, f3, cls=OpClass.CSR)
    for f3, (name, fmt) in enumerate((("tmc", "X1"), ("wspawn", "X2"), ("split", "XB"),
                                      ("join", "X0"), ("bar", "X2"), ("sleep_req", "X0"))):
        t[name] = OpSpec(Op[name.upper()], fmt, OPC_CUSTOM0, f3, cls=OpClass.SIMT)
    return t


SPECS: dict[str, OpSpec] = _spec_table()
MNEMONIC: dict[Op, str] = {s.op: name for name, s in SPECS.items()}
OP_CLASS = [SPECS[MNEMONIC[Op(i)]].cls for i in range(len(Op))]

_BY_KEY: dict[tuple, str] = {}
for _name, _s in SPECS.items():
    if _s.fmt in ("R", "IS", "SYS"):
        _BY_KEY[(_s.opcode, _s.funct3, _s.funct7)] = _name
    else:
        _BY_KEY[(_s.opcode, _s.funct3)] = _name

# Read-only identification CSRs.  KERNEL_ARGS mirrors the controller's
# ARGS_BASE register so that every warp can locate the argument block.
CSR_THREAD_ID, CSR_WARP_ID, CSR_CORE_ID = 0xCC0, 0xCC1, 0xCC2
CSR_NUM_THREADS, CSR_NUM_WARPS, CSR_NUM_CORES, CSR_KERNEL_ARGS = 0xFC0, 0xFC1, 0xFC2, 0xFC3
CSR_CYCLE = 0xC00
CSR_NAMES = {
    "thread_id": CSR_THREAD_ID, "warp_id": CSR_WARP_ID, "core_id": CSR_CORE_ID,
    "num_threads": CSR_NUM_THREADS, "num_warps": CSR_NUM_WARPS, "num_cores": CSR_NUM_CORES,
    "kernel_args": CSR_KERNEL_ARGS, "cycle": CSR_CYCLE,
}


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0

    @property
    def spec(self) -> OpSpec:
        return SPECS[self.mnemonic]

    @property
    def op(self) -> Op:
        return SPECS[self.mnemonic].op

    @property
    def simt_kind(self) -> str | None:
        return self.mnemonic.upper() if SPECS[self.mnemonic].opcode == OPC_CUSTOM0 else None

    def __str__(self) -> str:
        return format_instruction(self)


def _check_range(ins: Instruction, lo: int, hi: int, align: int = 1):
    if not lo <= ins.imm <= hi or ins.imm % align:
        raise EncodingError(f"{ins.mnemonic}: immediate {ins.imm} outside [{lo}, {hi}]"
                            + (f" or not a multiple of {align}" if align > 1 else ""))


def _operands_used(fmt: str) -> tuple[bool, bool, bool]:
    """(rd, rs1, rs2) fields carried by each format."""
    return {
        "R": (True, True, True), "I": (True, True, False), "IS": (True, True, False),
        "L": (True, True, False), "S": (False, True, True), "B": (False, True, True),
        "U": (True, False, False), "J": (True, False, False), "JALR": (True, True, False),
        "CSR": (True, True, False), "CSRI": (True, True, False), "SYS": (False, False, False),
        "FENCE": (False, False, False), "X0": (False, False, False), "X1": (False, True, False),
        "X2": (False, True, True), "XB": (False, True, False),
    }[fmt]


def encode(ins: Instruction) -> int:
    try:
        s = SPECS[ins.mnemonic]
    except KeyError:
        raise EncodingError(f"unknown mnemonic {ins.mnemonic!r}") from None
    uses = _operands_used(s.fmt)
    for used, reg, name in zip(uses, (ins.rd, ins.rs1, ins.rs2), ("rd", "rs1", "rs2")):
        if not 0 <= reg < 32:
            raise EncodingError(f"{ins.mnemonic}: register index {reg} out of range")
        if not used and reg and not (s.fmt == "CSRI" and name == "rs1"):
            raise EncodingError(f"{ins.mnemonic}: field {name} must be zero")
    op, f3, f7 = s.opcode, s.funct3, s.funct7
    rd, rs1, rs2, imm = ins.rd, ins.rs1, ins.rs2, ins.imm
    fmt = s.fmt
    if fmt == "R":
        return f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
    if fmt in ("I", "L", "JALR"):
        _check_range(ins, -2048, 2047)
        return (imm & 0xFFF) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
    if fmt == "IS":
        _check_range(ins, 0, 31)
        return f7 << 25 | imm << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
    if fmt == "S":
        _check_range(ins, -2048, 2047)
        v = imm & 0xFFF
        return (v >> 5) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (v & 0x1F) << 7 | op
    if fmt in ("B", "XB"):
        _check_range(ins, -4096, 4094, 2)
        v = imm & 0x1FFF
        return ((v >> 12) & 1) << 31 | ((v >> 5) & 0x3F) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 \
            | ((v >> 1) & 0xF) << 8 | ((v >> 11) & 1) << 7 | op
    if fmt == "U":
        _check_range(ins, 0, 0xFFFFF)
        return imm << 12 | rd << 7 | op
    if fmt == "J":
        _check_range(ins, -(1 << 20), (1 << 20) - 2, 2)
        v = imm & 0x1FFFFF
        return ((v >> 20) & 1) << 31 | ((v >> 1) & 0x3FF) << 21 | ((v >> 11) & 1) << 20 \
            | ((v >> 12) & 0xFF) << 12 | rd << 7 | op
    if fmt == "CSR":
        _check_range(ins, 0, 0xFFF)
        return imm << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
    if fmt == "CSRI":
        _check_range(ins, 0, 0xFFF)
        return imm << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
    if fmt == "SYS":
        return f7 << 20 | op
    if fmt == "FENCE":
        _check_range(ins, 0, 0xFFF)
        return imm << 20 | op
    # X0, X1, X2: R-type layout with funct7 = 0
    if imm:
        raise EncodingError(f"{ins.mnemonic} takes no immediate")
    return rs2 << 20 | rs1 << 15 | f3 << 12 | op


def decode(word: int) -> Instruction:
    word &= 0xFFFFFFFF
    op = word & 0x7F
    rd = (word >> 7) & 0x1F
    f3 = (word >> 12) & 7
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    f7 = word >> 25
    if op == OPC_SYSTEM and f3 == 0:
        name = _BY_KEY.get((op, 0, word >> 20))
        if name is None or rd or rs1:
            raise IllegalInstruction(word)
        return Instruction(name)
    if op in (OPC_OP,):
        name = _BY_KEY.get((op, f3, f7))
    elif op == OPC_OPIMM and f3 in (1, 5):
        name = _BY_KEY.get((op, f3, f7))
    elif op in (OPC_LUI, OPC_AUIPC, OPC_JAL):
        name = {OPC_LUI: "lui", OPC_AUIPC: "auipc", OPC_JAL: "jal"}[op]
    else:
        name = _BY_KEY.get((op, f3))
    if name is None:
        raise IllegalInstruction(word)
    fmt = SPECS[name].fmt
    if fmt == "R":
        return Instruction(name, rd, rs1, rs2)
    if fmt in ("I", "L", "JALR"):
        return Instruction(name, rd, rs1, 0, sext(word >> 20, 12))
    if fmt == "IS":
        return Instruction(name, rd, rs1, 0, rs2)
    if fmt == "S":
        return Instruction(name, 0, rs1, rs2, sext((f7 << 5) | rd, 12))
    if fmt in ("B", "XB"):
        imm = ((word >> 31) & 1) << 12 | ((word >> 7) & 1) << 11 | ((word >> 25) & 0x3F) << 5 \
            | ((word >> 8) & 0xF) << 1
        if fmt == "XB" and rs2:
            raise IllegalInstruction(word, "split: rs2 must be zero")
        return Instruction(name, 0, rs1, rs2, sext(imm, 13))
    if fmt == "U":
        return Instruction(name, rd, 0, 0, word >> 12)
    if fmt == "J":
        imm = ((word >> 31) & 1) << 20 | ((word >> 12) & 0xFF) << 12 | ((word >> 20) & 1) << 11 \
            | ((word >> 21) & 0x3FF) << 1
        return Instruction(name, rd, 0, 0, sext(imm, 21))
    if fmt in ("CSR", "CSRI"):
        return Instruction(name, rd, rs1, 0, word >> 20)
    if fmt == "FENCE":
        if rd or rs1:
            raise IllegalInstruction(word, "fence: rd/rs1 must be zero")
        return Instruction(name, 0, 0, 0, word >> 20)
    # custom-0 R layout: unused fields must be zero
    uses = _operands_used(fmt)
    if rd or f7 or (rs1 and not uses[1]) or (rs2 and not uses[2]):
        raise IllegalInstruction(word, f"{name}: reserved fields must be zero")
    return Instruction(name, 0, rs1, rs2)


def reg(i: int) -> str:
    return f"x{i}"


def format_instruction(ins: Instruction, target: str | None = None) -> str:
    """Canonical assembly text.  ``target`` replaces a PC-relative offset with a label."""
    s = SPECS[ins.mnemonic]
    n, fmt = ins.mnemonic, s.fmt
    rd, rs1, rs2, imm = reg(ins.rd), reg(ins.rs1), reg(ins.rs2), ins.imm
    off = target if target is not None else str(imm)
    if fmt == "R":
        return f"{n} {rd}, {rs1}, {rs2}"
    if fmt in ("I", "IS"):
        return f"{n} {rd}, {rs1}, {imm}"
    if fmt in ("L", "JALR"):
        return f"{n} {rd}, {imm}({rs1})"
    if fmt == "S":
        return f"{n} {rs2}, {imm}({rs1})"
    if fmt == "B":
        return f"{n} {rs1}, {rs2}, {off}"
    if fmt == "U":
        return f"{n} {rd}, {imm:#x}"
    if fmt == "J":
        return f"{n} {rd}, {off}"
    if fmt == "CSR":
        return f"{n} {rd}, {imm:#x}, {rs1}"
    if fmt == "CSRI":
        return f"{n} {rd}, {imm:#x}, {ins.rs1}"
    if fmt == "FENCE":
        return "fence" if imm == 0x0FF else f"fence {imm:#x}"
    if fmt == "SYS" or fmt == "X0":
        return n
    if fmt == "X1":
        return f"{n} {rs1}"
    if fmt == "X2":
        return f"{n} {rs1}, {rs2}"
    return f"{n} {rs1}, {off}"  # XB
