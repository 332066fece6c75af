"""Encoder, decoder, assembler and disassembler."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egpu.isa import (SPECS, AsmSyntaxError, BranchOutOfRange, EncodingError, IllegalInstruction, Instruction,
                      UndefinedLabel, assemble, decode, disassemble, encode, format_instruction)

# Encodings produced by an independent toolchain (clang 14, riscv32, rv32im).
GOLDEN = [
    ('add x1, x2, x3', 0x003100b3),
    ('sub x31, x30, x29', 0x41df0fb3),
    ('sll x5, x6, x7', 0x007312b3),
    ('slt x5, x6, x7', 0x007322b3),
    ('sltu x5, x6, x7', 0x007332b3),
    ('xor x5, x6, x7', 0x007342b3),
    ('srl x5, x6, x7', 0x007352b3),
    ('sra x5, x6, x7', 0x407352b3),
    ('or x5, x6, x7', 0x007362b3),
    ('and x5, x6, x7', 0x007372b3),
    ('mul x10, x11, x12', 0x02c58533),
    ('mulh x10, x11, x12', 0x02c59533),
    ('mulhsu x10, x11, x12', 0x02c5a533),
    ('mulhu x10, x11, x12', 0x02c5b533),
    ('div x10, x11, x12', 0x02c5c533),
    ('divu x10, x11, x12', 0x02c5d533),
    ('rem x10, x11, x12', 0x02c5e533),
    ('remu x10, x11, x12', 0x02c5f533),
    ('addi x1, x0, 5', 0x00500093),
    ('addi x2, x2, -2048', 0x80010113),
    ('slti x3, x4, 2047', 0x7ff22193),
    ('sltiu x3, x4, -1', 0xfff23193),
    ('xori x3, x4, -1', 0xfff24193),
    ('ori x3, x4, 255', 0x0ff26193),
    ('andi x3, x4, 15', 0x00f27193),
    ('slli x3, x4, 31', 0x01f21193),
    ('srli x3, x4, 1', 0x00125193),
    ('srai x3, x4, 17', 0x41125193),
    ('lui x5, 0x12345', 0x123452b7),
    ('lui x5, 0xfffff', 0xfffff2b7),
    ('auipc x6, 0x1', 0x00001317),
    ('jal x1, 2048', 0x001000ef),
    ('jal x0, -4', 0xffdff06f),
    ('jalr x1, 0(x5)', 0x000280e7),
    ('jalr x0, -12(x1)', 0xff408067),
    ('beq x1, x2, 16', 0x00208863),
    ('bne x1, x2, -16', 0xfe2098e3),
    ('blt x1, x2, 4094', 0x7e20cfe3),
    ('bge x1, x2, -4096', 0x8020d063),
    ('bltu x1, x2, 8', 0x0020e463),
    ('bgeu x1, x2, 8', 0x0020f463),
    ('lb x5, 0(x2)', 0x00010283),
    ('lh x5, -4(x2)', 0xffc11283),
    ('lw x5, 8(x2)', 0x00812283),
    ('lbu x5, 1(x2)', 0x00114283),
    ('lhu x5, 2(x2)', 0x00215283),
    ('sb x5, 0(x2)', 0x00510023),
    ('sh x5, -2(x2)', 0xfe511f23),
    ('sw x5, 2047(x2)', 0x7e512fa3),
    ('fence', 0x0ff0000f),
    ('ecall', 0x00000073),
    ('ebreak', 0x00100073),
    ('csrrw x5, 0xcc0, x6', 0xcc0312f3),
    ('csrrs x5, 0xfc1, x0', 0xfc1022f3),
    ('csrrc x5, 0xc00, x7', 0xc003b2f3),
    ('csrrwi x5, 0x340, 5', 0x3402d2f3),
    ('csrrsi x5, 0x340, 31', 0x340fe2f3),
    ('csrrci x5, 0x340, 0', 0x340072f3),
]

# Custom SIMT encodings: opcode 0x0b, funct3 selects the operation.
SIMT_GOLDEN = [
    ("tmc x5", 0x0002800B),
    ("wspawn x3, x4", 0x0041900B),
    ("split x1, 8", 0x0000A40B),
    ("join", 0x0000300B),
    ("bar x5, x6", 0x0062C00B),
    ("sleep_req", 0x0000500B),
]


@pytest.mark.parametrize("text, word", GOLDEN + SIMT_GOLDEN)
def test_encoding_matches_reference(text, word):
    b = assemble(text, base=0)
    assert b.words == [word]
    assert format_instruction(decode(word)) == text


CORPUS = """
start:
    lui x10, 0x10
    addi x10, x10, 4
    auipc x11, 0x0
    csrrs x5, 0xcc0, x0
    csrrs x6, 0xcc1, x0
    csrrs x7, 0xfc0, x0
    mul x8, x6, x7
    add x8, x8, x5
    slli x9, x8, 2
    add x9, x9, x10
    lw x12, 0(x9)
    lh x13, 2(x9)
    lbu x14, 3(x9)
    sw x12, 64(x9)
    sh x13, 66(x9)
    sb x14, 67(x9)
    slt x15, x12, x13
    sltu x16, x12, x13
    split x15, else
    sub x17, x12, x13
    xor x18, x17, x12
    join
else:
    or x19, x12, x13
    and x20, x12, x13
    join
    srai x21, x12, 3
    srli x22, x12, 3
    sra x23, x12, x5
    srl x24, x12, x5
    sll x25, x12, x5
    mulh x26, x12, x13
    mulhu x27, x12, x13
    mulhsu x28, x12, x13
    div x29, x12, x13
    divu x30, x12, x13
    rem x31, x12, x13
    remu x1, x12, x13
    xori x2, x1, -1
    ori x3, x2, 7
    andi x4, x3, 255
    sltiu x5, x4, 17
    slti x6, x4, -17
    tmc x6
    wspawn x7, x8
    bar x0, x7
    fence
    bne x5, x0, start
    jal x1, done
    jalr x0, 0(x1)
done:
    sleep_req
"""


def test_corpus_round_trip():
    b = assemble(CORPUS, base=0x8000)
    assert len(b.words) >= 50
    text = disassemble(b)
    again = assemble(text)
    assert again.words == b.words and again.base_address == b.base_address
    plain = assemble(disassemble(b, use_symbols=False, org=False), base=0x8000)
    assert plain.words == b.words


def test_binary_and_symbol_listing_round_trip():
    from egpu.isa import KernelBinary
    b = assemble(CORPUS, base=0x8000)
    syms = KernelBinary.parse_symbol_listing(b.symbol_listing())
    c = KernelBinary.from_bytes(b.to_bytes(), 0x8000, syms)
    assert c.words == b.words and c.symbols == b.symbols


def _imm_for(fmt):
    return {
        "I": st.integers(-2048, 2047), "L": st.integers(-2048, 2047), "JALR": st.integers(-2048, 2047),
        "S": st.integers(-2048, 2047), "IS": st.integers(0, 31),
        "B": st.integers(-2048, 2047).map(lambda v: 2 * v), "XB": st.integers(-2048, 2047).map(lambda v: 2 * v),
        "U": st.integers(0, 0xFFFFF), "J": st.integers(-(1 << 19), (1 << 19) - 1).map(lambda v: 2 * v),
        "CSR": st.integers(0, 0xFFF), "CSRI": st.integers(0, 0xFFF), "FENCE": st.just(0x0FF),
    }.get(fmt, st.just(0))


USES = {"R": "dst", "I": "ds", "IS": "ds", "L": "ds", "S": "st", "B": "st", "U": "d", "J": "d", "JALR": "ds",
        "CSR": "ds", "CSRI": "ds", "SYS": "", "FENCE": "", "X0": "", "X1": "s", "X2": "st", "XB": "s"}


@st.composite
def legal_instruction(draw):
    name = draw(st.sampled_from(sorted(SPECS)))
    fmt = SPECS[name].fmt
    r = st.integers(0, 31)
    u = USES[fmt]
    return Instruction(name, draw(r) if "d" in u else 0, draw(r) if "s" in u else 0,
                       draw(r) if "t" in u else 0, draw(_imm_for(fmt)))


@settings(max_examples=2000, deadline=None)
@given(legal_instruction())
def test_random_legal_instructions_round_trip(ins):
    word = encode(ins)
    assert decode(word) == ins
    assert assemble(format_instruction(ins), base=0).words == [word]


@settings(max_examples=2000, deadline=None)
@given(st.integers(0, 0xFFFFFFFF))
def test_decode_is_exact_or_illegal(word):
    try:
        ins = decode(word)
    except IllegalInstruction:
        return
    assert encode(ins) == word


@pytest.mark.parametrize("word", [0x00000000, 0xFFFFFFFF, 0x0000700B, 0x0000680B, 0x0010300B])
def test_illegal_words(word):
    with pytest.raises(IllegalInstruction):
        decode(word)


def test_encoding_errors():
    with pytest.raises(EncodingError):
        encode(Instruction("addi", 1, 1, 0, 4096))
    with pytest.raises(EncodingError):
        encode(Instruction("beq", 0, 1, 2, 3))
    with pytest.raises(EncodingError):
        encode(Instruction("join", 1))


def test_assembler_errors():
    with pytest.raises(UndefinedLabel):
        assemble("beq x1, x2, nowhere")
    with pytest.raises(AsmSyntaxError):
        assemble("addi x1, x2")
    with pytest.raises(BranchOutOfRange):
        assemble("beq x0, x0, far\n" + "nop\n" * 1100 + "far:\n")
