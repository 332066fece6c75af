from egpu.isa.asm import (AsmSyntaxError, AssemblerError, BranchOutOfRange, KernelBinary,
                          UndefinedLabel, assemble, disassemble)
from egpu.isa.encoding import (CSR_NAMES, MNEMONIC, OP_CLASS, SPECS, EncodingError, IllegalInstruction,
                               Instruction, Op, OpClass, decode, encode, format_instruction)

__all__ = [
    "AsmSyntaxError", "AssemblerError", "BranchOutOfRange", "KernelBinary", "UndefinedLabel",
    "assemble", "disassemble", "CSR_NAMES", "MNEMONIC", "OP_CLASS", "SPECS", "EncodingError",
    "IllegalInstruction", "Instruction", "Op", "OpClass", "decode", "encode", "format_instruction",
]
