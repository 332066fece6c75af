"""Static SPLIT/JOIN balance analysis over assembled code.

Every path is walked with an abstract divergence stack.  A JOIN that pops an
``else`` entry continues at that entry's target, a ``restore`` entry falls
through.  A SPLIT that no lane takes jumps to its target holding only the
``restore`` entry.  Merging paths must agree on the stack, and every return, sleep or
halt must be reached with an empty stack.
"""

from __future__ import annotations

from egpu.isa import IllegalInstruction, KernelBinary, Op, decode
from egpu.kernelc.frontend import KernelcError


class SplitJoinImbalance(KernelcError):
    pass


_BRANCHES = {Op.BEQ, Op.BNE, Op.BLT, Op.BGE, Op.BLTU, Op.BGEU}


def check_split_join(binary: KernelBinary, entries: list[int] | None = None) -> int:
    """Verify balance from each entry point; returns the maximum stack depth seen."""
    lo, hi = binary.base_address, binary.end_address
    pending_funcs = list(entries if entries is not None else [binary.entry_point])
    done_funcs: set[int] = set()
    max_depth = 0
    while pending_funcs:
        f = pending_funcs.pop()
        if f in done_funcs:
            continue
        done_funcs.add(f)
        seen: dict[int, tuple] = {}
        work = [(f, ())]
        while work:
            pc, stack = work.pop()
            if not lo <= pc < hi:
                raise SplitJoinImbalance(f"control reaches {pc:#x} outside the code")
            if pc in seen:
                if seen[pc] != stack:
                    raise SplitJoinImbalance(f"paths merge at {pc:#x} with different divergence stacks")
                continue
            seen[pc] = stack
            max_depth = max(max_depth, len(stack))
            try:
                ins = decode(binary.word_at(pc))
            except IllegalInstruction:
                raise SplitJoinImbalance(f"illegal word on a control path at {pc:#x}") from None
            op = ins.op
            if op == Op.SPLIT:
                work.append((pc + 4, stack + (("restore", None), ("else", pc + ins.imm))))
                work.append((pc + ins.imm, stack + (("restore", None),)))
            elif op == Op.JOIN:
                if not stack:
                    raise SplitJoinImbalance(f"join at {pc:#x} with an empty divergence stack")
                kind, target = stack[-1]
                work.append((target if kind == "else" else pc + 4, stack[:-1]))
            elif op in _BRANCHES:
                work.append((pc + 4, stack))
                work.append((pc + ins.imm, stack))
            elif op == Op.JAL:
                if ins.rd == 0:
                    work.append((pc + ins.imm, stack))
                else:
                    pending_funcs.append(pc + ins.imm)
                    work.append((pc + 4, stack))
            elif op in (Op.JALR, Op.SLEEP_REQ, Op.ECALL, Op.EBREAK):
                if stack:
                    raise SplitJoinImbalance(
                        f"{op.name.lower()} at {pc:#x} leaves {len(stack)} divergence entries")
            else:
                work.append((pc + 4, stack))
    return max_depth
