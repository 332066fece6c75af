"""Lowering of a kernel AST to SIMT or scalar RV32IM assembly.

Calling convention shared with the firmware and the scalar driver:

* ``a0``/``a1`` hold the work-item's global id in x and y,
* ``a2`` holds the address of the argument region,
* ``tp`` holds the barrier participant count (SIMT only),
* ``sp`` is the thread's stack; callee-saved registers used by the kernel
  are spilled there in the prologue and restored before ``ret``.

Control flow whose condition may differ between lanes is lowered with the
SPLIT/JOIN pattern; uniform control uses ordinary branches.  Loops are
bottom-tested so that a warp running under an empty mask falls out of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from egpu.kernelc.frontend import (
    Assign, Barrier, Binary, Block, Call, Cond, Decl, ExprStmt, For, If, Index, KernelAst,
    KernelcError, Num, Return, Unary, UnsupportedConstruct, Var, While,
)

ARG_WORD0 = 5  # first argument word in the args region


class RegisterPressure(KernelcError):
    pass


@dataclass
class LoweredKernel:
    """Assembly for one kernel plus its calling-convention record."""

    name: str
    asm: str
    target: str  # "simt" | "scalar"
    convention: dict = field(default_factory=lambda: {"gid_x": "a0", "gid_y": "a1", "args": "a2",
                                                       "bar_count": "tp"})
    clobbers: frozenset = frozenset()
    params: tuple = ()
    n_splits: int = 0
    n_joins: int = 0
    n_barriers: int = 0


# ---------------------------------------------------------------------------
# uniformity

_DIVERGENT_CALLS = {"get_global_id", "get_local_id", "get_group_id"}


class Uniformity:
    """Flow-insensitive lane-uniformity analysis.

    A variable is varying if any assignment to it has a varying value or
    happens under varying control that began outside its declaring scope.  A buffer
    load is uniform when its index is: every lane reads the same word in the same
    instruction.
    Variables are keyed by declaration object so that shadowing is handled.
    """

    def __init__(self, ast: KernelAst):
        self.ast = ast
        self.varying: set[int] = set()  # id(Decl) or param names
        self.decl_of: dict[int, object] = {}  # id(Var node) -> Decl or param name
        self._bind()
        changed = True
        while changed:
            changed = self._pass()

    # resolve every Var to its declaration
    def _bind(self):
        scopes: list[dict[str, object]] = [{p.name: ("param", p.name) for p in self.ast.params}]

        def look(name):
            for s in reversed(scopes):
                if name in s:
                    return s[name]
            raise KernelcError(f"unresolved {name}")

        def expr(e):
            if isinstance(e, Var):
                self.decl_of[id(e)] = look(e.name)
            elif isinstance(e, Index):
                expr(e.index)
            elif isinstance(e, Call):
                for a in e.args:
                    expr(a)
            elif isinstance(e, Unary):
                expr(e.operand)
            elif isinstance(e, Binary):
                expr(e.left)
                expr(e.right)
            elif isinstance(e, Cond):
                expr(e.cond)
                expr(e.then)
                expr(e.other)

        def stmts(body):
            scopes.append({})
            for s in body:
                stmt(s)
            scopes.pop()

        def stmt(s):
            if isinstance(s, Decl):
                if s.init is not None:
                    expr(s.init)
                scopes[-1][s.name] = s
                self.decl_of[id(s)] = s
            elif isinstance(s, Assign):
                expr(s.target)
                expr(s.value)
            elif isinstance(s, If):
                expr(s.cond)
                stmts(s.then)
                stmts(s.other)
            elif isinstance(s, For):
                scopes.append({})
                for x in s.init:
                    stmt(x)
                if s.cond is not None:
                    expr(s.cond)
                for x in s.step:
                    stmt(x)
                stmts(s.body)
                scopes.pop()
            elif isinstance(s, While):
                expr(s.cond)
                stmts(s.body)
            elif isinstance(s, Block):
                stmts(s.body)
            elif isinstance(s, ExprStmt):
                expr(s.expr)

        stmts(self.ast.body)

    def key(self, node) -> object:
        d = self.decl_of[id(node)] if isinstance(node, Var) else node
        return d if isinstance(d, tuple) else id(d)

    def uniform(self, e) -> bool:
        if isinstance(e, Num):
            return True
        if isinstance(e, Var):
            return self.key(e) not in self.varying
        if isinstance(e, Index):
            return self.uniform(e.index)
        if isinstance(e, Call):
            if e.name in _DIVERGENT_CALLS:
                return False
            return all(self.uniform(a) for a in e.args)
        if isinstance(e, Unary):
            return self.uniform(e.operand)
        if isinstance(e, Binary):
            return self.uniform(e.left) and self.uniform(e.right)
        if isinstance(e, Cond):
            return self.uniform(e.cond) and self.uniform(e.then) and self.uniform(e.other)
        raise KernelcError(f"unexpected node {type(e).__name__}")

    def _pass(self) -> bool:
        before = len(self.varying)
        level: dict[object, int] = {("param", p.name): 0 for p in self.ast.params}

        # ``depth`` counts enclosing ifs with varying conditions.  Divergence
        # taints a variable only if it encloses the assignment but not the
        # declaration: inside its own region every active lane agrees.
        def mark(k, value, depth):
            if depth > level.get(k, 0) or (value is not None and not self.uniform(value)):
                self.varying.add(k)

        def walk(stmts, depth):
            for s in stmts:
                if isinstance(s, Decl):
                    level[id(s)] = depth
                    mark(id(s), s.init, depth)
                elif isinstance(s, Assign):
                    if isinstance(s.target, Var):
                        mark(self.key(s.target), s.value, depth)
                elif isinstance(s, If):
                    d = depth + (not self.uniform(s.cond))
                    walk(s.then, d)
                    walk(s.other, d)
                elif isinstance(s, For):
                    walk(s.init, depth)
                    walk(s.step, depth)
                    walk(s.body, depth)
                elif isinstance(s, While):
                    walk(s.body, depth)
                elif isinstance(s, Block):
                    walk(s.body, depth)

        walk(self.ast.body, 0)
        return len(self.varying) != before


# ---------------------------------------------------------------------------
# code generation

TEMP_POOL = ["t0", "t1", "t2", "t3", "t4", "t5", "t6", "a3", "a4", "a5", "a6", "a7"]
SAVED_POOL = ["s0", "s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11"]

_RR = {"+": "add", "-": "sub", "*": "mul", "/": "div", "%": "rem", "&": "and", "|": "or", "^": "xor",
       "<<": "sll", ">>": "sra"}
_RI = {"+": "addi", "&": "andi", "|": "ori", "^": "xori", "<<": "slli", ">>": "srai"}
_BRANCH = {"<": ("blt", False), ">": ("blt", True), "<=": ("bge", True), ">=": ("bge", False),
           "==": ("beq", False), "!=": ("bne", False)}
_NEGATE = {"<": ">=", ">=": "<", ">": "<=", "<=": ">", "==": "!=", "!=": "=="}


def _fits12(v: int) -> bool:
    return -2048 <= v < 2048


class _Gen:
    def __init__(self, ast: KernelAst, target: str):
        self.ast = ast
        self.simt = target == "simt"
        self.uni = Uniformity(ast)
        self.out: list[str] = []
        self.free = TEMP_POOL + SAVED_POOL  # allocation order
        self.in_use: set[str] = set()
        self.used_saved: set[str] = set()
        self.bindings: dict[object, str] = {}
        self.labels = 0
        self.splits = self.joins = self.barriers = 0
        self.divergent = 0  # nesting depth of work-item dependent branches
        self.cached: dict[str, str] = {}

    # -- registers -------------------------------------------------------------
    def alloc(self, node=None) -> str:
        for r in self.free:
            if r not in self.in_use:
                self.in_use.add(r)
                if r in SAVED_POOL:
                    self.used_saved.add(r)
                return r
        loc = getattr(node, "loc", None) or self.ast.loc
        raise RegisterPressure("expression needs more registers than the register file provides",
                               loc.line, loc.col)

    def release(self, r: str) -> None:
        if r in self.in_use and r not in self.bindings.values() and r not in self.cached.values():
            self.in_use.discard(r)

    def temp_of(self, r: str) -> bool:
        return r in self.in_use and r not in self.bindings.values() and r not in self.cached.values()

    def label(self, stem: str) -> str:
        self.labels += 1
        return f".L{stem}{self.labels}"

    def emit(self, text: str) -> None:
        self.out.append("    " + text)

    def place(self, label: str) -> None:
        self.out.append(label + ":")

    # -- helpers ---------------------------------------------------------------
    def li(self, rd: str, v: int) -> None:
        self.emit(f"li {rd}, {v}")

    def args_word(self, idx: int, node) -> str:
        return self.cached[f"w{idx}"]

    def _needed_words(self) -> list[int]:
        need: set[int] = set()

        def visit(x):
            if isinstance(x, Call) and x.name.startswith("get_") and x.name != "get_global_id":
                d = x.args[0].value
                if d <= 1:
                    if x.name in ("get_global_size", "get_num_groups"):
                        need.add(d)
                    if x.name != "get_global_size":
                        need.add(2 + d)
            if isinstance(x, list):
                for y in x:
                    visit(y)
            elif hasattr(x, "__dataclass_fields__"):
                for f in x.__dataclass_fields__:
                    visit(getattr(x, f))
        visit(self.ast.body)
        return sorted(need)

    # -- expressions -----------------------------------------------------------
    def expr(self, e, dest: str | None = None) -> str:
        """Evaluate ``e``; result lands in ``dest`` if given, else in a fresh or bound register."""
        r = self._expr(e, dest)
        if dest is not None and r != dest:
            self.emit(f"mv {dest}, {r}")
            self.release(r)
            return dest
        return r

    def _target(self, dest, node) -> str:
        return dest if dest is not None else self.alloc(node)

    def _expr(self, e, dest):
        if isinstance(e, Num):
            if e.value == 0 and dest is None:
                return "zero"
            rd = self._target(dest, e)
            self.li(rd, e.value)
            return rd
        if isinstance(e, Var):
            return self.bindings[self.uni.key(e)]
        if isinstance(e, Index):
            base, off, idx = self.address(e)
            rd = self._target(dest, e)
            self.emit(f"lw {rd}, {off}({base})")
            if idx is not None:
                self.release(idx)
            return rd
        if isinstance(e, Call):
            return self.call(e, dest)
        if isinstance(e, Unary):
            a = self.expr(e.operand)
            rd = dest if dest is not None else (a if self.temp_of(a) else self.alloc(e))
            op = {"-": "neg", "~": "not", "!": "seqz"}[e.op]
            self.emit(f"{op} {rd}, {a}")
            if a != rd:
                self.release(a)
            return rd
        if isinstance(e, Binary):
            return self.binary(e, dest)
        if isinstance(e, Cond):
            c = self.expr(e.cond)
            a = self.expr(e.then)
            b = self.expr(e.other)
            m = self.alloc(e)
            self.emit(f"snez {m}, {c}")
            self.emit(f"neg {m}, {m}")
            t = self.alloc(e)
            self.emit(f"xor {t}, {a}, {b}")
            self.emit(f"and {t}, {t}, {m}")
            rd = self._target(dest, e)
            self.emit(f"xor {rd}, {t}, {b}")
            for x in (c, a, b, m, t):
                if x != rd:
                    self.release(x)
            return rd
        raise KernelcError(f"cannot lower {type(e).__name__}")

    def binary(self, e: Binary, dest):
        op = e.op
        if op in ("&&", "||"):
            a = self.expr(e.left)
            b = self.expr(e.right)
            rd = self._target(dest, e)
            ta = self.alloc(e)
            self.emit(f"snez {ta}, {a}")
            tb = self.alloc(e)
            self.emit(f"snez {tb}, {b}")
            self.emit(f"{'and' if op == '&&' else 'or'} {rd}, {ta}, {tb}")
            for x in (a, b, ta, tb):
                self.release(x)
            return rd
        if op == "*":
            for k, other in ((e.right, e.left), (e.left, e.right)):
                if isinstance(k, Num) and k.value > 0 and k.value & (k.value - 1) == 0:
                    return self.binary(Binary("<<", other, Num(k.value.bit_length() - 1, k.loc), e.loc), dest)
        # immediate forms
        if isinstance(e.right, Num) and op in ("+", "-", "&", "|", "^", "<<", ">>", "<"):
            v = e.right.value if op != "-" else -e.right.value
            ok = _fits12(v) if op not in ("<<", ">>") else 0 <= v < 32
            if ok:
                a = self.expr(e.left)
                rd = dest if dest is not None else (a if self.temp_of(a) else self.alloc(e))
                mnem = "slti" if op == "<" else _RI["+" if op == "-" else op]
                self.emit(f"{mnem} {rd}, {a}, {v}")
                if a != rd:
                    self.release(a)
                return rd
        a = self.expr(e.left)
        b = self.expr(e.right)
        rd = dest if dest is not None else (a if self.temp_of(a) else (b if self.temp_of(b) else self.alloc(e)))
        if op in _RR:
            self.emit(f"{_RR[op]} {rd}, {a}, {b}")
        elif op == "<":
            self.emit(f"slt {rd}, {a}, {b}")
        elif op == ">":
            self.emit(f"slt {rd}, {b}, {a}")
        elif op == "<=":
            self.emit(f"slt {rd}, {b}, {a}")
            self.emit(f"xori {rd}, {rd}, 1")
        elif op == ">=":
            self.emit(f"slt {rd}, {a}, {b}")
            self.emit(f"xori {rd}, {rd}, 1")
        elif op == "==":
            self.emit(f"xor {rd}, {a}, {b}")
            self.emit(f"seqz {rd}, {rd}")
        elif op == "!=":
            self.emit(f"xor {rd}, {a}, {b}")
            self.emit(f"snez {rd}, {rd}")
        else:
            raise KernelcError(f"operator {op}")
        for x in (a, b):
            if x != rd:
                self.release(x)
        return rd

    def call(self, e: Call, dest):
        n = e.name
        if n in ("mul_hi", "min", "max"):
            a = self.expr(e.args[0])
            b = self.expr(e.args[1])
            rd = self._target(dest, e)
            if n == "mul_hi":
                self.emit(f"mulh {rd}, {a}, {b}")
            else:
                m = self.alloc(e)
                # select b when (a<b) == (n == "max")
                self.emit(f"slt {m}, {a}, {b}")
                if n == "min":
                    self.emit(f"xori {m}, {m}, 1")
                self.emit(f"neg {m}, {m}")
                t = self.alloc(e)
                self.emit(f"xor {t}, {a}, {b}")
                self.emit(f"and {t}, {t}, {m}")
                self.emit(f"xor {rd}, {a}, {t}")
                self.release(m)
                self.release(t)
            for x in (a, b):
                if x != rd:
                    self.release(x)
            return rd
        if n == "abs":
            a = self.expr(e.args[0])
            rd = self._target(dest, e)
            m = self.alloc(e)
            self.emit(f"srai {m}, {a}, 31")
            self.emit(f"xor {rd}, {a}, {m}")
            self.emit(f"sub {rd}, {rd}, {m}")
            self.release(m)
            if a != rd:
                self.release(a)
            return rd
        d = e.args[0].value
        if n == "get_global_id":
            src = {0: "a0", 1: "a1"}.get(d)
            if src is None:
                return self.expr(Num(0, e.loc), dest)
            return src
        if n == "get_global_size":
            if d > 1:
                return self.expr(Num(1, e.loc), dest)
            return self.args_word(d, e)
        if n == "get_local_size":
            if d > 1:
                return self.expr(Num(1, e.loc), dest)
            return self.args_word(2 + d, e)
        if n in ("get_local_id", "get_group_id"):
            if d > 1:
                return self.expr(Num(0, e.loc), dest)
            g = "a0" if d == 0 else "a1"
            ls = self.args_word(2 + d, e)
            rd = self._target(dest, e)
            self.emit(f"{'rem' if n == 'get_local_id' else 'div'} {rd}, {g}, {ls}")
            return rd
        if n == "get_num_groups":
            if d > 1:
                return self.expr(Num(1, e.loc), dest)
            gs = self.args_word(d, e)
            ls = self.args_word(2 + d, e)
            rd = self._target(dest, e)
            self.emit(f"div {rd}, {gs}, {ls}")
            return rd
        raise KernelcError(f"builtin {n}")

    def address(self, e: Index):
        """(base register, byte offset, temp to release) for a buffer element."""
        base = self.bindings[("param", e.base)]
        idx, off = e.index, 0
        if isinstance(idx, Binary) and idx.op in ("+", "-") and isinstance(idx.right, Num):
            off = idx.right.value if idx.op == "+" else -idx.right.value
            if _fits12(4 * off):
                idx = idx.left
            else:
                idx, off = e.index, 0
        if isinstance(idx, Num) and _fits12(4 * (idx.value + off)):
            return base, 4 * (idx.value + off), None
        r = self.expr(idx)
        t = r if self.temp_of(r) else self.alloc(e)
        self.emit(f"slli {t}, {r}, 2")
        self.emit(f"add {t}, {t}, {base}")
        if r != t:
            self.release(r)
        return t, 4 * off, t

    # -- statements --------------------------------------------------------------
    def stmts(self, body) -> None:
        declared = []
        for s in body:
            k = self.stmt(s)
            if k is not None:
                declared.append(k)
        for k in declared:
            r = self.bindings.pop(k)
            self.release(r)

    def stmt(self, s):
        if isinstance(s, Decl):
            r = self.alloc(s)
            if s.init is not None:
                self.expr(s.init, r)
            k = id(s)
            self.bindings[k] = r
            return k
        if isinstance(s, Assign):
            self.assign(s)
        elif isinstance(s, If):
            self.if_stmt(s)
        elif isinstance(s, For):
            self.for_stmt(s)
        elif isinstance(s, While):
            self.loop(s, s.cond, [], s.body)
        elif isinstance(s, Block):
            self.stmts(s.body)
        elif isinstance(s, ExprStmt):
            r = self.expr(s.expr)
            self.release(r)
        elif isinstance(s, Barrier):
            if self.divergent:
                # warps without a lane on this path would never arrive
                raise UnsupportedConstruct("barrier() inside a branch that depends on the work-item",
                                           s.loc.line, s.loc.col)
            if self.simt:
                self.emit("bar zero, tp")
                self.barriers += 1
        elif isinstance(s, Return):
            self.emit(f"j {self.exit_label}")
        return None

    def assign(self, s: Assign):
        value = s.value if s.op == "=" else Binary(s.op[:-1], s.target, s.value, s.loc)
        if isinstance(s.target, Var):
            self.expr(value, self.bindings[self.uni.key(s.target)])
            return
        v = self.expr(value)
        base, off, idx = self.address(s.target)
        self.emit(f"sw {v}, {off}({base})")
        if idx is not None:
            self.release(idx)
        self.release(v)

    def branch_false(self, cond, label: str) -> None:
        """Jump to ``label`` when ``cond`` is zero (uniform conditions only)."""
        if isinstance(cond, Binary) and cond.op in _BRANCH:
            self.branch_true(Binary(_NEGATE[cond.op], cond.left, cond.right, cond.loc), label)
            return
        r = self.expr(cond)
        self.emit(f"beqz {r}, {label}")
        self.release(r)

    def branch_true(self, cond, label: str) -> None:
        if isinstance(cond, Binary) and cond.op in _BRANCH:
            mnem, swap = _BRANCH[cond.op]
            a = self.expr(cond.left)
            b = self.expr(cond.right)
            x, y = (b, a) if swap else (a, b)
            self.emit(f"{mnem} {x}, {y}, {label}")
            self.release(a)
            self.release(b)
            return
        r = self.expr(cond)
        self.emit(f"bnez {r}, {label}")
        self.release(r)

    def if_stmt(self, s: If):
        if self.simt and not self.uni.uniform(s.cond):
            r = self.expr(s.cond)
            other = self.label("else")
            self.emit(f"split {r}, {other}")
            self.release(r)
            self.splits += 1
            self.divergent += 1
            self.stmts(s.then)
            self.emit("join")
            self.place(other)
            self.stmts(s.other)
            self.emit("join")
            self.divergent -= 1
            self.joins += 2
            return
        other = self.label("else")
        self.branch_false(s.cond, other)
        self.stmts(s.then)
        if s.other:
            end = self.label("endif")
            self.emit(f"j {end}")
            self.place(other)
            self.stmts(s.other)
            self.place(end)
        else:
            self.place(other)

    def for_stmt(self, s: For):
        declared = []
        for x in s.init:
            k = self.stmt(x)
            if k is not None:
                declared.append(k)
        self.loop(s, s.cond, s.step, s.body)
        for k in declared:
            self.release(self.bindings.pop(k))

    def loop(self, s, cond, step, body):
        parts = ([cond] if cond is not None else [])
        if self.simt:
            for x in parts:
                if not self.uni.uniform(x):
                    raise UnsupportedConstruct("loop condition must be uniform across work-items",
                                               s.loc.line, s.loc.col)
            for st in step:
                if isinstance(st, Assign) and isinstance(st.target, Var) and \
                        self.uni.key(st.target) in self.uni.varying:
                    raise UnsupportedConstruct("loop variable must be uniform across work-items",
                                               s.loc.line, s.loc.col)
        body_l = self.label("body")
        test_l = self.label("test")
        self.emit(f"j {test_l}")
        self.place(body_l)
        self.stmts(body)
        for st in step:
            self.stmt(st)
        self.place(test_l)
        if cond is None:
            # always true: still a conditional branch so that empty-mask warps leave
            self.emit(f"beq zero, zero, {body_l}")
        else:
            self.branch_true(cond, body_l)

    # -- driver ----------------------------------------------------------------------
    def run(self) -> LoweredKernel:
        ast = self.ast
        for r in ("a0", "a1", "a2"):
            self.in_use.add(r)
        self.prologue_loads: list[str] = []
        for i, p in enumerate(ast.params):
            r = self.alloc(p)
            self.bindings[("param", p.name)] = r
            self.prologue_loads.append(f"lw {r}, {4 * (ARG_WORD0 + i)}(a2)")
        for w in self._needed_words():
            r = self.alloc(ast)
            self.cached[f"w{w}"] = r
            self.prologue_loads.append(f"lw {r}, {4 * w}(a2)")
        self.exit_label = self.label("exit")
        self.stmts(ast.body)
        body = self.out
        saved = sorted(self.used_saved, key=SAVED_POOL.index)
        frame = 4 * len(saved)
        head = [f"{ast.name}:", "__kernel_entry:"]
        if frame:
            head.append(f"    addi sp, sp, -{frame}")
            head += [f"    sw {r}, {4 * i}(sp)" for i, r in enumerate(saved)]
        head += ["    " + x for x in self.prologue_loads]
        tail = [f"{self.exit_label}:"]
        if frame:
            tail += [f"    lw {r}, {4 * i}(sp)" for i, r in enumerate(saved)]
            tail.append(f"    addi sp, sp, {frame}")
        tail.append("    ret")
        asm = "\n".join(head + body + tail) + "\n"
        clobbers = frozenset(r for r in TEMP_POOL + ["a0", "a1", "a2"])
        return LoweredKernel(ast.name, asm, "simt" if self.simt else "scalar", clobbers=clobbers,
                             params=tuple((p.name, p.is_buffer) for p in ast.params),
                             n_splits=self.splits, n_joins=self.joins, n_barriers=self.barriers)


def lower_simt(ast: KernelAst, cfg=None) -> LoweredKernel:
    """Lower to SIMT assembly (the config is accepted for interface symmetry; code is config-independent)."""
    return _Gen(ast, "simt").run()


def lower_kernel_scalar(ast: KernelAst) -> LoweredKernel:
    return _Gen(ast, "scalar").run()


def scalar_driver(kernel: LoweredKernel, args_base: int, stack_top: int) -> str:
    """Driver that calls the kernel once per work-item in row-major gid order, then halts."""
    return f"""\
_start:
    li sp, {stack_top}
    li s1, {args_base}
    lw s2, 0(s1)
    lw s3, 4(s1)
    li s4, 0
    j .Ldrv_ytest
.Ldrv_ybody:
    li s5, 0
    j .Ldrv_xtest
.Ldrv_xbody:
    mv a0, s5
    mv a1, s4
    mv a2, s1
    jal ra, __kernel_entry
    addi s5, s5, 1
.Ldrv_xtest:
    blt s5, s2, .Ldrv_xbody
    addi s4, s4, 1
.Ldrv_ytest:
    blt s4, s3, .Ldrv_ybody
    ecall
"""


def lower_scalar(ast: KernelAst, args_base: int = 0x1000, stack_top: int = 0x10400) -> str:
    """Scalar program: driver loop over every gid calling the kernel body; barrier() is a no-op."""
    k = lower_kernel_scalar(ast)
    return scalar_driver(k, args_base, stack_top) + k.asm
