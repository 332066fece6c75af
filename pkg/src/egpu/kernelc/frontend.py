"""Lexer, parser and AST for the restricted OpenCL-C kernel language.

Accepted subset: one ``__kernel void`` function whose parameters are
``__global int*`` buffers or ``int`` scalars; ``int`` locals; assignments
(including compound forms and ``++``/``--``); ``if``/``else``; ``for`` and
``while`` with uniform control; C expression syntax over int32 with the
usual precedence.  ``&&``, ``||`` and ``?:`` evaluate every operand (no
short-circuit), so operands must be safe to evaluate unconditionally.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from egpu.errors import EgpuError


class KernelcError(EgpuError):
    def __init__(self, msg: str, line: int | None = None, col: int | None = None):
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(where + msg)
        self.line, self.col = line, col


class KernelSyntaxError(KernelcError):
    pass


class NotAKernel(KernelcError):
    pass


class UnsupportedType(KernelcError):
    pass


class UnsupportedConstruct(KernelcError):
    pass


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Loc:
    line: int
    col: int


@dataclass
class Num:
    value: int
    loc: Loc


@dataclass
class Var:
    name: str
    loc: Loc


@dataclass
class Index:
    base: str
    index: object
    loc: Loc


@dataclass
class Call:
    name: str
    args: list
    loc: Loc


@dataclass
class Unary:
    op: str
    operand: object
    loc: Loc


@dataclass
class Binary:
    op: str
    left: object
    right: object
    loc: Loc


@dataclass
class Cond:
    cond: object
    then: object
    other: object
    loc: Loc


@dataclass
class Decl:
    name: str
    init: object | None
    loc: Loc


@dataclass
class Assign:
    target: Var | Index
    op: str  # "=", "+=", ...
    value: object
    loc: Loc


@dataclass
class If:
    cond: object
    then: list
    other: list
    loc: Loc


@dataclass
class For:
    init: list
    cond: object | None
    step: list
    body: list
    loc: Loc


@dataclass
class While:
    cond: object
    body: list
    loc: Loc


@dataclass
class ExprStmt:
    expr: object
    loc: Loc


@dataclass
class Barrier:
    loc: Loc


@dataclass
class Return:
    loc: Loc


@dataclass
class Block:
    body: list
    loc: Loc


@dataclass
class Param:
    name: str
    is_buffer: bool
    loc: Loc


@dataclass
class KernelAst:
    name: str
    params: list[Param]
    body: list
    loc: Loc
    source: str = field(default="", repr=False)

    @property
    def buffers(self) -> list[str]:
        return [p.name for p in self.params if p.is_buffer]

    @property
    def scalars(self) -> list[str]:
        return [p.name for p in self.params if not p.is_buffer]


BUILTINS = {
    "get_global_id": 1, "get_global_size": 1, "get_local_id": 1, "get_local_size": 1,
    "get_group_id": 1, "get_num_groups": 1, "mul_hi": 2, "min": 2, "max": 2, "abs": 1,
}
FENCE_FLAGS = {"CLK_GLOBAL_MEM_FENCE": 2, "CLK_LOCAL_MEM_FENCE": 1}

# ---------------------------------------------------------------------------
# lexer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\f\v]+) |
    (?P<nl>\n) |
    (?P<lcomment>//[^\n]*) |
    (?P<bcomment>/\*.*?\*/) |
    (?P<pp>\#[^\n]*) |
    (?P<num>0[xX][0-9a-fA-F]+[uUlL]*|\d+[uUlL]*) |
    (?P<fnum>\d*\.\d+([eE][-+]?\d+)?[fF]?|\d+[eE][-+]?\d+[fF]?) |
    (?P<id>[A-Za-z_]\w*) |
    (?P<op><<=|>>=|\+\+|--|&&|\|\||<<|>>|<=|>=|==|!=|\+=|-=|\*=|/=|%=|&=|\|=|\^=|[-+*/%&|^~!<>=?:;,(){}\[\]])
""", re.VERBOSE | re.DOTALL)

KEYWORDS = {"__kernel", "kernel", "void", "int", "if", "else", "for", "while", "do", "return", "break",
            "continue", "__global", "global", "const", "restrict", "__restrict", "switch", "goto"}
BAD_TYPES = {"float", "double", "half", "float2", "float4", "double2", "long", "short", "char",
             "unsigned", "uint", "ulong", "uchar", "ushort", "size_t", "bool", "signed"}
IMPLICIT_INT = {"int32_t"}


@dataclass
class Tok:
    kind: str  # num, id, op, eof
    text: str
    line: int
    col: int

    @property
    def loc(self) -> Loc:
        return Loc(self.line, self.col)


def tokenize(src: str) -> list[Tok]:
    out, pos, line, lstart = [], 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise KernelSyntaxError(f"unexpected character {src[pos]!r}", line, pos - lstart + 1)
        kind, text = m.lastgroup, m.group()
        col = pos - lstart + 1
        if kind == "fnum":
            raise UnsupportedType("floating-point literal", line, col)
        if kind == "pp":
            raise UnsupportedConstruct("preprocessor directives are not supported", line, col)
        if kind in ("num", "id", "op"):
            out.append(Tok(kind, text, line, col))
        nls = text.count("\n")
        if nls:
            line += nls
            lstart = pos + text.rfind("\n") + 1
        pos = m.end()
    out.append(Tok("eof", "", line, pos - lstart + 1))
    return out


# ---------------------------------------------------------------------------
# parser

_BINARY_LEVELS = [
    ("||",), ("&&",), ("|",), ("^",), ("&",), ("==", "!="), ("<", "<=", ">", ">="), ("<<", ">>"),
    ("+", "-"), ("*", "/", "%"),
]
_ASSIGN_OPS = {"=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="}


def _int_literal(text: str) -> int:
    v = int(text.rstrip("uUlL"), 0)
    if v > 0xFFFFFFFF:
        raise ValueError(text)
    return v - (1 << 32) if v >= 1 << 31 else v


class _Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, msg: str, tok: Tok | None = None):
        t = tok or self.tok
        raise KernelSyntaxError(msg, t.line, t.col)

    def at(self, *texts: str) -> bool:
        return self.tok.kind in ("op", "id") and self.tok.text in texts

    def take(self, *texts: str) -> Tok:
        if not self.at(*texts):
            self.fail(f"expected {' or '.join(repr(t) for t in texts)}, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Tok:
        t = self.tok
        if t.kind != "id" or t.text in KEYWORDS:
            self.fail(f"expected identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def check_type_word(self, t: Tok):
        if t.text in BAD_TYPES:
            raise UnsupportedType(f"type {t.text!r} is not supported (int32 only)", t.line, t.col)

    # -- top level -------------------------------------------------------------
    def unit(self) -> KernelAst:
        kernels = []
        while self.tok.kind != "eof":
            t = self.tok
            if self.at("__kernel", "kernel"):
                self.i += 1
                kernels.append(self.kernel(t))
            elif t.kind == "id" and (t.text in ("int", "void") or t.text in BAD_TYPES):
                self.check_type_word(t)
                raise UnsupportedConstruct("only a single __kernel function is supported", t.line, t.col)
            else:
                self.fail(f"unexpected {t.text!r} at top level")
        if not kernels:
            raise NotAKernel("no __kernel function found", 1, 1)
        if len(kernels) > 1:
            k = kernels[1]
            raise UnsupportedConstruct("more than one __kernel function", k.loc.line, k.loc.col)
        return kernels[0]

    def kernel(self, start: Tok) -> KernelAst:
        self.check_type_word(self.tok)
        self.take("void")
        name = self.ident()
        self.take("(")
        params: list[Param] = []
        if not self.at(")"):
            while True:
                params.append(self.param())
                if not self.at(","):
                    break
                self.i += 1
        self.take(")")
        body = self.block()
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            self.fail("duplicate parameter name", start)
        return KernelAst(name.text, params, body, start.loc)

    def param(self) -> Param:
        t0 = self.tok
        is_global = False
        while self.at("const", "__global", "global", "restrict", "__restrict"):
            if self.tok.text in ("__global", "global"):
                is_global = True
            self.i += 1
        self.check_type_word(self.tok)
        if self.tok.text in IMPLICIT_INT:
            self.i += 1
        else:
            self.take("int")
        ptr = False
        while self.at("*", "const", "restrict", "__restrict"):
            if self.tok.text == "*":
                if ptr:
                    raise UnsupportedType("pointer to pointer", self.tok.line, self.tok.col)
                ptr = True
            self.i += 1
        name = self.ident()
        if ptr and not is_global:
            raise UnsupportedType("pointer parameters must be __global", t0.line, t0.col)
        if is_global and not ptr:
            self.fail("__global parameter must be a pointer", t0)
        return Param(name.text, ptr, t0.loc)

    # -- statements --------------------------------------------------------------
    def block(self) -> list:
        self.take("{")
        out = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.fail("unterminated block")
            out.extend(self.statement())
        self.take("}")
        return out

    def body(self) -> list:
        if self.at("{"):
            return self.block()
        return self.statement()

    def statement(self) -> list:
        t = self.tok
        if t.kind == "id":
            self.check_type_word(t)
            if t.text in ("int", "const") or t.text in IMPLICIT_INT:
                out = self.declaration()
                self.take(";")
                return out
            if t.text == "if":
                return [self.if_stmt()]
            if t.text == "for":
                return [self.for_stmt()]
            if t.text == "while":
                self.i += 1
                self.take("(")
                cond = self.expr()
                self.take(")")
                return [While(cond, self.body(), t.loc)]
            if t.text in ("do", "break", "continue", "switch", "goto"):
                raise UnsupportedConstruct(f"'{t.text}' is not supported", t.line, t.col)
            if t.text == "return":
                self.i += 1
                if not self.at(";"):
                    self.fail("kernels return void")
                self.take(";")
                return [Return(t.loc)]
            if t.text == "barrier":
                self.i += 1
                self.take("(")
                depth = 0
                while not (depth == 0 and self.at(")")):
                    if self.tok.kind == "eof":
                        self.fail("unterminated barrier call")
                    if self.at("("):
                        depth += 1
                    elif self.at(")"):
                        depth -= 1
                    self.i += 1
                self.take(")")
                self.take(";")
                return [Barrier(t.loc)]
        if self.at("{"):
            return [Block(self.block(), t.loc)]
        if self.at(";"):
            self.i += 1
            return []
        s = self.simple()
        self.take(";")
        return [s]

    def declaration(self) -> list:
        while self.at("const"):
            self.i += 1
        self.check_type_word(self.tok)
        if self.tok.text in IMPLICIT_INT:
            self.i += 1
        else:
            self.take("int")
        out = []
        while True:
            if self.at("*"):
                raise UnsupportedType("local pointer variables are not supported", self.tok.line, self.tok.col)
            name = self.ident()
            if self.at("["):
                raise UnsupportedConstruct("private arrays are not supported; use a __global buffer",
                                           self.tok.line, self.tok.col)
            init = None
            if self.at("="):
                self.i += 1
                init = self.expr()
            out.append(Decl(name.text, init, name.loc))
            if not self.at(","):
                return out
            self.i += 1

    def simple(self):
        """Assignment, increment or expression statement (no trailing ';')."""
        t = self.tok
        if self.at("++", "--"):
            op = self.tok.text
            self.i += 1
            target = self.lvalue()
            return Assign(target, "+=" if op == "++" else "-=", Num(1, t.loc), t.loc)
        e = self.expr()
        if self.at(*_ASSIGN_OPS):
            if not isinstance(e, (Var, Index)):
                self.fail("left side of assignment is not assignable", t)
            op = self.tok.text
            self.i += 1
            return Assign(e, op, self.expr(), t.loc)
        if self.at("++", "--"):
            if not isinstance(e, (Var, Index)):
                self.fail("operand of ++/-- is not assignable", t)
            op = self.tok.text
            self.i += 1
            return Assign(e, "+=" if op == "++" else "-=", Num(1, t.loc), t.loc)
        if isinstance(e, Call) and e.name not in BUILTINS:
            raise UnsupportedConstruct(f"call to non-builtin function {e.name!r}", t.line, t.col)
        return ExprStmt(e, t.loc)

    def lvalue(self):
        e = self.postfix()
        if not isinstance(e, (Var, Index)):
            self.fail("expected an assignable expression")
        return e

    def if_stmt(self) -> If:
        t = self.take("if")
        self.take("(")
        cond = self.expr()
        self.take(")")
        then = self.body()
        other = []
        if self.at("else"):
            self.i += 1
            other = self.body()
        return If(cond, then, other, t.loc)

    def for_stmt(self) -> For:
        t = self.take("for")
        self.take("(")
        init: list = []
        if not self.at(";"):
            if self.tok.text in ("int", "const") or self.tok.text in IMPLICIT_INT:
                init = self.declaration()
            else:
                init = [self.simple()]
                while self.at(","):
                    self.i += 1
                    init.append(self.simple())
        self.take(";")
        cond = None if self.at(";") else self.expr()
        self.take(";")
        step: list = []
        if not self.at(")"):
            step = [self.simple()]
            while self.at(","):
                self.i += 1
                step.append(self.simple())
        self.take(")")
        return For(init, cond, step, self.body(), t.loc)

    # -- expressions ---------------------------------------------------------------
    def expr(self):
        t = self.tok
        c = self.binary(0)
        if self.at("?"):
            self.i += 1
            a = self.expr()
            self.take(":")
            b = self.expr()
            return Cond(c, a, b, t.loc)
        return c

    def binary(self, level: int):
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while self.tok.kind == "op" and self.tok.text in _BINARY_LEVELS[level]:
            t = self.tok
            self.i += 1
            left = Binary(t.text, left, self.binary(level + 1), t.loc)
        return left

    def unary(self):
        t = self.tok
        if self.at("-", "+", "!", "~"):
            self.i += 1
            operand = self.unary()
            if t.text == "-" and isinstance(operand, Num):
                v = (-operand.value) & 0xFFFFFFFF
                return Num(v - (1 << 32) if v >= 1 << 31 else v, t.loc)
            return operand if t.text == "+" else Unary(t.text, operand, t.loc)
        if self.at("++", "--"):
            raise UnsupportedConstruct("increment inside an expression", t.line, t.col)
        if self.at("(") and self.peek().kind == "id" and (self.peek().text in ("int", "const")
                                                          or self.peek().text in BAD_TYPES
                                                          or self.peek().text in IMPLICIT_INT):
            self.i += 1
            self.check_type_word(self.tok)
            while self.at("const"):
                self.i += 1
            if self.tok.text in IMPLICIT_INT:
                self.i += 1
            else:
                self.take("int")
            if self.at("*"):
                raise UnsupportedType("pointer casts are not supported", t.line, t.col)
            self.take(")")
            return self.unary()
        return self.postfix()

    def postfix(self):
        e = self.primary()
        if self.at("["):
            t = self.tok
            if not isinstance(e, Var):
                self.fail("only parameters can be indexed", t)
            self.i += 1
            idx = self.expr()
            self.take("]")
            e = Index(e.name, idx, e.loc)
            if self.at("["):
                raise UnsupportedConstruct("multi-dimensional indexing", self.tok.line, self.tok.col)
        return e

    def primary(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            try:
                return Num(_int_literal(t.text), t.loc)
            except ValueError:
                self.fail(f"integer literal {t.text} does not fit in 32 bits", t)
        if t.kind == "id":
            self.check_type_word(t)
            if t.text in KEYWORDS:
                self.fail(f"unexpected keyword {t.text!r}")
            self.i += 1
            if self.at("("):
                self.i += 1
                args = []
                if not self.at(")"):
                    while True:
                        args.append(self.expr())
                        if not self.at(","):
                            break
                        self.i += 1
                self.take(")")
                if t.text == "barrier":
                    raise UnsupportedConstruct("barrier() must be a statement", t.line, t.col)
                if t.text not in BUILTINS:
                    raise UnsupportedConstruct(f"call to non-builtin function {t.text!r}", t.line, t.col)
                if len(args) != BUILTINS[t.text]:
                    self.fail(f"{t.text} takes {BUILTINS[t.text]} argument(s)", t)
                return Call(t.text, args, t.loc)
            if t.text in FENCE_FLAGS:
                return Num(FENCE_FLAGS[t.text], t.loc)
            return Var(t.text, t.loc)
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.take(")")
            return e
        self.fail(f"unexpected {t.text or 'end of input'!r} in expression")


def parse(source: str) -> KernelAst:
    """Parse kernel source into a validated :class:`KernelAst`."""
    if not isinstance(source, str):
        source = source.decode("utf-8")
    ast = _Parser(source).unit()
    ast.source = source
    _validate(ast)
    return ast


# ---------------------------------------------------------------------------
# semantic checks

def _validate(ast: KernelAst) -> None:
    buffers = set(ast.buffers)
    scopes: list[set[str]] = [{p.name for p in ast.params}]

    def declared(name: str) -> bool:
        return any(name in s for s in scopes)

    def expr(e):
        if isinstance(e, Num):
            return
        if isinstance(e, Var):
            if not declared(e.name):
                raise KernelSyntaxError(f"undeclared identifier {e.name!r}", e.loc.line, e.loc.col)
            if e.name in buffers:
                raise UnsupportedConstruct(f"buffer {e.name!r} used as a value", e.loc.line, e.loc.col)
        elif isinstance(e, Index):
            if e.base not in buffers:
                raise KernelSyntaxError(f"{e.base!r} is not a buffer parameter", e.loc.line, e.loc.col)
            expr(e.index)
        elif isinstance(e, Call):
            for a in e.args:
                expr(a)
            if e.name.startswith("get_") and not isinstance(e.args[0], Num):
                raise UnsupportedConstruct(f"{e.name} needs a constant dimension", e.loc.line, e.loc.col)
        elif isinstance(e, Unary):
            expr(e.operand)
        elif isinstance(e, Binary):
            expr(e.left)
            expr(e.right)
        elif isinstance(e, Cond):
            expr(e.cond)
            expr(e.then)
            expr(e.other)

    def stmts(body, depth):
        scopes.append(set())
        for s in body:
            stmt(s, depth)
        scopes.pop()

    def stmt(s, depth):
        if isinstance(s, Decl):
            if s.name in scopes[-1] or s.name in BUILTINS:
                raise KernelSyntaxError(f"redeclaration of {s.name!r}", s.loc.line, s.loc.col)
            if s.init is not None:
                expr(s.init)
            scopes[-1].add(s.name)
        elif isinstance(s, Assign):
            if isinstance(s.target, Var):
                if not declared(s.target.name):
                    raise KernelSyntaxError(f"undeclared identifier {s.target.name!r}", s.loc.line, s.loc.col)
                if s.target.name in buffers:
                    raise UnsupportedConstruct("assignment to a buffer parameter", s.loc.line, s.loc.col)
            else:
                expr(s.target)
            expr(s.value)
        elif isinstance(s, If):
            expr(s.cond)
            stmts(s.then, depth + 1)
            stmts(s.other, depth + 1)
        elif isinstance(s, For):
            scopes.append(set())
            for x in s.init:
                stmt(x, depth)
            if s.cond is not None:
                expr(s.cond)
            for x in s.step:
                stmt(x, depth)
            stmts(s.body, depth + 1)
            scopes.pop()
        elif isinstance(s, While):
            expr(s.cond)
            stmts(s.body, depth + 1)
        elif isinstance(s, Block):
            stmts(s.body, depth)
        elif isinstance(s, ExprStmt):
            expr(s.expr)
        elif isinstance(s, Return):
            if depth:
                raise UnsupportedConstruct("return is only allowed at the top level of the kernel body",
                                           s.loc.line, s.loc.col)
        elif isinstance(s, Barrier):
            pass

    stmts(ast.body, 0)
