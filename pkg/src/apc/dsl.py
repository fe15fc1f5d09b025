"""Frontend for the ODE-description language.

Programs are line oriented; ``#`` starts a comment. Statements:

    system NAME
    param NAME = const-expr
    var NAME order N
    eq NAME'' = expr
    init NAME' = const-expr
    table NAME = (x1, y1) (x2, y2) ...
    bound NAME' = const-expr
    time T_END
    output NAME[, NAME...]

Expressions use ``+ - *`` with the usual precedence, unary minus,
parentheses and ``lut(TABLE, expr)``. Derivatives are written with
apostrophes (``y''``). Division is not part of the language; the only
runtime nonlinearities are multiplication and table lookup. The constant
functions ``sin``, ``cos`` and ``exp`` may appear in ``param``, ``init``
and ``bound`` expressions only and are folded at resolve time.

``parse`` produces an untyped Program, ``resolve`` checks and folds it
into an OdeSystem ready for compilation. Both report problems as
Diagnostic values with source locations instead of raising.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

KEYWORDS = {"system", "param", "var", "order", "eq", "init", "table", "time", "output", "bound"}
CONST_FUNCS = {"sin": math.sin, "cos": math.cos, "exp": math.exp}


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.column}: {self.message}"


# --- AST ------------------------------------------------------------------
# Locations never take part in equality so that a pretty-printed and
# re-parsed tree compares equal to the original.

@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: float
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Ref(Expr):
    """A name with a derivative order: ``y''`` is Ref("y", 2)."""

    name: str
    order: int = 0
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Stmt:
    pass


@dataclass(frozen=True)
class ParamDecl(Stmt):
    name: str
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class VarDecl(Stmt):
    name: str
    order: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class EqDecl(Stmt):
    name: str
    order: int
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class InitDecl(Stmt):
    name: str
    order: int
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TableDecl(Stmt):
    name: str
    points: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BoundDecl(Stmt):
    name: str
    order: int
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TimeDecl(Stmt):
    t_end: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class OutputDecl(Stmt):
    signals: tuple  # of (name, order)
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Program:
    name: str
    statements: tuple


def signal_name(name: str, order: int) -> str:
    return name + "'" * order


# --- Lexer ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<num>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)
  | (?P<op>[+\-*/(),=])
  | (?P<ws>\s+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num | ident | keyword | op | eol
    text: str
    line: int
    column: int


def _lex_line(text: str, lineno: int, diags: list) -> list[Token]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        col = m.start() + 1
        if m.lastgroup == "ws":
            continue
        if m.lastgroup == "bad":
            diags.append(Diagnostic(lineno, col, f"unexpected character {m.group()!r}"))
            continue
        if m.lastgroup == "ident":
            base = m.group().rstrip("'")
            kind = "keyword" if base == m.group() and base in KEYWORDS else "ident"
            tokens.append(Token(kind, m.group(), lineno, col))
        else:
            tokens.append(Token(m.lastgroup, m.group(), lineno, col))
    tokens.append(Token("eol", "", lineno, len(text) + 1))
    return tokens


# --- Parser ---------------------------------------------------------------

class _LineParser:
    """Recursive-descent parser over one statement line."""

    def __init__(self, tokens: list[Token], diags: list):
        self.tokens = tokens
        self.pos = 0
        self.diags = diags

    @property
    def cur(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.cur
        if tok.kind != "eol":
            self.pos += 1
        return tok

    def error(self, message: str):
        self.diags.append(Diagnostic(self.cur.line, self.cur.column, message))
        raise _Bail()

    def expect_op(self, op: str):
        if self.cur.kind == "op" and self.cur.text == op:
            return self.advance()
        self.error(f"expected {op!r}")

    def expect_eol(self):
        if self.cur.kind != "eol":
            self.error(f"unexpected trailing input {self.cur.text!r}")

    def ident(self, allow_primes=False):
        tok = self.cur
        if tok.kind != "ident":
            self.error("expected a name")
        self.advance()
        base = tok.text.rstrip("'")
        order = len(tok.text) - len(base)
        if order and not allow_primes:
            self.error("derivative marks are not allowed here")
        return base, order, tok

    def number(self) -> float:
        neg = False
        if self.cur.kind == "op" and self.cur.text == "-":
            self.advance()
            neg = True
        if self.cur.kind != "num":
            self.error("expected a number")
        v = float(self.advance().text)
        return -v if neg else v

    # expression grammar: sum -> term (('+'|'-') term)*
    #                     term -> factor ('*' factor)*
    #                     factor -> '-' factor | atom
    #                     atom -> number | name | call '(' args ')' | '(' sum ')'
    def expr(self) -> Expr:
        left = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self.advance()
            right = self.term()
            left = Bin(op.text, left, right, line=op.line, column=op.column)
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self.advance()
            if op.text == "/":
                self.diags.append(Diagnostic(op.line, op.column, "division not supported"))
                raise _Bail()
            right = self.factor()
            left = Bin("*", left, right, line=op.line, column=op.column)
        return left

    def factor(self) -> Expr:
        if self.cur.kind == "op" and self.cur.text == "-":
            tok = self.advance()
            return Neg(self.factor(), line=tok.line, column=tok.column)
        return self.atom()

    def atom(self) -> Expr:
        tok = self.cur
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text), line=tok.line, column=tok.column)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner = self.expr()
            self.expect_op(")")
            return inner
        if tok.kind == "ident":
            base, order, _ = self.ident(allow_primes=True)
            if self.cur.kind == "op" and self.cur.text == "(":
                if order:
                    self.error("derivative marks are not allowed on function names")
                self.advance()
                args = [self.expr()]
                while self.cur.kind == "op" and self.cur.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                return Call(base, tuple(args), line=tok.line, column=tok.column)
            return Ref(base, order, line=tok.line, column=tok.column)
        if tok.kind == "op" and tok.text == "/":
            self.diags.append(Diagnostic(tok.line, tok.column, "division not supported"))
            raise _Bail()
        self.error(f"expected an expression, got {tok.text or 'end of line'!r}")


class _Bail(Exception):
    """Abandon the current line after recording a diagnostic."""


def _walk_calls(e: Expr):
    if isinstance(e, Call):
        yield e
        for a in e.args:
            yield from _walk_calls(a)
    elif isinstance(e, Bin):
        yield from _walk_calls(e.left)
        yield from _walk_calls(e.right)
    elif isinstance(e, Neg):
        yield from _walk_calls(e.operand)


def _reject_calls(expr: Expr, runtime: bool, diags: list):
    """Grammar context check: lut only at runtime, sin/cos/exp only in constants."""
    ok = False
    for call in _walk_calls(expr):
        if runtime and call.func in CONST_FUNCS:
            diags.append(Diagnostic(call.line, call.column,
                                    f"{call.func} is a constant function and not available at runtime"))
        elif not runtime and call.func == "lut":
            diags.append(Diagnostic(call.line, call.column,
                                    "lut is not available in constant expressions"))
        else:
            continue
        ok = True
    if ok:
        raise _Bail()


def _parse_statement(p: _LineParser) -> Stmt | None:
    tok = p.cur
    if tok.kind != "keyword":
        p.error(f"expected a statement keyword, got {tok.text!r}")
    p.advance()
    kw = tok.text

    if kw == "system":
        name, _, _ = p.ident()
        p.expect_eol()
        return ("system", name, tok.line)

    if kw == "param":
        name, _, _ = p.ident()
        p.expect_op("=")
        expr = p.expr()
        p.expect_eol()
        _reject_calls(expr, runtime=False, diags=p.diags)
        return ParamDecl(name, expr, line=tok.line)

    if kw == "var":
        name, _, _ = p.ident()
        if not (p.cur.kind == "keyword" and p.cur.text == "order"):
            p.error("expected 'order'")
        p.advance()
        if p.cur.kind != "num" or not p.cur.text.isdigit():
            p.error("expected a non-negative integer order")
        order = int(p.advance().text)
        p.expect_eol()
        return VarDecl(name, order, line=tok.line)

    if kw == "eq":
        name, order, _ = p.ident(allow_primes=True)
        p.expect_op("=")
        expr = p.expr()
        p.expect_eol()
        _reject_calls(expr, runtime=True, diags=p.diags)
        return EqDecl(name, order, expr, line=tok.line)

    if kw == "init":
        name, order, _ = p.ident(allow_primes=True)
        p.expect_op("=")
        expr = p.expr()
        p.expect_eol()
        _reject_calls(expr, runtime=False, diags=p.diags)
        return InitDecl(name, order, expr, line=tok.line)

    if kw == "bound":
        name, order, _ = p.ident(allow_primes=True)
        p.expect_op("=")
        expr = p.expr()
        p.expect_eol()
        _reject_calls(expr, runtime=False, diags=p.diags)
        return BoundDecl(name, order, expr, line=tok.line)

    if kw == "table":
        name, _, _ = p.ident()
        p.expect_op("=")
        points = []
        while not (p.cur.kind == "eol"):
            p.expect_op("(")
            x = p.number()
            p.expect_op(",")
            y = p.number()
            p.expect_op(")")
            points.append((x, y))
        if not points:
            p.error("table needs at least one breakpoint")
        return TableDecl(name, tuple(points), line=tok.line)

    if kw == "time":
        expr = p.expr()
        p.expect_eol()
        _reject_calls(expr, runtime=False, diags=p.diags)
        return TimeDecl(expr, line=tok.line)

    if kw == "output":
        signals = []
        name, order, _ = p.ident(allow_primes=True)
        signals.append((name, order))
        while p.cur.kind == "op" and p.cur.text == ",":
            p.advance()
            name, order, _ = p.ident(allow_primes=True)
            signals.append((name, order))
        p.expect_eol()
        return OutputDecl(tuple(signals), line=tok.line)

    p.error(f"statement {kw!r} is not valid here")


def parse(text: str, filename: str = "<input>") -> tuple[Program | None, list[Diagnostic]]:
    """Parse source text into a Program, or report diagnostics.

    Parsing is line oriented and recovers at line boundaries, so a single
    bad line yields one diagnostic without hiding later errors. Returns
    (program, []) on success or (None, diagnostics) on failure.
    """
    diags: list[Diagnostic] = []
    system_name = None
    statements = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        tokens = _lex_line(line, lineno, diags)
        if len(tokens) == 1:  # only eol; lex errors already recorded
            continue
        p = _LineParser(tokens, diags)
        try:
            stmt = _parse_statement(p)
        except _Bail:
            continue
        if isinstance(stmt, tuple) and stmt[0] == "system":
            if system_name is None and not statements:
                system_name = stmt[1]
            elif system_name is None:
                diags.append(Diagnostic(stmt[2], 1, "system header must come first"))
            else:
                diags.append(Diagnostic(stmt[2], 1, "duplicate system header"))
        elif system_name is None:
            diags.append(Diagnostic(tokens[0].line, tokens[0].column, "missing system header"))
            system_name = "?"  # report once, keep collecting other errors
            statements.append(stmt)
        else:
            statements.append(stmt)
    if system_name is None:
        diags.append(Diagnostic(1, 1, "missing system header"))
    if diags:
        return None, diags
    return Program(system_name, tuple(statements)), []


# --- Pretty printer -------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2}


def _fmt_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Ref):
        return signal_name(e.name, e.order)
    if isinstance(e, Call):
        return f"{e.func}({', '.join(_fmt_expr(a) for a in e.args)})"
    if isinstance(e, Neg):
        s = "-" + _fmt_expr(e.operand, 3)
        return f"({s})" if parent_prec > 2 else s
    if isinstance(e, Bin):
        prec = _PREC[e.op]
        s = f"{_fmt_expr(e.left, prec)} {e.op} {_fmt_expr(e.right, prec + 1)}"
        return f"({s})" if parent_prec > prec else s
    raise TypeError(f"not an expression: {e!r}")


def pretty(program: Program) -> str:
    """Render a Program back to source text; re-parsing is a fixpoint."""
    lines = [f"system {program.name}"]
    for s in program.statements:
        if isinstance(s, ParamDecl):
            lines.append(f"param {s.name} = {_fmt_expr(s.expr)}")
        elif isinstance(s, VarDecl):
            lines.append(f"var {s.name} order {s.order}")
        elif isinstance(s, EqDecl):
            lines.append(f"eq {signal_name(s.name, s.order)} = {_fmt_expr(s.expr)}")
        elif isinstance(s, InitDecl):
            lines.append(f"init {signal_name(s.name, s.order)} = {_fmt_expr(s.expr)}")
        elif isinstance(s, BoundDecl):
            lines.append(f"bound {signal_name(s.name, s.order)} = {_fmt_expr(s.expr)}")
        elif isinstance(s, TableDecl):
            pts = " ".join(f"({repr(x)}, {repr(y)})" for x, y in s.points)
            lines.append(f"table {s.name} = {pts}")
        elif isinstance(s, TimeDecl):
            lines.append(f"time {_fmt_expr(s.t_end)}")
        elif isinstance(s, OutputDecl):
            lines.append("output " + ", ".join(signal_name(n, o) for n, o in s.signals))
        else:
            raise TypeError(f"not a statement: {s!r}")
    return "\n".join(lines) + "\n"


# --- Resolver -------------------------------------------------------------

@dataclass(frozen=True)
class OdeSystem:
    """A resolved, explicitly solvable ODE system.

    ``equations[v]`` is the right-hand side for the highest derivative of
    ``v``; every Ref in it names a param, a table (inside lut) or a
    derivative strictly below the owning variable's order. ``inits`` maps
    (var, order) to folded numeric initial values for orders 0..n-1.
    """

    name: str
    params: dict
    var_order: dict
    equations: dict
    inits: dict
    tables: dict
    horizon: float
    outputs: tuple
    bounds: dict

    def signals(self):
        """All (var, order) pairs up to and including the highest derivative."""
        out = []
        for v, n in self.var_order.items():
            out.extend((v, k) for k in range(n + 1))
        return out


class _Resolver:
    def __init__(self, program: Program):
        self.program = program
        self.diags: list[Diagnostic] = []

    def fail(self, line, column, message):
        self.diags.append(Diagnostic(line, column, message))

    def fold_const(self, e: Expr, params: dict, what: str) -> float | None:
        """Evaluate a compile-time constant expression, or diagnose."""
        if isinstance(e, Num):
            return e.value
        if isinstance(e, Ref):
            if e.order:
                self.fail(e.line, e.column, f"{what} must be constant; derivatives are not")
                return None
            if e.name in params:
                return params[e.name]
            self.fail(e.line, e.column, f"unknown name {e.name!r} in {what} (only params may be used)")
            return None
        if isinstance(e, Neg):
            v = self.fold_const(e.operand, params, what)
            return None if v is None else -v
        if isinstance(e, Bin):
            l = self.fold_const(e.left, params, what)
            r = self.fold_const(e.right, params, what)
            if l is None or r is None:
                return None
            return {"+": l + r, "-": l - r, "*": l * r}[e.op]
        if isinstance(e, Call):
            if e.func not in CONST_FUNCS:
                self.fail(e.line, e.column, f"function {e.func!r} is not a constant function")
                return None
            if len(e.args) != 1:
                self.fail(e.line, e.column, f"{e.func} takes one argument")
                return None
            v = self.fold_const(e.args[0], params, what)
            return None if v is None else CONST_FUNCS[e.func](v)
        raise TypeError(e)

    def check_rhs(self, e: Expr, var_order: dict, params: dict, tables: dict):
        """Validate a runtime expression: name binding and derivative orders."""
        if isinstance(e, Num):
            return
        if isinstance(e, Ref):
            if e.name in var_order:
                n = var_order[e.name]
                if e.order >= n and n > 0:
                    self.fail(e.line, e.column, f"derivative order too high: {signal_name(e.name, e.order)} "
                                                f"(highest usable order of {e.name!r} is {n - 1})")
                elif n == 0 and e.order > 0:
                    self.fail(e.line, e.column, f"{e.name!r} has order 0 and no derivatives")
            elif e.name in params:
                if e.order:
                    self.fail(e.line, e.column, f"param {e.name!r} has no derivatives")
            else:
                self.fail(e.line, e.column, f"unknown name {e.name!r}")
            return
        if isinstance(e, Neg):
            self.check_rhs(e.operand, var_order, params, tables)
            return
        if isinstance(e, Bin):
            self.check_rhs(e.left, var_order, params, tables)
            self.check_rhs(e.right, var_order, params, tables)
            return
        if isinstance(e, Call):
            if e.func == "lut":
                if len(e.args) != 2:
                    self.fail(e.line, e.column, "lut takes (table, expr)")
                    return
                tab = e.args[0]
                if not isinstance(tab, Ref) or tab.order != 0:
                    self.fail(e.line, e.column, "first lut argument must be a table name")
                elif tab.name not in tables:
                    self.fail(tab.line, tab.column, f"unknown table {tab.name!r}")
                self.check_rhs(e.args[1], var_order, params, tables)
                return
            if e.func in CONST_FUNCS:
                self.fail(e.line, e.column,
                          f"{e.func} is only available in constant expressions, not at runtime")
            else:
                self.fail(e.line, e.column, f"unknown function {e.func!r}")
            return
        raise TypeError(e)

    def run(self) -> OdeSystem | None:
        prog = self.program
        params: dict[str, float] = {}
        var_order: dict[str, int] = {}
        tables: dict[str, tuple] = {}
        equations: dict[str, Expr] = {}
        eq_lines: dict[str, int] = {}
        inits: dict[tuple, float] = {}
        bounds: dict[tuple, float] = {}
        horizon = None
        outputs = None

        def declare(name, line, kind):
            for space, label in ((params, "param"), (var_order, "var"), (tables, "table")):
                if name in space:
                    self.fail(line, 1, f"{kind} {name!r} collides with {label} {name!r}")
                    return False
            return True

        for s in prog.statements:
            if isinstance(s, ParamDecl):
                if declare(s.name, s.line, "param"):
                    v = self.fold_const(s.expr, params, "param value")
                    params[s.name] = 0.0 if v is None else v
            elif isinstance(s, VarDecl):
                if declare(s.name, s.line, "var"):
                    var_order[s.name] = s.order
            elif isinstance(s, TableDecl):
                if declare(s.name, s.line, "table"):
                    xs = [p[0] for p in s.points]
                    if any(b <= a for a, b in zip(xs, xs[1:])):
                        self.fail(s.line, 1, f"table {s.name!r} x values must be strictly increasing")
                    if any(not (-1 <= x <= 1 and -1 <= y <= 1) for x, y in s.points):
                        self.fail(s.line, 1, f"table {s.name!r} breakpoints must lie in [-1, 1]")
                    if len(s.points) < 2:
                        self.fail(s.line, 1, f"table {s.name!r} needs at least 2 breakpoints")
                    tables[s.name] = tuple(s.points)
            elif isinstance(s, TimeDecl):
                if horizon is not None:
                    self.fail(s.line, 1, "duplicate time statement")
                v = self.fold_const(s.t_end, params, "time horizon")
                horizon = v
            elif isinstance(s, OutputDecl):
                if outputs is not None:
                    self.fail(s.line, 1, "duplicate output statement")
                outputs = s

        for s in prog.statements:
            if isinstance(s, EqDecl):
                if s.name not in var_order:
                    self.fail(s.line, 1, f"equation for undeclared variable {s.name!r}")
                    continue
                if s.name in equations:
                    self.fail(s.line, 1, f"duplicate equation for {s.name!r}")
                    continue
                n = var_order[s.name]
                if s.order != n:
                    self.fail(s.line, 1, f"equation must define the highest derivative "
                                         f"{signal_name(s.name, n)}, got {signal_name(s.name, s.order)}")
                    continue
                self.check_rhs(s.expr, var_order, params, tables)
                equations[s.name] = s.expr
                eq_lines[s.name] = s.line
            elif isinstance(s, InitDecl):
                if s.name not in var_order:
                    self.fail(s.line, 1, f"initial condition for undeclared variable {s.name!r}")
                    continue
                n = var_order[s.name]
                if n == 0:
                    self.fail(s.line, 1, f"{s.name!r} has order 0 and takes no initial conditions")
                    continue
                if s.order >= n:
                    self.fail(s.line, 1, f"initial condition order too high for {s.name!r}")
                    continue
                key = (s.name, s.order)
                if key in inits:
                    self.fail(s.line, 1, f"duplicate initial condition for {signal_name(*key)}")
                    continue
                v = self.fold_const(s.expr, params, "initial condition")
                if v is not None:
                    inits[key] = v
            elif isinstance(s, BoundDecl):
                if s.name not in var_order:
                    self.fail(s.line, 1, f"bound for undeclared variable {s.name!r}")
                    continue
                if s.order > var_order[s.name]:
                    self.fail(s.line, 1, f"bound order too high for {s.name!r}")
                    continue
                v = self.fold_const(s.expr, params, "bound")
                if v is not None:
                    if v <= 0:
                        self.fail(s.line, 1, "bounds must be positive")
                    else:
                        bounds[(s.name, s.order)] = v

        for v, n in var_order.items():
            if v not in equations:
                self.fail(1, 1, f"missing equation for {v!r}")
            for k in range(n):
                if (v, k) not in inits:
                    self.fail(1, 1, f"missing initial condition for {signal_name(v, k)}")

        if horizon is None:
            self.fail(1, 1, "missing time statement")
        elif horizon <= 0:
            self.fail(1, 1, "time horizon must be positive")

        if outputs is None:
            out_signals = tuple((v, 0) for v in var_order)
        else:
            out_signals = outputs.signals
            seen = set()
            for name, order in out_signals:
                if (name, order) in seen:
                    self.fail(outputs.line, 1, f"duplicate output {signal_name(name, order)!r}")
                seen.add((name, order))
                if name not in var_order:
                    self.fail(outputs.line, 1, f"output {signal_name(name, order)!r} is not a variable")
                elif order > var_order[name]:
                    self.fail(outputs.line, 1, f"output {signal_name(name, order)!r} exceeds usable order")

        if not var_order:
            self.fail(1, 1, "program declares no variables")

        if self.diags:
            return None
        return OdeSystem(
            name=prog.name,
            params=params,
            var_order=var_order,
            equations=equations,
            inits=inits,
            tables=tables,
            horizon=horizon,
            outputs=out_signals,
            bounds=bounds,
        )


def resolve(program: Program) -> tuple[OdeSystem | None, list[Diagnostic]]:
    """Bind names, fold constants and check orders; see OdeSystem."""
    r = _Resolver(program)
    system = r.run()
    return system, sorted(r.diags, key=lambda d: (d.line, d.column))


def load_program(path) -> tuple[Program | None, list[Diagnostic]]:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), filename=str(path))
