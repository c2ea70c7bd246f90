"""Small expression language for filter predicates and derived columns.

Grammar, loosest binding first: `or`; `and`; `not`; comparisons
(non-associative); `+ -`; `* / %`; unary minus; calls and primaries.
Identifiers are column references, with backquotes allowing arbitrary
names; string literals use double quotes with backslash escapes; numeric
literals with a point or exponent are Float, otherwise Int.

Runtime failures never raise: a null operand, division by zero, or
integer overflow all yield null for that row. `and`/`or` follow Kleene
three-valued logic and `coalesce` picks the first non-null argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from typing import Optional, Sequence

from .errors import ExprSyntaxError, TypeMismatchError, UnknownColumnError
from .table import INT64_MAX, INT64_MIN, Column, DType, Table

# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: object
    dtype: Optional[DType]  # None for the null literal


@dataclass(frozen=True)
class ColumnRef:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg | not
    operand: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Expr = object

# fn -> (min arity, max arity); None = unbounded
FUNCTIONS = {
    "abs": (1, 1), "round": (1, 2), "floor": (1, 1), "ceil": (1, 1),
    "len": (1, 1), "lower": (1, 1), "upper": (1, 1), "trim": (1, 1),
    "concat": (2, None), "if": (3, 3), "coalesce": (2, None),
    "year": (1, 1), "month": (1, 1), "day": (1, 1),
}

_KEYWORDS = {"true", "false", "null", "and", "or", "not"}
_CMP_OPS = {"==", "!=", "<", "<=", ">", ">="}


def int_literal(v: int) -> Literal:
    return Literal(v, DType.INT)


def float_literal(v: float) -> Literal:
    return Literal(v, DType.FLOAT)


def text_literal(v: str) -> Literal:
    return Literal(v, DType.TEXT)


def bool_literal(v: bool) -> Literal:
    return Literal(v, DType.BOOL)


NULL_LITERAL = Literal(None, None)


# --- tokenizer ----------------------------------------------------------------


class _Token:
    __slots__ = ("kind", "value", "pos")

    def __init__(self, kind, value, pos):
        self.kind = kind
        self.value = value
        self.pos = pos

    def __repr__(self):
        return f"_Token({self.kind}, {self.value!r}, {self.pos})"


def _is_ident_start(ch):
    return ch.isalpha() and ch.isascii() or ch == "_"


def _is_ident_char(ch):
    return ch.isalnum() and ch.isascii() or ch == "_"


_STRING_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


def _tokenize(src: str) -> list:
    toks = []
    i = 0
    n = len(src)
    while i < n:
        ch = src[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch in "(),":
            kind = {"(": "lparen", ")": "rparen", ",": "comma"}[ch]
            toks.append(_Token(kind, ch, i))
            i += 1
            continue
        if src[i:i + 2] in ("==", "!=", "<=", ">="):
            toks.append(_Token("op", src[i:i + 2], i))
            i += 2
            continue
        if ch in "+-*/%<>":
            toks.append(_Token("op", ch, i))
            i += 1
            continue
        if ch == '"':
            start = i
            i += 1
            out = []
            while i < n and src[i] != '"':
                if src[i] == "\\":
                    if i + 1 >= n or src[i + 1] not in _STRING_ESCAPES:
                        raise ExprSyntaxError(i, "valid string escape")
                    out.append(_STRING_ESCAPES[src[i + 1]])
                    i += 2
                else:
                    out.append(src[i])
                    i += 1
            if i >= n:
                raise ExprSyntaxError(start, "closing quote")
            toks.append(_Token("string", "".join(out), start))
            i += 1
            continue
        if ch == "`":
            start = i
            end = src.find("`", i + 1)
            if end < 0:
                raise ExprSyntaxError(start, "closing backquote")
            name = src[i + 1:end]
            if not name:
                raise ExprSyntaxError(start, "non-empty identifier")
            toks.append(_Token("ident", name, start))
            i = end + 1
            continue
        if ch.isdigit():
            start = i
            while i < n and src[i].isdigit():
                i += 1
            is_float = False
            if i < n and src[i] == ".":
                is_float = True
                i += 1
                while i < n and src[i].isdigit():
                    i += 1
            if i < n and src[i] in "eE":
                j = i + 1
                if j < n and src[j] in "+-":
                    j += 1
                if j >= n or not src[j].isdigit():
                    raise ExprSyntaxError(i, "exponent digits")
                is_float = True
                i = j
                while i < n and src[i].isdigit():
                    i += 1
            text = src[start:i]
            if is_float:
                toks.append(_Token("number", float(text), start))
            else:
                v = int(text)
                if v > INT64_MAX:
                    raise ExprSyntaxError(start, "integer in 64-bit range")
                toks.append(_Token("number", v, start))
            continue
        if _is_ident_start(ch):
            start = i
            while i < n and _is_ident_char(src[i]):
                i += 1
            word = src[start:i]
            if word in _KEYWORDS:
                toks.append(_Token(word, word, start))
            else:
                toks.append(_Token("ident", word, start))
            continue
        raise ExprSyntaxError(i, "expression token")
    toks.append(_Token("eof", None, n))
    return toks


# --- parser ----------------------------------------------------------------------


class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    @property
    def cur(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, kind, what):
        if self.cur.kind != kind:
            raise ExprSyntaxError(self.cur.pos, what)
        return self.advance()

    def at_op(self, *ops):
        return self.cur.kind == "op" and self.cur.value in ops

    def parse(self):
        e = self.or_expr()
        if self.cur.kind != "eof":
            raise ExprSyntaxError(self.cur.pos, "end of expression")
        return e

    def or_expr(self):
        e = self.and_expr()
        while self.cur.kind == "or":
            self.advance()
            e = Binary("or", e, self.and_expr())
        return e

    def and_expr(self):
        e = self.not_expr()
        while self.cur.kind == "and":
            self.advance()
            e = Binary("and", e, self.not_expr())
        return e

    def not_expr(self):
        if self.cur.kind == "not":
            self.advance()
            return Unary("not", self.not_expr())
        return self.cmp_expr()

    def cmp_expr(self):
        e = self.add_expr()
        if self.at_op(*_CMP_OPS):
            op = self.advance().value
            e = Binary(op, e, self.add_expr())
            if self.at_op(*_CMP_OPS):
                raise ExprSyntaxError(
                    self.cur.pos, "no chained comparison (non-associative)")
        return e

    def add_expr(self):
        e = self.mul_expr()
        while self.at_op("+", "-"):
            op = self.advance().value
            e = Binary(op, e, self.mul_expr())
        return e

    def mul_expr(self):
        e = self.unary_expr()
        while self.at_op("*", "/", "%"):
            op = self.advance().value
            e = Binary(op, e, self.unary_expr())
        return e

    def unary_expr(self):
        if self.at_op("-"):
            self.advance()
            return Unary("neg", self.unary_expr())
        return self.primary()

    def primary(self):
        tok = self.cur
        if tok.kind == "number":
            self.advance()
            if isinstance(tok.value, float):
                return float_literal(tok.value)
            return int_literal(tok.value)
        if tok.kind == "string":
            self.advance()
            return text_literal(tok.value)
        if tok.kind == "true":
            self.advance()
            return bool_literal(True)
        if tok.kind == "false":
            self.advance()
            return bool_literal(False)
        if tok.kind == "null":
            self.advance()
            return NULL_LITERAL
        if tok.kind == "lparen":
            self.advance()
            e = self.or_expr()
            self.expect("rparen", "closing parenthesis")
            return e
        if tok.kind == "ident":
            self.advance()
            if self.cur.kind == "lparen":
                return self.call(tok)
            return ColumnRef(tok.value)
        raise ExprSyntaxError(tok.pos, "literal, column, or call")

    def call(self, name_tok):
        fn = name_tok.value
        if fn not in FUNCTIONS:
            raise ExprSyntaxError(name_tok.pos, "known function name")
        self.advance()  # lparen
        args = []
        if self.cur.kind != "rparen":
            args.append(self.or_expr())
            while self.cur.kind == "comma":
                self.advance()
                args.append(self.or_expr())
        self.expect("rparen", "closing parenthesis")
        lo, hi = FUNCTIONS[fn]
        if len(args) < lo or (hi is not None and len(args) > hi):
            bound = str(lo) if hi == lo else \
                f"{lo}+" if hi is None else f"{lo}-{hi}"
            raise ExprSyntaxError(
                name_tok.pos, f"{bound} argument(s) to {fn}")
        return Call(fn, tuple(args))


def parse_expr(src: str) -> Expr:
    """Parse expression source into an AST; raises ExprSyntaxError."""
    return _Parser(_tokenize(src)).parse()


# --- type checking --------------------------------------------------------------

_NUMERIC = (DType.INT, DType.FLOAT)


def _unify(a: Optional[DType], b: Optional[DType], node: str) -> Optional[DType]:
    if a is None:
        return b
    if b is None:
        return a
    if a is b:
        return a
    if a in _NUMERIC and b in _NUMERIC:
        return DType.FLOAT
    raise TypeMismatchError(node, str(b), str(a))


def _require(t: Optional[DType], allowed: tuple, node: str) -> None:
    if t is not None and t not in allowed:
        raise TypeMismatchError(
            node, str(t), " or ".join(str(a) for a in allowed))


def typecheck(e: Expr, schema: Sequence[tuple]) -> DType:
    """Type an expression against (name, dtype) pairs.

    Raises TypeMismatchError or UnknownColumnError. An expression whose
    type is indeterminate (a bare null) comes back as Text.
    """
    t = _type_of(e, dict(schema))
    return t if t is not None else DType.TEXT


def _type_of(e: Expr, schema: dict) -> Optional[DType]:
    if isinstance(e, Literal):
        return e.dtype
    if isinstance(e, ColumnRef):
        if e.name not in schema:
            raise UnknownColumnError(e.name)
        return schema[e.name]
    if isinstance(e, Unary):
        t = _type_of(e.operand, schema)
        if e.op == "neg":
            _require(t, _NUMERIC, "unary -")
            return t
        _require(t, (DType.BOOL,), "not")
        return DType.BOOL
    if isinstance(e, Binary):
        lt = _type_of(e.left, schema)
        rt = _type_of(e.right, schema)
        op = e.op
        if op in ("and", "or"):
            _require(lt, (DType.BOOL,), op)
            _require(rt, (DType.BOOL,), op)
            return DType.BOOL
        if op in _CMP_OPS:
            if lt is not None and rt is not None and lt is not rt \
                    and not (lt in _NUMERIC and rt in _NUMERIC):
                raise TypeMismatchError(op, str(rt), str(lt))
            return DType.BOOL
        if op == "%":
            _require(lt, (DType.INT,), "%")
            _require(rt, (DType.INT,), "%")
            return DType.INT
        _require(lt, _NUMERIC, op)
        _require(rt, _NUMERIC, op)
        if op == "/":
            return DType.FLOAT
        joined = _unify(lt, rt, op)
        return joined
    if isinstance(e, Call):
        return _type_of_call(e, schema)
    raise TypeError(f"not an expression node: {e!r}")


def _type_of_call(e: Call, schema: dict) -> Optional[DType]:
    fn = e.fn
    args = [_type_of(a, schema) for a in e.args]
    if fn in ("abs", "floor", "ceil"):
        _require(args[0], _NUMERIC, fn)
        return args[0]
    if fn == "round":
        _require(args[0], _NUMERIC, fn)
        if len(args) == 2:
            _require(args[1], (DType.INT,), "round digits")
        return args[0]
    if fn == "len":
        _require(args[0], (DType.TEXT,), fn)
        return DType.INT
    if fn in ("lower", "upper", "trim"):
        _require(args[0], (DType.TEXT,), fn)
        return DType.TEXT
    if fn == "concat":
        for t in args:
            _require(t, (DType.TEXT,), fn)
        return DType.TEXT
    if fn == "if":
        _require(args[0], (DType.BOOL,), "if condition")
        return _unify(args[1], args[2], "if branches")
    if fn == "coalesce":
        t = None
        for a in args:
            t = _unify(t, a, fn)
        return t
    if fn in ("year", "month", "day"):
        _require(args[0], (DType.DATE,), fn)
        return DType.INT
    raise TypeError(f"unknown function {fn!r}")


# --- evaluation ------------------------------------------------------------------


def eval_expr(e: Expr, t: Table) -> Column:
    """Evaluate row-wise over a table; requires a prior typecheck pass.

    Returns the referenced column itself for a bare column reference;
    any other expression evaluates to a column named "expr".
    """
    if isinstance(e, ColumnRef):
        return t.column(e.name)
    dtype, values = _eval(e, t)
    out_dtype = dtype if dtype is not None else DType.TEXT
    return Column("expr", out_dtype, tuple(values))


def _eval(e: Expr, t: Table) -> tuple:
    n = t.n_rows
    if isinstance(e, Literal):
        return e.dtype, [e.value] * n
    if isinstance(e, ColumnRef):
        col = t.column(e.name)
        return col.dtype, list(col.values)
    if isinstance(e, Unary):
        dt, vals = _eval(e.operand, t)
        if e.op == "neg":
            if dt is DType.FLOAT:
                return dt, [None if v is None else -v for v in vals]
            return dt, [_neg_int(v) for v in vals]
        # Kleene not
        return DType.BOOL, [None if v is None else not v for v in vals]
    if isinstance(e, Binary):
        return _eval_binary(e, t)
    if isinstance(e, Call):
        return _eval_call(e, t)
    raise TypeError(f"not an expression node: {e!r}")


def _neg_int(v):
    if v is None:
        return None
    r = -v
    return r if INT64_MIN <= r <= INT64_MAX else None


def _eval_binary(e: Binary, t: Table) -> tuple:
    op = e.op
    lt, lv = _eval(e.left, t)
    rt, rv = _eval(e.right, t)
    if op == "and":
        return DType.BOOL, [_kleene_and(a, b) for a, b in zip(lv, rv)]
    if op == "or":
        return DType.BOOL, [_kleene_or(a, b) for a, b in zip(lv, rv)]
    if op in _CMP_OPS:
        f = _CMP_FUNCS[op]
        return DType.BOOL, [None if a is None or b is None else f(a, b)
                            for a, b in zip(lv, rv)]
    if op == "/":
        return DType.FLOAT, [
            None if a is None or b is None or b == 0 else a / b
            for a, b in zip(lv, rv)]
    if op == "%":
        return DType.INT, [
            None if a is None or b is None or b == 0 else a % b
            for a, b in zip(lv, rv)]
    out_t = DType.FLOAT if DType.FLOAT in (lt, rt) else \
        (DType.INT if DType.INT in (lt, rt) else None)
    if out_t is DType.FLOAT:
        f = {"+": lambda a, b: a + b,
             "-": lambda a, b: a - b,
             "*": lambda a, b: a * b}[op]
        return out_t, [
            None if a is None or b is None else float(f(a, b))
            for a, b in zip(lv, rv)]
    f = {"+": _add_int, "-": _sub_int, "*": _mul_int}[op]
    return out_t, [f(a, b) for a, b in zip(lv, rv)]


def _add_int(a, b):
    if a is None or b is None:
        return None
    r = a + b
    return r if INT64_MIN <= r <= INT64_MAX else None


def _sub_int(a, b):
    if a is None or b is None:
        return None
    r = a - b
    return r if INT64_MIN <= r <= INT64_MAX else None


def _mul_int(a, b):
    if a is None or b is None:
        return None
    r = a * b
    return r if INT64_MIN <= r <= INT64_MAX else None


_CMP_FUNCS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _kleene_and(a, b):
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def _kleene_or(a, b):
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    return False


def _eval_call(e: Call, t: Table) -> tuple:
    fn = e.fn
    evaluated = [_eval(a, t) for a in e.args]
    if fn == "if":
        bt = _unify(evaluated[1][0], evaluated[2][0], "if")
        cond, a, b = evaluated[0][1], evaluated[1][1], evaluated[2][1]
        if bt is DType.FLOAT:
            a = [_as_float(v) for v in a]
            b = [_as_float(v) for v in b]
        return bt, [None if c is None else (x if c else y)
                    for c, x, y in zip(cond, a, b)]
    if fn == "coalesce":
        out_t = None
        for dt, _ in evaluated:
            out_t = _unify(out_t, dt, fn)
        cols = [vals for _, vals in evaluated]
        if out_t is DType.FLOAT:
            cols = [[_as_float(v) for v in vals] for vals in cols]
        out = []
        for row in zip(*cols):
            out.append(next((v for v in row if v is not None), None))
        return out_t, out
    if fn == "concat":
        cols = [vals for _, vals in evaluated]
        return DType.TEXT, [
            None if any(v is None for v in row) else "".join(row)
            for row in zip(*cols)]

    dt, vals = evaluated[0]
    if fn == "abs":
        if dt is DType.FLOAT:
            return dt, [None if v is None else abs(v) for v in vals]
        return dt, [_neg_int(v) if v is not None and v < 0 else v
                    for v in vals]
    if fn == "round":
        digits = evaluated[1][1] if len(evaluated) > 1 else [0] * t.n_rows
        if dt is DType.FLOAT:
            return dt, [
                None if v is None or d is None
                else v if not math.isfinite(v)
                else round(v, d)
                for v, d in zip(vals, digits)]
        return dt, [None if v is None or d is None else round(v, d)
                    for v, d in zip(vals, digits)]
    if fn in ("floor", "ceil"):
        f = math.floor if fn == "floor" else math.ceil
        if dt is DType.FLOAT:
            return dt, [
                None if v is None
                else v if not math.isfinite(v)
                else float(f(v))
                for v in vals]
        return dt, vals
    if fn == "len":
        return DType.INT, [None if v is None else len(v) for v in vals]
    if fn == "lower":
        return DType.TEXT, [None if v is None else v.lower() for v in vals]
    if fn == "upper":
        return DType.TEXT, [None if v is None else v.upper() for v in vals]
    if fn == "trim":
        return DType.TEXT, [None if v is None else v.strip() for v in vals]
    if fn == "year":
        return DType.INT, [None if v is None else v.year for v in vals]
    if fn == "month":
        return DType.INT, [None if v is None else v.month for v in vals]
    if fn == "day":
        return DType.INT, [None if v is None else v.day for v in vals]
    raise TypeError(f"unknown function {fn!r}")


def _as_float(v):
    if v is None or isinstance(v, float):
        return v
    return float(v)


# --- canonical rendering -----------------------------------------------------------

def _name_is_bare(name: str) -> bool:
    if not name or name in _KEYWORDS:
        return False
    if not _is_ident_start(name[0]):
        return False
    return all(_is_ident_char(c) for c in name)


_RENDER_ESCAPES = {'"': '\\"', "\\": "\\\\", "\n": "\\n", "\t": "\\t",
                   "\r": "\\r"}


def render(e: Expr) -> str:
    """Render an AST to source such that parse_expr(render(e)) == e.

    Every compound expression is parenthesized, so no precedence
    knowledge is needed to read the output back.
    """
    if isinstance(e, Literal):
        return _render_literal(e)
    if isinstance(e, ColumnRef):
        if _name_is_bare(e.name):
            return e.name
        if "`" in e.name:
            raise ValueError(f"column name {e.name!r} cannot be rendered")
        return f"`{e.name}`"
    if isinstance(e, Unary):
        op = "-" if e.op == "neg" else "not "
        return f"({op}{render(e.operand)})"
    if isinstance(e, Binary):
        return f"({render(e.left)} {e.op} {render(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(render(a) for a in e.args)})"
    raise TypeError(f"not an expression node: {e!r}")


def _render_literal(e: Literal) -> str:
    v = e.value
    if v is None:
        return "null"
    if e.dtype is DType.BOOL:
        return "true" if v else "false"
    if e.dtype is DType.INT:
        if v < 0:
            raise ValueError("negative literal; wrap in unary minus")
        return str(v)
    if e.dtype is DType.FLOAT:
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"unrenderable float literal {v!r}")
        return repr(v)
    if e.dtype is DType.TEXT:
        body = "".join(_RENDER_ESCAPES.get(c, c) for c in v)
        return f'"{body}"'
    raise ValueError(f"unrenderable literal {e!r}")
