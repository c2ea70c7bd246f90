"""Expression language: parsing, typing, evaluation, rendering."""

import random
from datetime import date

import pytest

from tablehub.errors import (
    ExprSyntaxError,
    TypeMismatchError,
    UnknownColumnError,
)
from tablehub.exprlang import (
    Binary,
    Call,
    ColumnRef,
    Literal,
    Unary,
    eval_expr,
    parse_expr,
    render,
    typecheck,
)
from tablehub.table import DType, INT64_MAX, make_table, value_matches

from genexpr import gen_expr


def _table(**cols):
    """keyword shorthand: name=(dtype, values)"""
    return make_table([(k, d, v) for k, (d, v) in cols.items()])


class TestParse:
    def test_multiplication_binds_tighter_than_addition(self):
        e = parse_expr("a + 2 * b")
        assert isinstance(e, Binary) and e.op == "+"
        assert isinstance(e.left, ColumnRef) and e.left.name == "a"
        assert isinstance(e.right, Binary) and e.right.op == "*"
        assert e.right.left == Literal(2, DType.INT)
        assert e.right.right == ColumnRef("b")

    def test_chained_comparison_is_rejected(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("a < b < c")

    def test_call_with_comparison_and_strings(self):
        e = parse_expr('if(a > 0, "pos", "neg")')
        assert isinstance(e, Call) and e.fn == "if"
        cond, yes, no = e.args
        assert isinstance(cond, Binary) and cond.op == ">"
        assert yes == Literal("pos", DType.TEXT)
        assert no == Literal("neg", DType.TEXT)

    def test_and_binds_tighter_than_or(self):
        e = parse_expr("a or b and c")
        assert e.op == "or"
        assert e.right.op == "and"

    def test_not_binds_tighter_than_and(self):
        e = parse_expr("not a and b")
        assert e.op == "and"
        assert isinstance(e.left, Unary) and e.left.op == "not"

    def test_comparison_binds_tighter_than_not(self):
        e = parse_expr("not a > b")
        assert isinstance(e, Unary) and e.op == "not"
        assert e.operand.op == ">"

    def test_unary_minus_binds_tightest(self):
        e = parse_expr("-a * b")
        assert e.op == "*"
        assert isinstance(e.left, Unary) and e.left.op == "neg"

    def test_parentheses_override(self):
        e = parse_expr("(a + 2) * b")
        assert e.op == "*" and e.left.op == "+"

    def test_numeric_literal_kinds(self):
        assert parse_expr("42") == Literal(42, DType.INT)
        assert parse_expr("4.5") == Literal(4.5, DType.FLOAT)
        assert parse_expr("1e3") == Literal(1000.0, DType.FLOAT)
        assert parse_expr("2.") == Literal(2.0, DType.FLOAT)

    def test_keywords(self):
        assert parse_expr("true") == Literal(True, DType.BOOL)
        assert parse_expr("false") == Literal(False, DType.BOOL)
        assert parse_expr("null") == Literal(None, None)

    def test_backquoted_identifier_allows_spaces(self):
        e = parse_expr("`unit price` * 2")
        assert e.left == ColumnRef("unit price")

    def test_string_escapes(self):
        e = parse_expr('"a\\"b\\\\c\\nd\\te\\rf"')
        assert e == Literal('a"b\\c\nd\te\rf', DType.TEXT)

    def test_bad_escape_rejected(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr('"\\x"')

    def test_unterminated_string(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr('"oops')

    def test_unknown_function(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("regex(a)")

    def test_arity_checked_at_parse(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("abs(a, b)")
        with pytest.raises(ExprSyntaxError):
            parse_expr("if(a, b)")
        with pytest.raises(ExprSyntaxError):
            parse_expr("coalesce(a)")
        with pytest.raises(ExprSyntaxError):
            parse_expr("round(a, 1, 2)")

    def test_int_literal_out_of_range(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr(str(INT64_MAX + 1))

    def test_error_carries_position(self):
        with pytest.raises(ExprSyntaxError) as e:
            parse_expr("a +")
        assert e.value.position is not None

    def test_empty_input(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("")

    def test_trailing_garbage(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("a + 1 b")


class TestTypecheck:
    SCHEMA = [("i", DType.INT), ("f", DType.FLOAT), ("b", DType.BOOL),
              ("s", DType.TEXT), ("d", DType.DATE)]

    def check(self, src):
        return typecheck(parse_expr(src), self.SCHEMA)

    def test_int_float_unifies_to_float(self):
        assert self.check("i + f") is DType.FLOAT
        assert self.check("i + i") is DType.INT

    def test_int_plus_text_is_a_type_error(self):
        with pytest.raises(TypeMismatchError):
            self.check("i + s")

    def test_coalesce_unifies(self):
        assert self.check("coalesce(i, 0)") is DType.INT
        assert self.check("coalesce(i, 0.5)") is DType.FLOAT
        with pytest.raises(TypeMismatchError):
            self.check("coalesce(i, s)")

    def test_division_is_always_float(self):
        assert self.check("i / i") is DType.FLOAT

    def test_modulo_is_int_only(self):
        assert self.check("i % i") is DType.INT
        with pytest.raises(TypeMismatchError):
            self.check("f % i")

    def test_comparisons_same_family(self):
        assert self.check("i < f") is DType.BOOL
        assert self.check("s == s") is DType.BOOL
        assert self.check("d >= d") is DType.BOOL
        with pytest.raises(TypeMismatchError):
            self.check("i == s")
        with pytest.raises(TypeMismatchError):
            self.check("d < i")

    def test_logic_requires_bool(self):
        assert self.check("b and not b") is DType.BOOL
        with pytest.raises(TypeMismatchError):
            self.check("i and b")

    def test_text_functions(self):
        assert self.check("len(s)") is DType.INT
        assert self.check("lower(s)") is DType.TEXT
        assert self.check('concat(s, "x")') is DType.TEXT
        with pytest.raises(TypeMismatchError):
            self.check("len(i)")
        with pytest.raises(TypeMismatchError):
            self.check("concat(s, i)")

    def test_date_parts(self):
        assert self.check("year(d)") is DType.INT
        with pytest.raises(TypeMismatchError):
            self.check("year(s)")

    def test_if_unifies_branches(self):
        assert self.check("if(b, i, f)") is DType.FLOAT
        with pytest.raises(TypeMismatchError):
            self.check("if(i, i, i)")
        with pytest.raises(TypeMismatchError):
            self.check("if(b, i, s)")

    def test_null_literal_unifies_with_anything(self):
        assert self.check("coalesce(i, null)") is DType.INT
        assert self.check("if(b, null, s)") is DType.TEXT

    def test_unknown_column(self):
        with pytest.raises(UnknownColumnError):
            self.check("zz + 1")

    def test_negation_preserves_numeric_dtype(self):
        assert self.check("-i") is DType.INT
        assert self.check("-f") is DType.FLOAT
        with pytest.raises(TypeMismatchError):
            self.check("-s")


class TestEval:
    def test_scalar_multiplication(self):
        t = _table(a=(DType.INT, [1, 2, 3]))
        assert eval_expr(parse_expr("a * 2"), t).values == (2, 4, 6)

    def test_null_propagation_in_arithmetic(self):
        t = _table(a=(DType.INT, [1, None]), b=(DType.INT, [10, 10]))
        assert eval_expr(parse_expr("a + b"), t).values == (11, None)

    def test_division_by_zero_is_null(self):
        t = _table(a=(DType.INT, [4]), b=(DType.INT, [0]))
        out = eval_expr(parse_expr("a / b"), t)
        assert out.dtype is DType.FLOAT
        assert out.values == (None,)

    def test_division_produces_float_values(self):
        t = _table(a=(DType.INT, [5]), b=(DType.INT, [2]))
        assert eval_expr(parse_expr("a / b"), t).values == (2.5,)

    def test_modulo_by_zero_is_null(self):
        t = _table(a=(DType.INT, [5]), b=(DType.INT, [0]))
        assert eval_expr(parse_expr("a % b"), t).values == (None,)

    def test_int_overflow_is_null(self):
        t = _table(a=(DType.INT, [INT64_MAX]))
        assert eval_expr(parse_expr("a + 1"), t).values == (None,)
        assert eval_expr(parse_expr("a * 2"), t).values == (None,)

    def test_negating_int_min_is_null(self):
        t = _table(a=(DType.INT, [-(2 ** 63)]))
        assert eval_expr(parse_expr("-a"), t).values == (None,)
        assert eval_expr(parse_expr("abs(a)"), t).values == (None,)

    def test_column_ref_is_identity(self):
        t = _table(a=(DType.INT, [1, None, 3]))
        out = eval_expr(parse_expr("a"), t)
        assert out.values == t.column("a").values
        assert out.dtype is DType.INT

    def test_comparison_with_null_is_null(self):
        t = _table(a=(DType.INT, [1, None]))
        assert eval_expr(parse_expr("a > 0"), t).values == (True, None)

    def test_if_with_null_condition_is_null(self):
        t = _table(b=(DType.BOOL, [True, False, None]))
        out = eval_expr(parse_expr('if(b, "y", "n")'), t)
        assert out.values == ("y", "n", None)

    def test_coalesce_returns_first_non_null(self):
        t = _table(a=(DType.INT, [None, 1]), b=(DType.INT, [7, 9]))
        assert eval_expr(parse_expr("coalesce(a, b)"), t).values == (7, 1)

    def test_coalesce_promotes_int_to_float(self):
        t = _table(a=(DType.INT, [None, 3]))
        out = eval_expr(parse_expr("coalesce(a, 0.5)"), t)
        assert out.dtype is DType.FLOAT
        assert out.values == (0.5, 3.0)

    def test_text_functions(self):
        t = _table(s=(DType.TEXT, ["  Ab  ", None]))
        assert eval_expr(parse_expr("trim(s)"), t).values == ("Ab", None)
        assert eval_expr(parse_expr("upper(s)"), t).values == ("  AB  ", None)
        assert eval_expr(parse_expr("len(s)"), t).values == (6, None)
        out = eval_expr(parse_expr('concat(s, "!")'), t)
        assert out.values == ("  Ab  !", None)

    def test_date_parts(self):
        t = _table(d=(DType.DATE, [date(2023, 7, 4), None]))
        assert eval_expr(parse_expr("year(d)"), t).values == (2023, None)
        assert eval_expr(parse_expr("month(d)"), t).values == (7, None)
        assert eval_expr(parse_expr("day(d)"), t).values == (4, None)

    def test_round_with_digits(self):
        t = _table(f=(DType.FLOAT, [2.675, 1.0]))
        out = eval_expr(parse_expr("round(f, 1)"), t)
        assert out.values == (round(2.675, 1), 1.0)

    def test_floor_ceil(self):
        t = _table(f=(DType.FLOAT, [1.5, -1.5]))
        assert eval_expr(parse_expr("floor(f)"), t).values == (1.0, -2.0)
        assert eval_expr(parse_expr("ceil(f)"), t).values == (2.0, -1.0)

    def test_kleene_and_all_nine_cases(self):
        vals = [True, False, None]
        a = [x for x in vals for _ in vals]
        b = vals * 3
        t = _table(a=(DType.BOOL, a), b=(DType.BOOL, b))
        out = eval_expr(parse_expr("a and b"), t).values
        assert out == (True, False, None,
                       False, False, False,
                       None, False, None)

    def test_kleene_or_all_nine_cases(self):
        vals = [True, False, None]
        a = [x for x in vals for _ in vals]
        b = vals * 3
        t = _table(a=(DType.BOOL, a), b=(DType.BOOL, b))
        out = eval_expr(parse_expr("a or b"), t).values
        assert out == (True, True, True,
                       True, False, None,
                       True, None, None)

    def test_not_of_null_is_null(self):
        t = _table(b=(DType.BOOL, [None]))
        assert eval_expr(parse_expr("not b"), t).values == (None,)


SOUND_SCHEMA_TABLE = make_table([
    ("i", DType.INT, [1, -3, None, 2 ** 62, 0]),
    ("j", DType.INT, [0, 7, 2, None, -1]),
    ("f", DType.FLOAT, [0.5, None, -2.25, 1e18, 0.0]),
    ("b", DType.BOOL, [True, False, None, True, False]),
    ("s", DType.TEXT, ["x", "", None, "Hello World", "z"]),
    ("d", DType.DATE, [date(2020, 1, 1), None, date(1999, 12, 31),
                       date(2024, 2, 29), date(2000, 6, 15)]),
])


def test_generated_expressions_are_sound():
    rng = random.Random(97)
    schema = SOUND_SCHEMA_TABLE.schema()
    for i in range(300):
        target = rng.choice(list(DType))
        e = gen_expr(rng, schema, target, depth=rng.randint(0, 4))
        assert typecheck(e, schema) is target, render(e)
        out = eval_expr(e, SOUND_SCHEMA_TABLE)
        assert out.dtype is target
        for v in out.values:
            assert v is None or value_matches(v, target), \
                f"{render(e)} produced {v!r}, not {target}"


def test_render_parse_round_trip_on_generated_trees():
    rng = random.Random(31)
    schema = SOUND_SCHEMA_TABLE.schema()
    for i in range(300):
        target = rng.choice(list(DType))
        e = gen_expr(rng, schema, target, depth=rng.randint(0, 4))
        src = render(e)
        assert parse_expr(src) == e, src


def test_render_of_parsed_source_round_trips():
    for src in ("a + 2 * b", 'concat("a\\"b", "c")', "-(-a)",
                "not (a > 1) and `x y` == \"q\"",
                "if(a > 0, -(1), coalesce(b, 0))"):
        e = parse_expr(src)
        assert parse_expr(render(e)) == e
