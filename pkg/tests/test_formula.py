"""Parser, renderer, normalization, and metrics tests."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridaudit.errors import FormulaSyntaxError, UnknownFunction, UnknownName
from gridaudit.formula import (
    BinaryOp,
    BooleanLiteral,
    CellRef,
    FormulaAst,
    FunctionCall,
    NumberLiteral,
    RangeRef,
    TextLiteral,
    UnaryOp,
    canonical_number,
    metrics,
    normalize,
    parse_formula,
    render,
    unique_formula_count,
)
from gridaudit.model import CellAddress
from helpers import random_expr, translate_expr, wb_from

B1 = CellAddress("S1", 1, 2)
C2 = CellAddress("S1", 2, 3)


def norm_text(src: str, host: CellAddress) -> str:
    return normalize(parse_formula(src, host)).text


# --- parse shapes ------------------------------------------------------------

def test_precedence_and_associativity():
    ast = parse_formula("=1+2*3", B1).root
    assert ast == BinaryOp("+", NumberLiteral(1.0),
                           BinaryOp("*", NumberLiteral(2.0), NumberLiteral(3.0)))
    # ^ chains associate left: (2^3)^2
    ast = parse_formula("=2^3^2", B1).root
    assert ast == BinaryOp("^", BinaryOp("^", NumberLiteral(2.0), NumberLiteral(3.0)),
                           NumberLiteral(2.0))


def test_unary_minus_binds_tighter_than_power():
    ast = parse_formula("=-2^2", B1).root
    assert ast == BinaryOp("^", UnaryOp("-", NumberLiteral(2.0)), NumberLiteral(2.0))


def test_comparison_concat_levels():
    ast = parse_formula('=A1&"x"=B1', B1).root
    assert isinstance(ast, BinaryOp) and ast.op == "="
    assert isinstance(ast.left, BinaryOp) and ast.left.op == "&"


def test_booleans_and_strings():
    assert parse_formula("=TRUE", B1).root == BooleanLiteral(True)
    assert parse_formula("=false", B1).root == BooleanLiteral(False)
    assert parse_formula('="say ""hi"""', B1).root == TextLiteral('say "hi"')


def test_refs_and_markers():
    assert parse_formula("=$A$1", B1).root == CellRef(None, 1, 1, abs_row=True, abs_col=True)
    assert parse_formula("=A$1", B1).root == CellRef(None, 1, 1, abs_row=True, abs_col=False)
    assert parse_formula("=Data!B2", B1).root == CellRef("Data", 2, 2)
    assert parse_formula("='My Data'!B2", B1).root == CellRef("My Data", 2, 2)


def test_same_sheet_qualifier_canonicalizes_away():
    assert parse_formula("=S1!A1", B1).root == CellRef(None, 1, 1)
    assert norm_text("=S1!A1*2", B1) == norm_text("=A1*2", B1)


def test_range_corner_normalization():
    assert parse_formula("=SUM(B2:A1)", B1).root == FunctionCall(
        "SUM", (RangeRef(None, 1, 1, 2, 2),)
    )
    # markers travel with their coordinates through the swap
    node = parse_formula("=SUM($B$2:A1)", B1).root.args[0]
    assert node == RangeRef(None, 1, 1, 2, 2, abs_r2=True, abs_c2=True)


def test_range_sheet_rules():
    assert parse_formula("=SUM(Data!A1:A9)", B1).root == FunctionCall(
        "SUM", (RangeRef("Data", 1, 1, 9, 1),)
    )
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=SUM(Data!A1:Other!A9)", B1)
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=SUM(A1:Other!A9)", B1)


def test_function_arity_checked_at_parse():
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=NOT(1,2)", B1)
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=ROUND(1)", B1)
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=IF(1)", B1)
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=SUM()", B1)
    assert parse_formula("=IF(1,2)", B1).root == FunctionCall(
        "IF", (NumberLiteral(1.0), NumberLiteral(2.0))
    )


def test_unknown_function_and_name_diagnostics():
    with pytest.raises(UnknownFunction):
        parse_formula("=VLOOKUP(A1,B1:C9,2)", B1)
    with pytest.raises(UnknownName):
        parse_formula("=TaxRate+1", B1)
    err = None
    try:
        parse_formula("=1+ +", B1)
    except FormulaSyntaxError as exc:
        err = exc
    assert err is not None and err.offset is not None


def test_syntax_error_offsets_point_at_the_spot():
    with pytest.raises(FormulaSyntaxError) as info:
        parse_formula('="unterminated', B1)
    assert info.value.offset == 1
    with pytest.raises(UnknownName) as info:
        parse_formula("=A1+bogus", B1)
    assert info.value.offset == 4


def test_trailing_garbage_rejected():
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=A1 B1", B1)
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=1)", B1)


# --- rendering ---------------------------------------------------------------

def test_render_minimal_parens():
    cases = [
        "=1+2*3",
        "=(1+2)*3",
        "=-2^2",
        "=2^-3",
        "=A1-(B1-C1)",
        "=A1-B1-C1",
        '=A1&"x"=B1',
        "=SUM(A1:B2,3,TRUE)",
        "=-(1+2)",
    ]
    for src in cases:
        ast = parse_formula(src, B1)
        assert render(ast) == src, src


def test_render_of_refs():
    assert render(parse_formula("=$A$1+Data!B2", B1)) == "=$A$1+Data!B2"
    assert render(parse_formula("='My Data'!B2:C4", B1)) == "='My Data'!B2:C4"


def test_canonical_number():
    assert canonical_number(2.0) == "2"
    assert canonical_number(2.5) == "2.5"
    assert canonical_number(0.0) == "0"
    assert canonical_number(1e300) == "1e+300"


# --- normalization -----------------------------------------------------------

def test_normalize_pinned_example():
    assert norm_text("=A1*2", B1) == "=RC[-1]*2"


def test_normalize_copy_invariance_simple():
    assert norm_text("=A1*2", CellAddress("S1", 1, 2)) == norm_text(
        "=A2*2", CellAddress("S1", 2, 2)
    )
    assert norm_text("=A1*2", B1) != norm_text("=A1*3", B1)


def test_normalize_absolute_and_cross_sheet():
    assert norm_text("=$A$1", B1) == "=R1C1"
    assert norm_text("=$A1", B1) == "=RC1"
    assert norm_text("=A$1", B1) == "=R1C[-1]"
    assert norm_text("=Data!A1", B1) == "=Data!RC[-1]"
    assert norm_text("='My Data'!A1", B1) == "='My Data'!RC[-1]"


def test_normalize_zero_offset_is_bare():
    # host B1 referencing B9: same column -> bare C
    assert norm_text("=B9", B1) == "=R[8]C"
    assert norm_text("=SUM(B2:B8)", CellAddress("S1", 9, 2)) == "=SUM(R[-7]C:R[-1]C)"


def test_normalize_collects_refs_and_literals():
    nf = normalize(parse_formula("=A1*2+Data!B2-3.5", C2))
    assert nf.literals == (2.0, 3.5)
    assert nf.references == ("R[-1]C[-2]", "Data!RC[-1]")
    # ref * 2 + ref - 3.5 -> seven counted tokens
    assert nf.token_count == 7


def test_unique_formula_count_counts_copies_once():
    wb = wb_from(
        {
            "A1": 1,
            "B1": "=A1*2",
            "B2": "=A2*2",   # copy of B1 shape
            "B3": "=A3*3",   # different literal
            "C1": "=SUM(A1:A3)",
        }
    )
    assert unique_formula_count(wb) == 3


def test_unique_formula_count_is_per_sheet():
    wb = wb_from(
        {"B1": "=A1*2"},
        extra_sheets={"S2": {"B1": "=A1*2"}},
    )
    assert unique_formula_count(wb) == 2


# --- metrics -----------------------------------------------------------------

def test_metrics_pinned_example():
    m = metrics(parse_formula("=Data!B2+C40", C2))
    assert m.token_count == 3
    assert m.cross_sheet_ref_count == 1
    assert m.max_ref_distance == 38
    assert m.off_axis_ref_count == 0


def test_metrics_token_and_literal_counts():
    m = metrics(parse_formula("=SUM(B2:B8)", C2))
    assert m.token_count == 2
    assert m.literal_count == 0
    m = metrics(parse_formula("=IF(A1>0,A1,0)", C2))
    assert m.token_count == 6
    assert m.literal_count == 2
    m = metrics(parse_formula('=-A1+2*3&"x"', C2))
    # unary, ref, 2, 3, *, +, &, "x"
    assert m.token_count == 8
    assert m.literal_count == 2


def test_metrics_off_axis():
    m = metrics(parse_formula("=B2", CellAddress("S1", 1, 1)))
    assert m.off_axis_ref_count == 1 and m.max_ref_distance == 1
    m = metrics(parse_formula("=B1+A2", CellAddress("S1", 1, 1)))
    assert m.off_axis_ref_count == 0
    # range neither spanning host row nor host column is off-axis
    m = metrics(parse_formula("=SUM(A5:B9)", C2))
    assert m.off_axis_ref_count == 1
    assert m.max_ref_distance == 7
    # range spanning the host column is on-axis
    m = metrics(parse_formula("=SUM(C5:D9)", C2))
    assert m.off_axis_ref_count == 0


def test_metrics_range_distance_uses_far_corner():
    m = metrics(parse_formula("=SUM(A1:A30)", CellAddress("S1", 31, 1)))
    assert m.max_ref_distance == 30


# --- properties --------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_render_parse_roundtrip_property(seed):
    rng = random.Random(seed)
    expr = random_expr(rng, depth=4)
    ast = FormulaAst(source="=", host=C2, root=expr)
    src = render(ast)
    assert parse_formula(src, C2).root == expr


@settings(max_examples=300, deadline=None)
@given(
    st.integers(min_value=0, max_value=2**32 - 1),
    st.integers(min_value=0, max_value=30),
    st.integers(min_value=0, max_value=30),
)
def test_normalize_copy_invariance_property(seed, dr, dc):
    rng = random.Random(seed)
    expr = random_expr(rng, depth=4, uniform_range_flags=True)
    host = CellAddress("S1", 50, 50)
    moved_host = CellAddress("S1", 50 + dr, 50 + dc)
    src_a = render(FormulaAst("=", host, expr))
    src_b = render(FormulaAst("=", moved_host, translate_expr(expr, dr, dc)))
    assert norm_text(src_a, host) == norm_text(src_b, moved_host)


def test_row_zero_reference_rejected():
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=B0", B1)
    with pytest.raises(FormulaSyntaxError):
        parse_formula("=SUM(A0:A3)", B1)
