"""Evaluator semantics and snapshot/recheck tests."""

from __future__ import annotations

import pytest

from gridaudit.engine import (
    CYCLE_ERR,
    DIV0,
    REF_ERR,
    VALUE_ERR,
    ErrorValue,
    Snapshot,
    cycle_cells,
    effective_constant,
    evaluate,
    parse_numeric_text,
    parse_snapshot,
    recheck,
    render_value,
    snapshot,
    snapshot_to_json,
    values_match,
)
from gridaudit.errors import MissingInputCell, NoDeclaredOutputs, OutputIsError
from gridaudit.model import CellAddress, CellContent
from helpers import wb_from


def val(wb, a1: str, sheet: str = "S1"):
    from gridaudit.model import parse_cell_key

    row, col = parse_cell_key(a1)
    return evaluate(wb)[CellAddress(sheet, row, col)]


def formula_result(src: str, cells: dict | None = None):
    cells = dict(cells or {})
    cells["Z99"] = src
    return val(wb_from(cells), "Z99")


# --- coercion asymmetry -------------------------------------------------------

def test_operator_coerces_text_aggregate_skips_it():
    wb = wb_from({"A1": 100, "A2": "200", "A3": "=A1+A2", "A4": "=SUM(A1:A2)"})
    assert val(wb, "A3") == 300.0
    assert val(wb, "A4") == 100.0


def test_fmt_text_number_behaves_as_text():
    cells = {
        "A1": CellContent(value=100.0, number_format="text", locked=True),
        "A2": "=A1+1",
        "A3": "=SUM(A1:A1)",
    }
    wb = wb_from(cells)
    assert effective_constant(wb.sheets[0].cells["A1"]) == "100"
    assert val(wb, "A2") == 101.0
    assert val(wb, "A3") == 0.0


def test_numeric_text_parsing_rule():
    assert parse_numeric_text(" 200 ") == 200.0
    assert parse_numeric_text("+2.5e3") == 2500.0
    assert parse_numeric_text(".5") == 0.5
    assert parse_numeric_text("") is None
    assert parse_numeric_text("12x") is None
    assert parse_numeric_text("inf") is None
    assert parse_numeric_text("nan") is None


def test_boolean_and_empty_coercion_in_arithmetic():
    assert formula_result("=TRUE+1") == 2.0
    assert formula_result("=A1+5") == 5.0  # A1 empty
    assert formula_result('="  7 "*2') == 14.0
    assert formula_result('="x"+1') == VALUE_ERR


# --- operators -----------------------------------------------------------------

def test_unary_minus_power_pinned():
    assert formula_result("=-2^2") == 4.0
    assert formula_result("=0-2^2") == -4.0


def test_power_edge_cases():
    assert formula_result("=0^0") == 1.0
    assert formula_result("=0^-1") == DIV0
    assert formula_result("=(0-8)^0.5") == VALUE_ERR
    assert formula_result("=2^10") == 1024.0


def test_division_by_zero():
    assert formula_result("=1/0") == DIV0
    assert formula_result("=1/A1") == DIV0  # empty divisor coerces to 0


def test_overflow_is_value_error():
    assert formula_result("=1e300*1e300") == VALUE_ERR


def test_concatenation_renders_canonically():
    assert formula_result('="a"&1') == "a1"
    assert formula_result("=2&TRUE") == "2TRUE"
    assert formula_result("=A1&2") == "2"  # empty renders ""
    assert formula_result("=2.5&0") == "2.50"


def test_comparisons_type_order_and_case():
    assert formula_result('=1<"a"') is True       # number < text
    assert formula_result('="a"<TRUE') is True    # text < logical
    assert formula_result('="A"="a"') is True     # case-insensitive text
    assert formula_result('="x"=1') is False      # mixed types never equal
    assert formula_result('="x"<>1') is True
    assert formula_result("=A1=0") is True        # empty vs number -> 0
    assert formula_result('=A1=""') is True       # empty vs text -> ""
    assert formula_result("=A1=FALSE") is True    # empty vs logical -> FALSE
    assert formula_result("=FALSE<TRUE") is True


def test_errors_propagate_through_operators():
    wb = wb_from({"A1": "=1/0", "A2": "=A1+1", "A3": "=NOT(A1)", "A4": '=A1&"x"'})
    assert val(wb, "A2") == DIV0
    assert val(wb, "A3") == DIV0
    assert val(wb, "A4") == DIV0


# --- functions -----------------------------------------------------------------

def test_if_is_lazy_and_or_are_not():
    assert formula_result("=IF(TRUE,1,1/0)") == 1.0
    assert formula_result("=IF(FALSE,1/0,2)") == 2.0
    assert formula_result("=IF(FALSE,1)") is False  # missing else
    assert formula_result("=AND(FALSE,1/0)") == DIV0
    assert formula_result("=OR(TRUE,1/0)") == DIV0


def test_if_condition_coercion():
    assert formula_result("=IF(2,1,0)") == 1.0
    assert formula_result('=IF("true",1,0)') == 1.0
    assert formula_result("=IF(A1,1,0)") == 0.0  # empty -> FALSE
    assert formula_result('=IF("maybe",1,0)') == VALUE_ERR


def test_and_or_not():
    assert formula_result("=AND(TRUE,1,\"true\")") is True
    assert formula_result("=AND(TRUE,0)") is False
    assert formula_result("=OR(FALSE,0)") is False
    assert formula_result("=NOT(0)") is True
    # ranges are not scalars for logic functions
    assert formula_result("=AND(A1:A2)", {"A1": True, "A2": True}) == VALUE_ERR


def test_round_half_away_from_zero():
    assert formula_result("=ROUND(2.5,0)") == 3.0
    assert formula_result("=ROUND(0-2.5,0)") == -3.0
    assert formula_result("=ROUND(1.005,2)") == 1.01
    assert formula_result("=ROUND(1234.567,0-2)") == 1200.0
    assert formula_result("=ROUND(1e30,2)") == 1e30


def test_abs():
    assert formula_result("=ABS(0-3.5)") == 3.5


def test_aggregates_reference_skip_semantics():
    cells = {"A1": 10, "A2": "x", "A3": True, "A5": 30}
    assert formula_result("=SUM(A1:A5)", cells) == 40.0
    assert formula_result("=COUNT(A1:A5)", cells) == 2.0
    assert formula_result("=AVERAGE(A1:A5)", cells) == 20.0
    assert formula_result("=MIN(A1:A5)", cells) == 10.0
    assert formula_result("=MAX(A1:A5)", cells) == 30.0


def test_aggregates_typed_args_coerce():
    assert formula_result('=SUM("5",TRUE,4)') == 10.0
    assert formula_result('=SUM("x")') == VALUE_ERR
    assert formula_result('=COUNT("5","x",7)') == 2.0  # COUNT declines, no error
    assert formula_result("=AVERAGE(A1:A2)") == DIV0  # empty set
    assert formula_result("=MIN(A1:A2)") == 0.0
    assert formula_result("=MAX(A1:A2)") == 0.0


def test_errors_are_not_skipped_by_aggregates():
    cells = {"A1": 1, "A2": "=1/0", "A3": 3}
    assert formula_result("=SUM(A1:A3)", cells) == DIV0
    assert formula_result("=COUNT(A1:A3)", cells) == DIV0
    assert formula_result("=MAX(A1:A3)", cells) == DIV0


def test_single_cell_reference_value_passthrough():
    assert formula_result("=A1", {"A1": "label"}) == "label"
    assert formula_result("=A1", {"A1": True}) is True
    assert formula_result("=A1") == 0.0  # empty direct reference


# --- references ----------------------------------------------------------------

def test_out_of_bounds_and_missing_sheet_are_ref_errors():
    assert formula_result("=XFE1") == REF_ERR       # column beyond the grid
    assert formula_result("=A1048577") == REF_ERR   # row beyond the grid
    assert formula_result("=Nope!A1") == REF_ERR
    assert formula_result("=SUM(Nope!A1:A2)") == REF_ERR


def test_cross_sheet_references_work():
    wb = wb_from({"A1": "=Data!B1*2"}, extra_sheets={"Data": {"B1": 21}})
    assert val(wb, "A1") == 42.0


# --- cycles ---------------------------------------------------------------------

def test_direct_and_indirect_cycles():
    wb = wb_from({"A1": "=B1", "B1": "=A1", "C1": "=A1+1", "D1": 5, "E1": "=D1"})
    assert val(wb, "A1") == CYCLE_ERR
    assert val(wb, "B1") == CYCLE_ERR
    assert val(wb, "C1") == CYCLE_ERR  # propagated, not on the cycle itself
    assert val(wb, "E1") == 5.0

    cycles = cycle_cells(wb)
    assert len(cycles) == 1
    assert {a.a1 for a in cycles[0]} == {"A1", "B1"}


def test_self_reference_cycle():
    wb = wb_from({"A1": "=A1+1"})
    assert val(wb, "A1") == CYCLE_ERR


def test_cycle_through_range():
    wb = wb_from({"A1": 1, "A2": "=SUM(A1:A3)", "A3": "=A2*2"})
    assert val(wb, "A2") == CYCLE_ERR
    assert val(wb, "A3") == CYCLE_ERR


def test_long_chain_no_recursion_limit():
    n = 10_000
    cells: dict[str, object] = {"A1": 1}
    for i in range(2, n + 1):
        cells[f"A{i}"] = f"=A{i-1}+1"
    wb = wb_from(cells)
    assert val(wb, f"A{n}") == float(n)


def test_evaluate_is_deterministic():
    wb = wb_from({"A1": 2, "A2": "=A1*3", "A3": "=SUM(A1:A2)"})
    assert evaluate(wb) == evaluate(wb)


def test_evaluate_with_overrides():
    wb = wb_from({"A1": 2, "A2": "=A1*3"})
    values = evaluate(wb, overrides={CellAddress("S1", 1, 1): 10.0})
    assert values[CellAddress("S1", 2, 1)] == 30.0
    # overriding a formula cell freezes it to a constant
    values = evaluate(wb, overrides={CellAddress("S1", 2, 1): 99.0})
    assert values[CellAddress("S1", 2, 1)] == 99.0


# --- values and rendering --------------------------------------------------------

def test_render_value():
    assert render_value(2.0) == "2"
    assert render_value(2.5) == "2.5"
    assert render_value(True) == "TRUE"
    assert render_value("x") == "x"
    assert render_value(DIV0) == "#DIV/0!"
    assert render_value(None) == ""


def test_values_match_tolerances():
    assert values_match(1.0, 1.0 + 1e-13)
    assert values_match(1e9, 1e9 * (1 + 1e-10))
    assert not values_match(1.0, 1.001)
    assert values_match("x", "x")
    assert not values_match("x", 1.0)
    assert values_match(True, True)
    assert not values_match(True, 1.0)
    assert not values_match(1.0, ErrorValue("#DIV/0!"))
    assert not values_match(1.0, None)


# --- snapshot / recheck -----------------------------------------------------------

def make_model():
    return wb_from(
        {"A1": 100, "A2": 18, "A3": "=A1*A2", "A4": "=A3/2"},
        outputs=("S1!A3", "S1!A4"),
    )


def test_snapshot_then_recheck_clean():
    wb = make_model()
    snap = snapshot(wb, created_at="2026-01-15T00:00:00")
    assert snap.outputs == {"S1!A3": 1800.0, "S1!A4": 900.0}
    assert snap.inputs == {"S1!A1": 100.0, "S1!A2": 18.0}
    report = recheck(wb, snap)
    assert report.ok
    assert report.mismatch_count == 0
    assert set(report.matches) == {"S1!A3", "S1!A4"}


def test_recheck_detects_formula_tampering():
    wb = make_model()
    snap = snapshot(wb, created_at="2026-01-15T00:00:00")
    tampered = wb.replace_cell(
        CellAddress("S1", 3, 1), CellContent(value=1801.0, locked=True)
    )
    report = recheck(tampered, snap)
    assert not report.ok
    # the hardwired cell itself and everything downstream of it drift
    assert [m.address for m in report.mismatches] == ["S1!A3", "S1!A4"]
    assert report.mismatches[0].expected == 1800.0
    assert report.mismatches[0].actual == 1801.0
    assert report.mismatches[1].actual == 900.5


def test_recheck_reapplies_inputs_over_current_values():
    wb = make_model()
    snap = snapshot(wb, created_at="2026-01-15T00:00:00")
    moved = wb.replace_cell(CellAddress("S1", 1, 1), CellContent(value=999.0, locked=True))
    # input differs now, but recheck pins it back to the snapshot value
    assert recheck(moved, snap).ok


def test_recheck_missing_output_counts_as_mismatch():
    wb = make_model()
    snap = snapshot(wb, created_at="2026-01-15T00:00:00")
    # drop the declaration first (the model refuses dangling declarations),
    # then delete the cell; the snapshot still remembers it
    from gridaudit.model import Workbook, WorkbookMeta

    gutted = Workbook(
        name=wb.name,
        sheets=wb.sheets,
        meta=WorkbookMeta(wb.meta.modified, ("S1!A3",), wb.meta.protection_enabled),
    ).replace_cell(CellAddress("S1", 4, 1), None)
    report = recheck(gutted, snap)
    assert report.missing_outputs == ("S1!A4",)
    assert report.mismatch_count == 1
    assert not report.ok


def test_recheck_missing_input_raises():
    wb = make_model()
    snap = snapshot(wb, created_at="2026-01-15T00:00:00")
    smaller = wb.replace_cell(CellAddress("S1", 2, 1), None)
    smaller = type(wb)(
        name=smaller.name,
        sheets=smaller.sheets,
        meta=wb.meta,
    )
    with pytest.raises(MissingInputCell):
        recheck(smaller, snap)


def test_snapshot_requires_outputs_and_no_error_outputs():
    with pytest.raises(NoDeclaredOutputs):
        snapshot(wb_from({"A1": 1}))
    with pytest.raises(OutputIsError):
        snapshot(wb_from({"A1": "=1/0"}, outputs=("S1!A1",)))


def test_snapshot_json_roundtrip():
    snap = snapshot(make_model(), created_at="2026-01-15T00:00:00")
    text = snapshot_to_json(snap)
    again = parse_snapshot(text)
    assert again == snap
