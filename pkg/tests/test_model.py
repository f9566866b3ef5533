"""Workbook model and document format tests."""

from __future__ import annotations

import json

import pytest

from gridaudit.errors import (
    DanglingOutput,
    DuplicateSheet,
    InvalidAddress,
    InvalidCell,
    MalformedDocument,
)
from gridaudit.model import (
    MAX_COL,
    MAX_ROW,
    A1Ref,
    CellAddress,
    CellContent,
    Sheet,
    UnknownFieldWarning,
    Workbook,
    WorkbookMeta,
    col_to_letters,
    letters_to_col,
    parse_a1,
    parse_cell_key,
    parse_qualified,
    parse_workbook,
    serialize_workbook,
)

HOST = CellAddress("S1", 5, 3)


def make_workbook(cells: dict[str, dict], name: str = "wb_v1_2026-01-15",
                  outputs: list[str] | None = None, protection: bool = False) -> Workbook:
    doc = {
        "version": 1,
        "name": name,
        "meta": {
            "modified": "2026-01-15T09:30:00",
            "outputs": outputs or [],
            "protectionEnabled": protection,
        },
        "sheets": [{"name": "S1", "cells": cells}],
    }
    return parse_workbook(json.dumps(doc))


# --- column letters ---------------------------------------------------------

def test_column_letters_known_values():
    assert col_to_letters(1) == "A"
    assert col_to_letters(26) == "Z"
    assert col_to_letters(27) == "AA"
    assert col_to_letters(702) == "ZZ"
    assert col_to_letters(703) == "AAA"
    assert col_to_letters(16384) == "XFD"
    assert letters_to_col("XFD") == 16384
    assert letters_to_col("a") == 1


def test_column_letters_roundtrip_exhaustive_head():
    for col in range(1, 20000):
        assert letters_to_col(col_to_letters(col)) == col


# --- address parsing --------------------------------------------------------

def test_parse_cell_key_strict():
    assert parse_cell_key("B12") == (12, 2)
    assert parse_cell_key("xfd1048576") == (1048576, 16384)
    for bad in ("", "B", "12", "$B$1", "S!B1", "B0", "XFE1", "B1048577"):
        with pytest.raises(InvalidAddress):
            parse_cell_key(bad)


def test_parse_a1_relative_and_absolute():
    assert parse_a1("B12", HOST) == A1Ref(CellAddress("S1", 12, 2))
    assert parse_a1("$A$1", HOST) == A1Ref(CellAddress("S1", 1, 1), abs_row=True, abs_col=True)
    assert parse_a1("$A1", HOST) == A1Ref(CellAddress("S1", 1, 1), abs_row=False, abs_col=True)
    assert parse_a1("A$1", HOST) == A1Ref(CellAddress("S1", 1, 1), abs_row=True, abs_col=False)


def test_parse_a1_sheet_qualifiers():
    assert parse_a1("Data!B2", HOST).address == CellAddress("Data", 2, 2)
    assert parse_a1("'My Data'!B2", HOST).address == CellAddress("My Data", 2, 2)
    assert parse_a1("'It''s'!A1", HOST).address == CellAddress("It's", 1, 1)
    with pytest.raises(InvalidAddress):
        parse_a1("'Unterminated!A1", HOST)
    with pytest.raises(InvalidAddress):
        parse_a1("XFE1", HOST)


def test_parse_qualified_requires_sheet():
    assert parse_qualified("Summary!B9") == CellAddress("Summary", 9, 2)
    with pytest.raises(InvalidAddress):
        parse_qualified("B9")


def test_qualified_rendering_quotes_when_needed():
    assert CellAddress("Summary", 9, 2).qualified == "Summary!B9"
    assert CellAddress("My Data", 1, 1).qualified == "'My Data'!A1"
    assert parse_qualified("'My Data'!A1") == CellAddress("My Data", 1, 1)


# --- cell content -----------------------------------------------------------

def test_cell_content_exactly_one_of_value_or_formula():
    with pytest.raises(InvalidCell):
        CellContent()
    with pytest.raises(InvalidCell):
        CellContent(value=1.0, formula="=A1")
    with pytest.raises(InvalidCell):
        CellContent(formula="A1")  # no '='
    assert CellContent(value=3).value == 3.0
    assert CellContent(value=True).value is True
    assert CellContent(formula="=A1").is_formula


def test_cell_content_numeric_text_flags():
    assert CellContent(value="500").is_text
    assert CellContent(value=500.0, number_format="text").is_text
    assert not CellContent(value=500.0, number_format="text").is_number
    assert CellContent(value=500.0).is_number
    assert not CellContent(value=True).is_number


# --- document parse/serialize ----------------------------------------------

def test_parse_workbook_roundtrip():
    wb = make_workbook(
        {
            "A1": {"v": 100},
            "A2": {"v": "label"},
            "A3": {"v": True, "locked": True},
            "B1": {"v": 2.5, "fmt": "text"},
            "B2": {"f": "=A1*2", "locked": True},
        },
        outputs=["S1!B2"],
        protection=True,
    )
    text = serialize_workbook(wb)
    again = parse_workbook(text)
    assert again == wb
    assert serialize_workbook(again) == text


def test_parse_canonicalizes_keys_and_fmt():
    wb = make_workbook({"b2": {"v": 1, "fmt": "general"}})
    sheet = wb.sheets[0]
    assert list(sheet.cells) == ["B2"]
    assert sheet.cells["B2"].number_format is None


def test_integral_floats_serialize_as_ints():
    wb = make_workbook({"A1": {"v": 100.0}, "A2": {"v": 2.5}})
    doc = json.loads(serialize_workbook(wb))
    cells = doc["sheets"][0]["cells"]
    assert cells["A1"]["v"] == 100 and isinstance(cells["A1"]["v"], int)
    assert cells["A2"]["v"] == 2.5


def test_unknown_fields_warn_and_are_dropped():
    doc = {
        "version": 1,
        "name": "x",
        "surprise": 1,
        "meta": {"modified": "2026-01-01T00:00:00", "outputs": [], "protectionEnabled": False},
        "sheets": [{"name": "S1", "cells": {"A1": {"v": 1, "note": "hi"}}}],
    }
    with pytest.warns(UnknownFieldWarning):
        wb = parse_workbook(json.dumps(doc))
    assert wb.sheets[0].cells["A1"].value == 1.0


def test_parse_errors_name_the_location():
    with pytest.raises(MalformedDocument):
        parse_workbook("not json")
    with pytest.raises(MalformedDocument):
        parse_workbook(json.dumps({"version": 2, "name": "x", "meta": {}, "sheets": []}))
    base = {
        "version": 1,
        "name": "x",
        "meta": {"modified": "2026-01-01T00:00:00", "outputs": [], "protectionEnabled": False},
    }
    with pytest.raises(InvalidAddress, match="ZZZZ1"):
        parse_workbook(json.dumps({**base, "sheets": [{"name": "S1", "cells": {"ZZZZ1": {"v": 1}}}]}))
    with pytest.raises(InvalidCell, match="S1!A1"):
        parse_workbook(json.dumps({**base, "sheets": [{"name": "S1", "cells": {"A1": {}}}]}))
    with pytest.raises(InvalidCell):
        parse_workbook(json.dumps(
            {**base, "sheets": [{"name": "S1", "cells": {"A1": {"v": 1, "f": "=B1"}}}]}
        ))


def test_duplicate_sheet_and_dangling_output():
    doc = {
        "version": 1,
        "name": "x",
        "meta": {"modified": "2026-01-01T00:00:00", "outputs": [], "protectionEnabled": False},
        "sheets": [{"name": "S1", "cells": {}}, {"name": "S1", "cells": {}}],
    }
    with pytest.raises(DuplicateSheet):
        parse_workbook(json.dumps(doc))
    with pytest.raises(DanglingOutput, match="Z99"):
        make_workbook({"A1": {"v": 1}}, outputs=["S1!Z99"])


def test_nonfinite_numbers_rejected():
    text = '{"version":1,"name":"x","meta":{"modified":"2026-01-01T00:00:00"},' \
           '"sheets":[{"name":"S1","cells":{"A1":{"v":NaN}}}]}'
    with pytest.raises(MalformedDocument):
        parse_workbook(text)


def test_grid_caps_constants():
    assert MAX_ROW == 1_048_576
    assert MAX_COL == 16_384
    assert parse_cell_key(f"XFD{MAX_ROW}") == (MAX_ROW, MAX_COL)


def test_workbook_helpers():
    wb = make_workbook({"A1": {"v": 1}, "B2": {"f": "=A1"}}, outputs=["S1!B2"])
    addrs = [a.a1 for a, _ in wb.iter_cells()]
    assert addrs == ["A1", "B2"]
    assert [a.a1 for a, _ in wb.formula_cells()] == ["B2"]
    assert wb.total_cell_count == 2
    assert wb.output_addresses == (CellAddress("S1", 2, 2),)
    wb2 = wb.replace_cell(CellAddress("S1", 1, 1), CellContent(value=7))
    assert wb2.cell(CellAddress("S1", 1, 1)).value == 7.0
    assert wb.cell(CellAddress("S1", 1, 1)).value == 1.0  # original untouched


def test_iter_cells_row_major_order():
    wb = make_workbook({"C1": {"v": 1}, "A2": {"v": 2}, "B1": {"v": 3}, "A1": {"v": 4}})
    order = [a.a1 for a, _ in wb.iter_cells()]
    assert order == ["A1", "B1", "C1", "A2"]


def test_meta_modified_must_be_iso():
    with pytest.raises(MalformedDocument):
        WorkbookMeta(modified="yesterday")
    assert WorkbookMeta(modified="2026-01-15T09:30:00").modified_date.isoformat() == "2026-01-15"
