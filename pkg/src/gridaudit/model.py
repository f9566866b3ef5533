"""Workbook data model and the canonical JSON interchange format.

A workbook document looks like:

    {
      "version": 1,
      "name": "forecast_v3_2026-01-15",
      "meta": {
        "modified": "2026-01-15T09:30:00",
        "outputs": ["Summary!B9"],
        "protectionEnabled": true
      },
      "sheets": [
        {"name": "Summary",
         "cells": {
           "B2": {"v": 1200, "locked": false},
           "B9": {"f": "=SUM(B2:B8)", "locked": true}
         }}
      ]
    }

Cells hold exactly one of a constant ("v": number, string, or boolean) or a
formula ("f": text starting with "="), plus optional "locked" (default false)
and "fmt" ("text" or "general"; omitted means general). Empty cells are
absent from the map. Unknown fields anywhere are ignored with a warning so
documents from newer writers still load.

Model objects are frozen dataclasses; constructors validate their invariants,
so a Workbook that exists is a Workbook that holds. Numbers are stored as
floats and serialized as JSON ints when integral, which keeps
parse(serialize(wb)) == wb exact.
"""

from __future__ import annotations

import datetime
import json
import re
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterator

from .errors import (
    DanglingOutput,
    DuplicateSheet,
    InvalidAddress,
    InvalidCell,
    MalformedDocument,
)

# Grid caps of the host spreadsheet model.
MAX_ROW = 1_048_576
MAX_COL = 16_384

DOCUMENT_VERSION = 1

Constant = float | str | bool


class UnknownFieldWarning(UserWarning):
    """Raised (as a warning) when a document carries fields we do not know."""


_CELL_KEY_RE = re.compile(r"^([A-Za-z]{1,3})([0-9]{1,7})$")
_BARE_SHEET_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_A1_REF_RE = re.compile(r"^(\$?)([A-Za-z]{1,3})(\$?)([0-9]{1,7})$")


def col_to_letters(col: int) -> str:
    """1-based column index to letters (1 -> A, 27 -> AA)."""
    if col < 1:
        raise InvalidAddress(f"column index must be >= 1, got {col}")
    out = ""
    while col:
        col, rem = divmod(col - 1, 26)
        out = chr(ord("A") + rem) + out
    return out


def letters_to_col(letters: str) -> int:
    """Column letters to 1-based index (A -> 1, XFD -> 16384)."""
    if not letters or not letters.isalpha():
        raise InvalidAddress(f"bad column letters: {letters!r}")
    col = 0
    for ch in letters.upper():
        col = col * 26 + (ord(ch) - ord("A") + 1)
    return col


@dataclass(frozen=True)
class CellAddress:
    """Absolute location of one cell: sheet name plus 1-based row/column."""

    sheet: str
    row: int
    col: int

    def __post_init__(self) -> None:
        if not self.sheet:
            raise InvalidAddress("empty sheet name")
        if self.row < 1 or self.col < 1:
            raise InvalidAddress(f"coordinates must be >= 1: {self.row},{self.col}")

    @property
    def a1(self) -> str:
        return f"{col_to_letters(self.col)}{self.row}"

    @property
    def qualified(self) -> str:
        return f"{quote_sheet(self.sheet)}!{self.a1}"

    def in_bounds(self) -> bool:
        return self.row <= MAX_ROW and self.col <= MAX_COL


@dataclass(frozen=True)
class A1Ref:
    """A parsed A1-style reference: address plus absolute-marker flags.

    The $-markers are presentation state, kept apart from the coordinates
    so address math never has to strip them.
    """

    address: CellAddress
    abs_row: bool = False
    abs_col: bool = False


def quote_sheet(name: str) -> str:
    """Render a sheet name for qualified addresses, quoting when needed."""
    if _BARE_SHEET_RE.match(name):
        return name
    return "'" + name.replace("'", "''") + "'"


def parse_cell_key(key: str) -> tuple[int, int]:
    """Parse a bare cell-map key like "B12" into (row, col).

    Strict form: no sheet qualifier, no $-markers. Enforces grid caps.
    """
    m = _CELL_KEY_RE.match(key)
    if not m:
        raise InvalidAddress(f"bad cell address: {key!r}")
    col = letters_to_col(m.group(1))
    row = int(m.group(2))
    if row < 1 or row > MAX_ROW or col > MAX_COL:
        raise InvalidAddress(f"address out of grid bounds: {key!r}")
    return row, col


def _split_sheet_prefix(text: str) -> tuple[str | None, str]:
    """Split an optional Sheet!/'Quoted Sheet'! prefix off an address string."""
    if text.startswith("'"):
        # Quoted sheet name; '' is an escaped quote.
        i = 1
        buf = []
        while i < len(text):
            if text[i] == "'":
                if i + 1 < len(text) and text[i + 1] == "'":
                    buf.append("'")
                    i += 2
                    continue
                break
            buf.append(text[i])
            i += 1
        else:
            raise InvalidAddress(f"unterminated sheet quote: {text!r}")
        if i + 1 >= len(text) or text[i + 1] != "!":
            raise InvalidAddress(f"expected '!' after sheet name: {text!r}")
        name = "".join(buf)
        if not name:
            raise InvalidAddress(f"empty sheet name: {text!r}")
        return name, text[i + 2 :]
    if "!" in text:
        name, rest = text.split("!", 1)
        if not _BARE_SHEET_RE.match(name):
            raise InvalidAddress(f"bad sheet name: {name!r}")
        return name, rest
    return None, text


def parse_a1(text: str, host: CellAddress) -> A1Ref:
    """Parse an A1-style reference with optional sheet qualifier and $-markers.

    An unqualified reference resolves to the host's sheet. Grid caps are
    enforced here; formula evaluation has its own #REF! path for
    out-of-bounds references and does not come through this function.
    """
    sheet, rest = _split_sheet_prefix(text)
    m = _A1_REF_RE.match(rest)
    if not m:
        raise InvalidAddress(f"bad A1 reference: {text!r}")
    col = letters_to_col(m.group(2))
    row = int(m.group(4))
    addr = CellAddress(sheet if sheet is not None else host.sheet, row, col)
    if not addr.in_bounds():
        raise InvalidAddress(f"address out of grid bounds: {text!r}")
    return A1Ref(addr, abs_row=bool(m.group(3)), abs_col=bool(m.group(1)))


def parse_qualified(text: str) -> CellAddress:
    """Parse a fully qualified address like "Summary!B9" (no $-markers)."""
    sheet, rest = _split_sheet_prefix(text)
    if sheet is None:
        raise InvalidAddress(f"sheet qualifier required: {text!r}")
    row, col = parse_cell_key(rest)
    return CellAddress(sheet, row, col)


@dataclass(frozen=True)
class CellContent:
    """One cell: exactly one of a constant value or a formula source string."""

    value: Constant | None = None
    formula: str | None = None
    locked: bool = False
    number_format: str | None = None  # "text" | None (general)

    def __post_init__(self) -> None:
        if (self.value is None) == (self.formula is None):
            raise InvalidCell("cell must hold exactly one of value or formula")
        if self.formula is not None:
            if not isinstance(self.formula, str) or not self.formula.startswith("="):
                raise InvalidCell(f"formula must start with '=': {self.formula!r}")
            if len(self.formula) == 1:
                raise InvalidCell("empty formula")
        if self.value is not None:
            if isinstance(self.value, bool):
                pass
            elif isinstance(self.value, (int, float)):
                v = float(self.value)
                if v != v or v in (float("inf"), float("-inf")):
                    raise InvalidCell("non-finite number")
                object.__setattr__(self, "value", v)
            elif not isinstance(self.value, str):
                raise InvalidCell(f"unsupported constant type: {type(self.value).__name__}")
        if self.number_format not in (None, "text"):
            raise InvalidCell(f"unsupported fmt: {self.number_format!r}")

    @property
    def is_formula(self) -> bool:
        return self.formula is not None

    @property
    def is_number(self) -> bool:
        """True for a plain numeric constant (fmt text excluded)."""
        return (
            self.value is not None
            and isinstance(self.value, float)
            and not isinstance(self.value, bool)
            and self.number_format != "text"
        )

    @property
    def is_text(self) -> bool:
        return self.value is not None and (
            isinstance(self.value, str)
            or (isinstance(self.value, float) and self.number_format == "text")
        )


@dataclass(frozen=True)
class Sheet:
    """A named grid; cells keyed by canonical A1 strings, empty cells absent."""

    name: str
    cells: dict[str, CellContent] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name:
            raise InvalidAddress("empty sheet name")
        for key in self.cells:
            row, col = parse_cell_key(key)
            canonical = f"{col_to_letters(col)}{row}"
            if key != canonical:
                raise InvalidAddress(f"cell key not canonical: {key!r} (want {canonical!r})")

    def cell_at(self, row: int, col: int) -> CellContent | None:
        return self.cells.get(f"{col_to_letters(col)}{row}")


def _parse_iso(ts: str) -> datetime.datetime:
    try:
        return datetime.datetime.fromisoformat(ts)
    except (TypeError, ValueError):
        raise MalformedDocument(f"meta.modified is not ISO-8601: {ts!r}") from None


@dataclass(frozen=True)
class WorkbookMeta:
    """Document metadata: modification stamp, declared outputs, protection."""

    modified: str
    outputs: tuple[str, ...] = ()
    protection_enabled: bool = False

    def __post_init__(self) -> None:
        _parse_iso(self.modified)

    @property
    def modified_date(self) -> datetime.date:
        return _parse_iso(self.modified).date()


@dataclass(frozen=True)
class Workbook:
    """An in-memory workbook; construction validates all structural invariants."""

    name: str
    sheets: tuple[Sheet, ...]
    meta: WorkbookMeta

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for sheet in self.sheets:
            if sheet.name in seen:
                raise DuplicateSheet(f"duplicate sheet name: {sheet.name!r}")
            seen.add(sheet.name)
        for out in self.meta.outputs:
            addr = parse_qualified(out)
            if self.cell(addr) is None:
                raise DanglingOutput(f"declared output does not resolve: {out!r}")

    def sheet(self, name: str) -> Sheet | None:
        for s in self.sheets:
            if s.name == name:
                return s
        return None

    def sheet_index(self, name: str) -> int:
        for i, s in enumerate(self.sheets):
            if s.name == name:
                return i
        raise KeyError(name)

    def cell(self, addr: CellAddress) -> CellContent | None:
        s = self.sheet(addr.sheet)
        if s is None:
            return None
        return s.cells.get(addr.a1)

    def iter_cells(self) -> Iterator[tuple[CellAddress, CellContent]]:
        """All non-empty cells, sheets in order, row-major within a sheet."""
        for s in self.sheets:
            for key in sorted(s.cells, key=lambda k: parse_cell_key(k)):
                row, col = parse_cell_key(key)
                yield CellAddress(s.name, row, col), s.cells[key]

    def formula_cells(self) -> Iterator[tuple[CellAddress, CellContent]]:
        for addr, content in self.iter_cells():
            if content.is_formula:
                yield addr, content

    @property
    def total_cell_count(self) -> int:
        return sum(len(s.cells) for s in self.sheets)

    @property
    def output_addresses(self) -> tuple[CellAddress, ...]:
        return tuple(parse_qualified(o) for o in self.meta.outputs)

    def replace_cell(self, addr: CellAddress, content: CellContent | None) -> Workbook:
        """Functional update: returns a new workbook with one cell replaced.

        content None deletes the cell. The sheet must exist.
        """
        new_sheets = []
        found = False
        for s in self.sheets:
            if s.name != addr.sheet:
                new_sheets.append(s)
                continue
            found = True
            cells = dict(s.cells)
            if content is None:
                cells.pop(addr.a1, None)
            else:
                cells[addr.a1] = content
            new_sheets.append(Sheet(s.name, cells))
        if not found:
            raise InvalidAddress(f"no such sheet: {addr.sheet!r}")
        return Workbook(self.name, tuple(new_sheets), self.meta)


def _reject_nonfinite(token: str) -> Any:
    raise MalformedDocument(f"non-finite number in document: {token}")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise MalformedDocument(message)


def _warn_unknown(fields: dict[str, Any], known: set[str], where: str) -> None:
    for key in fields:
        if key not in known:
            warnings.warn(f"ignoring unknown field {key!r} in {where}", UnknownFieldWarning)


def _parse_cell(raw: Any, where: str) -> CellContent:
    _require(isinstance(raw, dict), f"cell {where} must be an object")
    _warn_unknown(raw, {"v", "f", "locked", "fmt"}, f"cell {where}")
    has_v = "v" in raw
    has_f = "f" in raw
    if has_v == has_f:
        raise InvalidCell(f"cell {where} must have exactly one of 'v' or 'f'")
    locked = raw.get("locked", False)
    if not isinstance(locked, bool):
        raise InvalidCell(f"cell {where}: 'locked' must be a boolean")
    fmt = raw.get("fmt")
    if fmt == "general":
        fmt = None
    elif fmt not in (None, "text"):
        raise InvalidCell(f"cell {where}: unsupported fmt {fmt!r}")
    try:
        if has_f:
            f = raw["f"]
            if not isinstance(f, str):
                raise InvalidCell("'f' must be a string")
            return CellContent(formula=f, locked=locked, number_format=fmt)
        v = raw["v"]
        if not isinstance(v, (int, float, str, bool)):
            raise InvalidCell("unsupported constant type")
        return CellContent(value=v, locked=locked, number_format=fmt)
    except InvalidCell as exc:
        raise InvalidCell(f"cell {where}: {exc}") from None


def parse_workbook(data: str | bytes) -> Workbook:
    """Parse a workbook document from JSON text or bytes.

    Raises MalformedDocument / InvalidAddress / InvalidCell / DuplicateSheet /
    DanglingOutput with a location in the message. Cell keys are
    canonicalized (b2 -> B2); unknown fields warn and are dropped.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from None
    try:
        doc = json.loads(data, parse_constant=_reject_nonfinite)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from None

    _require(isinstance(doc, dict), "document root must be an object")
    _warn_unknown(doc, {"version", "name", "meta", "sheets"}, "document root")
    _require(doc.get("version") == DOCUMENT_VERSION,
             f"unsupported document version: {doc.get('version')!r}")
    name = doc.get("name")
    _require(isinstance(name, str), "'name' must be a string")

    raw_meta = doc.get("meta")
    _require(isinstance(raw_meta, dict), "'meta' must be an object")
    _warn_unknown(raw_meta, {"modified", "outputs", "protectionEnabled"}, "meta")
    _require("modified" in raw_meta, "meta.modified is required")
    modified = raw_meta["modified"]
    _require(isinstance(modified, str), "meta.modified must be a string")
    raw_outputs = raw_meta.get("outputs", [])
    _require(isinstance(raw_outputs, list) and all(isinstance(o, str) for o in raw_outputs),
             "meta.outputs must be a list of strings")
    protection = raw_meta.get("protectionEnabled", False)
    _require(isinstance(protection, bool), "meta.protectionEnabled must be a boolean")

    outputs = []
    for out in raw_outputs:
        addr = parse_qualified(out)  # InvalidAddress with the raw string on failure
        outputs.append(addr.qualified)

    raw_sheets = doc.get("sheets")
    _require(isinstance(raw_sheets, list), "'sheets' must be a list")
    sheets = []
    for raw_sheet in raw_sheets:
        _require(isinstance(raw_sheet, dict), "sheet entries must be objects")
        _warn_unknown(raw_sheet, {"name", "cells"}, "sheet")
        sheet_name = raw_sheet.get("name")
        _require(isinstance(sheet_name, str) and sheet_name != "",
                 "sheet 'name' must be a non-empty string")
        raw_cells = raw_sheet.get("cells", {})
        _require(isinstance(raw_cells, dict), f"sheet {sheet_name!r}: 'cells' must be an object")
        cells: dict[str, CellContent] = {}
        for key, raw_cell in raw_cells.items():
            try:
                row, col = parse_cell_key(key)
            except InvalidAddress:
                raise InvalidAddress(f"sheet {sheet_name!r}: bad cell address {key!r}") from None
            canonical = f"{col_to_letters(col)}{row}"
            if canonical in cells:
                raise InvalidCell(f"sheet {sheet_name!r}: duplicate cell {canonical}")
            cells[canonical] = _parse_cell(raw_cell, f"{sheet_name}!{canonical}")
        sheets.append(Sheet(sheet_name, cells))

    return Workbook(
        name=name,
        sheets=tuple(sheets),
        meta=WorkbookMeta(modified=modified, outputs=tuple(outputs),
                          protection_enabled=protection),
    )


def _constant_to_json(v: Constant) -> Any:
    if isinstance(v, bool):
        return v
    if isinstance(v, float):
        # Integral floats round-trip as ints; 2^53 bounds exact conversion.
        if v == int(v) and abs(v) <= 2**53:
            return int(v)
        return v
    return v


def workbook_to_dict(wb: Workbook) -> dict[str, Any]:
    """The canonical dict shape, deterministically ordered."""
    sheets = []
    for s in wb.sheets:
        cells: dict[str, Any] = {}
        for key in sorted(s.cells, key=lambda k: parse_cell_key(k)):
            c = s.cells[key]
            entry: dict[str, Any] = {}
            if c.is_formula:
                entry["f"] = c.formula
            else:
                entry["v"] = _constant_to_json(c.value)  # type: ignore[arg-type]
            if c.locked:
                entry["locked"] = True
            if c.number_format is not None:
                entry["fmt"] = c.number_format
            cells[key] = entry
        sheets.append({"name": s.name, "cells": cells})
    return {
        "version": DOCUMENT_VERSION,
        "name": wb.name,
        "meta": {
            "modified": wb.meta.modified,
            "outputs": list(wb.meta.outputs),
            "protectionEnabled": wb.meta.protection_enabled,
        },
        "sheets": sheets,
    }


def serialize_workbook(wb: Workbook) -> str:
    """Serialize deterministically; parse(serialize(wb)) == wb."""
    return json.dumps(workbook_to_dict(wb), ensure_ascii=False, indent=2) + "\n"
