"""Shared test utilities: compact workbook construction and random ASTs."""

from __future__ import annotations

import random
from dataclasses import replace
from typing import Any

from gridaudit.formula import (
    BinaryOp,
    BooleanLiteral,
    CellRef,
    Expr,
    FunctionCall,
    NumberLiteral,
    RangeRef,
    TextLiteral,
    UnaryOp,
)
from gridaudit.model import CellContent, Sheet, Workbook, WorkbookMeta

DEFAULT_MODIFIED = "2026-01-15T09:30:00"
DEFAULT_NAME = "book_v1_2026-01-15"


def wb_from(
    cells: dict[str, Any],
    name: str = DEFAULT_NAME,
    outputs: tuple[str, ...] = (),
    protection: bool = True,
    modified: str = DEFAULT_MODIFIED,
    extra_sheets: dict[str, dict[str, Any]] | None = None,
) -> Workbook:
    """Build a one-sheet workbook ("S1") from a compact cell map.

    Values: "=..." strings become formulas, CellContent passes through,
    anything else is a constant. Cells are locked by default so protection
    rules stay quiet unless a test wants them.
    """

    def content(v: Any) -> CellContent:
        if isinstance(v, CellContent):
            return v
        if isinstance(v, str) and v.startswith("="):
            return CellContent(formula=v, locked=True)
        return CellContent(value=v, locked=True)

    sheets = [Sheet("S1", {k: content(v) for k, v in cells.items()})]
    for sheet_name, sheet_cells in (extra_sheets or {}).items():
        sheets.append(Sheet(sheet_name, {k: content(v) for k, v in sheet_cells.items()}))
    return Workbook(
        name=name,
        sheets=tuple(sheets),
        meta=WorkbookMeta(modified=modified, outputs=outputs, protection_enabled=protection),
    )


# --- random expression trees -------------------------------------------------

_FOREIGN_SHEETS = [None, None, None, "Data", "My Data", "it's"]
_BINOPS = ["+", "-", "*", "/", "^", "&", "=", "<>", "<", "<=", ">", ">="]


def random_expr(rng: random.Random, depth: int = 3, coord_span: int = 40,
                uniform_range_flags: bool = False) -> Expr:
    """A random well-formed expression tree.

    Number literals are non-negative (the parser spells negatives as unary
    minus) and range corners are pre-sorted, matching parser canonical form,
    so render/parse equality holds structurally. uniform_range_flags forces
    both corners of each range axis to share an absolute marker, which keeps
    corner order stable under translation (the copy-invariance property).
    """
    if depth <= 0 or rng.random() < 0.3:
        kind = rng.randrange(5)
        if kind == 0:
            v = rng.choice([0.0, 1.0, 2.0, 2.5, 100.0, 0.052, 1e-07, 12345.678, 3.0])
            return NumberLiteral(v)
        if kind == 1:
            return TextLiteral(rng.choice(["", "x", 'say "hi"', "Ω μ"]))
        if kind == 2:
            return BooleanLiteral(rng.random() < 0.5)
        if kind == 3:
            sheet = rng.choice(_FOREIGN_SHEETS)
            return CellRef(
                sheet,
                rng.randint(1, coord_span),
                rng.randint(1, coord_span),
                abs_row=rng.random() < 0.25,
                abs_col=rng.random() < 0.25,
            )
        sheet = rng.choice(_FOREIGN_SHEETS)
        r1, r2 = sorted((rng.randint(1, coord_span), rng.randint(1, coord_span)))
        c1, c2 = sorted((rng.randint(1, coord_span), rng.randint(1, coord_span)))
        a_r1, a_r2 = rng.random() < 0.2, rng.random() < 0.2
        a_c1, a_c2 = rng.random() < 0.2, rng.random() < 0.2
        if uniform_range_flags:
            a_r2, a_c2 = a_r1, a_c1
        return RangeRef(sheet, r1, c1, r2, c2,
                        abs_r1=a_r1, abs_c1=a_c1, abs_r2=a_r2, abs_c2=a_c2)
    kind = rng.randrange(6)
    if kind == 0:
        return UnaryOp(rng.choice(["-", "+"]),
                       random_expr(rng, depth - 1, coord_span, uniform_range_flags))
    if kind <= 3:
        return BinaryOp(
            rng.choice(_BINOPS),
            random_expr(rng, depth - 1, coord_span, uniform_range_flags),
            random_expr(rng, depth - 1, coord_span, uniform_range_flags),
        )
    name = rng.choice(["SUM", "AVERAGE", "MIN", "MAX", "COUNT", "IF", "AND", "OR",
                       "NOT", "ROUND", "ABS"])
    if name in ("NOT", "ABS"):
        n = 1
    elif name == "ROUND":
        n = 2
    elif name == "IF":
        n = rng.choice([2, 3])
    else:
        n = rng.randint(1, 3)
    return FunctionCall(name, tuple(
        random_expr(rng, depth - 1, coord_span, uniform_range_flags) for _ in range(n)))


def translate_expr(node: Expr, dr: int, dc: int) -> Expr:
    """Shift the relative parts of references, as a copy-paste would."""
    if isinstance(node, CellRef):
        return replace(
            node,
            row=node.row if node.abs_row else node.row + dr,
            col=node.col if node.abs_col else node.col + dc,
        )
    if isinstance(node, RangeRef):
        return replace(
            node,
            r1=node.r1 if node.abs_r1 else node.r1 + dr,
            r2=node.r2 if node.abs_r2 else node.r2 + dr,
            c1=node.c1 if node.abs_c1 else node.c1 + dc,
            c2=node.c2 if node.abs_c2 else node.c2 + dc,
        )
    if isinstance(node, UnaryOp):
        return UnaryOp(node.op, translate_expr(node.operand, dr, dc))
    if isinstance(node, BinaryOp):
        return BinaryOp(node.op, translate_expr(node.left, dr, dc),
                        translate_expr(node.right, dr, dc))
    if isinstance(node, FunctionCall):
        return FunctionCall(node.name, tuple(translate_expr(a, dr, dc) for a in node.args))
    return node
