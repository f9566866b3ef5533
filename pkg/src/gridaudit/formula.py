"""Formula parsing, normalization, and structural metrics.

The accepted grammar is the restricted sheet-formula language of the
workbook format: numbers, quoted text (with "" escape), TRUE/FALSE, cell and
range references with optional $-markers and sheet qualifiers, the operators
= <> < <= > >= & + - * / ^ with conventional precedence (comparison lowest,
^ highest, all left-associative), unary +/-, parentheses, and calls to
SUM AVERAGE MIN MAX COUNT IF AND OR NOT ROUND ABS with arity checked at
parse time. Anything else is a diagnosed error: unknown functions,
identifiers (named ranges are deliberately unsupported), and malformed
syntax all carry a character offset.

One deliberate deviation from desktop spreadsheets: unary minus binds
tighter than ^, so "=-2^2" means (-2)^2 = 4. Ranges are normalized at parse
time (corners sorted per axis) and an explicit same-sheet qualifier is
canonicalized away, which makes the rendered forms below stable.

Normalization renders the parse tree in R1C1 style relative to the host
cell, so structurally identical copies of a formula ("=A1*2" in B1, "=A2*2"
in B2) share one normal form ("=RC[-1]*2"). Unique-formula counting and the
copy-paste rules are built on that form.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from .errors import FormulaSyntaxError, UnknownFunction, UnknownName
from .model import CellAddress, Workbook, col_to_letters, letters_to_col, quote_sheet

SUPPORTED_FUNCTIONS = frozenset(
    {"SUM", "AVERAGE", "MIN", "MAX", "COUNT", "IF", "AND", "OR", "NOT", "ROUND", "ABS"}
)
AGGREGATE_FUNCTIONS = frozenset({"SUM", "AVERAGE", "MIN", "MAX", "COUNT"})

# (min_args, max_args); None = unbounded.
_ARITY: dict[str, tuple[int, int | None]] = {
    "SUM": (1, None),
    "AVERAGE": (1, None),
    "MIN": (1, None),
    "MAX": (1, None),
    "COUNT": (1, None),
    "AND": (1, None),
    "OR": (1, None),
    "IF": (2, 3),
    "NOT": (1, 1),
    "ABS": (1, 1),
    "ROUND": (2, 2),
}


# --- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class NumberLiteral:
    value: float


@dataclass(frozen=True)
class TextLiteral:
    value: str


@dataclass(frozen=True)
class BooleanLiteral:
    value: bool


@dataclass(frozen=True)
class CellRef:
    """A single-cell reference; sheet None means the host sheet."""

    sheet: str | None
    row: int
    col: int
    abs_row: bool = False
    abs_col: bool = False


@dataclass(frozen=True)
class RangeRef:
    """A rectangular range; corners are normalized so r1 <= r2, c1 <= c2."""

    sheet: str | None
    r1: int
    c1: int
    r2: int
    c2: int
    abs_r1: bool = False
    abs_c1: bool = False
    abs_r2: bool = False
    abs_c2: bool = False


@dataclass(frozen=True)
class UnaryOp:
    op: str
    operand: Expr


@dataclass(frozen=True)
class BinaryOp:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class FunctionCall:
    name: str
    args: tuple[Expr, ...]


Expr = Union[
    NumberLiteral, TextLiteral, BooleanLiteral, CellRef, RangeRef, UnaryOp, BinaryOp, FunctionCall
]


@dataclass(frozen=True)
class FormulaAst:
    """A parsed formula bound to its host cell.

    References are relative by nature; the host is what makes them concrete,
    so it travels with the tree.
    """

    source: str
    host: CellAddress
    root: Expr


# --- Lexer ----------------------------------------------------------------

_NUMBER_RE = re.compile(r"(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")
_SHEET_RE = re.compile(r"(?:[A-Za-z_][A-Za-z0-9_]*|'(?:[^']|'')+')!")
_REF_RE = re.compile(r"\$?[A-Za-z]{1,3}\$?[0-9]{1,7}(?![A-Za-z0-9_$(])")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
_TWO_CHAR_OPS = ("<=", ">=", "<>")
_ONE_CHAR = "=<>&+-*/^(),:"


@dataclass(frozen=True)
class _Token:
    kind: str  # NUMBER STRING SHEET REF NAME OP EOF
    text: str
    offset: int
    value: float | str | None = None


def _lex(src: str, start: int = 0) -> list[_Token]:
    """Lex src from start; token offsets index into the full string."""
    tokens: list[_Token] = []
    i = start
    n = len(src)
    while i < n:
        ch = src[i]
        if ch in " \t":
            i += 1
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while j < n:
                if src[j] == '"':
                    if j + 1 < n and src[j + 1] == '"':
                        buf.append('"')
                        j += 2
                        continue
                    break
                buf.append(src[j])
                j += 1
            else:
                raise FormulaSyntaxError("unterminated string", i)
            tokens.append(_Token("STRING", src[i : j + 1], i, "".join(buf)))
            i = j + 1
            continue
        m = _NUMBER_RE.match(src, i)
        if m:
            tokens.append(_Token("NUMBER", m.group(), i, float(m.group())))
            i = m.end()
            continue
        m = _SHEET_RE.match(src, i)
        if m:
            raw = m.group()[:-1]  # strip '!'
            if raw.startswith("'"):
                raw = raw[1:-1].replace("''", "'")
            tokens.append(_Token("SHEET", m.group(), i, raw))
            i = m.end()
            continue
        m = _REF_RE.match(src, i)
        if m:
            tokens.append(_Token("REF", m.group(), i))
            i = m.end()
            continue
        m = _NAME_RE.match(src, i)
        if m:
            tokens.append(_Token("NAME", m.group(), i))
            i = m.end()
            continue
        two = src[i : i + 2]
        if two in _TWO_CHAR_OPS:
            tokens.append(_Token("OP", two, i))
            i += 2
            continue
        if ch in _ONE_CHAR:
            tokens.append(_Token("OP", ch, i))
            i += 1
            continue
        raise FormulaSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("EOF", "", n))
    return tokens


# --- Parser ---------------------------------------------------------------

_REF_PARTS_RE = re.compile(r"^(\$?)([A-Za-z]{1,3})(\$?)([0-9]{1,7})$")


class _Parser:
    def __init__(self, tokens: list[_Token], host: CellAddress):
        self.tokens = tokens
        self.pos = 0
        self.host = host

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, text: str) -> _Token:
        tok = self.cur
        if tok.kind != "OP" or tok.text != text:
            raise FormulaSyntaxError(f"expected {text!r}, found {tok.text or 'end'!r}", tok.offset)
        return self.advance()

    def at_op(self, *texts: str) -> bool:
        return self.cur.kind == "OP" and self.cur.text in texts

    def parse(self) -> Expr:
        expr = self.comparison()
        if self.cur.kind != "EOF":
            raise FormulaSyntaxError(
                f"unexpected trailing input {self.cur.text!r}", self.cur.offset
            )
        return expr

    def comparison(self) -> Expr:
        left = self.concat()
        while self.at_op("=", "<>", "<", "<=", ">", ">="):
            op = self.advance().text
            left = BinaryOp(op, left, self.concat())
        return left

    def concat(self) -> Expr:
        left = self.additive()
        while self.at_op("&"):
            self.advance()
            left = BinaryOp("&", left, self.additive())
        return left

    def additive(self) -> Expr:
        left = self.term()
        while self.at_op("+", "-"):
            op = self.advance().text
            left = BinaryOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.power()
        while self.at_op("*", "/"):
            op = self.advance().text
            left = BinaryOp(op, left, self.power())
        return left

    def power(self) -> Expr:
        # Unary binds tighter than ^: "-2^2" is (-2)^2.
        left = self.unary()
        while self.at_op("^"):
            self.advance()
            left = BinaryOp("^", left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.at_op("-", "+"):
            op = self.advance().text
            return UnaryOp(op, self.unary())
        return self.primary()

    def primary(self) -> Expr:
        tok = self.cur
        if tok.kind == "NUMBER":
            self.advance()
            return NumberLiteral(float(tok.value))  # type: ignore[arg-type]
        if tok.kind == "STRING":
            self.advance()
            return TextLiteral(str(tok.value))
        if tok.kind == "OP" and tok.text == "(":
            self.advance()
            inner = self.comparison()
            self.expect_op(")")
            return inner
        if tok.kind == "SHEET":
            self.advance()
            ref = self.cur
            if ref.kind != "REF":
                raise FormulaSyntaxError("expected cell reference after sheet qualifier",
                                         ref.offset)
            self.advance()
            return self.ref_or_range(str(tok.value), ref)
        if tok.kind == "REF":
            self.advance()
            return self.ref_or_range(None, tok)
        if tok.kind == "NAME":
            self.advance()
            if self.at_op("("):
                return self.funcall(tok)
            upper = tok.text.upper()
            if upper == "TRUE":
                return BooleanLiteral(True)
            if upper == "FALSE":
                return BooleanLiteral(False)
            raise UnknownName(f"unknown name {tok.text!r} (named ranges are not supported)",
                              tok.offset)
        raise FormulaSyntaxError(f"unexpected token {tok.text or 'end'!r}", tok.offset)

    def funcall(self, name_tok: _Token) -> Expr:
        name = name_tok.text.upper()
        if name not in SUPPORTED_FUNCTIONS:
            raise UnknownFunction(f"unknown function {name_tok.text!r}", name_tok.offset)
        self.expect_op("(")
        args: list[Expr] = []
        if not self.at_op(")"):
            args.append(self.comparison())
            while self.at_op(","):
                self.advance()
                args.append(self.comparison())
        self.expect_op(")")
        lo, hi = _ARITY[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            wants = f"{lo}" if hi == lo else (f"{lo}..{hi}" if hi else f">={lo}")
            raise FormulaSyntaxError(
                f"{name} takes {wants} argument(s), got {len(args)}", name_tok.offset
            )
        return FunctionCall(name, tuple(args))

    def ref_or_range(self, sheet: str | None, first: _Token) -> Expr:
        r1, c1, a_r1, a_c1 = _split_ref(first)
        if not self.at_op(":"):
            return self.make_cell_ref(sheet, r1, c1, a_r1, a_c1)
        self.advance()
        second_sheet = sheet
        if self.cur.kind == "SHEET":
            second_sheet = str(self.advance().value)
            if sheet is not None and second_sheet != sheet:
                raise FormulaSyntaxError("range corners on different sheets", self.cur.offset)
            if sheet is None:
                raise FormulaSyntaxError(
                    "sheet qualifier on second range corner only", self.cur.offset
                )
        second = self.cur
        if second.kind != "REF":
            raise FormulaSyntaxError("expected cell reference after ':'", second.offset)
        self.advance()
        r2, c2, a_r2, a_c2 = _split_ref(second)
        # Canonical corners: sort each axis, markers follow their coordinate.
        if r1 > r2:
            r1, r2, a_r1, a_r2 = r2, r1, a_r2, a_r1
        if c1 > c2:
            c1, c2, a_c1, a_c2 = c2, c1, a_c2, a_c1
        norm_sheet = None if second_sheet == self.host.sheet else second_sheet
        return RangeRef(norm_sheet, r1, c1, r2, c2, a_r1, a_c1, a_r2, a_c2)

    def make_cell_ref(self, sheet: str | None, row: int, col: int,
                      abs_row: bool, abs_col: bool) -> CellRef:
        norm_sheet = None if sheet == self.host.sheet else sheet
        return CellRef(norm_sheet, row, col, abs_row, abs_col)


def _split_ref(tok: _Token) -> tuple[int, int, bool, bool]:
    m = _REF_PARTS_RE.match(tok.text)
    if not m:  # unreachable if the lexer is right; keep the diagnostic anyway
        raise FormulaSyntaxError(f"bad reference {tok.text!r}", tok.offset)
    row = int(m.group(4))
    if row == 0:  # rows are 1-based; row 0 can never resolve
        raise FormulaSyntaxError(f"reference {tok.text!r} names row 0", tok.offset)
    return row, letters_to_col(m.group(2)), bool(m.group(3)), bool(m.group(1))


def parse_formula(source: str, host: CellAddress) -> FormulaAst:
    """Parse formula source text (leading '=' required) at a host cell."""
    if not source.startswith("="):
        raise FormulaSyntaxError("formula must start with '='", 0)
    if not source[1:].strip():
        raise FormulaSyntaxError("empty formula", 1)
    tokens = _lex(source, 1)
    root = _Parser(tokens, host).parse()
    return FormulaAst(source=source, host=host, root=root)


# --- Rendering ------------------------------------------------------------

_LEVEL = {
    "=": 1, "<>": 1, "<": 1, "<=": 1, ">": 1, ">=": 1,
    "&": 2,
    "+": 3, "-": 3,
    "*": 4, "/": 4,
    "^": 5,
}
_UNARY_LEVEL = 6
_ATOM_LEVEL = 7


def canonical_number(v: float) -> str:
    """Shortest stable spelling; integral floats print without a point."""
    if v == int(v) and abs(v) <= 2**53:
        return str(int(v))
    return repr(v)


def _render_a1_ref(node: CellRef, host: CellAddress) -> str:
    prefix = "" if node.sheet is None else quote_sheet(node.sheet) + "!"
    return (
        prefix
        + ("$" if node.abs_col else "")
        + col_to_letters(node.col)
        + ("$" if node.abs_row else "")
        + str(node.row)
    )


def _render_a1_range(node: RangeRef, host: CellAddress) -> str:
    prefix = "" if node.sheet is None else quote_sheet(node.sheet) + "!"

    def corner(row: int, col: int, a_r: bool, a_c: bool) -> str:
        return ("$" if a_c else "") + col_to_letters(col) + ("$" if a_r else "") + str(row)

    return (
        prefix
        + corner(node.r1, node.c1, node.abs_r1, node.abs_c1)
        + ":"
        + corner(node.r2, node.c2, node.abs_r2, node.abs_c2)
    )


def _r1c1_axis(letter: str, coord: int, is_abs: bool, origin: int) -> str:
    if is_abs:
        return f"{letter}{coord}"
    delta = coord - origin
    return letter if delta == 0 else f"{letter}[{delta}]"


def _render_r1c1_cell(node: CellRef, host: CellAddress) -> str:
    prefix = "" if node.sheet is None else quote_sheet(node.sheet) + "!"
    return (
        prefix
        + _r1c1_axis("R", node.row, node.abs_row, host.row)
        + _r1c1_axis("C", node.col, node.abs_col, host.col)
    )


def _render_r1c1_range(node: RangeRef, host: CellAddress) -> str:
    prefix = "" if node.sheet is None else quote_sheet(node.sheet) + "!"
    first = _r1c1_axis("R", node.r1, node.abs_r1, host.row) + _r1c1_axis(
        "C", node.c1, node.abs_c1, host.col
    )
    second = _r1c1_axis("R", node.r2, node.abs_r2, host.row) + _r1c1_axis(
        "C", node.c2, node.abs_c2, host.col
    )
    return prefix + first + ":" + second


def _render(node: Expr, host: CellAddress, style: str, parent_level: int,
            right_child: bool) -> str:
    if isinstance(node, NumberLiteral):
        return canonical_number(node.value)
    if isinstance(node, TextLiteral):
        return '"' + node.value.replace('"', '""') + '"'
    if isinstance(node, BooleanLiteral):
        return "TRUE" if node.value else "FALSE"
    if isinstance(node, CellRef):
        return _render_a1_ref(node, host) if style == "a1" else _render_r1c1_cell(node, host)
    if isinstance(node, RangeRef):
        return _render_a1_range(node, host) if style == "a1" else _render_r1c1_range(node, host)
    if isinstance(node, FunctionCall):
        args = ",".join(_render(a, host, style, 0, False) for a in node.args)
        return f"{node.name}({args})"
    if isinstance(node, UnaryOp):
        inner = _render(node.operand, host, style, _UNARY_LEVEL, False)
        text = node.op + inner
        if parent_level > _UNARY_LEVEL:
            return f"({text})"
        return text
    if isinstance(node, BinaryOp):
        level = _LEVEL[node.op]
        left = _render(node.left, host, style, level, False)
        right = _render(node.right, host, style, level, True)
        text = f"{left}{node.op}{right}"
        if level < parent_level or (level == parent_level and right_child):
            return f"({text})"
        return text
    raise TypeError(f"unknown node: {node!r}")


def render(ast: FormulaAst) -> str:
    """Render back to A1-style source. parse(render(ast)) is structurally
    equal to ast; parentheses appear only where precedence requires them."""
    return "=" + _render(ast.root, ast.host, "a1", 0, False)


# --- Normalization and metrics ---------------------------------------------


@dataclass(frozen=True)
class NormalizedFormula:
    """Host-relative normal form; copies of one formula share it.

    text is the R1C1 rendering, references the rendered refs in reading
    order, literals the numeric constants in reading order.
    """

    text: str
    references: tuple[str, ...]
    literals: tuple[float, ...]
    token_count: int


@dataclass(frozen=True)
class FormulaMetrics:
    """Structural size and reach of one formula.

    token_count counts literals, references (a range is one token),
    operators, and function names; parentheses and commas do not count.
    Distances are Chebyshev (max of row and column offsets) to the farthest
    referenced cell on the host sheet; cross-sheet references have no
    spatial distance and are tallied separately.
    """

    token_count: int
    literal_count: int
    max_ref_distance: int
    off_axis_ref_count: int
    cross_sheet_ref_count: int


def _walk(node: Expr) -> Iterator[Expr]:
    yield node
    if isinstance(node, UnaryOp):
        yield from _walk(node.operand)
    elif isinstance(node, BinaryOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, FunctionCall):
        for arg in node.args:
            yield from _walk(arg)


def metrics(ast: FormulaAst) -> FormulaMetrics:
    host = ast.host
    tokens = 0
    literals = 0
    max_dist = 0
    off_axis = 0
    cross = 0
    for node in _walk(ast.root):
        tokens += 1  # every node is one counted token; parens and commas are not nodes
        if isinstance(node, NumberLiteral):
            literals += 1
        elif isinstance(node, CellRef):
            if node.sheet is not None:
                cross += 1
            else:
                dr = abs(node.row - host.row)
                dc = abs(node.col - host.col)
                max_dist = max(max_dist, dr, dc)
                if dr != 0 and dc != 0:
                    off_axis += 1
        elif isinstance(node, RangeRef):
            if node.sheet is not None:
                cross += 1
            else:
                dr = max(abs(node.r1 - host.row), abs(node.r2 - host.row))
                dc = max(abs(node.c1 - host.col), abs(node.c2 - host.col))
                max_dist = max(max_dist, dr, dc)
                if not (node.r1 <= host.row <= node.r2) and not (node.c1 <= host.col <= node.c2):
                    off_axis += 1
    return FormulaMetrics(
        token_count=tokens,
        literal_count=literals,
        max_ref_distance=max_dist,
        off_axis_ref_count=off_axis,
        cross_sheet_ref_count=cross,
    )


def normalize(ast: FormulaAst) -> NormalizedFormula:
    """Host-relative normal form used for copy detection and unique counts."""
    text = "=" + _render(ast.root, ast.host, "r1c1", 0, False)
    refs: list[str] = []
    lits: list[float] = []
    for node in _walk(ast.root):
        if isinstance(node, CellRef):
            refs.append(_render_r1c1_cell(node, ast.host))
        elif isinstance(node, RangeRef):
            refs.append(_render_r1c1_range(node, ast.host))
        elif isinstance(node, NumberLiteral):
            lits.append(node.value)
    return NormalizedFormula(
        text=text,
        references=tuple(refs),
        literals=tuple(lits),
        token_count=metrics(ast).token_count,
    )


def parse_workbook_formulas(wb: Workbook) -> dict[CellAddress, FormulaAst]:
    """Parse every formula cell once; syntax errors name the failing cell."""
    out: dict[CellAddress, FormulaAst] = {}
    for addr, content in wb.formula_cells():
        try:
            out[addr] = parse_formula(content.formula, addr)  # type: ignore[arg-type]
        except FormulaSyntaxError as exc:
            wrapped = type(exc)(f"{addr.qualified}: {exc}")
            wrapped.offset = exc.offset
            raise wrapped from None
    return out


def unique_formula_count(wb: Workbook,
                         asts: dict[CellAddress, FormulaAst] | None = None) -> int:
    """Number of distinct (sheet, normal form) formulas in the workbook.

    Copies pasted down a column count once; the same shape on two sheets
    counts per sheet.
    """
    if asts is None:
        asts = parse_workbook_formulas(wb)
    seen: set[tuple[str, str]] = set()
    for addr, ast in asts.items():
        seen.add((addr.sheet, normalize(ast).text))
    return len(seen)
