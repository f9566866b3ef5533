"""Deterministic workbook evaluation, snapshots, and recheck.

Semantics are pinned down so audits are reproducible; where desktop
spreadsheets disagree with each other, the choice here is documented and
tested rather than left to chance:

* Scalar operators coerce: numeric-looking text becomes a number, booleans
  become 1/0, empty cells become 0; non-numeric text is #VALUE!. This is the
  asymmetry that makes number-stored-as-text dangerous, and it is modeled
  on purpose.
* Aggregates (SUM AVERAGE MIN MAX COUNT) skip text, booleans, and empties
  in referenced cells and ranges, but coerce typed (literal) arguments like
  operators do. Error values are never skipped: an error inside a summed
  range poisons the aggregate, COUNT included.
* A constant number cell marked fmt:"text" behaves as its text rendering;
  operators still coerce it back, aggregates skip it.
* Errors are values: #DIV/0!, #VALUE!, #REF! (reference beyond the grid or
  to a missing sheet), #CYCLE! (every cell on a reference cycle). Errors
  propagate through anything that consumes them.
* IF evaluates only the taken branch; AND/OR evaluate all arguments and
  take scalars only. ROUND rounds half away from zero. "^" on a negative
  base with a fractional exponent is #VALUE!; 0^0 is 1; 0^negative is
  #DIV/0!. Overflow to infinity reports #VALUE!.
* Comparisons order mixed types as number < text < logical, compare text
  case-insensitively, and coerce an empty operand to the other side's type.

Evaluation is non-recursive over the dependency structure (topological
order with Tarjan components for the cyclic part), so ten-thousand-cell
chains evaluate without blowing the stack.
"""

from __future__ import annotations

import datetime
import json
import math
import re
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, localcontext
from typing import Any, Iterator, Union

from .errors import (
    MalformedDocument,
    MissingInputCell,
    NoDeclaredOutputs,
    OutputIsError,
)
from .graph import addr_key as _addr_key
from .graph import tarjan_sccs as _tarjan_sccs
from .formula import (
    BinaryOp,
    BooleanLiteral,
    CellRef,
    Expr,
    FormulaAst,
    FunctionCall,
    NumberLiteral,
    RangeRef,
    TextLiteral,
    UnaryOp,
    canonical_number,
    parse_workbook_formulas,
)
from .model import (
    MAX_COL,
    MAX_ROW,
    CellAddress,
    CellContent,
    Constant,
    Workbook,
    parse_cell_key,
    parse_qualified,
)


@dataclass(frozen=True)
class ErrorValue:
    code: str

    def __str__(self) -> str:
        return self.code


DIV0 = ErrorValue("#DIV/0!")
VALUE_ERR = ErrorValue("#VALUE!")
REF_ERR = ErrorValue("#REF!")
CYCLE_ERR = ErrorValue("#CYCLE!")

Value = Union[float, str, bool, ErrorValue]

_NUMERIC_TEXT_RE = re.compile(r"^[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?$")


def parse_numeric_text(s: str) -> float | None:
    """The coercion rule for text in numeric context; None when not numeric."""
    s = s.strip()
    if not _NUMERIC_TEXT_RE.match(s):
        return None
    return float(s)


def effective_constant(content: CellContent) -> Value:
    """The value a constant cell presents to the evaluator.

    fmt:"text" on a number makes the cell a text cell holding the rendered
    number; that is the whole mechanism the number-as-text rule audits.
    """
    v = content.value
    if isinstance(v, bool) or isinstance(v, str):
        return v
    assert isinstance(v, float)
    if content.number_format == "text":
        return canonical_number(v)
    return v


class _Err(Exception):
    """Internal control flow: carries an error value up to the cell boundary."""

    def __init__(self, error: ErrorValue):
        self.error = error


def render_value(v: Value | None) -> str:
    """Stable human rendering of a computed value."""
    if v is None:
        return ""
    if isinstance(v, ErrorValue):
        return v.code
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, float):
        return canonical_number(v)
    return v


def value_to_json(v: Value) -> Any:
    if isinstance(v, ErrorValue):
        return {"error": v.code}
    if isinstance(v, bool):
        return v
    if isinstance(v, float):
        if v == int(v) and abs(v) <= 2**53:
            return int(v)
        return v
    return v


def value_from_json(raw: Any) -> Value:
    if isinstance(raw, dict):
        code = raw.get("error")
        if not isinstance(code, str):
            raise MalformedDocument(f"bad value entry: {raw!r}")
        return ErrorValue(code)
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, str):
        return raw
    raise MalformedDocument(f"bad value entry: {raw!r}")


# --- sheet index -------------------------------------------------------------


class _SheetIndex:
    """Row/column index over a sheet's non-empty cells for range iteration."""

    def __init__(self, name: str, cells: dict[str, CellContent]):
        self.name = name
        by_row: dict[int, list[int]] = {}
        for key in cells:
            row, col = parse_cell_key(key)
            by_row.setdefault(row, []).append(col)
        self.rows = sorted(by_row)
        self.cols_by_row = {r: sorted(cs) for r, cs in by_row.items()}

    def iter_box(self, r1: int, c1: int, r2: int, c2: int) -> Iterator[tuple[int, int]]:
        """(row, col) of non-empty cells inside the box, reading order."""
        lo = bisect_left(self.rows, r1)
        hi = bisect_right(self.rows, r2)
        for row in self.rows[lo:hi]:
            cols = self.cols_by_row[row]
            a = bisect_left(cols, c1)
            b = bisect_right(cols, c2)
            for col in cols[a:b]:
                yield row, col


# --- evaluator ---------------------------------------------------------------


class _Evaluator:
    def __init__(self, wb: Workbook, values: dict[CellAddress, Value],
                 indexes: dict[str, _SheetIndex]):
        self.wb = wb
        self.values = values
        self.indexes = indexes

    # -- coercions

    def as_number(self, v: Value | None) -> float:
        if isinstance(v, ErrorValue):
            raise _Err(v)
        if isinstance(v, bool):
            return 1.0 if v else 0.0
        if isinstance(v, float):
            return v
        if v is None:
            return 0.0
        parsed = parse_numeric_text(v)
        if parsed is None:
            raise _Err(VALUE_ERR)
        return parsed

    def as_text(self, v: Value | None) -> str:
        if isinstance(v, ErrorValue):
            raise _Err(v)
        if v is None:
            return ""
        if isinstance(v, bool):
            return "TRUE" if v else "FALSE"
        if isinstance(v, float):
            return canonical_number(v)
        return v

    def as_logical(self, v: Value | None) -> bool:
        if isinstance(v, ErrorValue):
            raise _Err(v)
        if isinstance(v, bool):
            return v
        if isinstance(v, float):
            return v != 0.0
        if v is None:
            return False
        s = v.strip().upper()
        if s == "TRUE":
            return True
        if s == "FALSE":
            return False
        raise _Err(VALUE_ERR)

    # -- reference resolution

    def resolve_cell(self, node: CellRef, host: CellAddress) -> Value | None:
        sheet = node.sheet if node.sheet is not None else host.sheet
        if node.row > MAX_ROW or node.col > MAX_COL:
            raise _Err(REF_ERR)
        if self.wb.sheet(sheet) is None:
            raise _Err(REF_ERR)
        v = self.values.get(CellAddress(sheet, node.row, node.col))
        if isinstance(v, ErrorValue):
            raise _Err(v)
        return v

    def iter_range(self, node: RangeRef, host: CellAddress) -> Iterator[Value]:
        sheet = node.sheet if node.sheet is not None else host.sheet
        if node.r2 > MAX_ROW or node.c2 > MAX_COL:
            raise _Err(REF_ERR)
        index = self.indexes.get(sheet)
        if index is None:
            raise _Err(REF_ERR)
        for row, col in index.iter_box(node.r1, node.c1, node.r2, node.c2):
            v = self.values[CellAddress(sheet, row, col)]
            if isinstance(v, ErrorValue):
                raise _Err(v)
            yield v

    # -- expression evaluation

    def eval(self, node: Expr, host: CellAddress) -> Value:
        if isinstance(node, NumberLiteral):
            return node.value
        if isinstance(node, TextLiteral):
            return node.value
        if isinstance(node, BooleanLiteral):
            return node.value
        if isinstance(node, CellRef):
            v = self.resolve_cell(node, host)
            return 0.0 if v is None else v
        if isinstance(node, RangeRef):
            raise _Err(VALUE_ERR)  # a bare range has no scalar value
        if isinstance(node, UnaryOp):
            v = self.as_number(self.eval(node.operand, host))
            return -v if node.op == "-" else v
        if isinstance(node, BinaryOp):
            return self.eval_binary(node, host)
        if isinstance(node, FunctionCall):
            return self.eval_call(node, host)
        raise TypeError(f"unknown node {node!r}")

    def eval_binary(self, node: BinaryOp, host: CellAddress) -> Value:
        op = node.op
        if op in ("=", "<>", "<", "<=", ">", ">="):
            return self.compare(op, node, host)
        if op == "&":
            return self.as_text(self.eval_scalar(node.left, host)) + self.as_text(
                self.eval_scalar(node.right, host)
            )
        a = self.as_number(self.eval_scalar(node.left, host))
        b = self.as_number(self.eval_scalar(node.right, host))
        if op == "+":
            r = a + b
        elif op == "-":
            r = a - b
        elif op == "*":
            r = a * b
        elif op == "/":
            if b == 0.0:
                raise _Err(DIV0)
            r = a / b
        elif op == "^":
            r = self.power(a, b)
        else:
            raise TypeError(f"unknown operator {op!r}")
        if not math.isfinite(r):
            raise _Err(VALUE_ERR)
        return r

    @staticmethod
    def power(a: float, b: float) -> float:
        if a == 0.0 and b == 0.0:
            return 1.0
        if a == 0.0 and b < 0.0:
            raise _Err(DIV0)
        try:
            r = a**b
        except OverflowError:
            raise _Err(VALUE_ERR) from None
        except ZeroDivisionError:
            raise _Err(DIV0) from None
        if isinstance(r, complex):  # negative base, fractional exponent
            raise _Err(VALUE_ERR)
        return float(r)

    def eval_scalar(self, node: Expr, host: CellAddress) -> Value | None:
        """Evaluate in scalar context; empty cell references stay None so
        each consumer applies its own empty rule."""
        if isinstance(node, CellRef):
            return self.resolve_cell(node, host)
        return self.eval(node, host)

    def compare(self, op: str, node: BinaryOp, host: CellAddress) -> bool:
        left = self.eval_scalar(node.left, host)
        right = self.eval_scalar(node.right, host)
        if left is None and right is None:
            left = right = 0.0
        elif left is None:
            left = _zero_like(right)
        elif right is None:
            right = _zero_like(left)
        lrank, rrank = _type_rank(left), _type_rank(right)
        if lrank != rrank:
            if op == "=":
                return False
            if op == "<>":
                return True
            cmp = -1 if lrank < rrank else 1
        else:
            lk = left.casefold() if isinstance(left, str) else left
            rk = right.casefold() if isinstance(right, str) else right
            cmp = 0 if lk == rk else (-1 if lk < rk else 1)
        if op == "=":
            return cmp == 0
        if op == "<>":
            return cmp != 0
        if op == "<":
            return cmp < 0
        if op == "<=":
            return cmp <= 0
        if op == ">":
            return cmp > 0
        return cmp >= 0

    # -- functions

    def eval_call(self, node: FunctionCall, host: CellAddress) -> Value:
        name = node.name
        if name == "IF":
            cond = self.as_logical(self.eval_scalar(node.args[0], host))
            if cond:
                return self.eval(node.args[1], host)
            if len(node.args) == 3:
                return self.eval(node.args[2], host)
            return False
        if name in ("AND", "OR"):
            # No short-circuit: arguments are all evaluated, IF is the only
            # lazy form.
            bools = [self.as_logical(self.eval_scalar(a, host)) for a in node.args]
            return all(bools) if name == "AND" else any(bools)
        if name == "NOT":
            return not self.as_logical(self.eval_scalar(node.args[0], host))
        if name == "ABS":
            return abs(self.as_number(self.eval_scalar(node.args[0], host)))
        if name == "ROUND":
            x = self.as_number(self.eval_scalar(node.args[0], host))
            d = int(self.as_number(self.eval_scalar(node.args[1], host)))
            return _round_half_away(x, d)
        return self.eval_aggregate(name, node.args, host)

    def gather(self, args: tuple[Expr, ...], host: CellAddress,
               counting: bool) -> list[float]:
        """Numeric stream feeding an aggregate.

        Referenced cells/ranges contribute plain numbers only (text,
        booleans, empties skipped); typed arguments coerce, except that
        COUNT just declines to count a non-numeric typed argument.
        """
        out: list[float] = []
        for arg in args:
            if isinstance(arg, RangeRef):
                for v in self.iter_range(arg, host):
                    if isinstance(v, float) and not isinstance(v, bool):
                        out.append(v)
                continue
            if isinstance(arg, CellRef):
                v = self.resolve_cell(arg, host)
                if isinstance(v, float) and not isinstance(v, bool):
                    out.append(v)
                continue
            v = self.eval_scalar(arg, host)
            if counting:
                if isinstance(v, ErrorValue):
                    raise _Err(v)
                coerced = _soft_number(v)
                if coerced is not None:
                    out.append(coerced)
                continue
            out.append(self.as_number(v))
        return out

    def eval_aggregate(self, name: str, args: tuple[Expr, ...],
                       host: CellAddress) -> Value:
        nums = self.gather(args, host, counting=(name == "COUNT"))
        if name == "COUNT":
            return float(len(nums))
        if name == "SUM":
            return math.fsum(nums)
        if name == "AVERAGE":
            if not nums:
                raise _Err(DIV0)
            return math.fsum(nums) / len(nums)
        if name == "MIN":
            return min(nums) if nums else 0.0
        if name == "MAX":
            return max(nums) if nums else 0.0
        raise TypeError(f"unknown aggregate {name!r}")


def _zero_like(v: Value) -> Value:
    if isinstance(v, bool):
        return False
    if isinstance(v, float):
        return 0.0
    return ""


def _type_rank(v: Value) -> int:
    if isinstance(v, bool):
        return 2
    if isinstance(v, float):
        return 0
    return 1


def _soft_number(v: Value | None) -> float | None:
    if isinstance(v, bool):
        return 1.0 if v else 0.0
    if isinstance(v, float):
        return v
    if isinstance(v, str):
        return parse_numeric_text(v)
    return None


def _round_half_away(x: float, digits: int) -> float:
    digits = max(-400, min(400, digits))
    with localcontext() as ctx:
        ctx.prec = 800  # widest float spans ~725 digits against the quantum
        q = Decimal(1).scaleb(-digits)
        return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


# --- dependency ordering -----------------------------------------------------


def _formula_precedents(
    ast: FormulaAst, wb: Workbook, indexes: dict[str, _SheetIndex],
    formula_set: set[CellAddress],
) -> set[CellAddress]:
    """Formula-cell precedents only; constants are preloaded so ordering
    never needs them, and empty cells cannot be formulas."""
    out: set[CellAddress] = set()

    def visit(node: Expr) -> None:
        if isinstance(node, CellRef):
            sheet = node.sheet if node.sheet is not None else ast.host.sheet
            addr = CellAddress(sheet, node.row, node.col)
            if addr in formula_set:
                out.add(addr)
        elif isinstance(node, RangeRef):
            sheet = node.sheet if node.sheet is not None else ast.host.sheet
            index = indexes.get(sheet)
            if index is None:
                return
            for row, col in index.iter_box(node.r1, node.c1, node.r2, node.c2):
                addr = CellAddress(sheet, row, col)
                if addr in formula_set:
                    out.add(addr)
        elif isinstance(node, UnaryOp):
            visit(node.operand)
        elif isinstance(node, BinaryOp):
            visit(node.left)
            visit(node.right)
        elif isinstance(node, FunctionCall):
            for a in node.args:
                visit(a)

    visit(ast.root)
    return out




def cycle_cells(wb: Workbook,
                asts: dict[CellAddress, FormulaAst] | None = None) -> list[list[CellAddress]]:
    """Reference cycles among formula cells, each component sorted."""
    if asts is None:
        asts = parse_workbook_formulas(wb)
    indexes = {s.name: _SheetIndex(s.name, s.cells) for s in wb.sheets}
    formula_set = set(asts)
    adj = {
        addr: _formula_precedents(ast, wb, indexes, formula_set)
        for addr, ast in asts.items()
    }
    nodes = sorted(formula_set, key=_addr_key)
    out = []
    for comp in _tarjan_sccs(nodes, adj):
        if len(comp) > 1 or (comp[0] in adj.get(comp[0], ())):
            out.append(sorted(comp, key=_addr_key))
    out.sort(key=lambda comp: _addr_key(comp[0]))
    return out


def evaluate(
    wb: Workbook,
    overrides: dict[CellAddress, Constant] | None = None,
    asts: dict[CellAddress, FormulaAst] | None = None,
) -> dict[CellAddress, Value]:
    """Evaluate every non-empty cell to a Value.

    overrides replace cell content with constants for this evaluation (the
    recheck path); overridden formula cells are treated as constants. Same
    workbook, same overrides: same values, always.
    """
    overrides = overrides or {}
    if asts is None:
        asts = parse_workbook_formulas(wb)
    asts = {a: t for a, t in asts.items() if a not in overrides}

    indexes = {s.name: _SheetIndex(s.name, s.cells) for s in wb.sheets}
    values: dict[CellAddress, Value] = {}
    for addr, content in wb.iter_cells():
        if addr in overrides:
            override_content = CellContent(value=overrides[addr],
                                           number_format=content.number_format)
            values[addr] = effective_constant(override_content)
        elif not content.is_formula:
            values[addr] = effective_constant(content)

    formula_set = set(asts)
    adj = {
        addr: _formula_precedents(ast, wb, indexes, formula_set)
        for addr, ast in asts.items()
    }

    in_cycle: set[CellAddress] = set()
    for comp in _tarjan_sccs(sorted(formula_set, key=_addr_key), adj):
        if len(comp) > 1 or comp[0] in adj.get(comp[0], ()):
            in_cycle.update(comp)
    for addr in in_cycle:
        values[addr] = CYCLE_ERR

    # Kahn order over the acyclic remainder; cycle cells already resolved.
    live = formula_set - in_cycle
    indeg = {addr: 0 for addr in live}
    dependents: dict[CellAddress, list[CellAddress]] = {addr: [] for addr in live}
    for addr in live:
        for prec in adj[addr]:
            if prec in live:
                indeg[addr] += 1
                dependents[prec].append(addr)
    queue = [addr for addr in sorted(live, key=_addr_key) if indeg[addr] == 0]
    ev = _Evaluator(wb, values, indexes)
    pos = 0
    while pos < len(queue):
        addr = queue[pos]
        pos += 1
        try:
            v: Value = ev.eval(asts[addr].root, addr)
        except _Err as err:
            v = err.error
        values[addr] = v
        for dep in dependents[addr]:
            indeg[dep] -= 1
            if indeg[dep] == 0:
                queue.append(dep)
    # Anything not drained depends on a cycle through live edges only; with
    # cycle cells resolved first that cannot happen.
    assert pos == len(queue) == len(live), "topological order did not drain"
    return values


# --- snapshot / recheck ------------------------------------------------------

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Snapshot:
    """Frozen inputs and expected outputs for regression rechecks."""

    workbook_name: str
    created_at: str
    inputs: dict[str, Constant]   # qualified address -> raw constant
    outputs: dict[str, Constant]  # qualified address -> evaluated value


@dataclass(frozen=True)
class Mismatch:
    address: str
    expected: Constant
    actual: Value | None


@dataclass(frozen=True)
class RecheckReport:
    matches: tuple[str, ...]
    mismatches: tuple[Mismatch, ...]
    missing_outputs: tuple[str, ...]

    @property
    def mismatch_count(self) -> int:
        # A deleted output is as much a regression as a changed one.
        return len(self.mismatches) + len(self.missing_outputs)

    @property
    def ok(self) -> bool:
        return self.mismatch_count == 0


def snapshot(wb: Workbook, created_at: str | None = None) -> Snapshot:
    """Freeze all constant cells and the evaluated declared outputs."""
    if not wb.meta.outputs:
        raise NoDeclaredOutputs(f"workbook {wb.name!r} declares no outputs")
    values = evaluate(wb)
    outputs: dict[str, Constant] = {}
    for qualified in wb.meta.outputs:
        addr = parse_qualified(qualified)
        v = values[addr]
        if isinstance(v, ErrorValue):
            raise OutputIsError(f"output {qualified} evaluates to {v.code}")
        outputs[qualified] = v
    inputs: dict[str, Constant] = {}
    for addr, content in wb.iter_cells():
        if not content.is_formula:
            inputs[addr.qualified] = content.value  # type: ignore[assignment]
    return Snapshot(
        workbook_name=wb.name,
        created_at=created_at or datetime.datetime.now().isoformat(timespec="seconds"),
        inputs=inputs,
        outputs=outputs,
    )


REL_TOL = 1e-9
ABS_TOL = 1e-12


def values_match(expected: Constant, actual: Value | None,
                 rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> bool:
    """Numeric closeness for numbers, exactness for text and booleans."""
    if isinstance(expected, bool) or isinstance(actual, bool):
        return expected is actual if isinstance(actual, bool) else False
    if isinstance(expected, float) and isinstance(actual, float):
        return abs(expected - actual) <= max(abs_tol, rel_tol * max(abs(expected), abs(actual)))
    return type(expected) is type(actual) and expected == actual


def recheck(wb: Workbook, snap: Snapshot,
            rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> RecheckReport:
    """Re-apply snapshot inputs, re-evaluate, compare declared outputs."""
    overrides: dict[CellAddress, Constant] = {}
    for qualified, constant in snap.inputs.items():
        addr = parse_qualified(qualified)
        if wb.cell(addr) is None:
            raise MissingInputCell(f"snapshot input {qualified} is missing from the workbook")
        overrides[addr] = constant
    values = evaluate(wb, overrides=overrides)
    matches: list[str] = []
    mismatches: list[Mismatch] = []
    missing: list[str] = []
    for qualified in sorted(snap.outputs):
        expected = snap.outputs[qualified]
        addr = parse_qualified(qualified)
        if wb.cell(addr) is None:
            missing.append(qualified)
            continue
        actual = values.get(addr)
        if values_match(expected, actual, rel_tol, abs_tol):
            matches.append(qualified)
        else:
            mismatches.append(Mismatch(qualified, expected, actual))
    return RecheckReport(tuple(matches), tuple(mismatches), tuple(missing))


def snapshot_to_json(snap: Snapshot) -> str:
    doc = {
        "version": SNAPSHOT_VERSION,
        "workbook": snap.workbook_name,
        "createdAt": snap.created_at,
        "inputs": {k: value_to_json(v) for k, v in sorted(snap.inputs.items())},
        "outputs": {k: value_to_json(v) for k, v in sorted(snap.outputs.items())},
    }
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def parse_snapshot(text: str | bytes) -> Snapshot:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"snapshot is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("version") != SNAPSHOT_VERSION:
        raise MalformedDocument("unsupported snapshot document")
    name = doc.get("workbook")
    created = doc.get("createdAt")
    if not isinstance(name, str) or not isinstance(created, str):
        raise MalformedDocument("snapshot missing workbook/createdAt")

    def load_constants(key: str) -> dict[str, Constant]:
        raw = doc.get(key)
        if not isinstance(raw, dict):
            raise MalformedDocument(f"snapshot {key} must be an object")
        out: dict[str, Constant] = {}
        for addr, v in raw.items():
            parse_qualified(addr)
            loaded = value_from_json(v)
            if isinstance(loaded, ErrorValue):
                raise MalformedDocument(f"snapshot {key} may not hold errors: {addr}")
            out[addr] = loaded
        return out

    return Snapshot(name, created, load_constants("inputs"), load_constants("outputs"))
