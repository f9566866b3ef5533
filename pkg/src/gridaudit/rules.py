"""Mechanical audit rules.

Every enabled rule sweeps every cell; the report carries per-rule examined
counters against the workbook cell count so sampling shortcuts are
impossible to hide. A crashing rule becomes an INTERNAL_ERROR finding (and,
for setup crashes, a coverage shortfall) rather than a silent skip.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Callable

from .engine import evaluate, parse_numeric_text
from .errors import InvalidConfig
from .formula import (
    AGGREGATE_FUNCTIONS,
    CellRef,
    FormulaAst,
    FormulaMetrics,
    FunctionCall,
    NormalizedFormula,
    RangeRef,
    _walk,
    canonical_number,
    metrics,
    normalize,
    parse_workbook_formulas,
)
from .graph import DepGraph, orphan_formulas
from .model import (
    CellAddress,
    CellContent,
    Workbook,
    col_to_letters,
    parse_cell_key,
    parse_qualified,
)

SEVERITIES = ("error", "warning", "info")
CLASSES = ("honest-error", "fraud-indicator", "control-gap")

INTERNAL_ERROR = "INTERNAL_ERROR"

# ruleId -> (default severity, class); order here is the tiebreak order.
RULE_TABLE: dict[str, tuple[str, str]] = {
    "NUM_AS_TEXT": ("error", "fraud-indicator"),
    "HARDWIRED": ("error", "fraud-indicator"),
    "JAMMED": ("warning", "honest-error"),
    "DUP_LITERAL": ("warning", "honest-error"),
    "LONG_FORMULA": ("warning", "honest-error"),
    "LONG_ARC": ("warning", "honest-error"),
    "XSHEET_REF": ("info", "honest-error"),
    "ORPHAN_OUTPUT": ("warning", "honest-error"),
    "FLOW_VIOLATION": ("info", "honest-error"),
    "UNPROTECTED_FORMULA": ("warning", "control-gap"),
    "VERSION_NAME": ("info", "control-gap"),
}

RULE_IDS = tuple(RULE_TABLE)


@dataclass(frozen=True)
class Finding:
    """One rule hit; location None means the finding is workbook-level."""

    rule_id: str
    severity: str
    category: str
    location: CellAddress | None
    message: str
    evidence: dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        return {
            "ruleId": self.rule_id,
            "severity": self.severity,
            "class": self.category,
            "location": None if self.location is None else self.location.qualified,
            "message": self.message,
            "evidence": dict(self.evidence),
        }


def finding_from_dict(d: dict[str, object]) -> Finding:
    loc = d["location"]
    return Finding(
        rule_id=str(d["ruleId"]),
        severity=str(d["severity"]),
        category=str(d["class"]),
        location=None if loc is None else parse_qualified(str(loc)),
        message=str(d["message"]),
        evidence=dict(d.get("evidence", {})),  # type: ignore[arg-type]
    )


@dataclass(frozen=True)
class RuleConfig:
    """Which rules run, their thresholds, and per-site suppressions.

    Suppression locations are canonical qualified addresses; "*" suppresses
    a workbook-level finding. INTERNAL_ERROR cannot be configured away.
    """

    enabled: frozenset[str] = frozenset(RULE_IDS)
    long_formula_tokens: int = 10
    long_arc_distance: int = 25
    dup_literal_min_magnitude: float = 2.0
    dup_literal_exclusions: frozenset[float] = frozenset({0.0, 1.0})
    min_run_length_for_hardwire: int = 3
    severity_overrides: tuple[tuple[str, str], ...] = ()
    suppressions: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        for rid in self.enabled:
            if rid not in RULE_TABLE:
                raise InvalidConfig(f"unknown rule {rid!r}")
        for name in ("long_formula_tokens", "long_arc_distance",
                     "dup_literal_min_magnitude", "min_run_length_for_hardwire"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        for rid, sev in self.severity_overrides:
            if rid not in RULE_TABLE:
                raise InvalidConfig(f"severity override for unknown rule {rid!r}")
            if sev not in SEVERITIES:
                raise InvalidConfig(f"unknown severity {sev!r}")
        for loc, rid in self.suppressions:
            if rid not in RULE_TABLE:
                raise InvalidConfig(f"suppression for unknown rule {rid!r}")
            if loc != "*":
                parse_qualified(loc)


def rule_config_from_dict(d: dict[str, object]) -> RuleConfig:
    """Build a RuleConfig from its file form; unknown keys are errors."""
    known = {"enabled", "thresholds", "severityOverrides", "suppressions"}
    extra = set(d) - known
    if extra:
        raise InvalidConfig(f"unknown config keys: {sorted(extra)}")
    kwargs: dict[str, object] = {}
    if "enabled" in d:
        kwargs["enabled"] = frozenset(str(r) for r in d["enabled"])  # type: ignore[union-attr]
    thresholds = d.get("thresholds", {})
    if not isinstance(thresholds, dict):
        raise InvalidConfig("thresholds must be an object")
    mapping = {
        "longFormulaTokens": ("long_formula_tokens", int),
        "longArcDistance": ("long_arc_distance", int),
        "dupLiteralMinMagnitude": ("dup_literal_min_magnitude", float),
        "minRunLengthForHardwire": ("min_run_length_for_hardwire", int),
        "dupLiteralExclusions": None,
    }
    for key, value in thresholds.items():
        if key not in mapping:
            raise InvalidConfig(f"unknown threshold {key!r}")
        if key == "dupLiteralExclusions":
            kwargs["dup_literal_exclusions"] = frozenset(float(v) for v in value)
        else:
            attr, conv = mapping[key]
            kwargs[attr] = conv(value)
    overrides = d.get("severityOverrides", {})
    if not isinstance(overrides, dict):
        raise InvalidConfig("severityOverrides must be an object")
    kwargs["severity_overrides"] = tuple(sorted((str(k), str(v)) for k, v in overrides.items()))
    sups = []
    for entry in d.get("suppressions", ()):  # type: ignore[union-attr]
        text = str(entry)
        loc, sep, rid = text.rpartition(":")
        if not sep or not loc:
            raise InvalidConfig(f"suppression {text!r} is not 'location:RULE_ID'")
        if loc != "*":
            loc = parse_qualified(loc).qualified
        sups.append((loc, rid))
    kwargs["suppressions"] = tuple(sups)
    return RuleConfig(**kwargs)  # type: ignore[arg-type]


@dataclass(frozen=True)
class RulesReport:
    findings: tuple[Finding, ...]
    suppressed_count: int
    examined: dict[str, int]
    applicable: int
    enabled: tuple[str, ...]
    cross_sheet_total: int

    @property
    def coverage_ok(self) -> bool:
        return all(self.examined.get(r, 0) == self.applicable for r in self.enabled)

    @property
    def fraud_indicator_count(self) -> int:
        return sum(1 for f in self.findings if f.category == "fraud-indicator")

    def severity_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SEVERITIES}
        for f in self.findings:
            counts[f.severity] += 1
        return counts


def _mk(rule_id: str, location: CellAddress | None, message: str,
        evidence: dict[str, object]) -> Finding:
    severity, category = RULE_TABLE[rule_id]
    return Finding(rule_id, severity, category, location, message, evidence)


def _internal(rule_id: str, location: CellAddress | None, exc: Exception) -> Finding:
    return Finding(INTERNAL_ERROR, "error", "honest-error", location,
                   f"rule {rule_id} crashed: {exc}",
                   {"rule": rule_id, "error": repr(exc)})


def _const_repr(value: object) -> str:
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, float):
        return canonical_number(value)
    return str(value)


# --- Rule preparation ------------------------------------------------------


def _textual_number(cell: CellContent) -> float | None:
    """The numeric value a text-behaving cell would carry if coerced."""
    if cell.formula is not None:
        return None
    if isinstance(cell.value, str):
        return parse_numeric_text(cell.value)
    if isinstance(cell.value, float) and cell.number_format == "text":
        return cell.value
    return None


def _aggregate_ranges(ast: FormulaAst) -> list[RangeRef]:
    found: list[RangeRef] = []

    def go(node, inside: bool) -> None:
        if isinstance(node, RangeRef):
            if inside:
                found.append(node)
            return
        if isinstance(node, FunctionCall):
            inner = inside or node.name in AGGREGATE_FUNCTIONS
            for arg in node.args:
                go(arg, inner)
        elif hasattr(node, "operand"):
            go(node.operand, inside)
        elif hasattr(node, "left"):
            go(node.left, inside)
            go(node.right, inside)

    go(ast.root, False)
    return found


def _num_as_text_findings(wb: Workbook,
                          asts: dict[CellAddress, FormulaAst]) -> dict[CellAddress, Finding]:
    candidates = [(addr, cell, coerced)
                  for addr, cell in wb.iter_cells()
                  if (coerced := _textual_number(cell)) is not None]
    if not candidates:
        return {}
    spans: list[tuple[CellAddress, str, int, int, int, int]] = []
    for host, ast in asts.items():
        for rng in _aggregate_ranges(ast):
            sheet = rng.sheet if rng.sheet is not None else host.sheet
            spans.append((host, sheet, rng.r1, rng.c1, rng.r2, rng.c2))

    base: dict[CellAddress, object] | None = None
    out: dict[CellAddress, Finding] = {}
    for addr, cell, coerced in candidates:
        hosts = sorted(
            {h for h, sheet, r1, c1, r2, c2 in spans
             if sheet == addr.sheet and r1 <= addr.row <= r2 and c1 <= addr.col <= c2},
            key=lambda a: (wb.sheet_index(a.sheet), a.row, a.col))
        if hosts:
            if base is None:
                base = evaluate(wb, asts=asts)
            patched = wb.replace_cell(addr, CellContent(value=coerced, locked=cell.locked))
            coerced_vals = evaluate(patched, asts=asts)
            understatement = 0.0
            for h in hosts:
                before, after = base.get(h), coerced_vals.get(h)
                if isinstance(before, float) and isinstance(after, float):
                    understatement += after - before
            out[addr] = _mk(
                "NUM_AS_TEXT", addr,
                f"text {cell.value!r} is numeric but invisible to aggregation",
                {"coercedValue": coerced,
                 "aggregates": [h.qualified for h in hosts],
                 "understatement": understatement})
        else:
            neighbors = 0
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                r, c = addr.row + dr, addr.col + dc
                if r < 1 or c < 1:
                    continue
                near = CellAddress(addr.sheet, r, c)
                if not near.in_bounds():
                    continue
                other = wb.cell(near)
                if other is not None and other.is_number:
                    neighbors += 1
            if neighbors >= 2:
                out[addr] = _mk(
                    "NUM_AS_TEXT", addr,
                    f"text {cell.value!r} is numeric amid numeric neighbors",
                    {"coercedValue": coerced, "aggregates": [],
                     "understatement": 0.0, "numericNeighbors": neighbors})
    return out


def _scan_run(entries: list[tuple[CellAddress, CellContent]],
              norm_text: dict[CellAddress, str], min_run: int,
              out: dict[CellAddress, Finding]) -> None:
    """Flag constants strictly inside a run of >= min_run same-form formulas."""
    i, n = 0, len(entries)
    while i < n:
        form = norm_text.get(entries[i][0])
        if form is None:
            i += 1
            continue
        last_formula = i
        j = i
        while j + 1 < n:
            nxt = norm_text.get(entries[j + 1][0])
            if nxt is not None and nxt != form:
                break
            j += 1
            if nxt == form:
                last_formula = j
        count = sum(1 for k in range(i, last_formula + 1)
                    if norm_text.get(entries[k][0]) == form)
        if count >= min_run:
            for k in range(i + 1, last_formula):
                addr, cell = entries[k]
                if norm_text.get(addr) is None:
                    out.setdefault(addr, _mk(
                        "HARDWIRED", addr,
                        f"constant {_const_repr(cell.value)} interrupts a formula run",
                        {"normalForm": form, "value": _const_repr(cell.value)}))
        i = last_formula + 1 if last_formula > i else i + 1


def _hardwired_findings(wb: Workbook, norm_map: dict[CellAddress, NormalizedFormula],
                        min_run: int) -> dict[CellAddress, Finding]:
    norm_text = {addr: nf.text for addr, nf in norm_map.items()}
    out: dict[CellAddress, Finding] = {}
    for sheet in wb.sheets:
        cells = {parse_cell_key(key): content for key, content in sheet.cells.items()}
        rows: dict[int, list[int]] = {}
        cols: dict[int, list[int]] = {}
        for r, c in cells:
            rows.setdefault(r, []).append(c)
            cols.setdefault(c, []).append(r)
        for r, cs in sorted(rows.items()):
            cs.sort()
            block: list[tuple[CellAddress, CellContent]] = []
            prev = None
            for c in cs:
                if prev is not None and c != prev + 1:
                    _scan_run(block, norm_text, min_run, out)
                    block = []
                block.append((CellAddress(sheet.name, r, c), cells[(r, c)]))
                prev = c
            _scan_run(block, norm_text, min_run, out)
        for c, rs in sorted(cols.items()):
            rs.sort()
            block = []
            prev = None
            for r in rs:
                if prev is not None and r != prev + 1:
                    _scan_run(block, norm_text, min_run, out)
                    block = []
                block.append((CellAddress(sheet.name, r, c), cells[(r, c)]))
                prev = r
            _scan_run(block, norm_text, min_run, out)
    return out


def _dup_literal_findings(wb: Workbook, norm_map: dict[CellAddress, NormalizedFormula],
                          cfg: RuleConfig) -> dict[CellAddress, list[Finding]]:
    out: dict[CellAddress, list[Finding]] = {}
    for sheet in wb.sheets:
        occurrences: dict[float, set[CellAddress]] = {}
        for key, cell in sheet.cells.items():
            r, c = parse_cell_key(key)
            addr = CellAddress(sheet.name, r, c)
            if cell.is_number:
                occurrences.setdefault(cell.value, set()).add(addr)  # type: ignore[arg-type]
            elif cell.is_formula:
                for lit in norm_map[addr].literals:
                    occurrences.setdefault(lit, set()).add(addr)
        for value in sorted(occurrences):
            if value in cfg.dup_literal_exclusions:
                continue
            if abs(value) < cfg.dup_literal_min_magnitude:
                continue
            addrs = sorted(occurrences[value], key=lambda a: (a.row, a.col))
            if len(addrs) < 2:
                continue
            qualified = [a.qualified for a in addrs]
            for addr in addrs:
                out.setdefault(addr, []).append(_mk(
                    "DUP_LITERAL", addr,
                    f"literal {canonical_number(value)} is typed in {len(addrs)} cells",
                    {"value": canonical_number(value), "occurrences": qualified}))
    return out


def _version_name_finding(wb: Workbook) -> Finding | None:
    name = wb.name
    has_version = re.search(r"(?<![A-Za-z0-9])[vV][0-9]+", name) is not None
    date_match = re.search(r"[0-9]{4}-[0-9]{2}-[0-9]{2}", name)
    expected = wb.meta.modified_date.isoformat()
    problems = []
    if not has_version:
        problems.append("no version token")
    if date_match is None:
        problems.append("no date token")
    elif date_match.group(0) != expected:
        problems.append(f"date token {date_match.group(0)} != modified {expected}")
    if not problems:
        return None
    return _mk("VERSION_NAME", None,
               "workbook name does not carry its version and modification date: "
               + "; ".join(problems),
               {"name": name,
                "hasVersionToken": has_version,
                "dateToken": None if date_match is None else date_match.group(0),
                "modifiedDate": expected})


def _flow_offenders(ast: FormulaAst) -> list[str]:
    host = ast.host
    bad: list[str] = []
    for node in _walk(ast.root):
        if isinstance(node, CellRef) and node.sheet is None:
            if node.row > host.row or (node.row == host.row and node.col > host.col):
                bad.append(f"{col_to_letters(node.col)}{node.row}")
        elif isinstance(node, RangeRef) and node.sheet is None:
            below = node.r2 > host.row
            rightward = node.r1 <= host.row <= node.r2 and node.c2 > host.col
            if below or rightward:
                bad.append(f"{col_to_letters(node.c1)}{node.r1}"
                           f":{col_to_letters(node.c2)}{node.r2}")
    return bad


# --- Runner ----------------------------------------------------------------


def run_rules(wb: Workbook, g: DepGraph, cfg: RuleConfig | None = None,
              asts: dict[CellAddress, FormulaAst] | None = None) -> RulesReport:
    cfg = RuleConfig() if cfg is None else cfg
    if asts is None:
        asts = parse_workbook_formulas(wb)
    norm_map = {addr: normalize(ast) for addr, ast in asts.items()}
    met_map = {addr: metrics(ast) for addr, ast in asts.items()}
    cross_sheet_total = sum(m.cross_sheet_ref_count for m in met_map.values())
    enabled = tuple(r for r in RULE_IDS if r in cfg.enabled)

    dead: dict[str, Finding] = {}

    def prepared(rule_id: str, build: Callable[[], object], fallback: object) -> object:
        if rule_id not in enabled:
            return fallback
        try:
            return build()
        except Exception as exc:  # report and leave the coverage gap visible
            dead[rule_id] = _internal(rule_id, None, exc)
            return fallback

    num_as_text = prepared("NUM_AS_TEXT", lambda: _num_as_text_findings(wb, asts), {})
    hardwired = prepared(
        "HARDWIRED",
        lambda: _hardwired_findings(wb, norm_map, cfg.min_run_length_for_hardwire), {})
    dup_literal = prepared("DUP_LITERAL", lambda: _dup_literal_findings(wb, norm_map, cfg), {})
    orphans = prepared("ORPHAN_OUTPUT", lambda: frozenset(orphan_formulas(g)), frozenset())
    version_finding = prepared("VERSION_NAME", lambda: _version_name_finding(wb), None)

    protection_on = wb.meta.protection_enabled

    def check_jammed(addr: CellAddress, cell: CellContent):
        nf = norm_map.get(addr)
        if nf is not None and len(nf.literals) >= 2:
            return _mk("JAMMED", addr,
                       f"formula embeds {len(nf.literals)} literals",
                       {"literals": [canonical_number(v) for v in nf.literals]})
        return None

    def check_long_formula(addr: CellAddress, cell: CellContent):
        m = met_map.get(addr)
        if m is not None and m.token_count > cfg.long_formula_tokens:
            return _mk("LONG_FORMULA", addr,
                       f"{m.token_count} tokens exceeds the {cfg.long_formula_tokens} limit",
                       {"tokenCount": m.token_count, "threshold": cfg.long_formula_tokens})
        return None

    def check_long_arc(addr: CellAddress, cell: CellContent):
        m = met_map.get(addr)
        if m is not None and m.max_ref_distance > cfg.long_arc_distance:
            off_axis = m.off_axis_ref_count > 0
            return _mk("LONG_ARC", addr,
                       f"reference arc of {m.max_ref_distance} cells"
                       + (" crosses rows and columns" if off_axis else ""),
                       {"maxRefDistance": m.max_ref_distance,
                        "threshold": cfg.long_arc_distance,
                        "offAxis": off_axis,
                        "offAxisRefCount": m.off_axis_ref_count})
        return None

    def check_xsheet(addr: CellAddress, cell: CellContent):
        m = met_map.get(addr)
        if m is not None and m.cross_sheet_ref_count > 0:
            sheets = sorted({node.sheet for node in _walk(asts[addr].root)
                             if isinstance(node, (CellRef, RangeRef))
                             and node.sheet is not None})
            return _mk("XSHEET_REF", addr,
                       f"{m.cross_sheet_ref_count} cross-sheet reference(s)",
                       {"count": m.cross_sheet_ref_count, "sheets": sheets})
        return None

    def check_flow(addr: CellAddress, cell: CellContent):
        ast = asts.get(addr)
        if ast is None:
            return None
        offenders = _flow_offenders(ast)
        if offenders:
            return _mk("FLOW_VIOLATION", addr,
                       "reads cells below or to the right of itself",
                       {"references": offenders})
        return None

    def check_unprotected(addr: CellAddress, cell: CellContent):
        if cell.is_formula and not cell.locked:
            f = _mk("UNPROTECTED_FORMULA", addr,
                    "formula cell is not locked against edits",
                    {"protectionEnabled": protection_on})
            if not protection_on:
                f = dataclasses.replace(f, severity="error")
            return f
        return None

    checkers: dict[str, Callable[[CellAddress, CellContent], object]] = {
        "NUM_AS_TEXT": lambda addr, cell: num_as_text.get(addr),
        "HARDWIRED": lambda addr, cell: hardwired.get(addr),
        "JAMMED": check_jammed,
        "DUP_LITERAL": lambda addr, cell: dup_literal.get(addr),
        "LONG_FORMULA": check_long_formula,
        "LONG_ARC": check_long_arc,
        "XSHEET_REF": check_xsheet,
        "ORPHAN_OUTPUT": lambda addr, cell: (
            _mk("ORPHAN_OUTPUT", addr,
                "terminal formula is not a declared output",
                {"dependents": 0}) if addr in orphans else None),
        "FLOW_VIOLATION": check_flow,
        "UNPROTECTED_FORMULA": check_unprotected,
        "VERSION_NAME": lambda addr, cell: None,
    }

    findings: list[Finding] = list(dead.values())
    if version_finding is not None:
        findings.append(version_finding)
    examined = {rid: 0 for rid in enabled}
    for addr, cell in wb.iter_cells():
        for rid in enabled:
            if rid in dead:
                continue
            examined[rid] += 1
            try:
                hit = checkers[rid](addr, cell)
            except Exception as exc:
                findings.append(_internal(rid, addr, exc))
                continue
            if hit is None:
                continue
            if isinstance(hit, Finding):
                findings.append(hit)
            else:
                findings.extend(hit)

    overrides = dict(cfg.severity_overrides)
    if overrides:
        findings = [f if f.rule_id not in overrides
                    else dataclasses.replace(f, severity=overrides[f.rule_id])
                    for f in findings]

    suppress = set(cfg.suppressions)
    kept: list[Finding] = []
    suppressed = 0
    for f in findings:
        key = "*" if f.location is None else f.location.qualified
        if (key, f.rule_id) in suppress:
            suppressed += 1
        else:
            kept.append(f)

    def order(f: Finding):
        if f.location is None:
            return (0, 0, 0, 0, f.rule_id)
        return (1, wb.sheet_index(f.location.sheet), f.location.row,
                f.location.col, f.rule_id)

    kept.sort(key=order)
    return RulesReport(findings=tuple(kept), suppressed_count=suppressed,
                       examined=examined, applicable=wb.total_cell_count,
                       enabled=enabled, cross_sheet_total=cross_sheet_total)
