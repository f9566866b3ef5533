"""Spreadsheet audit toolkit.

Parses workbook documents, builds the cell dependency graph, runs the
error and fraud rule suite, prices the residual risk, and plans the
inspection and regression controls that keep it down.
"""

from .engine import evaluate, recheck, snapshot
from .graph import build_graph, chain_stats
from .model import Workbook, parse_workbook, serialize_workbook
from .risk import RiskParams, assess
from .rules import RuleConfig, run_rules

__version__ = "0.1.0"

__all__ = [
    "RiskParams",
    "RuleConfig",
    "Workbook",
    "__version__",
    "assess",
    "build_graph",
    "chain_stats",
    "evaluate",
    "parse_workbook",
    "recheck",
    "run_rules",
    "serialize_workbook",
    "snapshot",
]
