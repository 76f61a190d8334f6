"""The observed process: parser, terms, constraints, and the rule machine."""

from .machine import (
    Engine,
    EngineError,
    NoRuleApplicable,
    NotAtBoundary,
    OsRule,
    RunResult,
    TraceSink,
    run,
)
from .program import BUILTINS, Clause, ParseError, Program, load_program, parse_term
from .terms import render

__all__ = [
    "BUILTINS",
    "Clause",
    "Engine",
    "EngineError",
    "NoRuleApplicable",
    "NotAtBoundary",
    "OsRule",
    "ParseError",
    "Program",
    "RunResult",
    "TraceSink",
    "load_program",
    "parse_term",
    "render",
    "run",
]
