"""Abductive search for dark vessels over an annotated temporal logic program."""

from .logic import (
    BOTTOM,
    TRUE,
    After,
    GroundAtom,
    Inconsistent,
    Interpretation,
    Interval,
    Literal,
    Program,
    Rule,
    TemporalFact,
    combine,
    gamma_step,
    minimal_model,
    parsimony,
    satisfies,
)

__version__ = "0.1.0"

__all__ = [
    "BOTTOM",
    "TRUE",
    "After",
    "GroundAtom",
    "Inconsistent",
    "Interpretation",
    "Interval",
    "Literal",
    "Program",
    "Rule",
    "TemporalFact",
    "combine",
    "gamma_step",
    "minimal_model",
    "parsimony",
    "satisfies",
]
