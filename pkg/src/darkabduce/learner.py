"""Behavioral rule learner: label-transition counting and confidence-annotated rules."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .logic import MULTI, NORMAL, SINGLE, TRUE, After, GroundAtom, Interval, Literal, Rule
from .syntax import format_program
from .trajectories import TimeBinning, to_label_sequence, to_region_sequence

log = logging.getLogger(__name__)

VARIABLE = "AGT"


@dataclass
class TransitionCounts:
    unary: Counter = field(default_factory=Counter)
    pairs: Counter = field(default_factory=Counter)

    def __add__(self, other: "TransitionCounts") -> "TransitionCounts":
        return TransitionCounts(self.unary + other.unary, self.pairs + other.pairs)

    def scaled(self, k: int) -> "TransitionCounts":
        return TransitionCounts(
            Counter({m: n * k for m, n in self.unary.items()}), Counter({m: n * k for m, n in self.pairs.items()})
        )


def count_transitions(label_seqs: Iterable[Sequence], hop: str = SINGLE, max_hops: int | None = None) -> TransitionCounts:
    """Count labels and label pairs over consecutive entries of each sequence.

    Every step ``(n-1, n)`` increments the unary count of each label on both
    sides, so interior entries are counted twice. Multi-hop additionally
    pairs every earlier entry ``m < n-1`` (within ``max_hops`` if given)
    with entry ``n``.
    """
    if hop not in (SINGLE, MULTI):
        raise ValueError(f"unknown hop {hop!r}")
    counts = TransitionCounts()
    unary, pairs = counts.unary, counts.pairs
    for seq in label_seqs:
        sets = [labels for _, labels in seq]
        for n in range(1, len(sets)):
            prev, cur = sets[n - 1], sets[n]
            for m in prev:
                unary[m] += 1
            for m in cur:
                unary[m] += 1
            for a in prev:
                for b in cur:
                    pairs[(a, b)] += 1
            if hop == MULTI:
                lo = 0 if max_hops is None else max(0, n - max_hops)
                for m_idx in range(lo, n - 1):
                    for a in sets[m_idx]:
                        for b in cur:
                            pairs[(a, b)] += 1
    return counts


@dataclass(frozen=True)
class RuleProvenance:
    first: str
    second: str
    hop: str
    pair_count: int
    unary_count: int
    confidence: float
    clamped: bool


@dataclass
class LearnedRuleSet:
    rules: list
    hop: str
    provenance: dict = field(default_factory=dict)  # Rule -> RuleProvenance
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.rules)

    def confidences(self) -> dict:
        return {(p.first, p.second): p.confidence for p in self.provenance.values()}

    def to_text(self, header: Iterable[str] = ()) -> str:
        return format_program(self.rules, header=header)

    def write(self, rules_path, provenance_path, header: Iterable[str] = ()) -> None:
        with open(rules_path, "w") as fh:
            fh.write(self.to_text(header))
        with open(provenance_path, "w", newline="") as fh:
            for h in header:
                fh.write(f"# {h}\n")
            w = csv.writer(fh)
            w.writerow(["m0", "m1", "hop", "pair_count", "unary_count", "confidence", "clamped"])
            for r in self.rules:
                p = self.provenance[r]
                w.writerow([p.first, p.second, p.hop, p.pair_count, p.unary_count, repr(p.confidence),
                            int(p.clamped)])


def transition_rule(first: str, second: str, confidence: float, hop: str) -> Rule:
    """``normal(AGT):[c,1] <- first(AGT) & second(AGT) & AFTER(second, first)``."""
    var = VARIABLE
    return Rule(
        GroundAtom(NORMAL, (var,)),
        Interval(confidence, 1.0),
        (
            Literal(GroundAtom(first, (var,)), TRUE),
            Literal(GroundAtom(second, (var,)), TRUE),
            After(second, first, TRUE, hop),
        ),
    )


def emit_rules(counts: TransitionCounts, hop: str = SINGLE, min_support: int = 2,
               min_confidence: float = 0.05) -> LearnedRuleSet:
    if min_support < 1:
        raise ValueError("min_support must be at least 1")
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError("min_confidence must lie in [0,1]")
    out = LearnedRuleSet([], hop)
    for (m0, m1) in sorted(counts.pairs):
        n = counts.pairs[(m0, m1)]
        if n < min_support:
            continue
        denom = counts.unary.get(m0, 0)
        if denom == 0:
            out.skipped.append((m0, m1, "zero unary count"))
            log.warning("skipping pair (%s, %s): zero unary count", m0, m1)
            continue
        conf = n / denom
        clamped = conf > 1.0
        conf = min(conf, 1.0)
        if conf < min_confidence or conf <= 0.0:
            continue
        rule = transition_rule(m0, m1, conf, hop)
        out.rules.append(rule)
        out.provenance[rule] = RuleProvenance(m0, m1, hop, n, denom, conf, clamped)
    return out


def label_sequences(trajs, grid, bin_seconds: int = 3600) -> list:
    """Per-trajectory label sequences; each trajectory is binned from its first report."""
    out = []
    for traj in trajs:
        bins = TimeBinning(traj.points[0].timestamp, bin_seconds)
        out.append(to_label_sequence(to_region_sequence(traj, grid, bins), grid))
    return out


def learn(train, grid, bin_seconds: int = 3600, hop: str = SINGLE, min_support: int = 2,
          min_confidence: float = 0.05, max_hops: int | None = None) -> LearnedRuleSet:
    """Region projection, label lookup, transition counting and rule emission in one pass."""
    counts = count_transitions(label_sequences(train, grid, bin_seconds), hop, max_hops)
    return emit_rules(counts, hop, min_support, min_confidence)
