"""Text format for rules and facts.

One statement per line; ``#`` starts a comment::

    normal(AGT):[0.8,1] <- nearport(AGT):[1,1] & hotspot(AGT):[1,1] & AFTER(hotspot,nearport):[1,1] ; hop=multi
    at(v42, R_031_046):[1,1] @ 7

``←`` and ``∧`` are accepted in place of ``<-`` and ``&``, and AFTER
arguments may be written ``hotspot(AGT)``.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable

from .logic import (
    MULTI,
    SINGLE,
    After,
    GroundAtom,
    Interval,
    Literal,
    Program,
    Rule,
    TemporalFact,
)


class ParseError(ValueError):
    def __init__(self, message, line, column):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<arrow><-|←|:-)
  | (?P<num>[0-9]+(?:\.[0-9]*)?(?:[eE][-+]?[0-9]+)?|\.[0-9]+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.\-]*)
  | (?P<and>&|∧)
  | (?P<punct>[()\[\],:;@=])
    """,
    re.VERBOSE,
)


def _tokenize(text, lineno):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "punct":
                kind = value
            out.append((kind, value, pos + 1))
        pos = m.end()
    out.append(("end", "", len(text) + 1))
    return out


class _Parser:
    def __init__(self, text, lineno):
        self.toks = _tokenize(text, lineno)
        self.i = 0
        self.lineno = lineno

    def peek(self):
        return self.toks[self.i]

    def take(self, kind):
        tok = self.toks[self.i]
        if tok[0] != kind:
            shown = tok[1] or "end of line"
            raise ParseError(f"expected {kind!r}, found {shown!r}", self.lineno, tok[2])
        self.i += 1
        return tok

    def number(self):
        kind, value, col = self.take("num")
        x = float(value)
        if not 0.0 <= x <= 1.0:
            raise ParseError(f"annotation bound {value} outside [0,1]", self.lineno, col)
        return x

    def annotation(self):
        self.take(":")
        col = self.take("[")[2]
        lo = self.number()
        self.take(",")
        up = self.number()
        self.take("]")
        return Interval(lo, up), col

    def atom(self):
        kind, name, col = self.take("name")
        self.take("(")
        args = [self.take("name")[1]]
        while self.peek()[0] == ",":
            self.i += 1
            args.append(self.take("name")[1])
        self.take(")")
        try:
            return GroundAtom(name, tuple(args))
        except ValueError as e:
            raise ParseError(str(e), self.lineno, col) from None

    def after_arg(self):
        name = self.take("name")[1]
        if self.peek()[0] == "(":
            self.i += 1
            self.take("name")
            self.take(")")
        return name

    def body_element(self):
        kind, value, col = self.peek()
        if kind == "name" and value == "AFTER":
            self.i += 1
            self.take("(")
            first = self.after_arg()
            self.take(",")
            second = self.after_arg()
            self.take(")")
            ann, _ = self.annotation()
            try:
                return After(first, second, ann)
            except ValueError as e:
                raise ParseError(str(e), self.lineno, col) from None
        atom = self.atom()
        ann, _ = self.annotation()
        return Literal(atom, ann)

    def statement(self):
        head_col = self.peek()[2]
        head = self.atom()
        ann, ann_col = self.annotation()
        kind = self.peek()[0]
        if kind == "@":
            self.i += 1
            t = self.take("num")
            if not t[1].isdigit():
                raise ParseError("timestep must be a non-negative integer", self.lineno, t[2])
            self.take("end")
            if not ann.consistent:
                raise ParseError(f"inconsistent annotation {ann}", self.lineno, ann_col)
            return TemporalFact(head, ann, int(t[1]))
        self.take("arrow")
        body = [self.body_element()]
        while self.peek()[0] == "and":
            self.i += 1
            body.append(self.body_element())
        hop = SINGLE
        if self.peek()[0] == ";":
            self.i += 1
            key = self.take("name")
            if key[1] != "hop":
                raise ParseError(f"unknown rule option {key[1]!r}", self.lineno, key[2])
            self.take("=")
            val = self.take("name")
            if val[1] not in (SINGLE, MULTI):
                raise ParseError(f"hop must be single or multi, not {val[1]!r}", self.lineno, val[2])
            hop = val[1]
        self.take("end")
        body = [After(e.first, e.second, e.annotation, hop) if isinstance(e, After) else e for e in body]
        try:
            return Rule(head, ann, tuple(body))
        except ValueError as e:
            raise ParseError(str(e), self.lineno, head_col) from None


def parse_statement(text: str, lineno: int = 1):
    """Parse one rule or fact; returns a :class:`Rule` or :class:`TemporalFact`."""
    return _Parser(text, lineno).statement()


def parse_program(text: str, max_timestep: int | None = None) -> Program:
    facts, rules = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        st = parse_statement(line, lineno)
        (rules if isinstance(st, Rule) else facts).append(st)
    return Program(facts, rules, max_timestep=max_timestep)


def load_rules(path) -> list:
    return list(parse_program(Path(path).read_text()).rules)


def format_rule(rule: Rule) -> str:
    parts = []
    hops = set()
    for e in rule.body:
        if isinstance(e, After):
            parts.append(f"AFTER({e.first},{e.second}):{e.annotation}")
            hops.add(e.hop)
        else:
            parts.append(f"{_atom_text(e.atom)}:{e.annotation}")
    if len(hops) > 1:
        raise ValueError("rule mixes single- and multi-hop AFTER elements")
    text = f"{_atom_text(rule.head)}:{rule.head_annotation} <- " + " & ".join(parts)
    if hops:
        text += f" ; hop={hops.pop()}"
    return text


def format_fact(fact: TemporalFact) -> str:
    return f"{_atom_text(fact.atom)}:{fact.annotation} @ {fact.timestep}"


def _atom_text(atom: GroundAtom) -> str:
    return f"{atom.predicate}({', '.join(atom.args)})"


def format_program(rules: Iterable[Rule] = (), facts: Iterable[TemporalFact] = (), header: Iterable[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines += [format_rule(r) for r in rules]
    lines += [format_fact(f) for f in facts]
    return "\n".join(lines) + "\n"
