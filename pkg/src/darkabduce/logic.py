"""Annotated temporal logic kernel.

Truth values are sub-intervals ``[lower, upper]`` of ``[0, 1]``. The order is
containment: ``[a, b] <= [c, d]`` iff ``a <= c`` and ``d <= b``, so tighter
intervals sit higher and ``[0, 1]`` is the bottom element. Evidence for one
(atom, timestep) cell is aggregated by intersection (:func:`combine`).

Rules carry a single agent variable in the head (always ``normal``). Body
elements are annotated literals or ``AFTER(first, second)`` formulae, which
are witnessed through the agent's ``at`` facts and the feature facts of the
occupied regions.
"""

from __future__ import annotations

import threading
from collections import ChainMap
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Union

AT = "at"
NORMAL = "normal"
FEATURES = (
    "nearport",
    "hotspot",
    "high-speed",
    "low-speed",
    "change-direction",
    "stay",
    "ais-off",
    "draught",
)
SINGLE = "single"
MULTI = "multi"


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


@dataclass(frozen=True, slots=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        lo, up = float(self.lower), float(self.upper)
        if not (0.0 <= lo <= 1.0 and 0.0 <= up <= 1.0):
            raise ValueError(f"interval bounds outside [0,1]: [{lo},{up}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def consistent(self) -> bool:
        return self.lower <= self.upper

    def leq(self, other: "Interval") -> bool:
        """``self`` is below ``other`` in the lattice (other is contained in self)."""
        return self.lower <= other.lower and other.upper <= self.upper

    def __str__(self):
        return f"[{_num(self.lower)},{_num(self.upper)}]"


BOTTOM = Interval(0.0, 1.0)
TRUE = Interval(1.0, 1.0)


def combine(a: Interval, b: Interval) -> Interval:
    """Intersect two annotations. The result may be inconsistent."""
    if a is BOTTOM or a == b:
        return b
    if b is BOTTOM:
        return a
    return Interval(max(a.lower, b.lower), min(a.upper, b.upper))


@dataclass(frozen=True, slots=True)
class GroundAtom:
    predicate: str
    args: tuple

    def __post_init__(self):
        args = tuple(self.args)
        object.__setattr__(self, "args", args)
        arity = 2 if self.predicate == AT else 1
        if len(args) != arity:
            raise ValueError(f"{self.predicate} expects {arity} argument(s), got {len(args)}")

    def __str__(self):
        return f"{self.predicate}({', '.join(self.args)})"


def at(agent: str, region: str) -> GroundAtom:
    return GroundAtom(AT, (agent, region))


def feature(pred: str, region: str) -> GroundAtom:
    return GroundAtom(pred, (region,))


def normal(agent: str) -> GroundAtom:
    return GroundAtom(NORMAL, (agent,))


@dataclass(frozen=True, slots=True)
class TemporalFact:
    atom: GroundAtom
    annotation: Interval
    timestep: int

    def __post_init__(self):
        if not self.annotation.consistent:
            raise ValueError(f"inconsistent fact annotation {self.annotation}")
        if self.timestep < 0:
            raise ValueError("timestep must be non-negative")


@dataclass(frozen=True, slots=True)
class Literal:
    """Annotated atom in a rule body; its arguments may name the rule variable."""

    atom: GroundAtom
    annotation: Interval


@dataclass(frozen=True, slots=True)
class After:
    """``AFTER(first, second)``: ``first`` is exhibited at t, ``second`` at an earlier step."""

    first: str
    second: str
    annotation: Interval = TRUE
    hop: str = SINGLE

    def __post_init__(self):
        for p in (self.first, self.second):
            if p in (AT, NORMAL):
                raise ValueError("AFTER only relates feature predicates")
        if self.hop not in (SINGLE, MULTI):
            raise ValueError(f"unknown hop {self.hop!r}")


BodyElement = Union[Literal, After]


@dataclass(frozen=True, slots=True)
class Rule:
    head: GroundAtom
    head_annotation: Interval
    body: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        if self.head.predicate != NORMAL:
            raise ValueError("rule heads must use the normal predicate")
        if self.head_annotation.upper != 1.0:
            raise ValueError("rule head annotations must have upper bound 1")

    @property
    def variable(self) -> str:
        return self.head.args[0]

    @property
    def recursive(self) -> bool:
        return any(isinstance(e, Literal) and e.atom.predicate == NORMAL for e in self.body)


class Inconsistent(Exception):
    """Raised when some cell of the model would get ``lower > upper``."""

    def __init__(self, atom, timestep, contributions=()):
        self.atom = atom
        self.timestep = timestep
        self.contributions = tuple(contributions)
        parts = ", ".join(str(c) for c in self.contributions)
        super().__init__(f"inconsistent annotation for {atom} at t={timestep}: {parts}")


class NonConvergence(RuntimeError):
    pass


def _merge_into(table, key, value):
    cur = table.get(key)
    table[key] = value if cur is None else combine(cur, value)


class Program:
    """Immutable set of temporal facts and rules.

    ``persistent`` maps atoms to annotations that hold at every timestep in
    ``0..max_timestep``; it is a compact encoding of the corresponding facts.
    """

    def __init__(
        self,
        facts: Iterable[TemporalFact] = (),
        rules: Iterable[Rule] = (),
        max_timestep: int | None = None,
        persistent: Mapping[GroundAtom, Interval] | None = None,
    ):
        table: dict = {}
        for f in facts:
            _merge_into(table, (f.atom, f.timestep), f.annotation)
        pers = dict(persistent or {})
        for (atom, t), v in list(table.items()):
            if atom in pers:
                table[(atom, t)] = combine(v, pers[atom])
        top = max((t for _, t in table), default=0)
        if max_timestep is None:
            max_timestep = top
        elif max_timestep < top:
            raise ValueError("max_timestep below the latest fact")
        self._init(table, pers, tuple(rules), max_timestep, None)

    def _init(self, table, persistent, rules, max_timestep, parent):
        self._table = table
        self._persistent = persistent
        self.rules = rules
        self.max_timestep = max_timestep
        self._parent = parent
        self._own = None
        self._model = None
        self._lock = threading.Lock()
        self._agents = None

    @classmethod
    def _make(cls, table, persistent, rules, max_timestep, parent=None):
        p = cls.__new__(cls)
        p._init(table, persistent, rules, max_timestep, parent)
        return p

    def with_rules(self, rules: Iterable[Rule]) -> "Program":
        """Same facts, rules replaced."""
        return Program._make(self._table, self._persistent, tuple(rules), self.max_timestep)

    def extend(self, facts: Iterable[TemporalFact] = (), max_timestep: int | None = None) -> "Program":
        """Child program with extra facts; its minimal model warm-starts from ours."""
        own: dict = {}
        for f in facts:
            key = (f.atom, f.timestep)
            _merge_into(own, key, f.annotation)
        for key, v in own.items():
            base = self._table.get(key)
            if base is None and key[0] in self._persistent:
                base = self._persistent[key[0]]
            if base is not None:
                own[key] = combine(base, v)
        top = max((t for _, t in own), default=0)
        mt = max(self.max_timestep, top) if max_timestep is None else max_timestep
        if mt < max(self.max_timestep, top):
            raise ValueError("max_timestep cannot shrink when extending")
        child = Program._make(ChainMap(own, self._table), self._persistent, self.rules, mt, parent=self)
        child._own = own
        return child

    @property
    def persistent(self) -> Mapping[GroundAtom, Interval]:
        return self._persistent

    def fact_value(self, atom: GroundAtom, t: int) -> Interval | None:
        v = self._table.get((atom, t))
        if v is None and atom in self._persistent and 0 <= t <= self.max_timestep:
            return self._persistent[atom]
        return v

    def facts(self) -> Iterator[TemporalFact]:
        """Explicit facts (persistent atoms excluded)."""
        for (atom, t), v in self._table.items():
            yield _fact(atom, v, t)

    def at_facts(self) -> Iterator[tuple]:
        for (atom, t) in self._table:
            if atom.predicate == AT:
                yield atom.args[0], atom.args[1], t

    @property
    def agents(self) -> tuple:
        if self._agents is None:
            found = set()
            for atom in list(k[0] for k in self._table) + list(self._persistent):
                if atom.predicate in (AT, NORMAL):
                    found.add(atom.args[0])
            self._agents = tuple(sorted(found))
        return self._agents

    def __len__(self):
        return len(self._table) + len(self._persistent)


def _fact(atom, v, t):
    # merged facts may be inconsistent; bypass validation so they can be reported later
    f = object.__new__(TemporalFact)
    object.__setattr__(f, "atom", atom)
    object.__setattr__(f, "annotation", v)
    object.__setattr__(f, "timestep", t)
    return f


class Interpretation:
    """Mapping ``(GroundAtom, timestep) -> Interval`` with default bottom."""

    def __init__(self, table: Mapping | None = None, persistent: Mapping | None = None,
                 max_timestep: int = -1, _at_index=None):
        self._table = table if table is not None else {}
        self._persistent = persistent or {}
        self.max_timestep = max_timestep
        self._at_index = _at_index

    def value(self, atom: GroundAtom, t: int) -> Interval:
        v = self._table.get((atom, t))
        if v is not None:
            return v
        if self._persistent and 0 <= t <= self.max_timestep:
            return self._persistent.get(atom, BOTTOM)
        return BOTTOM

    __call__ = value

    def cells(self) -> dict:
        out = {}
        for atom, v in self._persistent.items():
            for t in range(self.max_timestep + 1):
                out[(atom, t)] = v
        for key, v in self._table.items():
            out[key] = v
        return {k: v for k, v in out.items() if v != BOTTOM}

    @property
    def consistent(self) -> bool:
        return all(v.consistent for v in self._table.values()) and all(
            v.consistent for v in self._persistent.values()
        )

    def leq(self, other: "Interpretation") -> bool:
        mine, theirs = self.cells(), other.cells()
        return all(mine.get(k, BOTTOM).leq(theirs.get(k, BOTTOM)) for k in set(mine) | set(theirs))

    def __eq__(self, other):
        if not isinstance(other, Interpretation):
            return NotImplemented
        return self.cells() == other.cells()

    def __repr__(self):
        return f"Interpretation({len(self.cells())} cells)"

    def _index(self):
        if self._at_index is None:
            timed: dict = {}
            for (atom, t) in self._table:
                if atom.predicate == AT:
                    timed.setdefault(atom.args[0], {}).setdefault(t, set()).add(atom.args[1])
            timed = {a: {t: tuple(sorted(rs)) for t, rs in d.items()} for a, d in timed.items()}
            always: dict = {}
            for atom in self._persistent:
                if atom.predicate == AT:
                    always.setdefault(atom.args[0], []).append(atom.args[1])
            self._at_index = (timed, {a: tuple(sorted(r)) for a, r in always.items()})
        return self._at_index

    def regions_at(self, agent: str, t: int) -> tuple:
        timed, always = self._index()
        rs = timed.get(agent, {}).get(t, ())
        if agent in always and 0 <= t <= self.max_timestep:
            rs = tuple(sorted(set(rs) | set(always[agent])))
        return rs

    def at_timesteps(self, agent: str) -> list:
        timed, always = self._index()
        if agent in always:
            return list(range(self.max_timestep + 1))
        return sorted(timed.get(agent, {}))


def satisfies(i: Interpretation, atom: GroundAtom, t: int, mu: Interval) -> bool:
    return mu.leq(i.value(atom, t))


def _ground(atom: GroundAtom, var: str, agent: str) -> GroundAtom:
    if var not in atom.args:
        return atom
    return GroundAtom(atom.predicate, tuple(agent if a == var else a for a in atom.args))


class _BodyEvaluator:
    """Evaluates rule bodies against one interpretation.

    ``at`` and feature cells never change during a fixpoint run (heads are
    always ``normal``), so witness lookups are memoised for the evaluator's
    lifetime.
    """

    def __init__(self, interp: Interpretation):
        self.i = interp
        self._exhibit: dict = {}
        self._first: dict = {}

    def exhibits(self, agent, pred, t, mu) -> bool:
        key = (agent, pred, t, mu)
        hit = self._exhibit.get(key)
        if hit is None:
            i = self.i
            hit = False
            for r in i.regions_at(agent, t):
                if mu.leq(i.value(GroundAtom(AT, (agent, r)), t)) and mu.leq(
                    i.value(GroundAtom(pred, (r,)), t)
                ):
                    hit = True
                    break
            self._exhibit[key] = hit
        return hit

    def first_exhibit(self, agent, pred, mu):
        key = (agent, pred, mu)
        if key not in self._first:
            self._first[key] = next(
                (t for t in self.i.at_timesteps(agent) if self.exhibits(agent, pred, t, mu)), None
            )
        return self._first[key]

    def after(self, agent, elem: After, t) -> bool:
        mu = elem.annotation
        if not self.exhibits(agent, elem.first, t, mu):
            return False
        if elem.hop == SINGLE:
            return t >= 1 and self.exhibits(agent, elem.second, t - 1, mu)
        first = self.first_exhibit(agent, elem.second, mu)
        return first is not None and first < t

    def literal(self, agent, var, elem: Literal, t) -> bool:
        g = _ground(elem.atom, var, agent)
        mu = elem.annotation
        if mu.leq(self.i.value(g, t)):
            return True
        # agent-level feature literal: the agent has occupied such a region by t
        if elem.atom.args == (var,) and g.predicate not in (AT, NORMAL):
            first = self.first_exhibit(agent, g.predicate, mu)
            return first is not None and first <= t
        return False

    def holds(self, rule: Rule, agent: str, t: int) -> bool:
        var = rule.variable
        for elem in rule.body:
            if isinstance(elem, After):
                if not self.after(agent, elem, t):
                    return False
            elif not self.literal(agent, var, elem, t):
                return False
        return True


def satisfies_after(i: Interpretation, agent: str, elem: After, t: int) -> bool:
    return _BodyEvaluator(i).after(agent, elem, t)


def gamma_step(p: Program, i: Interpretation) -> Interpretation:
    """One application of the immediate-consequence operator (inflationary)."""
    if not i.consistent:
        raise ValueError("gamma_step needs a consistent interpretation")
    table = dict(i.cells())
    sources: dict = {}

    def put(key, value, source):
        cur = table.get(key, BOTTOM)
        new = combine(cur, value)
        sources.setdefault(key, [cur]).append(source)
        if not new.consistent:
            raise Inconsistent(key[0], key[1], sources[key])
        table[key] = new

    for (atom, t), v in p._table.items():
        put((atom, t), v, v)
    for atom, v in p._persistent.items():
        for t in range(p.max_timestep + 1):
            put((atom, t), v, v)
    ev = _BodyEvaluator(i)
    for rule in p.rules:
        for agent in p.agents:
            head = _ground(rule.head, rule.variable, agent)
            for t in range(p.max_timestep + 1):
                if ev.holds(rule, agent, t):
                    put((head, t), rule.head_annotation, rule.head_annotation)
    return Interpretation(table, max_timestep=max(p.max_timestep, i.max_timestep))


def _check_table(table, persistent):
    for atom, v in persistent.items():
        if not v.consistent:
            raise Inconsistent(atom, "*", (v,))
    for (atom, t), v in table.items():
        if not v.consistent:
            raise Inconsistent(atom, t, (v,))


def minimal_model(p: Program) -> Interpretation:
    """Least fixpoint of :func:`gamma_step` from the everywhere-bottom interpretation.

    Programs created with :meth:`Program.extend` start from the parent's model
    and only re-derive timesteps at or after the earliest new fact. Results are
    memoised on the (immutable) program.
    """
    if p._model is not None:
        return p._model
    with p._lock:
        if p._model is None:
            p._model = _solve(p)
    return p._model


def _solve(p: Program) -> Interpretation:
    derived: dict = {}
    if p._parent is None:
        _check_table(p._table, p._persistent)
        table = ChainMap(derived, p._table)
        interp = Interpretation(table, p._persistent, p.max_timestep)
        dirty_from = 0
    else:
        base = minimal_model(p._parent)
        dirty_from = p._parent.max_timestep + 1
        timed, always = base._index()
        timed = dict(timed)
        for (atom, t), v in p._own.items():
            prior = base.value(atom, t)
            new = combine(prior, v)
            if not new.consistent:
                raise Inconsistent(atom, t, (prior, v))
            if new != prior:
                derived[(atom, t)] = new
                dirty_from = min(dirty_from, t)
            if atom.predicate == AT:
                a, r = atom.args
                per_agent = dict(timed.get(a, {}))
                per_agent[t] = tuple(sorted(set(per_agent.get(t, ())) | {r}))
                timed[a] = per_agent
        table = ChainMap(derived, base._table)
        interp = Interpretation(table, p._persistent, p.max_timestep, _at_index=(timed, always))

    rules = p.rules
    agents = p.agents
    if not rules or not agents:
        return interp
    heads = {(r, a): _ground(r.head, r.variable, a) for r in rules for a in agents}
    ev = _BodyEvaluator(interp)

    def fire(rule, agent, t, changed):
        if not ev.holds(rule, agent, t):
            return
        key = (heads[(rule, agent)], t)
        cur = interp.value(*key)
        new = combine(cur, rule.head_annotation)
        if not new.consistent:
            raise Inconsistent(key[0], t, (cur, rule.head_annotation))
        if new != cur:
            derived[key] = new
            changed.add(t)

    changed: set = set()
    for t in range(dirty_from, p.max_timestep + 1):
        for rule in rules:
            for agent in agents:
                fire(rule, agent, t, changed)
    recursive = [r for r in rules if r.recursive]
    cap = len(rules) * len(agents) * (p.max_timestep + 1) + 1
    rounds = 1
    while changed and recursive:
        rounds += 1
        if rounds > cap:
            raise NonConvergence(f"no fixpoint after {cap} rounds")
        todo, changed = sorted(changed), set()
        for t in todo:
            for rule in recursive:
                for agent in agents:
                    fire(rule, agent, t, changed)
    return interp


def fired_rules(model: Interpretation, rules: Iterable[Rule], agent: str, t: int) -> list:
    """Rules whose body holds for ``agent`` at ``t`` in ``model``."""
    ev = _BodyEvaluator(model)
    return [r for r in rules if ev.holds(r, agent, t)]


def parsimony(agent: str, program: Program, t: int) -> float:
    """Lower bound of ``normal(agent)`` at ``t`` in the minimal model."""
    if t > program.max_timestep:
        raise ValueError("t beyond the program's last timestep")
    return minimal_model(program).value(normal(agent), t).lower


def entails_trajectory(p: Program, trajectory, regions: Mapping, bins) -> bool:
    """Every observed point lies in the region of some ``at`` fact of the agent at its timestep."""
    by_t: dict = {}
    agent = trajectory.agent_id
    for a, r, t in p.at_facts():
        if a == agent:
            by_t.setdefault(t, []).append(r)
    for atom in p.persistent:
        if atom.predicate == AT and atom.args[0] == agent:
            for t in range(p.max_timestep + 1):
                by_t.setdefault(t, []).append(atom.args[1])
    for pt in trajectory.points:
        t = bins.timestep(pt.timestamp)
        if not any(regions[r].contains(pt.location) for r in by_t.get(t, ())):
            return False
    return True
