"""Dynamic doxastic logic over audit-log runs.

Formulas: atoms, negation, conjunction, belief boxes B_i, program boxes
[alpha]. Programs: atomic actions, sequence, choice, tests, Kleene star.
Models are finite Kripke structures; a run abstracted from an audit log has
states 0..T with one labelled edge per recorded step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Mapping, Sequence

from .belief import argmax_set
from .contract import FALLBACK, Contract, to_program
from .evidence import Event, ValidityConfig, is_social_only
from .trigger import eval_trigger


class NonKD45(ValueError):
    pass


class LogEventMismatch(ValueError):
    pass


# -- syntax ---------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    args: tuple = ()

    def __init__(self, *args):
        object.__setattr__(self, "args", tuple(args))


@dataclass(frozen=True)
class B:
    agent: str
    arg: "Formula"


@dataclass(frozen=True)
class Box:
    prog: "Program"
    arg: "Formula"


@dataclass(frozen=True)
class Act:
    name: str


@dataclass(frozen=True)
class Seq:
    first: "Program"
    second: "Program"


@dataclass(frozen=True)
class Choice:
    left: "Program"
    right: "Program"


@dataclass(frozen=True)
class Test:
    cond: "Formula"


@dataclass(frozen=True)
class Star:
    body: "Program"


Formula = Atom | Not | And | B | Box
Program = Act | Seq | Choice | Test | Star

TRUE = And()
FALSE = Not(TRUE)


def conj(*fs: Formula) -> Formula:
    fs = tuple(fs)
    return fs[0] if len(fs) == 1 else And(*fs)


def disj(*fs: Formula) -> Formula:
    if not fs:
        return FALSE
    if len(fs) == 1:
        return fs[0]
    return Not(And(*(Not(f) for f in fs)))


def implies(a: Formula, b: Formula) -> Formula:
    return Not(And(a, Not(b)))


def iff(a: Formula, b: Formula) -> Formula:
    return And(implies(a, b), implies(b, a))


def diamond(p: Program, f: Formula) -> Formula:
    return Not(Box(p, Not(f)))


def choice(*ps: Program) -> Program:
    return reduce(Choice, ps)


def seq(*ps: Program) -> Program:
    return reduce(Seq, ps)


# -- models ---------------------------------------------------------------------

Rel = frozenset  # of (s, t) pairs


def _serial_transitive_euclidean(states: Sequence[int], rel: frozenset) -> bool:
    succ = {s: {t for (u, t) in rel if u == s} for s in states}
    for s in states:
        if not succ[s]:
            return False
        for t in succ[s]:
            if not succ[t] <= succ[s]:  # transitive
                return False
            if not succ[s] <= succ[t]:  # euclidean: s->t, s->u  =>  t->u
                return False
    return True


@dataclass(frozen=True)
class KripkeRun:
    states: tuple[int, ...]
    valuation: Mapping[int, frozenset[str]]
    actions: Mapping[str, frozenset]
    beliefs: Mapping[str, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "valuation", {s: frozenset(self.valuation.get(s, ())) for s in self.states})
        object.__setattr__(self, "actions", {a: frozenset(r) for a, r in self.actions.items()})
        object.__setattr__(self, "beliefs", {a: frozenset(r) for a, r in self.beliefs.items()})
        for agent, rel in self.beliefs.items():
            if not _serial_transitive_euclidean(self.states, rel):
                raise NonKD45(f"belief relation of {agent} is not serial, transitive and Euclidean")

    def atoms_at(self, s: int) -> frozenset[str]:
        return self.valuation[s]


def identity(states: Iterable[int]) -> frozenset:
    return frozenset((s, s) for s in states)


def compose(r1: frozenset, r2: frozenset) -> frozenset:
    by_src: dict = {}
    for u, v in r2:
        by_src.setdefault(u, set()).add(v)
    return frozenset((a, c) for (a, b) in r1 for c in by_src.get(b, ()))


def star_closure(states: Iterable[int], r: frozenset) -> frozenset:
    """Reflexive-transitive closure: everything reachable from each state, itself included."""
    succ: dict = {}
    for u, v in r:
        succ.setdefault(u, []).append(v)
    out = set()
    for s in states:
        seen = {s}
        stack = [s]
        while stack:
            for v in succ.get(stack.pop(), ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        out.update((s, v) for v in seen)
    return frozenset(out)


class Checker:
    """Memoizing evaluator for one model.

    Memo keys are node identities; structural hashing of deep frozen ASTs
    would dominate the cost. Each entry keeps its node alive.
    """

    def __init__(self, k: KripkeRun):
        self.k = k
        self._truth: dict = {}
        self._rel: dict = {}

    def relation(self, p: Program) -> frozenset:
        hit = self._rel.get(id(p))
        if hit is not None:
            return hit[1]
        k = self.k
        if isinstance(p, Act):
            r = k.actions.get(p.name, frozenset())
        elif isinstance(p, Seq):
            r = compose(self.relation(p.first), self.relation(p.second))
        elif isinstance(p, Choice):
            r = self.relation(p.left) | self.relation(p.right)
        elif isinstance(p, Test):
            r = identity(self.truth(p.cond))
        elif isinstance(p, Star):
            r = star_closure(k.states, self.relation(p.body))
        else:
            raise TypeError(f"not a program: {p!r}")
        self._rel[id(p)] = (p, r)
        return r

    def truth(self, f: Formula) -> frozenset[int]:
        hit = self._truth.get(id(f))
        if hit is not None:
            return hit[1]
        k = self.k
        if isinstance(f, Atom):
            r = frozenset(s for s in k.states if f.name in k.valuation[s])
        elif isinstance(f, Not):
            r = frozenset(k.states) - self.truth(f.arg)
        elif isinstance(f, And):
            r = frozenset(k.states)
            for g in f.args:
                r &= self.truth(g)
        elif isinstance(f, B):
            if f.agent not in k.beliefs:
                raise NonKD45(f"no belief relation for agent {f.agent}")
            r = self._box(k.beliefs[f.agent], self.truth(f.arg))
        elif isinstance(f, Box):
            r = self._box(self.relation(f.prog), self.truth(f.arg))
        else:
            raise TypeError(f"not a formula: {f!r}")
        self._truth[id(f)] = (f, r)
        return r

    def _box(self, rel: frozenset, good: frozenset) -> frozenset:
        bad = {u for (u, v) in rel if v not in good}
        return frozenset(s for s in self.k.states if s not in bad)


def program_relation(k: KripkeRun, prog: Program) -> frozenset:
    return Checker(k).relation(prog)


def check(k: KripkeRun, s: int, f: Formula) -> bool:
    return s in Checker(k).truth(f)


def valid_on(k: KripkeRun, f: Formula) -> bool:
    return Checker(k).truth(f) == frozenset(k.states)


@dataclass(frozen=True)
class Counterexample:
    states: tuple[int, ...]
    actions: tuple[str, ...]
    violating_state: int

    def to_dict(self) -> dict:
        return {"path": list(self.states), "actions": list(self.actions), "violating_state": self.violating_state}


def _label(k: KripkeRun, u: int, v: int) -> str:
    names = sorted(a for a, r in k.actions.items() if (u, v) in r)
    return "|".join(names) if names else "?"


def _explain(ch: Checker, f: Formula, s: int, depth: int = 0) -> list[tuple[str, int]]:
    """Steps that show why f fails at s: descend into the failing part, follow failing boxes."""
    if depth > 64:
        return []
    if isinstance(f, And):
        for g in f.args:
            if s not in ch.truth(g):
                return _explain(ch, g, s, depth + 1)
        return []
    if isinstance(f, Not) and isinstance(f.arg, And):
        # not(a and not b) fails: a holds and b fails, the b side is the informative one
        for g in f.arg.args:
            if isinstance(g, Not):
                return _explain(ch, g.arg, s, depth + 1)
        return []
    if isinstance(f, Box):
        good = ch.truth(f.arg)
        succ = sorted(v for (u, v) in ch.relation(f.prog) if u == s and v not in good)
        if succ:
            v = succ[0]
            return [(_label(ch.k, s, v), v)] + _explain(ch, f.arg, v, depth + 1)
    return []


def check_invariant(k: KripkeRun, f: Formula, start: int = 0) -> Counterexample | None:
    """None when f holds at ``start``; otherwise a counterexample.

    For [alpha*]phi the path is a shortest route (ties to the smallest state
    index) to the earliest state where phi fails, extended by the steps that
    witness phi's failure there.
    """
    ch = Checker(k)
    if start in ch.truth(f):
        return None
    target, body, prefix = start, f, [start]
    acts: list[str] = []
    if isinstance(f, Box) and isinstance(f.prog, Star):
        good = ch.truth(f.arg)
        succ: dict = {}
        for u, v in sorted(ch.relation(f.prog.body)):
            succ.setdefault(u, []).append(v)
        parent = {start: None}
        frontier = [start]
        while frontier:
            bad = sorted(s for s in frontier if s not in good)
            if bad:
                target = bad[0]
                break
            nxt = []
            for u in frontier:
                for v in succ.get(u, ()):
                    if v not in parent:
                        parent[v] = u
                        nxt.append(v)
            frontier = sorted(set(nxt))
        prefix = [target]
        while parent[prefix[-1]] is not None:
            prefix.append(parent[prefix[-1]])
        prefix.reverse()
        acts = [_label(k, a, b) for a, b in zip(prefix, prefix[1:])]
        body = f.arg
    tail = _explain(ch, body, target)
    return Counterexample(
        tuple(prefix) + tuple(v for _, v in tail), tuple(acts) + tuple(a for a, _ in tail), target
    )


# -- abstraction of audit logs ------------------------------------------------------


def abstract_run(log, events: Sequence[Event], c: Contract, cfg: ValidityConfig, initial=None) -> KripkeRun:
    """States 0..T; atoms Trig_j, SocOnly, Top_h, Acc; one labelled edge per record.

    The log holds post-step beliefs only, so state 0 gets Top atoms from
    ``initial`` and carries none when it is omitted.
    """
    records = list(log)
    if len(records) != len(events):
        raise LogEventMismatch(f"{len(records)} records vs {len(events)} events")
    T = len(records)
    m = records[0].belief_after.m if records else (initial.m if initial is not None else 2)
    hyps = c.hypothesis_labels(m)
    val: dict[int, set] = {s: set() for s in range(T + 1)}
    acts: dict[str, set] = {}

    def tops(b):
        return {f"Top_{hyps[h]}" for h in argmax_set(b)}

    if initial is not None:
        val[0] |= tops(initial)
    for t, (rec, e) in enumerate(zip(records, events)):
        valid: dict = {}
        for j, cl in enumerate(c.clauses):
            if eval_trigger(cl.trigger, e, cfg, valid):
                val[t].add(f"Trig_{j + 1}")
        if is_social_only(e, cfg):
            val[t].add("SocOnly")
        if not rec.certificate.is_fallback:
            val[t].add("Acc")
        val[t + 1] |= tops(rec.belief_after)
        if rec.certificate.label == FALLBACK:
            name = "fb"
        elif rec.certificate.label in c.labels:
            name = f"upd_{c.clause_index(rec.certificate.label) + 1}"
        else:
            name = f"unguarded:{rec.certificate.label}"
        acts.setdefault(name, set()).add((t, t + 1))
    states = tuple(range(T + 1))
    return KripkeRun(states, val, acts, {"self": identity(states)})


def _top_atoms(c: Contract, m: int) -> list[Atom]:
    return [Atom(f"Top_{h}") for h in c.hypothesis_labels(m)]


def any_trig(c: Contract) -> Formula:
    return disj(*(Atom(f"Trig_{j + 1}") for j in range(len(c.clauses))))


def social_stability_formula(c: Contract, i: str | None = None, m: int | None = None) -> Formula:
    """[pi*](SocOnly -> AND_h (Top_h -> [pi] Top_h)) over agent i's abstracted run."""
    pi = to_program(c)
    m = m or len(c.hypotheses or ("h0", "h1"))
    keep = conj(*(implies(top, Box(pi, top)) for top in _top_atoms(c, m)))
    return Box(Star(pi), implies(Atom("SocOnly"), keep))


def accountability_formula(c: Contract, i: str | None = None, m: int | None = None) -> Formula:
    """[pi*] AND_{h != h'} ((Top_h and not Top_h' and not AnyTrig) -> [pi] not Top_h').

    A hypothesis can only enter the top set on a step whose pre-state has a
    satisfied trigger. The trigger is read at the pre-state because that is
    the state whose event licensed the step.
    """
    pi = to_program(c)
    m = m or len(c.hypotheses or ("h0", "h1"))
    tops = _top_atoms(c, m)
    guard = Not(any_trig(c))
    parts = [
        implies(And(a, Not(b), guard), Box(pi, Not(b)))
        for a in tops
        for b in tops
        if a != b
    ]
    return Box(Star(pi), conj(*parts))


# -- s-expressions --------------------------------------------------------------------


def to_sexpr(x) -> str:
    if isinstance(x, Atom):
        return f"(atom {x.name})"
    if isinstance(x, Not):
        return f"(not {to_sexpr(x.arg)})"
    if isinstance(x, And):
        return "(and" + "".join(" " + to_sexpr(a) for a in x.args) + ")"
    if isinstance(x, B):
        return f"(B {x.agent} {to_sexpr(x.arg)})"
    if isinstance(x, Box):
        return f"(box {to_sexpr(x.prog)} {to_sexpr(x.arg)})"
    if isinstance(x, Act):
        return f"(act {x.name})"
    if isinstance(x, Seq):
        return f"(seq {to_sexpr(x.first)} {to_sexpr(x.second)})"
    if isinstance(x, Choice):
        return f"(choice {to_sexpr(x.left)} {to_sexpr(x.right)})"
    if isinstance(x, Test):
        return f"(test {to_sexpr(x.cond)})"
    if isinstance(x, Star):
        return f"(star {to_sexpr(x.body)})"
    raise TypeError(f"cannot serialize {x!r}")


def _tokens(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_sexpr(text: str):
    toks = _tokens(text)
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(toks) or toks[pos] != tok:
            raise ValueError(f"expected {tok!r} at token {pos}")
        pos += 1

    def word():
        nonlocal pos
        if pos >= len(toks) or toks[pos] in "()":
            raise ValueError(f"expected a name at token {pos}")
        pos += 1
        return toks[pos - 1]

    def node():
        expect("(")
        head = word()
        if head == "atom":
            out = Atom(word())
        elif head == "not":
            out = Not(node())
        elif head == "and":
            args = []
            while pos < len(toks) and toks[pos] == "(":
                args.append(node())
            out = And(*args)
        elif head == "or":
            args = []
            while pos < len(toks) and toks[pos] == "(":
                args.append(node())
            out = disj(*args)
        elif head == "implies":
            out = implies(node(), node())
        elif head == "B":
            agent = word()
            out = B(agent, node())
        elif head == "box":
            out = Box(node(), node())
        elif head == "diamond":
            out = diamond(node(), node())
        elif head == "act":
            out = Act(word())
        elif head == "seq":
            out = Seq(node(), node())
        elif head == "choice":
            out = Choice(node(), node())
        elif head == "test":
            out = Test(node())
        elif head == "star":
            out = Star(node())
        else:
            raise ValueError(f"unknown head {head!r}")
        expect(")")
        return out

    out = node()
    if pos != len(toks):
        raise ValueError("trailing input after expression")
    return out
