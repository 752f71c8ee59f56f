"""Token-existential conjunctive triggers.

A trigger is ``exists v1..vk . a1 and ... and an`` where every atom mentions at
least one token variable. Variables range over every token mentioned in the
event; ``Valid`` atoms do the filtering. A trigger whose every variable has a
``Valid`` atom can only fire on events carrying validated evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

from .evidence import (
    Event,
    Token,
    ValidityConfig,
    _delta_in,
    _delta_out,
    attest_count,
    is_fresh,
    is_valid,
    query_ok,
    tokens_all,
)


class MalformedTrigger(ValueError):
    pass


@dataclass
class EvalContext:
    event: Event
    cfg: ValidityConfig
    valid: dict[str, bool] = field(default_factory=dict)

    def is_valid(self, tok: Token) -> bool:
        v = self.valid.get(tok.id)
        if v is None:
            v = is_valid(tok, self.cfg, self.event.round)
            self.valid[tok.id] = v
        return v


# A predicate signature lists argument kinds: "v" token variable, "c" constant.
Evaluator = Callable[[Sequence[Token], Sequence[Any], EvalContext], bool]


@dataclass(frozen=True)
class PredicateSpec:
    kinds: tuple[str, ...]
    fn: Evaluator
    shippable: bool = True


def _distinct(toks, consts, ctx):
    return toks[0].id != toks[1].id


PREDICATES: dict[str, PredicateSpec] = {
    "Valid": PredicateSpec(("v",), lambda t, c, ctx: ctx.is_valid(t[0])),
    "Fresh": PredicateSpec(("v", "c"), lambda t, c, ctx: is_fresh(t[0], ctx.event.round, c[0])),
    "Supports": PredicateSpec(("v", "c"), lambda t, c, ctx: t[0].supports(c[0])),
    "Contradicts": PredicateSpec(("v", "c"), lambda t, c, ctx: t[0].contradicts(c[0])),
    "TypeIs": PredicateSpec(("v", "c"), lambda t, c, ctx: t[0].schema == c[0]),
    "AttestCountAtLeast": PredicateSpec(("v", "c"), lambda t, c, ctx: attest_count(t[0], ctx.cfg) >= c[0]),
    "QueryOK": PredicateSpec(("v",), lambda t, c, ctx: query_ok(t[0], ctx.cfg)),
    "TokenDistinct": PredicateSpec(("v", "v"), _distinct),
}
CORE_PREDICATES = frozenset(PREDICATES)


def register_predicate(name: str, kinds: Sequence[str], fn: Evaluator) -> None:
    """Add a non-shippable predicate (used for sender-sensitive counterexamples)."""
    if name in CORE_PREDICATES:
        raise ValueError(f"cannot override core predicate {name}")
    PREDICATES[name] = PredicateSpec(tuple(kinds), fn, shippable=False)


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))

    def to_dict(self) -> dict:
        args = [_delta_out(a) if self.pred == "Fresh" and i == 1 else a for i, a in enumerate(self.args)]
        return {"pred": self.pred, "args": args}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Atom":
        args = list(d["args"])
        if d["pred"] == "Fresh" and len(args) > 1:
            args[1] = _delta_in(args[1])
        return cls(d["pred"], tuple(args))


@dataclass(frozen=True)
class Trigger:
    name: str
    vars: tuple[str, ...]
    atoms: tuple[Atom, ...]
    nonsocial_guard: bool = False

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "atoms", tuple(self.atoms))

    def to_dict(self) -> dict:
        d = {"name": self.name, "vars": list(self.vars), "atoms": [a.to_dict() for a in self.atoms]}
        if self.nonsocial_guard:
            d["nonsocial_guard"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Trigger":
        return cls(
            d["name"],
            tuple(d["vars"]),
            tuple(Atom.from_dict(a) for a in d["atoms"]),
            bool(d.get("nonsocial_guard", False)),
        )


def atom(pred: str, *args) -> Atom:
    return Atom(pred, args)


def exists(name: str, vars: Iterable[str], *atoms: Atom) -> Trigger:
    return Trigger(name, tuple(vars), atoms)


def _split(tr: Trigger, a: Atom) -> tuple[tuple[str, ...], tuple]:
    spec = PREDICATES.get(a.pred)
    if spec is None:
        raise MalformedTrigger(f"{tr.name}: unknown predicate {a.pred}")
    if len(a.args) != len(spec.kinds):
        raise MalformedTrigger(f"{tr.name}: {a.pred} takes {len(spec.kinds)} arguments")
    vs, cs = [], []
    for kind, arg in zip(spec.kinds, a.args):
        if kind == "v":
            if arg not in tr.vars:
                raise MalformedTrigger(f"{tr.name}: undeclared variable {arg!r}")
            vs.append(arg)
        else:
            cs.append(arg)
    if not vs:
        raise MalformedTrigger(f"{tr.name}: atom {a.pred} mentions no token variable")
    return tuple(vs), tuple(cs)


def check_trigger(tr: Trigger) -> None:
    if len(set(tr.vars)) != len(tr.vars):
        raise MalformedTrigger(f"{tr.name}: duplicate variables")
    for a in tr.atoms:
        _split(tr, a)


def is_evidential_trigger(tr: Trigger) -> bool:
    """Syntactic evidentiality: at least one variable, each guarded by Valid."""
    if not tr.vars:
        return False
    guarded = {a.args[0] for a in tr.atoms if a.pred == "Valid"}
    return all(v in guarded for v in tr.vars)


def is_shippable(tr: Trigger) -> bool:
    return all(PREDICATES.get(a.pred, PredicateSpec((), None, False)).shippable for a in tr.atoms)


def _plan(tr: Trigger):
    """Attach each atom to the last variable it mentions (in declaration order)."""
    order = {v: i for i, v in enumerate(tr.vars)}
    stages: list[list] = [[] for _ in tr.vars]
    for a in tr.atoms:
        vs, cs = _split(tr, a)
        last = max(order[v] for v in vs)
        stages[last].append((PREDICATES[a.pred].fn, tuple(order[v] for v in vs), cs))
    return stages


def _assignments(
    tr: Trigger, universe: Sequence[Token], ctx: EvalContext, must_include: str | None = None, ordered: bool = True
):
    """Yield satisfying assignments (tuples of tokens), lexicographic over sorted ids."""
    stages = _plan(tr)
    toks = sorted(universe, key=lambda t: t.id) if ordered else list(universe)
    k = len(tr.vars)
    if k == 0:
        if must_include is None:
            yield ()
        return
    chosen: list[Token] = []
    forced = [t for t in toks if t.id == must_include][:1]

    def rec(i: int, used: bool):
        if i == k:
            if must_include is None or used:
                yield tuple(chosen)
            return
        # the last slot must take the required token if nothing has yet
        for t in forced if (must_include is not None and not used and i == k - 1) else toks:
            chosen.append(t)
            ok = True
            for fn, idx, cs in stages[i]:
                if not fn([chosen[j] for j in idx], cs, ctx):
                    ok = False
                    break
            if ok:
                yield from rec(i + 1, used or t.id == must_include)
            chosen.pop()

    yield from rec(0, False)


def _guard_ok(tr: Trigger, ctx: EvalContext) -> bool:
    if not tr.nonsocial_guard:
        return True
    return any(ctx.is_valid(t) for t in tokens_all(ctx.event))


def _ctx(e: Event, cfg: ValidityConfig, valid: dict | None) -> EvalContext:
    return EvalContext(e, cfg, valid if valid is not None else {})


def eval_trigger(tr: Trigger, e: Event, cfg: ValidityConfig, valid: dict | None = None) -> bool:
    check_trigger(tr)
    ctx = _ctx(e, cfg, valid)
    if not _guard_ok(tr, ctx):
        return False
    for _ in _assignments(tr, tokens_all(e), ctx):
        return True
    return False


def eval_trigger_restricted(
    tr: Trigger,
    e: Event,
    w: Iterable[Token],
    cfg: ValidityConfig,
    valid: dict | None = None,
    must_include: str | None = None,
) -> bool:
    """Satisfaction with token variables ranging over ``w`` only."""
    check_trigger(tr)
    ctx = _ctx(e, cfg, valid)
    if not _guard_ok(tr, ctx):
        return False
    for _ in _assignments(tr, tuple(w), ctx, must_include):
        return True
    return False


def _witness_key(ids: tuple[str, ...]):
    return (len(ids), ids)


def extract_witness(
    tr: Trigger,
    e: Event,
    cfg: ValidityConfig,
    valid: dict | None = None,
    universe: Iterable[Token] | None = None,
    canonical: bool = True,
) -> frozenset[Token] | None:
    """Canonical witness: smallest set of bound tokens, then least sorted id tuple.

    Only assignments binding validated tokens count, since the trigger must
    hold with its variables ranging over the witness alone. Returns None when
    the trigger does not hold and an empty set when it holds only through
    unvalidated tokens (possible for non-evidential triggers). With
    ``canonical=False`` the first such assignment in universe order is used.
    """
    check_trigger(tr)
    ctx = _ctx(e, cfg, valid)
    if not _guard_ok(tr, ctx):
        return None
    pool = tokens_all(e) if universe is None else tuple(universe)
    holds = False
    best = None
    best_key = None
    for asg in _assignments(tr, pool, ctx, ordered=canonical):
        holds = True
        if not all(ctx.is_valid(t) for t in asg):
            continue
        ids = tuple(sorted({t.id for t in asg}))
        key = _witness_key(ids)
        if best_key is None or key < best_key:
            best_key = key
            best = {t.id: t for t in asg}
            if not ids or not canonical:
                break
    if not holds:
        return None
    return frozenset(best.values()) if best is not None else frozenset()


def with_guard(tr: Trigger) -> Trigger:
    return tr if tr.nonsocial_guard else replace(tr, nonsocial_guard=True)


def valid_and(name: str, var: str = "t", *extra: Atom) -> Trigger:
    """Single-variable evidential trigger ``exists t. Valid(t) and extra...``."""
    return Trigger(name, (var,), (Atom("Valid", (var,)),) + tuple(extra))

