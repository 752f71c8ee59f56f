"""Preregistered contracts: prioritized (trigger, operator) clauses plus a fallback.

Two one-step semantics live here. ``protocol_step`` is the raw protocol: the
highest-priority satisfied trigger's operator is applied whatever its witness
looks like. ``contract_update`` is the certified update: if the selected
trigger has no validated witness the step devolves to fallback and the
anomaly is reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

from .belief import Belief, LogOddsStep, dilute, logodds_update, mass_shift
from .evidence import Event, ValidityConfig, is_social_only
from .trigger import (
    Atom,
    Trigger,
    eval_trigger,
    extract_witness,
    is_evidential_trigger,
    with_guard,
)

FALLBACK = "FALLBACK"


# -- operators ---------------------------------------------------------------


@dataclass(frozen=True)
class LogOdds:
    target: int
    step: float
    cap: float

    def __post_init__(self):
        LogOddsStep(self.target, self.step, self.cap)

    def apply(self, b: Belief, e: Event | None = None, cfg: ValidityConfig | None = None) -> Belief:
        return logodds_update(b, LogOddsStep(self.target, self.step, self.cap))

    def to_dict(self) -> dict:
        return {"kind": "LogOdds", "target": self.target, "step": self.step, "cap": self.cap}


@dataclass(frozen=True)
class Dilute:
    lam: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"dilution lambda must lie in (0,1), got {self.lam}")

    def apply(self, b: Belief, e: Event | None = None, cfg: ValidityConfig | None = None) -> Belief:
        return dilute(b, self.lam)

    def to_dict(self) -> dict:
        return {"kind": "Dilute", "lam": self.lam}


@dataclass(frozen=True)
class Identity:
    def apply(self, b: Belief, e: Event | None = None, cfg: ValidityConfig | None = None) -> Belief:
        return b

    def to_dict(self) -> dict:
        return {"kind": "Identity"}


@dataclass(frozen=True)
class MassShift:
    target: int
    fraction: float

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0,1]")

    def apply(self, b: Belief, e: Event | None = None, cfg: ValidityConfig | None = None) -> Belief:
        return mass_shift(b, self.target, self.fraction)

    def to_dict(self) -> dict:
        return {"kind": "MassShift", "target": self.target, "fraction": self.fraction}


@dataclass(frozen=True)
class ReplayFallback:
    """Normal-form fallback: replay the original protocol on social-only events."""

    original: "Contract"

    def apply(self, b: Belief, e: Event, cfg: ValidityConfig) -> Belief:
        if is_social_only(e, cfg):
            return protocol_step(self.original, b, e, cfg).belief
        return self.original.fallback.apply(b, e, cfg)

    def to_dict(self) -> dict:
        return {"kind": "ReplayFallback", "original": self.original.to_dict()}


Operator = LogOdds | Dilute | Identity | MassShift | ReplayFallback
CONSERVATIVE = (Dilute, Identity)


def op_from_dict(d: Mapping) -> Operator:
    kind = d["kind"]
    if kind == "LogOdds":
        return LogOdds(int(d["target"]), float(d["step"]), float(d["cap"]))
    if kind == "Dilute":
        return Dilute(float(d["lam"]))
    if kind == "Identity":
        return Identity()
    if kind == "MassShift":
        return MassShift(int(d["target"]), float(d["fraction"]))
    if kind == "ReplayFallback":
        return ReplayFallback(Contract.from_dict(d["original"]))
    raise ValueError(f"unknown operator kind {kind!r}")


# -- contracts and certificates ------------------------------------------------


@dataclass(frozen=True)
class Clause:
    trigger: Trigger
    op: Operator


@dataclass(frozen=True)
class Contract:
    name: str
    clauses: tuple[Clause, ...]
    fallback: Operator
    hypotheses: tuple[str, ...] | None = None
    conservative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        names = [c.trigger.name for c in self.clauses]
        if len(set(names)) != len(names):
            raise ValueError("clause trigger names must be distinct")
        if FALLBACK in names:
            raise ValueError(f"{FALLBACK} is reserved")
        if self.hypotheses is not None:
            object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        if self.conservative and not isinstance(self.fallback, CONSERVATIVE):
            raise ValueError("a conservative contract needs a Dilute or Identity fallback")

    @property
    def labels(self) -> list[str]:
        return [c.trigger.name for c in self.clauses]

    def clause_index(self, label: str) -> int:
        return self.labels.index(label)

    def hypothesis_labels(self, m: int) -> tuple[str, ...]:
        return self.hypotheses if self.hypotheses is not None else tuple(f"h{k}" for k in range(m))

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "clauses": [{"trigger": c.trigger.to_dict(), "op": c.op.to_dict()} for c in self.clauses],
            "fallback": self.fallback.to_dict(),
        }
        if self.hypotheses is not None:
            d["hypotheses"] = list(self.hypotheses)
        if self.conservative:
            d["conservative"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Contract":
        return cls(
            name=d["name"],
            clauses=tuple(Clause(Trigger.from_dict(c["trigger"]), op_from_dict(c["op"])) for c in d["clauses"]),
            fallback=op_from_dict(d["fallback"]),
            hypotheses=None if d.get("hypotheses") is None else tuple(d["hypotheses"]),
            conservative=bool(d.get("conservative", False)),
        )


def load_contract(path: str) -> Contract:
    with open(path, encoding="utf-8") as fh:
        return Contract.from_dict(json.load(fh))


def save_contract(c: Contract, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(c.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class Certificate:
    label: str
    witness: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "witness", frozenset(self.witness))
        if self.label == FALLBACK and self.witness:
            raise ValueError("a fallback certificate carries no witness")

    @property
    def is_fallback(self) -> bool:
        return self.label == FALLBACK

    def to_dict(self) -> dict:
        return {"label": self.label, "witness": sorted(self.witness)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Certificate":
        return cls(d["label"], frozenset(d.get("witness", ())))

    def __str__(self) -> str:
        return f"({self.label}, {{{', '.join(sorted(self.witness))}}})"


FALLBACK_CERT = Certificate(FALLBACK)


class Step(NamedTuple):
    belief: Belief
    certificate: Certificate
    anomaly: str | None = None


# -- semantics -------------------------------------------------------------------


def trigger_set(c: Contract, e: Event, cfg: ValidityConfig, valid: dict | None = None) -> list[int]:
    valid = {} if valid is None else valid
    return [j for j, cl in enumerate(c.clauses) if eval_trigger(cl.trigger, e, cfg, valid)]


def select_trigger(c: Contract, js: Iterable[int]) -> int | None:
    js = list(js)
    return min(js) if js else None


def protocol_step(c: Contract, b: Belief, e: Event, cfg: ValidityConfig, valid: dict | None = None) -> Step:
    """Raw one-step protocol semantics, certificate attached but not enforced."""
    valid = {} if valid is None else valid
    j = select_trigger(c, trigger_set(c, e, cfg, valid))
    if j is None:
        return Step(c.fallback.apply(b, e, cfg), FALLBACK_CERT)
    cl = c.clauses[j]
    w = extract_witness(cl.trigger, e, cfg, valid) or frozenset()
    return Step(cl.op.apply(b, e, cfg), Certificate(cl.trigger.name, frozenset(t.id for t in w)))


def certified_step(c: Contract, b: Belief, e: Event, cfg: ValidityConfig, valid: dict | None = None) -> Step:
    """Priority update that devolves to fallback when the selected witness is empty."""
    valid = {} if valid is None else valid
    j = select_trigger(c, trigger_set(c, e, cfg, valid))
    if j is None:
        return Step(c.fallback.apply(b, e, cfg), FALLBACK_CERT)
    cl = c.clauses[j]
    w = extract_witness(cl.trigger, e, cfg, valid)
    if not w:
        return Step(c.fallback.apply(b, e, cfg), FALLBACK_CERT, f"EmptyWitness:{cl.trigger.name}")
    return Step(cl.op.apply(b, e, cfg), Certificate(cl.trigger.name, frozenset(t.id for t in w)))


def contract_update(c: Contract, b: Belief, e: Event, cfg: ValidityConfig) -> tuple[Belief, Certificate]:
    s = certified_step(c, b, e, cfg)
    return s.belief, s.certificate


def is_evidential(c: Contract) -> bool:
    return all(is_evidential_trigger(cl.trigger) for cl in c.clauses)


def compile_eg(c: Contract) -> Contract:
    """Conjoin the non-social guard to every trigger; fallback untouched."""
    return replace(c, clauses=tuple(Clause(with_guard(cl.trigger), cl.op) for cl in c.clauses))


def compile_nf(c: Contract) -> Contract:
    """Gated triggers plus a fallback that replays the original protocol on social-only events."""
    return replace(compile_eg(c), fallback=ReplayFallback(c), conservative=False)


def to_program(c: Contract):
    """Guarded-choice program over abstraction atoms Trig_j and actions upd_j, fb."""
    from .cddl import Act, Atom as PAtom, Not, Seq, Test, choice

    branches = []
    for j in range(len(c.clauses)):
        prog = None
        for i in range(j):
            prog = _seq(prog, Test(Not(PAtom(f"Trig_{i + 1}"))), Seq)
        prog = _seq(prog, Test(PAtom(f"Trig_{j + 1}")), Seq)
        branches.append(_seq(prog, Act(f"upd_{j + 1}"), Seq))
    fb = None
    for i in range(len(c.clauses)):
        fb = _seq(fb, Test(Not(PAtom(f"Trig_{i + 1}"))), Seq)
    branches.append(_seq(fb, Act("fb"), Seq))
    return choice(*branches)


def _seq(a, b, Seq):
    return b if a is None else Seq(a, b)


# -- shipped contracts -----------------------------------------------------------


def running_example_contract(lam: float = 0.1) -> Contract:
    """Binary {True, False}; falsifier first, then support; dilution fallback."""
    phi1 = Trigger("phi1", ("t",), (Atom("Valid", ("t",)), Atom("Contradicts", ("t", "True"))))
    phi2 = Trigger("phi2", ("t",), (Atom("Valid", ("t",)), Atom("Supports", ("t", "True"))))
    return Contract(
        "running-example",
        (Clause(phi1, LogOdds(0, -2.0, 2.0)), Clause(phi2, LogOdds(0, 1.0, 2.0))),
        Dilute(lam),
        hypotheses=("True", "False"),
        conservative=True,
    )


def triage_contract(delta: int = 3, lam: float = 0.1) -> Contract:
    """Binary {real, fake}: tool contradiction, tool support, fresh retrieval contradiction."""

    def tr(name: str, schema: str, pred: str, *extra: Atom) -> Trigger:
        atoms = (Atom("Valid", ("t",)), Atom("TypeIs", ("t", schema)), Atom(pred, ("t", "real"))) + extra
        return Trigger(name, ("t",), atoms)

    return Contract(
        "misinformation-triage",
        (
            Clause(tr("tool_con", "ToolResult", "Contradicts"), LogOdds(0, -2.0, 2.0)),
            Clause(tr("tool_sup", "ToolResult", "Supports"), LogOdds(0, 1.0, 1.0)),
            Clause(
                tr("ret_con", "RetrievedSnippet", "Contradicts", Atom("Fresh", ("t", delta))),
                LogOdds(0, -1.0, 1.0),
            ),
        ),
        Dilute(lam),
        hypotheses=("real", "fake"),
        conservative=True,
    )


def support_contract(
    hypotheses: Sequence[str], k: int = 1, step: float = 1.0, cap: float | None = None, lam: float = 0.1,
    delta: float | None = None,
) -> Contract:
    """One clause per hypothesis: k distinct valid supporters move its log-odds up."""
    cap = abs(step) if cap is None else cap
    vs = tuple(f"t{i}" for i in range(k))
    clauses = []
    for idx, h in enumerate(hypotheses):
        atoms = [Atom("Valid", (v,)) for v in vs] + [Atom("Supports", (v, h)) for v in vs]
        if delta is not None:
            atoms += [Atom("Fresh", (v, delta)) for v in vs]
        atoms += [Atom("TokenDistinct", (vs[a], vs[b])) for a in range(k) for b in range(a + 1, k)]
        clauses.append(Clause(Trigger(f"sup_{h}", vs, tuple(atoms)), LogOdds(idx, step, cap)))
    return Contract(f"support-k{k}", tuple(clauses), Dilute(lam), hypotheses=tuple(hypotheses), conservative=True)
