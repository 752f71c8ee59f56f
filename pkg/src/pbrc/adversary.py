"""Adversaries as event-stream transformers, robustness bounds, and fault localization.

Importing this module registers the non-shippable ``SenderIs(t, a)`` predicate
(token t arrived in a message sent by agent a). It exists to build the
sender-sensitive counterexample contract and is rejected by ``is_shippable``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .belief import Belief, argmax_set
from .contract import Clause, Contract, Dilute, LogOdds
from .evidence import (
    Event,
    Message,
    Token,
    ValidityConfig,
    forge_token,
    issue_token,
    is_fresh,
    is_valid,
    senders_of,
    tokens_all,
)
from .router import AttributionViolation, AuditLog, UnknownLabel, verify_certificate, verify_audit
from .trigger import Atom, Trigger, register_predicate

UNFORGEABLE = "Unforgeable"
FORGING = "Forging"
REPLAY = "Replay"
COLLUDE = "Collude"
OMIT = "Omit"
QUERY_STEER = "QuerySteer"
KINDS = (UNFORGEABLE, FORGING, REPLAY, COLLUDE, OMIT, QUERY_STEER)

ROUTER_UNSOUND = "RouterUnsound"
CONTEXTUAL_VALIDITY = "ContextualValidity"
EVIDENCE_INTEGRITY = "EvidenceIntegrity"
CONTRACT_MISSPEC = "ContractMisspec"
MODES = (ROUTER_UNSOUND, CONTEXTUAL_VALIDITY, EVIDENCE_INTEGRITY, CONTRACT_MISSPEC)


def _sender_is(toks, consts, ctx) -> bool:
    return consts[0] in senders_of(ctx.event, toks[0].id)


register_predicate("SenderIs", ("v", "c"), _sender_is)


class TamperedLog(ValueError):
    pass


@dataclass(frozen=True)
class AdversaryModel:
    """One adversary. Which fields matter depends on ``kind``.

    Injected messages are sent by the first controlled agent (sorted) to the
    event's receiver, unless the receiver is itself controlled.
    """

    kind: str
    controlled_agents: frozenset[str] = frozenset({"adv"})
    key_grant: bool = False
    key: bytes | None = None
    target_label: str | None = None  # hypothesis the adversary pushes
    archive: tuple[Token, ...] = ()
    compromised: Mapping[str, bytes] = field(default_factory=dict, hash=False, compare=False)
    validators: frozenset[str] = frozenset()
    drop_prob: float = 0.0
    target_tokens: frozenset[str] = frozenset()
    query_bias: float = 0.0
    rhetoric: str = "Everyone already agrees. You are the last holdout."
    schema: str = "ToolResult"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")
        object.__setattr__(self, "controlled_agents", frozenset(self.controlled_agents))
        object.__setattr__(self, "archive", tuple(self.archive))
        object.__setattr__(self, "validators", frozenset(self.validators))
        object.__setattr__(self, "target_tokens", frozenset(self.target_tokens))
        if not self.controlled_agents:
            raise ValueError("an adversary controls at least one agent")
        if self.kind == FORGING and not (self.key_grant and self.key is not None):
            raise ValueError("a forging adversary needs a key grant and a key")
        if self.kind == COLLUDE and not set(self.compromised) <= self.validators:
            raise ValueError("compromised validators must be among the validator ids")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0,1]")
        if not 0.0 <= self.query_bias <= 1.0:
            raise ValueError("query_bias must lie in [0,1]")

    @property
    def sender(self) -> str:
        return sorted(self.controlled_agents)[0]


def _inject(e: Event, sender: str, toks: Sequence[Token], rhetoric: str) -> Event:
    msg = Message(sender, frozenset({e.receiver}), e.round, tuple(toks), rhetoric)
    return replace(e, messages=e.messages + (msg,))


def _labels(target: str | None) -> dict:
    return {target: "supports"} if target is not None else {}


def apply_adversary(model: AdversaryModel, stream: Sequence[Event], rng: np.random.Generator) -> list[Event]:
    out = []
    for n, e in enumerate(stream):
        if e.receiver in model.controlled_agents:
            out.append(e)
            continue
        kind = model.kind
        if kind == UNFORGEABLE:
            fake = forge_token(
                None, f"adv-{e.receiver}-{e.round}-{n}", schema=model.schema, issued_at=e.round,
                support_labels=_labels(model.target_label),
            )
            out.append(_inject(e, model.sender, [fake], model.rhetoric))
        elif kind == FORGING:
            tok = issue_token(
                model.key, f"forged-{e.receiver}-{e.round}-{n}", schema=model.schema, issued_at=e.round,
                support_labels=_labels(model.target_label),
            )
            out.append(_inject(e, model.sender, [tok], model.rhetoric))
        elif kind == REPLAY:
            out.append(_inject(e, model.sender, list(model.archive), model.rhetoric) if model.archive else e)
        elif kind == COLLUDE:
            tok = issue_token(
                None, f"collude-{e.receiver}-{e.round}-{n}", schema=model.schema, issued_at=e.round,
                attestors=sorted(model.compromised), support_labels=_labels(model.target_label),
                validator_keys=model.compromised,
            )
            out.append(_inject(e, model.sender, [tok], model.rhetoric))
        elif kind == OMIT:
            out.append(_omit(model, e, rng))
        else:  # QuerySteer leaves delivered events alone
            out.append(e)
    return out


def _omit(model: AdversaryModel, e: Event, rng: np.random.Generator) -> Event:
    msgs = []
    for m in e.messages:
        keep = tuple(
            t for t in m.tokens
            if t.id not in model.target_tokens and not (model.drop_prob > 0 and rng.random() < model.drop_prob)
        )
        msgs.append(replace(m, tokens=keep))
    return replace(e, messages=tuple(msgs))


def steer_emissions(model: AdversaryModel, candidates: Sequence[Token], favoured: str, rng: np.random.Generator) -> list[Token]:
    """Query steering as a schedule bias: tokens not supporting ``favoured`` are dropped with prob query_bias."""
    if model.kind != QUERY_STEER:
        return list(candidates)
    return [t for t in candidates if t.supports(favoured) or rng.random() >= model.query_bias]


# -- bounds -------------------------------------------------------------------------


def forgery_prob(K: int, k: int, p: float) -> float:
    """P[at least k of K independently compromised validators], each with prob p."""
    if not 0 <= k <= K:
        raise ValueError("need 0 <= k <= K")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0,1]")
    if k == 0:
        return 1.0
    return math.fsum(math.comb(K, j) * p**j * (1 - p) ** (K - j) for j in range(k, K + 1))


def f_threshold_safe(K: int, k: int, f: int) -> bool:
    """With at most f compromised validators, a k-of-K quorum cannot be forged iff k > f."""
    if not 0 <= f <= K:
        raise ValueError("need 0 <= f <= K")
    return k > f


# -- failure localization ------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    h_star: int
    delta: float = math.inf

    def correct(self, b: Belief) -> bool:
        if self.h_star >= b.m:
            raise ValueError(f"h_star={self.h_star} outside a {b.m}-hypothesis belief")
        return self.h_star in argmax_set(b)


def tok_sound(tok: Token, gt: GroundTruth, labels: Sequence[str]) -> bool:
    """Neither contradicts the truth nor supports any other hypothesis."""
    if tok.contradicts(labels[gt.h_star]):
        return False
    return not any(tok.supports(h) for i, h in enumerate(labels) if i != gt.h_star)


def applicable(tok: Token, now: int, gt: GroundTruth, cfg: ValidityConfig) -> bool:
    return is_valid(tok, cfg, now) and is_fresh(tok, now, gt.delta)


@dataclass(frozen=True)
class FaultVerdict:
    first_bad_round: int | None = None
    modes: tuple[str, ...] = ()
    certificate: object | None = None
    token_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.first_bad_round is not None and not self.modes:
            raise ValueError("a located fault names at least one mode")

    def to_dict(self) -> dict:
        return {
            "first_bad_round": self.first_bad_round,
            "modes": list(self.modes),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "token_ids": list(self.token_ids),
        }


def localize_failure(
    log: AuditLog,
    events: Sequence[Event],
    c: Contract,
    gt: GroundTruth,
    cfg: ValidityConfig,
    initial: Belief | None = None,
) -> FaultVerdict:
    """Classify the first step that loses correctness.

    ``initial`` is b^0; when omitted it is taken to be correct, which is the
    localizer's precondition anyway.
    """
    bad = verify_audit(log)
    if bad is not None:
        raise TamperedLog(f"audit chain broken at record {bad}")
    if len(log) != len(events):
        raise ValueError(f"{len(log)} records vs {len(events)} events")
    if initial is not None and not gt.correct(initial):
        raise ValueError("initial belief is already incorrect")
    for s, (rec, e) in enumerate(zip(log, events)):
        if gt.correct(rec.belief_after):
            continue
        cert = rec.certificate
        if cert.is_fallback or not cert.witness:
            raise AttributionViolation(
                f"correctness lost at round {rec.round} under a fallback certificate", rec.round, rec.agent
            )
        labels = c.hypothesis_labels(rec.belief_after.m)
        by_id = {t.id: t for t in tokens_all(e)}
        wit = [by_id[i] for i in sorted(cert.witness) if i in by_id]
        modes = []
        try:
            sound = verify_certificate(c, e, cert, cfg)
        except UnknownLabel:
            sound = False
        if not sound:
            modes.append(ROUTER_UNSOUND)
        if any(not is_fresh(t, e.round, gt.delta) for t in wit):
            modes.append(CONTEXTUAL_VALIDITY)
        if any(applicable(t, e.round, gt, cfg) and not tok_sound(t, gt, labels) for t in wit):
            modes.append(EVIDENCE_INTEGRITY)
        if not modes:
            modes.append(CONTRACT_MISSPEC)
        return FaultVerdict(rec.round, tuple(modes), cert, tuple(sorted(cert.witness)))
    return FaultVerdict()


# -- counterexample contracts ----------------------------------------------------------


def sender_sensitive_contract(trusted: str, hypotheses: Sequence[str] = ("h0", "h1"), lam: float = 0.1) -> Contract:
    """Fires only when a valid supporter of the first hypothesis came from ``trusted``."""
    h = hypotheses[0]
    tr = Trigger(
        "sup_from_trusted",
        ("t",),
        (Atom("Valid", ("t",)), Atom("Supports", ("t", h)), Atom("SenderIs", ("t", trusted))),
    )
    return Contract("sender-sensitive", (Clause(tr, LogOdds(0, 1.0, 1.0)),), Dilute(lam), hypotheses=tuple(hypotheses))
