"""Enforcement: certificate checks, gate-only and state-holding routers, audit log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .belief import Belief, argmax_set
from .contract import (
    FALLBACK,
    FALLBACK_CERT,
    Certificate,
    Contract,
    Step,
    select_trigger,
    trigger_set,
)
from .evidence import Event, ValidityConfig, canonical_json, event_digest, is_valid, sha256_hex, tokens_all
from .trigger import eval_trigger_restricted, extract_witness

GENESIS = "0" * 64
GATE_ONLY = "GateOnly"
STATE_HOLDING = "StateHolding"


class UnknownLabel(KeyError):
    pass


class AttributionViolation(RuntimeError):
    def __init__(self, message: str, round: int | None = None, agent: str | None = None):
        super().__init__(message)
        self.round = round
        self.agent = agent


@dataclass(frozen=True)
class RouterConfig:
    mode: str = STATE_HOLDING
    soundness_check: bool = True
    completeness_probability: float = 1.0
    token_determined: bool = True
    validation_budget: int | None = None
    short_circuit: bool = False
    check_priority: bool = False

    def __post_init__(self):
        if self.mode not in (GATE_ONLY, STATE_HOLDING):
            raise ValueError(f"unknown router mode {self.mode!r}")
        if not 0.0 <= self.completeness_probability <= 1.0:
            raise ValueError("completeness_probability must lie in [0,1]")
        if self.validation_budget is not None and self.validation_budget < 1:
            raise ValueError("validation_budget must be positive")
        if self.short_circuit and self.token_determined:
            raise ValueError("short-circuit witnesses depend on arrival order; set token_determined=False")


def canonicalize(cert: Certificate) -> Certificate:
    return cert if cert.witness else FALLBACK_CERT


def verify_certificate(
    c: Contract, e: Event, cert: Certificate, cfg: ValidityConfig, check_priority: bool = False,
    valid: dict | None = None,
) -> bool:
    """Re-validate the witness, re-check the trigger on it, optionally check priority."""
    valid = {} if valid is None else valid
    if cert.label == FALLBACK:
        return not check_priority or not trigger_set(c, e, cfg, valid)
    if cert.label not in c.labels:
        raise UnknownLabel(cert.label)
    j = c.clause_index(cert.label)
    by_id = {t.id: t for t in tokens_all(e)}
    if not cert.witness <= by_id.keys():
        return False
    w = [by_id[i] for i in sorted(cert.witness)]
    for t in w:
        if t.id not in valid:
            valid[t.id] = is_valid(t, cfg, e.round)
        if not valid[t.id]:
            return False
    if not eval_trigger_restricted(c.clauses[j].trigger, e, w, cfg, valid):
        return False
    if check_priority and select_trigger(c, trigger_set(c, e, cfg, valid)) != j:
        return False
    return True


# -- audit log -----------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    round: int
    agent: str
    event_digest: str
    valid_token_ids: tuple[str, ...]
    certificate: Certificate
    belief_after: Belief
    anomaly: str | None
    prev_hash: str
    record_hash: str = ""

    def body(self) -> dict:
        return {
            "round": self.round,
            "agent": self.agent,
            "event_digest": self.event_digest,
            "valid_token_ids": list(self.valid_token_ids),
            "certificate": self.certificate.to_dict(),
            "belief_after": list(self.belief_after.weights),
            "anomaly": self.anomaly,
            "prev_hash": self.prev_hash,
        }

    def compute_hash(self) -> str:
        return sha256_hex(canonical_json(self.body()))

    def to_dict(self) -> dict:
        d = self.body()
        d["record_hash"] = self.record_hash
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AuditRecord":
        return cls(
            round=int(d["round"]),
            agent=str(d["agent"]),
            event_digest=d["event_digest"],
            valid_token_ids=tuple(d["valid_token_ids"]),
            certificate=Certificate.from_dict(d["certificate"]),
            belief_after=Belief(tuple(d["belief_after"])),
            anomaly=d.get("anomaly"),
            prev_hash=d["prev_hash"],
            record_hash=d.get("record_hash", ""),
        )


@dataclass
class AuditLog:
    records: list[AuditRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def for_agent(self, agent: str) -> "AuditLog":
        return AuditLog([r for r in self.records if r.agent == agent])

    def to_jsonl(self) -> str:
        return "".join(canonical_json(r.to_dict()) + "\n" for r in self.records)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "AuditLog":
        return cls([AuditRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()])

    @classmethod
    def load(cls, path: str) -> "AuditLog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())


def append_audit(
    log: AuditLog,
    *,
    round: int,
    agent: str,
    event_digest: str,
    valid_token_ids: Iterable[str],
    certificate: Certificate,
    belief_after: Belief,
    anomaly: str | None = None,
) -> AuditLog:
    prev = log.records[-1].record_hash if log.records else GENESIS
    rec = AuditRecord(round, agent, event_digest, tuple(sorted(valid_token_ids)), certificate, belief_after, anomaly, prev)
    rec = AuditRecord(**{**rec.__dict__, "record_hash": rec.compute_hash()})
    log.records.append(rec)
    return log


def verify_audit(log: AuditLog) -> int | None:
    """None when the chain is intact, else the index of the first bad record."""
    prev = GENESIS
    for i, rec in enumerate(log.records):
        if rec.prev_hash != prev or rec.compute_hash() != rec.record_hash:
            return i
        prev = rec.record_hash
    return None


def attribute_flip(log: AuditLog, initial: Belief | Mapping[str, Belief] | None = None) -> list[tuple[int, Certificate]]:
    """Every argmax change with the certificate that licensed it.

    Raises AttributionViolation when an argmax change carries a fallback
    certificate. Without an initial belief the first record of each agent
    only sets the baseline.
    """
    prev: dict[str, frozenset[int]] = {}
    if isinstance(initial, Belief):
        agents = {r.agent for r in log.records}
        prev = {a: argmax_set(initial) for a in agents}
    elif initial is not None:
        prev = {a: argmax_set(b) for a, b in initial.items()}
    out = []
    for rec in log.records:
        now = argmax_set(rec.belief_after)
        before = prev.get(rec.agent)
        prev[rec.agent] = now
        if before is None or before == now:
            continue
        if rec.certificate.is_fallback or not rec.certificate.witness:
            raise AttributionViolation(
                f"agent {rec.agent} changed argmax at round {rec.round} under a fallback certificate",
                rec.round,
                rec.agent,
            )
        out.append((rec.round, rec.certificate))
    return out


# -- routers ---------------------------------------------------------------------


class Proposal(NamedTuple):
    belief: Belief
    certificate: Certificate


class Router:
    """One enforcement point per agent; owns its rng and its audit log."""

    def __init__(
        self,
        contract: Contract,
        config: RouterConfig,
        cfg: ValidityConfig,
        rng: np.random.Generator | None = None,
        agent: str = "a0",
        log: AuditLog | None = None,
    ):
        self.contract = contract
        self.config = config
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.agent = agent
        self.log = log
        self.validations = 0

    def _validate(self, tok, e: Event, valid: dict) -> bool:
        self.validations += 1
        v = is_valid(tok, self.cfg, e.round)
        valid[tok.id] = v
        return v

    def _recognized(self, js: list[int]) -> list[int]:
        p = self.config.completeness_probability
        if p >= 1.0:
            return js
        return [j for j in js if self.rng.random() < p]

    def _hold(self, b: Belief, e: Event) -> Step:
        c, rc = self.contract, self.config
        toks = tokens_all(e)
        valid: dict[str, bool] = {}
        budget = rc.validation_budget
        done = 0
        missed: set[int] = set()

        if rc.short_circuit and c.clauses:
            top = c.clauses[0].trigger
            seen = []
            for t in toks:
                if budget is not None and done >= budget:
                    return Step(c.fallback.apply(b, e, self.cfg), FALLBACK_CERT, "BudgetExceeded")
                ok = self._validate(t, e, valid)
                done += 1
                seen.append(t)
                if ok and eval_trigger_restricted(top, e, seen, self.cfg, valid, must_include=t.id):
                    if self._recognized([0]):
                        w = extract_witness(top, e, self.cfg, valid, universe=seen, canonical=False)
                        return self._apply(b, e, 0, w, valid)
                    missed.add(0)
                    break

        for t in toks:
            if t.id in valid:
                continue
            if budget is not None and done >= budget:
                return Step(c.fallback.apply(b, e, self.cfg), FALLBACK_CERT, "BudgetExceeded")
            self._validate(t, e, valid)
            done += 1

        js = [j for j in trigger_set(c, e, self.cfg, valid) if j not in missed]
        j = select_trigger(c, self._recognized(js))
        if j is None:
            return Step(c.fallback.apply(b, e, self.cfg), FALLBACK_CERT)
        if rc.token_determined:
            w = extract_witness(c.clauses[j].trigger, e, self.cfg, valid)
        else:
            w = extract_witness(c.clauses[j].trigger, e, self.cfg, valid, canonical=False)
        return self._apply(b, e, j, w, valid)

    def _apply(self, b: Belief, e: Event, j: int, w, valid: dict) -> Step:
        c = self.contract
        cl = c.clauses[j]
        if not w:
            return Step(c.fallback.apply(b, e, self.cfg), FALLBACK_CERT, f"EmptyWitness:{cl.trigger.name}")
        cert = Certificate(cl.trigger.name, frozenset(t.id for t in w))
        if self.config.soundness_check and not verify_certificate(c, e, cert, self.cfg, False, valid):
            return Step(c.fallback.apply(b, e, self.cfg), FALLBACK_CERT, f"Unsound:{cl.trigger.name}")
        return Step(cl.op.apply(b, e, self.cfg), cert)

    def _gate(self, b: Belief, e: Event, proposal: Proposal | None) -> Step:
        c, rc = self.contract, self.config
        if proposal is None:
            raise ValueError("a gate-only router needs the agent's proposed (belief, certificate)")
        cert = canonicalize(proposal.certificate)
        if cert.is_fallback:
            anomaly = None if proposal.certificate.is_fallback else f"EmptyWitnessRejected:{proposal.certificate.label}"
            return Step(c.fallback.apply(b, e, self.cfg), FALLBACK_CERT, anomaly)
        if rc.soundness_check:
            valid: dict[str, bool] = {}
            try:
                ok = verify_certificate(c, e, cert, self.cfg, rc.check_priority, valid)
            except UnknownLabel:
                ok = False
            self.validations += len(cert.witness)
            if not ok:
                return Step(c.fallback.apply(b, e, self.cfg), FALLBACK_CERT, f"Rejected:{cert.label}")
        return Step(proposal.belief, cert)

    def step(self, b: Belief, e: Event, proposal: Proposal | None = None) -> Step:
        if self.config.mode == GATE_ONLY:
            out = self._gate(b, e, proposal)
        else:
            out = self._hold(b, e)
        if self.log is not None:
            append_audit(
                self.log,
                round=e.round,
                agent=self.agent,
                event_digest=event_digest(e),
                valid_token_ids=[t.id for t in tokens_all(e) if is_valid(t, self.cfg, e.round)],
                certificate=out.certificate,
                belief_after=out.belief,
                anomaly=out.anomaly,
            )
        return out


def enforced_step(
    c: Contract,
    rc: RouterConfig,
    b: Belief,
    e: Event,
    cfg: ValidityConfig,
    rng: np.random.Generator | None = None,
    proposal: Proposal | None = None,
) -> Step:
    return Router(c, rc, cfg, rng).step(b, e, proposal)
