"""Evidence tokens, the validity oracle, and events.

Authenticity uses HMAC-SHA256 as a desk-scale stand-in for signatures. A
token carries one issuer tag (``auth_tag``) and optionally one tag per
attesting validator; quorum checks count only attestations whose tag
verifies when validator keys are configured.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

SCHEMAS = ("ToolResult", "RetrievedSnippet", "VerifierJudgment", "Synthetic")
LABELS = ("supports", "contradicts", "neutral")
INF = math.inf


def canonical_json(obj: Any) -> str:
    """Sorted keys, no whitespace, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def sha256_hex(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()


def _delta_out(d: float) -> Any:
    return "inf" if d == INF else int(d)


def _delta_in(d: Any) -> float:
    return INF if d in ("inf", None) else int(d)


@dataclass(frozen=True, eq=True)
class Token:
    id: str
    schema: str
    payload_digest: str
    issued_at: int
    auth_tag: str
    attestors: frozenset[str] = frozenset()
    context_binding: str | None = None
    support_labels: tuple[tuple[str, str], ...] = ()
    query_digest: str | None = None
    attestations: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.issued_at < 0:
            raise ValueError("issued_at must be nonnegative")
        labels = self.support_labels
        if isinstance(labels, Mapping):
            labels = labels.items()
        labels = tuple(sorted((str(h), str(v)) for h, v in labels))
        if len({h for h, _ in labels}) != len(labels):
            raise ValueError("at most one label per hypothesis")
        for _, v in labels:
            if v not in LABELS:
                raise ValueError(f"unknown support label {v!r}")
        object.__setattr__(self, "support_labels", labels)
        object.__setattr__(self, "attestors", frozenset(self.attestors))
        object.__setattr__(self, "attestations", tuple(sorted(self.attestations)))

    def label(self, h: str) -> str:
        for k, v in self.support_labels:
            if k == h:
                return v
        return "neutral"

    def supports(self, h: str) -> bool:
        return self.label(h) == "supports"

    def contradicts(self, h: str) -> bool:
        return self.label(h) == "contradicts"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "schema": self.schema,
            "payload_digest": self.payload_digest,
            "issued_at": self.issued_at,
            "auth_tag": self.auth_tag,
            "attestors": sorted(self.attestors),
            "context_binding": self.context_binding,
            "support_labels": dict(self.support_labels),
            "query_digest": self.query_digest,
            "attestations": [list(a) for a in self.attestations],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Token":
        return cls(
            id=d["id"],
            schema=d["schema"],
            payload_digest=d["payload_digest"],
            issued_at=int(d["issued_at"]),
            auth_tag=d["auth_tag"],
            attestors=frozenset(d.get("attestors", ())),
            context_binding=d.get("context_binding"),
            support_labels=tuple(d.get("support_labels", {}).items()),
            query_digest=d.get("query_digest"),
            attestations=tuple(tuple(a) for a in d.get("attestations", ())),
        )


@dataclass(frozen=True)
class ValidityConfig:
    secret_key: bytes | None = b"pbrc-validity-layer"
    k_required: int = 1
    freshness_window: float = INF
    require_context: bool = False
    allowed_schemas: frozenset[str] = frozenset(SCHEMAS)
    query_policy: frozenset[str] | None = None
    validator_keys: Mapping[str, bytes] | None = field(default=None, hash=False, compare=False)

    def __post_init__(self):
        if self.k_required < 1:
            raise ValueError("k_required must be at least 1")
        object.__setattr__(self, "allowed_schemas", frozenset(self.allowed_schemas))
        if self.query_policy is not None:
            object.__setattr__(self, "query_policy", frozenset(self.query_policy))


def _tag_message(tok_id: str, schema: str, payload_digest: str, issued_at: int) -> bytes:
    return canonical_json([tok_id, schema, payload_digest, issued_at]).encode("utf-8")


@lru_cache(maxsize=1 << 16)
def keyed_tag(key: bytes, tok_id: str, schema: str, payload_digest: str, issued_at: int) -> str:
    # pure in its arguments, so repeated checks of the same token are memoized
    return hmac.new(key, _tag_message(tok_id, schema, payload_digest, issued_at), hashlib.sha256).hexdigest()


def issue_token(
    key: bytes | None,
    tok_id: str,
    *,
    schema: str = "ToolResult",
    payload: str | None = None,
    issued_at: int = 0,
    attestors: Iterable[str] = ("v0",),
    support_labels: Mapping[str, str] | None = None,
    context_binding: str | None = None,
    query_digest: str | None = None,
    validator_keys: Mapping[str, bytes] | None = None,
) -> Token:
    """Build a token signed with ``key``; attestation tags use ``validator_keys``."""
    digest = sha256_hex(payload if payload is not None else tok_id)
    if key is None:
        tag = sha256_hex(_tag_message(tok_id, schema, digest, issued_at))
    else:
        tag = keyed_tag(key, tok_id, schema, digest, issued_at)
    attestors = frozenset(attestors)
    atts = ()
    if validator_keys:
        atts = tuple(
            (v, keyed_tag(validator_keys[v], tok_id, schema, digest, issued_at))
            for v in sorted(attestors)
            if v in validator_keys
        )
    return Token(
        id=tok_id,
        schema=schema,
        payload_digest=digest,
        issued_at=issued_at,
        auth_tag=tag,
        attestors=attestors,
        context_binding=context_binding,
        support_labels=tuple((support_labels or {}).items()),
        query_digest=query_digest,
        attestations=atts,
    )


def attest_count(tok: Token, cfg: ValidityConfig) -> int:
    if cfg.validator_keys is None:
        return len(tok.attestors)
    good = 0
    for v, tag in tok.attestations:
        key = cfg.validator_keys.get(v)
        if v in tok.attestors and key is not None:
            want = keyed_tag(key, tok.id, tok.schema, tok.payload_digest, tok.issued_at)
            good += hmac.compare_digest(want, tag)
    return good


def tag_verifies(tok: Token, cfg: ValidityConfig) -> bool:
    if cfg.secret_key is None:
        return True
    want = keyed_tag(cfg.secret_key, tok.id, tok.schema, tok.payload_digest, tok.issued_at)
    return hmac.compare_digest(want, str(tok.auth_tag))


def query_ok(tok: Token, cfg: ValidityConfig) -> bool:
    if cfg.query_policy is None:
        return True
    return tok.query_digest is not None and tok.query_digest in cfg.query_policy


def is_valid(tok: Token, cfg: ValidityConfig, now: int | None = None) -> bool:
    """Schema, issuer tag, attestation quorum, context, and query policy.

    Freshness is a separate predicate composed inside triggers.
    """
    try:
        return (
            tok.schema in cfg.allowed_schemas
            and tag_verifies(tok, cfg)
            and attest_count(tok, cfg) >= cfg.k_required
            and (not cfg.require_context or bool(tok.context_binding))
            and query_ok(tok, cfg)
        )
    except Exception:
        return False


def is_fresh(tok: Token, now: int, delta: float) -> bool:
    if now < 0:
        raise ValueError("now must be nonnegative")
    return delta == INF or now - tok.issued_at <= delta


def forge_token(key: bytes | None = None, tok_id: str = "forged", **fields) -> Token:
    """Adversarial constructor. Passes validation only when ``key`` is the real one."""
    if key is None:
        key = b"\x00guess"
    return issue_token(key, tok_id, **fields)


def replay_token(tok: Token, now: int | None = None) -> Token:
    """A verbatim retransmission; issued_at is unchanged, so freshness may lapse."""
    return tok


@dataclass(frozen=True)
class Message:
    sender: str
    recipients: frozenset[str]
    sent_at: int
    tokens: tuple[Token, ...] = ()
    rhetoric: str = ""
    confidence_claim: float | None = None

    def __post_init__(self):
        if self.sent_at < 0:
            raise ValueError("sent_at must be nonnegative")
        object.__setattr__(self, "recipients", frozenset(self.recipients))
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def to_dict(self) -> dict:
        return {
            "sender": self.sender,
            "recipients": sorted(self.recipients),
            "sent_at": self.sent_at,
            "tokens": [t.to_dict() for t in self.tokens],
            "rhetoric": self.rhetoric,
            "confidence_claim": self.confidence_claim,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Message":
        return cls(
            sender=d["sender"],
            recipients=frozenset(d.get("recipients", ())),
            sent_at=int(d["sent_at"]),
            tokens=tuple(Token.from_dict(t) for t in d.get("tokens", ())),
            rhetoric=d.get("rhetoric", ""),
            confidence_claim=d.get("confidence_claim"),
        )


@dataclass(frozen=True)
class Event:
    receiver: str
    round: int
    messages: tuple[Message, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        for m in self.messages:
            if self.receiver not in m.recipients:
                raise ValueError(f"message from {m.sender} is not addressed to {self.receiver}")

    def to_dict(self) -> dict:
        return {
            "receiver": self.receiver,
            "round": self.round,
            "messages": [m.to_dict() for m in self.messages],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Event":
        return cls(
            receiver=d["receiver"],
            round=int(d["round"]),
            messages=tuple(Message.from_dict(m) for m in d.get("messages", ())),
        )


def event_digest(e: Event) -> str:
    return sha256_hex(canonical_json(e.to_dict()))


def make_event(receiver: str, rnd: int, *messages: tuple[str, Iterable[Token], str]) -> Event:
    """Shorthand: each message is (sender, tokens, rhetoric)."""
    return Event(
        receiver,
        rnd,
        tuple(Message(s, frozenset({receiver}), rnd, tuple(toks), rh) for s, toks, rh in messages),
    )


def tokens_all(e: Event) -> tuple[Token, ...]:
    """Tokens mentioned anywhere in the event, deduplicated by id, in arrival order."""
    seen: dict[str, Token] = {}
    for m in e.messages:
        for t in m.tokens:
            if t.id not in seen:
                seen[t.id] = t
    return tuple(seen.values())


def tokens_valid(e: Event, cfg: ValidityConfig) -> tuple[Token, ...]:
    return tuple(t for t in tokens_all(e) if is_valid(t, cfg, e.round))


def valid_ids(e: Event, cfg: ValidityConfig) -> frozenset[str]:
    return frozenset(t.id for t in tokens_valid(e, cfg))


def is_social_only(e: Event, cfg: ValidityConfig) -> bool:
    return not any(is_valid(t, cfg, e.round) for t in tokens_all(e))


def senders_of(e: Event, tok_id: str) -> frozenset[str]:
    return frozenset(m.sender for m in e.messages if any(t.id == tok_id for t in m.tokens))


def save_events(path: str, events: Iterable[Event]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(canonical_json(e.to_dict()) + "\n")


def load_events(path: str) -> list[Event]:
    with open(path, encoding="utf-8") as fh:
        return [Event.from_dict(json.loads(line)) for line in fh if line.strip()]


def config_to_dict(cfg: ValidityConfig) -> dict:
    return {
        "k_required": cfg.k_required,
        "freshness_window": _delta_out(cfg.freshness_window),
        "require_context": cfg.require_context,
        "allowed_schemas": sorted(cfg.allowed_schemas),
        "query_policy": None if cfg.query_policy is None else sorted(cfg.query_policy),
        "secret_key": None if cfg.secret_key is None else cfg.secret_key.decode("latin-1"),
    }


def config_from_dict(d: Mapping) -> ValidityConfig:
    key = d.get("secret_key", ValidityConfig.secret_key)
    return ValidityConfig(
        secret_key=None if key is None else (key if isinstance(key, bytes) else key.encode("latin-1")),
        k_required=int(d.get("k_required", 1)),
        freshness_window=_delta_in(d.get("freshness_window", "inf")),
        require_context=bool(d.get("require_context", False)),
        allowed_schemas=frozenset(d.get("allowed_schemas", SCHEMAS)),
        query_policy=None if d.get("query_policy") is None else frozenset(d["query_policy"]),
    )

