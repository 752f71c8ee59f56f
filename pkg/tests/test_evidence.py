import math
import secrets
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import CFG, random_event, random_pool, rhetoric_variant
from pbrc.evidence import (
    Event,
    Message,
    Token,
    ValidityConfig,
    canonical_json,
    config_from_dict,
    config_to_dict,
    event_digest,
    forge_token,
    is_fresh,
    is_social_only,
    is_valid,
    issue_token,
    load_events,
    make_event,
    replay_token,
    save_events,
    tokens_all,
    tokens_valid,
)

KEY = CFG.secret_key


def tok(tid="t", **kw):
    return issue_token(KEY, tid, **kw)


def test_is_valid_examples():
    assert is_valid(tok(), CFG, 0)
    assert not is_valid(forge_token(None, "t"), CFG, 0)
    three = ValidityConfig(k_required=3)
    assert not is_valid(tok(attestors=("v0", "v1")), three, 0)
    assert is_valid(tok(attestors=("v0", "v1", "v2")), three, 0)


def test_validity_components():
    assert not is_valid(tok(schema="Synthetic"), ValidityConfig(allowed_schemas={"ToolResult"}), 0)
    ctx = ValidityConfig(require_context=True)
    assert not is_valid(tok(), ctx, 0)
    assert is_valid(tok(context_binding="case-17"), ctx, 0)
    q = ValidityConfig(query_policy={"abc"})
    assert not is_valid(tok(), q, 0)
    assert is_valid(tok(query_digest="abc"), q, 0)


def test_quorum_counts_only_verifying_attestations():
    keys = {"v0": b"k0", "v1": b"k1", "v2": b"k2"}
    cfg = ValidityConfig(k_required=2, validator_keys=keys)
    good = tok(attestors=("v0", "v1"), validator_keys=keys)
    assert is_valid(good, cfg, 0)
    bad = tok(attestors=("v0", "v1"), validator_keys={"v0": b"k0", "v1": b"wrong"})
    assert not is_valid(bad, cfg, 0)


def test_tampered_fields_break_the_tag():
    t = tok(issued_at=3)
    assert not is_valid(replace(t, issued_at=4), CFG, 4)
    assert not is_valid(replace(t, payload_digest="00" * 32), CFG, 4)


def test_is_fresh_examples():
    assert is_fresh(tok(issued_at=5), 7, 3)
    assert not is_fresh(tok(issued_at=0), 10, 3)
    assert is_fresh(tok(issued_at=0), 10**6, math.inf)
    with pytest.raises(ValueError):
        is_fresh(tok(), -1, 3)


def test_tokens_all_examples():
    t1, t2 = tok("t1"), tok("t2")
    e = make_event("a", 0, ("s", [t1], ""), ("s2", [t1, t2], ""))
    assert {t.id for t in tokens_all(e)} == {"t1", "t2"}
    assert tokens_all(Event("a", 0, ())) == ()
    assert tokens_all(make_event("a", 0, ("s", [], "hi"))) == ()


def test_tokens_valid_and_social_only_examples():
    star = tok("tau*", support_labels={"True": "contradicts"}, issued_at=1)
    forged = forge_token(None, "fake")
    r0 = make_event("agent", 0, ("peer", (), "Everyone agrees it is False."))
    r1 = make_event("agent", 1, ("peer", (star,), "Here is the fact-check."))
    mixed = make_event("a", 0, ("s", [tok("ok"), forged], ""))
    assert [t.id for t in tokens_valid(mixed, CFG)] == ["ok"]
    assert tokens_valid(r0, CFG) == ()
    assert [t.id for t in tokens_valid(r1, CFG)] == ["tau*"]
    assert is_social_only(r0, CFG)
    assert not is_social_only(r1, CFG)
    assert is_social_only(make_event("a", 0, ("s", [forged], "")), CFG)


def test_forge_and_replay():
    assert is_valid(forge_token(KEY, "f"), CFG, 0)
    assert not is_valid(forge_token(None, "f"), CFG, 0)
    old = tok("old", issued_at=2)
    again = replay_token(old, now=2 + 3 + 1)
    assert again == old and is_valid(again, CFG, 6)
    assert not is_fresh(again, 6, 3)


def test_token_label_invariants():
    with pytest.raises(ValueError):
        tok(issued_at=-1)
    t = tok(support_labels={"h0": "supports", "h1": "contradicts"})
    assert t.supports("h0") and t.contradicts("h1") and not t.supports("h2")


def test_message_must_address_receiver():
    with pytest.raises(ValueError):
        Event("a", 0, (Message("s", frozenset({"b"}), 0),))


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    pool = random_pool(rng)
    events = [random_event(rng, pool) for _ in range(20)]
    p = tmp_path / "e.jsonl"
    save_events(str(p), events)
    back = load_events(str(p))
    assert back == events
    assert [event_digest(e) for e in back] == [event_digest(e) for e in events]
    for t in pool:
        assert Token.from_dict(t.to_dict()) == t
    cfg = ValidityConfig(k_required=2, freshness_window=4, query_policy={"x"})
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_canonical_json_sorted_and_compact():
    assert canonical_json({"b": 1, "a": [1.5, "x"]}) == '{"a":[1.5,"x"],"b":1}'


def test_random_tags_never_validate():
    base = tok("victim")
    hits = 0
    for _ in range(10**6):
        hits += is_valid(replace(base, auth_tag=secrets.token_hex(32)), CFG, 0)
    assert hits == 0


@given(st.integers(0, 10**6))
def test_valid_subset_and_social_only(seed):
    rng = np.random.default_rng(seed)
    e = random_event(rng, random_pool(rng))
    ids_all = {t.id for t in tokens_all(e)}
    valid = {t.id for t in tokens_valid(e, CFG)}
    assert valid <= ids_all
    assert is_social_only(e, CFG) == (not valid)


@given(st.integers(0, 10**6))
def test_rhetoric_never_changes_the_evidence_layer(seed):
    rng = np.random.default_rng(seed)
    e = random_event(rng, random_pool(rng))
    f = rhetoric_variant(rng, e)
    assert tokens_valid(f, CFG) == tokens_valid(e, CFG)
    assert is_social_only(f, CFG) == is_social_only(e, CFG)
