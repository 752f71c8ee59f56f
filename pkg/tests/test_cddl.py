import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import CFG, axiom_instances, random_formula, random_model, random_program
from pbrc.belief import Belief
from pbrc.cddl import (
    FALSE,
    TRUE,
    Act,
    Atom,
    B,
    Box,
    Checker,
    Choice,
    KripkeRun,
    LogEventMismatch,
    NonKD45,
    Seq,
    Star,
    Test as Probe,
    abstract_run,
    accountability_formula,
    any_trig,
    check,
    check_invariant,
    compose,
    diamond,
    disj,
    identity,
    implies,
    parse_sexpr,
    program_relation,
    social_stability_formula,
    to_sexpr,
    valid_on,
)
from pbrc.contract import FALLBACK_CERT, running_example_contract, support_contract, triage_contract
from pbrc.evidence import issue_token, make_event
from pbrc.router import AuditLog, Router, RouterConfig, append_audit

P, Q = Atom("p"), Atom("q")
A, Bact = Act("a"), Act("b")


# -- examples --------------------------------------------------------------------------------------


def test_box_examples():
    k = KripkeRun((0, 1), {1: {"p"}}, {"a": {(0, 1)}})
    assert check(k, 0, Box(A, P))
    assert not check(k, 0, P)
    k = KripkeRun((0, 1, 2), {s: {"p"} for s in range(3)}, {"a": {(0, 1), (1, 2)}})
    assert all(check(k, s, Box(Star(A), P)) for s in range(3))


def test_program_relation_examples():
    states = (0, 1, 2)
    k = KripkeRun(states, {}, {"a": {(0, 1)}, "b": {(1, 2)}, "c": {(0, 1), (1, 2), (2, 0)}})
    assert program_relation(k, Star(Act("missing"))) == identity(states)
    assert program_relation(k, Seq(A, Bact)) == {(0, 2)}
    assert program_relation(k, Star(Act("c"))) == {(u, v) for u in states for v in states}
    assert program_relation(k, Choice(A, Bact)) == {(0, 1), (1, 2)}
    k2 = KripkeRun(states, {1: {"p"}}, {"c": {(0, 1), (1, 2)}})
    assert program_relation(k2, Seq(Probe(P), Act("c"))) == {(1, 2)}


def _squaring_closure(states, r):
    cur = set(r) | set(identity(states))
    while True:
        nxt = cur | set(compose(frozenset(cur), frozenset(cur)))
        if nxt == cur:
            return frozenset(cur)
        cur = nxt


@given(st.integers(0, 10**6))
def test_star_is_the_iteration_limit(seed):
    rng = np.random.default_rng(seed)
    k = random_model(rng, kd45=False)
    r = k.actions["a"]
    assert program_relation(k, Star(A)) == _squaring_closure(k.states, r)
    acc, power = set(identity(k.states)), set(identity(k.states))
    for _ in range(len(k.states)):
        power = set(compose(frozenset(power), r))
        acc |= power
    assert program_relation(k, Star(A)) == acc


def test_non_kd45_relations_are_rejected():
    with pytest.raises(NonKD45):
        KripkeRun((0, 1), {}, {}, {"i": {(0, 1)}})  # 1 has no successor
    with pytest.raises(NonKD45):
        KripkeRun((0, 1, 2), {}, {}, {"i": {(0, 1), (1, 2), (2, 2)}})  # not transitive
    k = KripkeRun((0,), {}, {})
    with pytest.raises(NonKD45):
        check(k, 0, B("i", P))


def test_derived_forms():
    k = KripkeRun((0, 1), {1: {"p"}}, {"a": {(0, 1)}})
    assert check(k, 0, diamond(A, P))
    assert not check(k, 1, diamond(A, P))
    assert check(k, 0, TRUE) and not check(k, 0, FALSE)
    assert check(k, 1, disj(Q, P)) and not check(k, 0, disj(Q, P))


@given(st.integers(0, 10**6))
def test_axioms_are_valid(seed):
    rng = np.random.default_rng(seed)
    k = random_model(rng)
    for name, f in axiom_instances(rng).items():
        assert valid_on(k, f), name


@given(st.integers(0, 10**6))
def test_induction_rule(seed):
    rng = np.random.default_rng(seed)
    k = random_model(rng)
    f = random_formula(rng)
    a = random_program(rng, 1)
    if valid_on(k, implies(f, Box(a, f))):
        assert valid_on(k, implies(f, Box(Star(a), f)))


# -- abstraction -----------------------------------------------------------------------------------


RUN = running_example_contract(0.1)
STAR = issue_token(CFG.secret_key, "tau*", schema="VerifierJudgment", issued_at=1, support_labels={"True": "contradicts"})
EVENTS = [
    make_event("agent", 0, ("peer", (), "Everyone agrees it is False.")),
    make_event("agent", 1, ("peer", (STAR,), "Here is the fact-check.")),
]


def _running_log():
    log = AuditLog()
    r = Router(RUN, RouterConfig(), CFG, agent="agent", log=log)
    b = Belief((0.6, 0.4))
    for e in EVENTS:
        b = r.step(b, e).belief
    return log


def test_abstract_running_example():
    k = abstract_run(_running_log(), EVENTS, RUN, CFG, initial=Belief((0.6, 0.4)))
    assert k.states == (0, 1, 2)
    assert k.valuation[0] == {"SocOnly", "Top_True"}
    assert k.valuation[1] == {"Trig_1", "Top_True", "Acc"}
    assert k.valuation[2] == {"Top_False"}
    assert k.actions == {"fb": {(0, 1)}, "upd_1": {(1, 2)}}
    assert check_invariant(k, social_stability_formula(RUN)) is None
    assert check_invariant(k, accountability_formula(RUN)) is None


def test_abstract_edge_cases():
    k = abstract_run(AuditLog(), [], RUN, CFG)
    assert k.states == (0,) and k.actions == {}
    log = AuditLog()
    for t in range(3):
        append_audit(log, round=t, agent="a", event_digest="d", valid_token_ids=[], certificate=FALLBACK_CERT,
                     belief_after=Belief((0.6, 0.4)))
    k = abstract_run(log, [make_event("a", t) for t in range(3)], RUN, CFG)
    assert set(k.actions) == {"fb"}
    with pytest.raises(LogEventMismatch):
        abstract_run(log, [], RUN, CFG)


def test_counterexample_at_the_first_social_flip():
    log = AuditLog()
    beliefs = [(0.62, 0.38), (0.55, 0.45), (0.3, 0.7), (0.2, 0.8)]
    events = [make_event("a", t, ("peer", (), "join us")) for t in range(4)]
    for t, w in enumerate(beliefs):
        append_audit(log, round=t, agent="a", event_digest="d", valid_token_ids=[], certificate=FALLBACK_CERT,
                     belief_after=Belief(w))
    k = abstract_run(log, events, RUN, CFG, initial=Belief((0.7, 0.3)))
    cex = check_invariant(k, social_stability_formula(RUN))
    assert cex is not None
    assert cex.violating_state == 2
    assert cex.to_dict() == {"path": [0, 1, 2, 3], "actions": ["fb", "fb", "fb"], "violating_state": 2}
    assert check_invariant(k, accountability_formula(RUN)) is not None


def test_template_structure():
    one = support_contract(("h0", "h1"), k=1)
    f = social_stability_formula(one)
    text = to_sexpr(f)
    assert text.count("(atom Top_h0)") >= 1 and "Trig_1" in text and "Trig_3" not in text
    assert any_trig(triage_contract()) == disj(Atom("Trig_1"), Atom("Trig_2"), Atom("Trig_3"))
    for g in (f, accountability_formula(triage_contract())):
        assert parse_sexpr(to_sexpr(g)) == g


def test_sexpr_parsing():
    f = parse_sexpr("(implies (atom p) (box (star (choice (act a) (seq (test (atom q)) (act b)))) (B i (atom p))))")
    assert f == implies(P, Box(Star(Choice(A, Seq(Probe(Q), Bact))), B("i", P)))
    assert parse_sexpr("(or (atom p) (atom q))") == disj(P, Q)
    assert parse_sexpr("(diamond (act a) (atom p))") == diamond(A, P)
    assert parse_sexpr("(and)") == TRUE
    for bad in ("(atom p", "(frob p)", "(atom p) extra", "()"):
        with pytest.raises(ValueError):
            parse_sexpr(bad)


@given(st.integers(0, 10**6))
def test_sexpr_round_trip(seed):
    rng = np.random.default_rng(seed)
    f = random_formula(rng, 3)
    assert parse_sexpr(to_sexpr(f)) == f


def test_checker_memo_is_consistent():
    rng = np.random.default_rng(0)
    k = random_model(rng)
    ch = Checker(k)
    f = random_formula(rng, 3)
    assert ch.truth(f) == ch.truth(f) == Checker(k).truth(f)
