"""Random tokens, events, contracts, graphs, and Kripke models shared by the property and acceptance tests."""

from __future__ import annotations

import numpy as np

from pbrc.adversary import (  # also registers SenderIs
    CONTEXTUAL_VALIDITY,
    CONTRACT_MISSPEC,
    EVIDENCE_INTEGRITY,
    FORGING,
    REPLAY,
    ROUTER_UNSOUND,
    AdversaryModel,
    GroundTruth,
    apply_adversary,
)
from pbrc.belief import Belief
from pbrc.cddl import And, B, Box, Act, Atom as PAtom, Choice, KripkeRun, Not, Seq, Star, Test as Probe, iff, implies
from pbrc.contract import Certificate, Clause, Contract, Dilute, Identity, LogOdds, MassShift
from pbrc.evidence import Event, Message, ValidityConfig, forge_token, issue_token, make_event
from pbrc.network import Graph, erdos_renyi
from pbrc.router import GATE_ONLY, AuditLog, Proposal, Router, RouterConfig
from pbrc.trigger import Atom, Trigger

CFG = ValidityConfig()
HYPS = ("h0", "h1", "h2")
SCHEMAS = ("ToolResult", "RetrievedSnippet", "VerifierJudgment")
SENDERS = ("s0", "s1", "adv")


def random_token(rng: np.random.Generator, tok_id: str, hyps=HYPS, now: int = 5, p_valid: float = 0.7):
    labels = {}
    for h in hyps:
        u = rng.random()
        if u < 0.3:
            labels[h] = "supports"
        elif u < 0.5:
            labels[h] = "contradicts"
    fields = dict(
        schema=str(rng.choice(SCHEMAS)),
        issued_at=int(rng.integers(0, now + 1)),
        support_labels=labels,
        attestors=[f"v{i}" for i in range(int(rng.integers(1, 4)))],
    )
    if rng.random() < p_valid:
        return issue_token(CFG.secret_key, tok_id, **fields)
    return forge_token(None, tok_id, **fields)


def random_pool(rng: np.random.Generator, size: int = 5, hyps=HYPS, now: int = 5, p_valid: float = 0.7):
    return [random_token(rng, f"t{i}", hyps, now, p_valid) for i in range(size)]


RHETORIC = (
    "Everyone agrees.",
    "You are the last holdout.",
    "I am 99% sure.",
    "Trust me on this one.",
    "",
)


def random_event(rng: np.random.Generator, pool, receiver: str = "a", rnd: int | None = None, max_msgs: int = 3,
                 p_token: float = 0.35) -> Event:
    rnd = int(rng.integers(0, 8)) if rnd is None else rnd
    msgs = []
    for _ in range(int(rng.integers(0, max_msgs + 1))):
        toks = tuple(t for t in pool if rng.random() < p_token)
        msgs.append(
            Message(
                str(rng.choice(SENDERS)), frozenset({receiver}), rnd, toks, str(rng.choice(RHETORIC)),
                float(rng.random()) if rng.random() < 0.5 else None,
            )
        )
    return Event(receiver, rnd, tuple(msgs))


def rhetoric_variant(rng: np.random.Generator, e: Event, reshuffle_senders: bool = True) -> Event:
    """Same tokens in the same messages; rhetoric, confidence claims, and maybe senders redrawn."""
    msgs = []
    for m in e.messages:
        msgs.append(
            Message(
                str(rng.choice(SENDERS)) if reshuffle_senders else m.sender,
                m.recipients, m.sent_at, m.tokens, str(rng.choice(RHETORIC)) + " (again)",
                float(rng.random()),
            )
        )
    return Event(e.receiver, e.round, tuple(msgs))


def _trigger_menu(hyps):
    h = lambda: hyps  # noqa: E731
    menu = []
    for x in h():
        menu.append(lambda n, x=x: Trigger(n, ("t",), (Atom("Valid", ("t",)), Atom("Supports", ("t", x)))))
        menu.append(lambda n, x=x: Trigger(n, ("t",), (Atom("Valid", ("t",)), Atom("Contradicts", ("t", x)))))
        menu.append(lambda n, x=x: Trigger(
            n, ("t", "u"),
            (Atom("Valid", ("t",)), Atom("Valid", ("u",)), Atom("Supports", ("t", x)), Atom("Supports", ("u", x)),
             Atom("TokenDistinct", ("t", "u"))),
        ))
        menu.append(lambda n, x=x: Trigger(
            n, ("t",), (Atom("Valid", ("t",)), Atom("Supports", ("t", x)), Atom("Fresh", ("t", 2)))
        ))
        menu.append(lambda n, x=x: Trigger(
            n, ("t",), (Atom("Valid", ("t",)), Atom("TypeIs", ("t", "ToolResult")), Atom("Contradicts", ("t", x)))
        ))
    return menu


def _nonevidential_menu(hyps):
    menu = []
    for x in hyps:
        # binds tokens without validating them
        menu.append(lambda n, x=x: Trigger(n, ("t",), (Atom("Supports", ("t", x)),)))
        # sender-sensitive, evidential on its own variable
        menu.append(lambda n, x=x: Trigger(
            n, ("t",), (Atom("Valid", ("t",)), Atom("Supports", ("t", x)), Atom("SenderIs", ("t", "adv")))
        ))
        # sender-sensitive without Valid: fires on social-only events
        menu.append(lambda n, x=x: Trigger(n, ("t",), (Atom("SenderIs", ("t", "adv")),)))
    return menu


def random_op(rng: np.random.Generator, m: int):
    u = rng.random()
    if u < 0.7:
        cap = float(rng.uniform(0.2, 3.0))
        return LogOdds(int(rng.integers(0, m)), float(rng.uniform(-cap, cap)), cap)
    return MassShift(int(rng.integers(0, m)), float(rng.uniform(0.05, 0.9)))


def random_fallback(rng: np.random.Generator, m: int, conservative: bool = True):
    u = rng.random()
    if conservative or u < 0.6:
        return Dilute(float(rng.uniform(0.01, 0.5))) if rng.random() < 0.8 else Identity()
    return MassShift(int(rng.integers(0, m)), float(rng.uniform(0.05, 0.5)))


def random_contract(rng: np.random.Generator, hyps=HYPS, evidential: bool = True, max_clauses: int = 3) -> Contract:
    menu = _trigger_menu(hyps) + ([] if evidential else _nonevidential_menu(hyps))
    k = int(rng.integers(0 if not evidential else 1, max_clauses + 1))
    clauses = []
    for j in range(k):
        tr = menu[int(rng.integers(0, len(menu)))](f"c{j}")
        clauses.append(Clause(tr, random_op(rng, len(hyps))))
    fb = random_fallback(rng, len(hyps), conservative=evidential)
    return Contract("random", tuple(clauses), fb, hypotheses=tuple(hyps), conservative=evidential)


def random_belief(rng: np.random.Generator, m: int = 3) -> Belief:
    w = rng.dirichlet(np.ones(m))
    return Belief(tuple((w / w.sum()).tolist()))


# -- fault injection ----------------------------------------------------------------------------

BIN = ("h0", "h1")


def _honest_prefix(rng, n_rounds, truth_tokens=True):
    """Social-only chatter, sometimes with a truth-sound supporter of h0."""
    events = []
    for t in range(n_rounds):
        toks = []
        if truth_tokens and rng.random() < 0.5:
            toks = [issue_token(CFG.secret_key, f"good{t}", issued_at=t, support_labels={"h0": "supports"})]
        events.append(make_event("a", t, ("peer", toks, str(rng.choice(RHETORIC)))))
    return events


def fault_run(mode: str, rng: np.random.Generator, delta: int = 2):
    """A run whose first loss of correctness is caused by ``mode``.

    Returns (log, events, contract, ground truth, initial belief).
    """
    p0 = float(rng.uniform(0.55, 0.9))
    b0 = Belief((p0, 1 - p0))
    gt = GroundTruth(0, delta)
    prefix = _honest_prefix(rng, int(rng.integers(0, 4)))
    t = len(prefix) + delta + 1
    honest = Contract(
        "honest",
        (
            Clause(Trigger("sup_h0", ("t",), (Atom("Valid", ("t",)), Atom("Supports", ("t", "h0")))), LogOdds(0, 0.5, 0.5)),
            Clause(Trigger("sup_h1", ("t",), (Atom("Valid", ("t",)), Atom("Supports", ("t", "h1")))), LogOdds(1, 4.0, 4.0)),
        ),
        Dilute(0.05),
        hypotheses=BIN,
        conservative=True,
    )
    c = honest
    if mode == ROUTER_UNSOUND:
        bad = make_event("a", t, ("peer", [], "Just trust the consensus."))
        events = prefix + [bad]
    elif mode == CONTEXTUAL_VALIDITY:
        old = issue_token(CFG.secret_key, "archived", issued_at=0, support_labels={"h1": "supports"})
        model = AdversaryModel(REPLAY, archive=(old,))
        events = prefix + apply_adversary(model, [make_event("a", t, ("peer", [], "Remember this?"))], rng)
    elif mode == EVIDENCE_INTEGRITY:
        model = AdversaryModel(FORGING, key_grant=True, key=CFG.secret_key, target_label="h1")
        events = prefix + apply_adversary(model, [make_event("a", t, ("peer", [], "Verified, see attached."))], rng)
    elif mode == CONTRACT_MISSPEC:
        c = Contract(
            "misspecified",
            (Clause(Trigger("sup_h0", ("t",), (Atom("Valid", ("t",)), Atom("Supports", ("t", "h0")))),
                    MassShift(1, float(rng.uniform(0.6, 0.95)))),),
            Dilute(0.05),
            hypotheses=BIN,
            conservative=True,
        )
        prefix = _honest_prefix(rng, len(prefix), truth_tokens=False)
        good = issue_token(CFG.secret_key, "sound", issued_at=t, support_labels={"h0": "supports"})
        events = prefix + [make_event("a", t, ("tool", [good], "Tool output."))]
    else:
        raise ValueError(mode)
    log = AuditLog()
    r = Router(c, RouterConfig(), CFG, agent="a", log=log, rng=rng)
    b = b0
    for e in events[:-1]:
        b = r.step(b, e).belief
    last = events[-1]
    if mode == ROUTER_UNSOUND:
        gate = Router(c, RouterConfig(mode=GATE_ONLY, soundness_check=False), CFG, agent="a", log=log)
        gate.step(b, last, Proposal(Belief((0.1, 0.9)), Certificate("sup_h1", {"ghost"})))
    else:
        r.step(b, last)
    return log, events, c, gt, b0


# -- graphs ---------------------------------------------------------------------------------------


def random_digraph(rng, n=None, p=None):
    n = int(rng.integers(2, 8)) if n is None else n
    p = float(rng.uniform(0.1, 0.6)) if p is None else p
    return erdos_renyi(n, p, rng, connected=False, directed=True)


def walk_reach(g, t):
    """reach[j][i] true iff a walk of length 1..t+1 leads from j to i."""
    a = (g.adjacency() > 0).astype(int)
    step = np.eye(g.n, dtype=int)
    out = np.zeros_like(a)
    for _ in range(t + 1):
        step = (step @ a > 0).astype(int)
        out |= step
    return out.astype(bool)


def perturb(rng, g):
    u = rng.random()
    if u < 0.3:
        return g.with_edges([(i, i) for i in range(g.n) if rng.random() < 0.5])  # self-loops only
    if u < 0.65:
        return g.with_edges([(int(rng.integers(0, g.n)), int(rng.integers(0, g.n)))])
    edges = sorted(g.edges)
    if not edges:
        return g
    drop = edges[int(rng.integers(0, len(edges)))]
    return Graph(g.n, g.edges - {drop})


# -- random models and formulas ---------------------------------------------------------------


def kd45_relation(rng, states):
    """Partition the states; every member of a block sees the same nonempty cluster inside it."""
    rel = set()
    order = list(states)
    rng.shuffle(order)
    cuts = sorted(rng.choice(range(1, len(order)), size=int(rng.integers(0, len(order))), replace=False)) if len(order) > 1 else []
    blocks = np.split(np.array(order), cuts)
    for blk in blocks:
        blk = [int(x) for x in blk]
        size = int(rng.integers(1, len(blk) + 1))
        cluster = [int(x) for x in rng.choice(blk, size=size, replace=False)]
        rel.update((s, t) for s in blk for t in cluster)
    return frozenset(rel)


def random_model(rng, kd45=True):
    n = int(rng.integers(1, 7))
    states = tuple(range(n))
    val = {s: {x for x in ("p", "q") if rng.random() < 0.5} for s in states}
    acts = {a: {(u, v) for u in states for v in states if rng.random() < 0.3} for a in ("a", "b")}
    beliefs = {"i": kd45_relation(rng, states)} if kd45 else {}
    return KripkeRun(states, val, acts, beliefs)


def random_program(rng, depth=2):
    u = rng.random()
    if depth == 0 or u < 0.35:
        return Act(str(rng.choice(["a", "b"])))
    if u < 0.5:
        return Seq(random_program(rng, depth - 1), random_program(rng, depth - 1))
    if u < 0.65:
        return Choice(random_program(rng, depth - 1), random_program(rng, depth - 1))
    if u < 0.8:
        return Probe(random_formula(rng, depth - 1, beliefs=False))
    return Star(random_program(rng, depth - 1))


def random_formula(rng, depth=2, beliefs=True):
    u = rng.random()
    if depth == 0 or u < 0.3:
        return PAtom(str(rng.choice(["p", "q"])))
    if u < 0.45:
        return Not(random_formula(rng, depth - 1, beliefs))
    if u < 0.6:
        return And(random_formula(rng, depth - 1, beliefs), random_formula(rng, depth - 1, beliefs))
    if u < 0.75 and beliefs:
        return B("i", random_formula(rng, depth - 1, beliefs))
    return Box(random_program(rng, depth - 1), random_formula(rng, depth - 1, beliefs))


def axiom_instances(rng):
    a, b = random_program(rng), random_program(rng)
    f, g = random_formula(rng), random_formula(rng)
    return {
        "K": implies(Box(a, implies(f, g)), implies(Box(a, f), Box(a, g))),
        "Seq": iff(Box(Seq(a, b), f), Box(a, Box(b, f))),
        "Choice": iff(Box(Choice(a, b), f), And(Box(a, f), Box(b, f))),
        "Test": iff(Box(Probe(g), f), implies(g, f)),
        "Star": iff(Box(Star(a), f), And(f, Box(a, Box(Star(a), f)))),
        "KB": implies(B("i", implies(f, g)), implies(B("i", f), B("i", g))),
        "D": implies(B("i", f), Not(B("i", Not(f)))),
        "4": implies(B("i", f), B("i", B("i", f))),
        "5": implies(Not(B("i", f)), B("i", Not(B("i", f)))),
    }
