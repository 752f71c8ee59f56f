"""Seeded reproductions of the six simulation families.

Every trial draws from its own PCG64 stream derived from (seed, trial), so
results do not depend on trial order or on how trials are split across
worker processes. Enforced arms run real routers; with ``audit=True`` every
enforced agent run is also hash-chained, attributed, and model-checked.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from statistics import NormalDist
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .belief import Belief, argmax, argmax_set, conf
from .contract import FALLBACK_CERT, Contract, Identity, support_contract
from .evidence import Event, Message, ValidityConfig, event_digest, forge_token, issue_token
from .network import Graph, diameter, erdos_renyi, flood, graph_family, grid, unique_placement
from .router import (
    AttributionViolation,
    AuditLog,
    Router,
    RouterConfig,
    append_audit,
    attribute_flip,
    verify_audit,
)

SIM_IDS = ("I", "Ib", "II", "III", "IV", "V", "VI")
HYPS = ("h0", "h1")
KEY = ValidityConfig().secret_key


class ConfigError(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    sim_id: str = "I"
    n: int = 20
    T: int = 10
    trials: int = 500
    seed: int = 0
    topologies: tuple[str, ...] = ("ring", "er", "complete")
    p: float = 0.3
    w0: float = 0.4
    ws: float = 0.5
    gamma: float = 2.0
    lam: float = 0.1
    threshold: float = 0.9
    beta: tuple[float, float] = (5.0, 5.0)
    lambdas: tuple[float, ...] = (0.0, 0.02, 0.05, 0.1, 0.2, 0.4)
    families: tuple[str, ...] = ("ring", "er", "star", "complete", "grid")
    q_grid: tuple[float, ...] = (0.0, 0.3, 0.5, 0.7, 0.9)
    max_rounds: int = 1000
    N_grid: tuple[int, ...] = (11, 33, 66, 99)
    rho: float = 0.2
    epsilons: tuple[float, ...] = (0.1,)
    ks: tuple[int, ...] = (3,)
    evidence_step: float = 1.0
    jobs: int = 1
    audit: bool = False

    def __post_init__(self):
        for name in ("topologies", "lambdas", "families", "q_grid", "N_grid", "epsilons", "ks", "beta"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.sim_id not in SIM_IDS:
            raise ConfigError(f"sim_id must be one of {SIM_IDS}")
        if self.n < 2 or self.T < 0 or self.trials < 1 or self.jobs < 1:
            raise ConfigError("need n >= 2, T >= 0, trials >= 1, jobs >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("edge probability must lie in [0,1]")
        if self.w0 < 0 or self.ws < 0 or self.gamma <= 0:
            raise ConfigError("need w0, ws >= 0 and gamma > 0")
        for lam in (self.lam,) + self.lambdas:
            if not 0.0 <= lam < 1.0:
                raise ConfigError("dilution lambda must lie in [0,1)")
        if not 0.5 <= self.threshold <= 1.0:
            raise ConfigError("cascade threshold must lie in [0.5,1]")
        if len(self.beta) != 2 or min(self.beta) <= 0:
            raise ConfigError("beta needs two positive shape parameters")
        if any(not 0.0 <= q < 1.0 for q in self.q_grid):
            raise ConfigError("miss probabilities must lie in [0,1)")
        if any(N < 1 for N in self.N_grid):
            raise ConfigError("token counts must be positive")
        if not 0.0 < self.rho <= 1.0 or any(not 0.0 <= e <= 1.0 for e in self.epsilons):
            raise ConfigError("rho must lie in (0,1] and epsilons in [0,1]")
        if any(k < 1 for k in self.ks) or self.evidence_step <= 0:
            raise ConfigError("k must be positive and the evidence step positive")
        for t in self.topologies:
            if t not in ("ring", "er", "complete", "star", "grid", "path"):
                raise ConfigError(f"unknown topology {t!r}")

    @classmethod
    def for_sim(cls, sim_id: str, **overrides) -> "SimConfig":
        base = dict(SIM_DEFAULTS.get(sim_id, {}))
        base.update(overrides)
        return cls(sim_id=sim_id, **base)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        sim_id = d.pop("sim_id", "I")
        return cls.for_sim(sim_id, **d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


SIM_DEFAULTS: dict[str, dict] = {
    "I": {},
    "Ib": {},
    "II": {"trials": 2000},
    "III": {"trials": 10, "n": 16},
    "IV": {"trials": 10_000},
    "V": {"trials": 10_000},
    "VI": {"n": 25, "T": 8, "trials": 400, "p": 0.15, "beta": (4.0, 6.0), "epsilons": (0.0, 0.1, 0.2, 0.3),
           "ks": (1, 3, 5)},
}


@dataclass
class SimMetrics:
    sim_id: str
    rows: list[dict] = field(default_factory=list)  # one per condition
    trajectories: list[dict] = field(default_factory=list)
    raw: list[dict] = field(default_factory=list)  # one per trial and condition

    def row(self, **keys) -> dict:
        hits = [r for r in self.rows if all(r.get(k) == v for k, v in keys.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {keys}")
        return hits[0]


# -- shared helpers ------------------------------------------------------------------


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))))


def wilson_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n < 1 or not 0 <= successes <= n:
        raise ValueError("need n >= 1 and 0 <= successes <= n")
    z = NormalDist().inv_cdf(1 - (1 - level) / 2)
    ph = successes / n
    denom = 1 + z * z / n
    centre = (ph + z * z / (2 * n)) / denom
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def flip_stats(raw: Sequence, social: Sequence, truth: Sequence) -> tuple[int, int, int]:
    if not len(raw) == len(social) == len(truth):
        raise LengthMismatch(f"lengths {len(raw)}, {len(social)}, {len(truth)}")
    harmful = beneficial = neutral = 0
    for r, s, t in zip(raw, social, truth):
        if r == s:
            continue
        if r == t and s != t:
            harmful += 1
        elif r != t and s == t:
            beneficial += 1
        else:
            neutral += 1
    return harmful, beneficial, neutral


def _pool_operator(g: Graph, w0: float, ws: float) -> tuple[np.ndarray, np.ndarray]:
    n = g.n
    a = g.adjacency().T  # a[i, j] = 1 when j -> i, so row i lists whom i hears from
    deg = a.sum(axis=1)
    w = np.minimum(0.95, w0 + ws * deg / (n - 1))
    mix = a + np.eye(n)
    mix /= mix.sum(axis=1, keepdims=True)
    return mix, w


def _pool_sharpen(b: np.ndarray, mix: np.ndarray, w: np.ndarray, gamma: float) -> np.ndarray:
    s = mix @ b
    nb = b ** (1 - w[:, None]) * s ** w[:, None]
    nb /= nb.sum(axis=1, keepdims=True)
    nb = nb**gamma
    nb /= nb.sum(axis=1, keepdims=True)
    return nb


def social_pool_sharpen(beliefs, g: Graph, w0: float, ws: float, gamma: float):
    """One baseline round: degree-modulated geometric pooling, then sharpening.

    Accepts an (n, m) array or a sequence of Beliefs and returns the same kind.
    """
    as_beliefs = not isinstance(beliefs, np.ndarray)
    b = np.array([x.weights for x in beliefs] if as_beliefs else beliefs, dtype=float)
    if b.shape[0] != g.n:
        raise ValueError(f"{b.shape[0]} beliefs for {g.n} agents")
    mix, w = _pool_operator(g, w0, ws)
    out = _pool_sharpen(b, mix, w, gamma)
    return [Belief(tuple(row)) for row in out] if as_beliefs else out


def _is_cascade(b: np.ndarray, truth: int, threshold: float) -> bool:
    return bool(np.all((b.argmax(axis=1) != truth) & (b.max(axis=1) >= threshold)))


def _fallback_contract(lam: float) -> Contract:
    c = support_contract(HYPS, k=1, lam=lam if lam > 0 else 0.1)
    return c if lam > 0 else replace(c, fallback=Identity())


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _social_event(i: int, t: int, g: Graph, beliefs: Sequence[Belief], tokens_of=None) -> Event:
    msgs = []
    for j in g.in_neighbors(i):
        bj = beliefs[j]
        top = argmax(bj)
        toks = tuple(tokens_of(j)) if tokens_of is not None else ()
        msgs.append(Message(f"a{j}", frozenset({f"a{i}"}), t, toks, f"I am {conf(bj):.0%} sure it is {HYPS[top]}.", conf(bj)))
    return Event(f"a{i}", t, tuple(msgs))


# -- audit checks on enforced and baseline runs -------------------------------------------


@dataclass
class AuditTally:
    runs: int = 0
    chain_breaks: int = 0
    attribution_violations: int = 0
    stability_failures: int = 0
    accountability_failures: int = 0

    def add(self, other: "AuditTally") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


_FORMULAS: dict = {}


def _formulas(c: Contract):
    from .cddl import accountability_formula, social_stability_formula

    key = json.dumps(c.to_dict(), sort_keys=True)
    hit = _FORMULAS.get(key)
    if hit is None:
        hit = (social_stability_formula(c), accountability_formula(c))
        _FORMULAS[key] = hit
    return hit


def audit_run(log: AuditLog, events: Sequence[Event], c: Contract, cfg: ValidityConfig, initial: Belief) -> AuditTally:
    """Chain, attribution, and both logic invariants on one agent's run."""
    from .cddl import abstract_run, check_invariant

    out = AuditTally(runs=1)
    if verify_audit(log) is not None:
        out.chain_breaks += 1
    try:
        attribute_flip(log, initial)
    except AttributionViolation:
        out.attribution_violations += 1
    k = abstract_run(log, events, c, cfg, initial=initial)
    stability, accountability = _formulas(c)
    out.stability_failures += check_invariant(k, stability) is not None
    out.accountability_failures += check_invariant(k, accountability) is not None
    return out


def _baseline_log(agent: str, events: Sequence[Event], traj: Sequence[Belief], cfg: ValidityConfig) -> AuditLog:
    """Unenforced updates logged as they would look to an auditor: no certificate."""
    log = AuditLog()
    for e, b in zip(events, traj):
        append_audit(log, round=e.round, agent=agent, event_digest=event_digest(e), valid_token_ids=(),
                     certificate=FALLBACK_CERT, belief_after=b)
    return log


def _tally_dict(prefix: str, t: AuditTally) -> dict:
    return {f"{prefix}{f.name}": getattr(t, f.name) for f in fields(t)}


# -- Simulation I / Ib --------------------------------------------------------------------


def _topology(name: str, n: int, p: float, rng: np.random.Generator) -> Graph:
    if name == "er":
        return erdos_renyi(n, p, rng)
    return graph_family(name, n, rng, p)


def _sim1_trial(args) -> list[dict]:
    cfg, trial = args
    rng = trial_rng(cfg.seed, trial)
    x = rng.beta(cfg.beta[0], cfg.beta[1], cfg.n)
    b0 = np.stack([x, 1 - x], axis=1)
    graphs = {name: _topology(name, cfg.n, cfg.p, rng) for name in cfg.topologies}
    lams = cfg.lambdas if cfg.sim_id == "Ib" else (cfg.lam,)
    vcfg = ValidityConfig()
    out = []
    for name in cfg.topologies:
        g = graphs[name]
        mix, w = _pool_operator(g, cfg.w0, cfg.ws)
        b = b0.copy()
        traj = [b]
        for _ in range(cfg.T):
            b = _pool_sharpen(b, mix, w, cfg.gamma)
            traj.append(b)
        row = {
            "topology": name, "arm": "baseline", "lam": "", "trial": trial,
            "cascade": int(_is_cascade(b, 0, cfg.threshold)),
            "mean_conf_T": float(b.max(axis=1).mean()),
            "ptrue": [float(s[:, 0].mean()) for s in traj],
            "conf": [float(s.max(axis=1).mean()) for s in traj],
        }
        if cfg.audit:
            row.update(_sim1_baseline_audit(cfg, g, traj, vcfg))
        out.append(row)
        for lam in lams:
            out.append(_sim1_pbrc(cfg, g, b0, lam, trial, name, vcfg))
    return out


def _sim1_baseline_audit(cfg: SimConfig, g: Graph, traj: list[np.ndarray], vcfg: ValidityConfig) -> dict:
    c = _fallback_contract(cfg.lam)
    tally = AuditTally()
    flips = 0
    as_beliefs = [[Belief(tuple(row)) for row in s] for s in traj]
    for i in range(g.n):
        events = [_social_event(i, t, g, as_beliefs[t]) for t in range(cfg.T)]
        agent_traj = [as_beliefs[t + 1][i] for t in range(cfg.T)]
        flips += any(argmax_set(b) != argmax_set(as_beliefs[0][i]) for b in agent_traj)
        log = _baseline_log(f"a{i}", events, agent_traj, vcfg)
        tally.add(audit_run(log, events, c, vcfg, as_beliefs[0][i]))
    return {"flip_agents": flips, **_tally_dict("audit_", tally)}


def _sim1_pbrc(cfg, g, b0, lam, trial, name, vcfg) -> dict:
    c = _fallback_contract(lam)
    rc = RouterConfig()
    beliefs = [Belief(tuple(r)) for r in b0]
    logs = [AuditLog() if cfg.audit else None for _ in range(g.n)]
    routers = [Router(c, rc, vcfg, agent=f"a{i}", log=logs[i]) for i in range(g.n)]
    events_of = [[] for _ in range(g.n)]
    ptrue = [float(np.mean([b[0] for b in beliefs]))]
    confs = [float(np.mean([conf(b) for b in beliefs]))]
    for t in range(cfg.T):
        nxt = []
        for i in range(g.n):
            e = _social_event(i, t, g, beliefs)
            if cfg.audit:
                events_of[i].append(e)
            nxt.append(routers[i].step(beliefs[i], e).belief)
        beliefs = nxt
        ptrue.append(float(np.mean([b[0] for b in beliefs])))
        confs.append(float(np.mean([conf(b) for b in beliefs])))
    arr = np.array([b.weights for b in beliefs])
    row = {
        "topology": name, "arm": "pbrc", "lam": lam, "trial": trial,
        "cascade": int(_is_cascade(arr, 0, cfg.threshold)),
        "mean_conf_T": float(arr.max(axis=1).mean()),
        "ptrue": ptrue, "conf": confs,
    }
    if cfg.audit:
        tally = AuditTally()
        for i in range(g.n):
            tally.add(audit_run(logs[i], events_of[i], c, vcfg, Belief(tuple(b0[i]))))
        row.update(_tally_dict("audit_", tally))
    return row


def _aggregate_sim1(cfg: SimConfig, per_trial: list[list[dict]]) -> SimMetrics:
    m = SimMetrics(cfg.sim_id)
    groups: dict = {}
    for rows in per_trial:
        for r in rows:
            groups.setdefault((r["topology"], r["arm"], r["lam"]), []).append(r)
    order = {t: i for i, t in enumerate(cfg.topologies)}
    for key in sorted(groups, key=lambda k: (order[k[0]], k[1], str(k[2]))):
        rs = groups[key]
        casc = sum(r["cascade"] for r in rs)
        lo, hi = wilson_ci(casc, len(rs))
        row = {
            "topology": key[0], "arm": key[1], "lam": key[2], "trials": len(rs), "cascades": casc,
            "cascade_rate": casc / len(rs), "ci_lo": lo, "ci_hi": hi,
            "mean_conf_T": float(np.mean([r["mean_conf_T"] for r in rs])),
        }
        for k in sorted(rs[0]):
            if k.startswith("audit_") or k == "flip_agents":
                row[k] = sum(r[k] for r in rs)
        m.rows.append(row)
        for t in range(cfg.T + 1):
            m.trajectories.append({
                "topology": key[0], "arm": key[1], "lam": key[2], "round": t,
                "mean_ptrue": float(np.mean([r["ptrue"][t] for r in rs])),
                "mean_conf": float(np.mean([r["conf"][t] for r in rs])),
            })
        m.raw.extend({k: v for k, v in r.items() if k not in ("ptrue", "conf")} for r in rs)
    return m


# -- Simulation II ----------------------------------------------------------------------------

_LABEL_CHOICES = ({"h0": "supports"}, {"h1": "supports"}, {}, {"h0": "contradicts"}, {"h0": "supports", "h1": "contradicts"})


def _random_split(toks, rng, n_msgs: int) -> list[list]:
    parts = [[] for _ in range(n_msgs)]
    for t in toks:
        parts[int(rng.integers(n_msgs))].append(t)
        if rng.random() < 0.3:  # occasional duplicate in another message
            parts[int(rng.integers(n_msgs))].append(t)
    return parts


def _rhetorical_event(receiver: str, rnd: int, valid_toks, junk, rng) -> Event:
    toks = list(valid_toks) + list(junk)
    order = rng.permutation(len(toks)) if toks else []
    toks = [toks[i] for i in order]
    n_msgs = int(rng.integers(1, 4))
    msgs = []
    for k, part in enumerate(_random_split(toks, rng, n_msgs)):
        sender = f"s{int(rng.integers(100))}"
        text = rng.choice(["Trust me.", "Everyone agrees.", "The data is clear.", "I am certain.", ""])
        msgs.append(Message(sender, frozenset({receiver}), rnd, tuple(part), f"{text} #{k}", float(rng.random())))
    return Event(receiver, rnd, tuple(msgs))


def _sim2_trial(args) -> dict:
    cfg, trial = args
    rng = trial_rng(cfg.seed, trial)
    c = support_contract(HYPS, k=1)
    vcfg = ValidityConfig()
    n_valid = int(rng.integers(0, 5))
    valid = [
        issue_token(KEY, f"v{trial}-{j}", issued_at=0, support_labels=_LABEL_CHOICES[int(rng.integers(len(_LABEL_CHOICES)))])
        for j in range(n_valid)
    ]

    def junk(tag):
        return [forge_token(None, f"junk{tag}-{trial}-{j}", support_labels={"h1": "supports"}) for j in range(int(rng.integers(0, 3)))]

    x = rng.dirichlet([1.0, 1.0])
    b = Belief(tuple(x))
    e1 = _rhetorical_event("a0", 1, valid, junk("a"), rng)
    e2 = _rhetorical_event("a0", 1, valid, junk("b"), rng)
    rc = RouterConfig()
    s1 = Router(c, rc, vcfg).step(b, e1)
    s2 = Router(c, rc, vcfg).step(b, e2)
    same = s1.belief.weights == s2.belief.weights and s1.certificate == s2.certificate
    return {"trial": trial, "n_valid": n_valid, "mismatch": int(not same)}


def sender_sensitive_mismatch() -> int:
    """The constructed pair for the necessity direction: same token, different sender."""
    from .adversary import sender_sensitive_contract

    c = sender_sensitive_contract("trusted", HYPS)
    vcfg = ValidityConfig()
    tok = issue_token(KEY, "tau", support_labels={"h0": "supports"})
    b = Belief((0.5, 0.5))
    e1 = Event("a0", 1, (Message("trusted", frozenset({"a0"}), 1, (tok,), "see attached"),))
    e2 = Event("a0", 1, (Message("mallory", frozenset({"a0"}), 1, (tok,), "see attached"),))
    s1 = Router(c, RouterConfig(), vcfg).step(b, e1)
    s2 = Router(c, RouterConfig(), vcfg).step(b, e2)
    return int(s1.belief.weights != s2.belief.weights or s1.certificate != s2.certificate)


# -- Simulation III ---------------------------------------------------------------------------


def measured_closure(g: Graph) -> float:
    """Round at which flooding first gives every agent every token."""
    placement = unique_placement(g.n)
    everything = frozenset().union(*placement.values())
    res = flood(g, placement, g.n)
    for t, know in enumerate(res.knowledge):
        if all(k == everything for k in know):
            return t
    return math.inf


def _sim3_graph(family: str, n: int, p: float, rng) -> Graph:
    if family == "grid":
        side = max(2, int(round(math.sqrt(n))))
        return grid(side, side)
    return _topology(family, n, p, rng)


def _sim3_trial(args) -> list[dict]:
    cfg, trial = args
    rng = trial_rng(cfg.seed, trial)
    out = []
    for fam in cfg.families:
        g = _sim3_graph(fam, cfg.n, cfg.p, rng)
        d = diameter(g)
        cl = measured_closure(g)
        out.append({"family": fam, "trial": trial, "n": g.n, "diameter": d, "closure": cl, "match": int(d == cl)})
    return out


# -- Simulation IV ---------------------------------------------------------------------------


def _sim4_trial(args) -> list[dict]:
    cfg, trial = args
    c = support_contract(HYPS, k=1, step=2.0)
    vcfg = ValidityConfig()
    tok = issue_token(KEY, "persistent", support_labels={"h0": "supports"})
    b0 = Belief((0.3, 0.7))
    out = []
    for qi, q in enumerate(cfg.q_grid):
        rng = trial_rng(cfg.seed, trial, qi)
        log = AuditLog() if cfg.audit else None
        router = Router(c, RouterConfig(completeness_probability=1.0 - q), vcfg, rng=rng, log=log)
        b = b0
        events = []
        adopted = None
        unsafe = 0
        for t in range(1, cfg.max_rounds + 1):
            e = Event("a0", t, (Message("tool", frozenset({"a0"}), t, (tok,), "lookup result"),))
            step = router.step(b, e)
            if argmax_set(step.belief) != argmax_set(b) and not step.certificate.witness:
                unsafe += 1
            b = step.belief
            events.append(e)
            if argmax(b) == 0:
                adopted = t
                break
        row = {"q": q, "trial": trial, "adoption_round": adopted if adopted is not None else "", "unsafe_steps": unsafe}
        if cfg.audit:
            row.update(_tally_dict("audit_", audit_run(log, events, c, vcfg, b0)))
        out.append(row)
    return out


# -- Simulation V ------------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _cost_tokens(N: int) -> tuple:
    relevant = issue_token(KEY, "relevant", issued_at=0, support_labels={"h0": "supports"})
    return relevant, tuple(issue_token(KEY, f"n{j:03d}", issued_at=0) for j in range(N - 1))


def _cost_event(N: int, relevant_pos: int) -> Event:
    """N valid tokens; only the one at ``relevant_pos`` satisfies the top trigger."""
    relevant, rest = _cost_tokens(N)
    toks = rest[:relevant_pos] + (relevant,) + rest[relevant_pos:]
    return Event("a0", 1, (Message("flooder", frozenset({"a0"}), 1, tuple(toks), "lots of documents"),))


def _sim5_trial(args) -> list[dict]:
    cfg, trial = args
    rng = trial_rng(cfg.seed, trial)
    c = support_contract(HYPS, k=1)
    vcfg = ValidityConfig()
    b = Belief((0.5, 0.5))
    out = []
    for N in cfg.N_grid:
        pos = int(rng.integers(N))
        full = Router(c, RouterConfig(), vcfg)
        full.step(b, _cost_event(N, pos))
        sc_cfg = RouterConfig(short_circuit=True, token_determined=False)
        sc = Router(c, sc_cfg, vcfg)
        sc.step(b, _cost_event(N, pos))
        adv = Router(c, sc_cfg, vcfg)
        adv.step(b, _cost_event(N, N - 1))
        out.append({"N": N, "trial": trial, "full": full.validations, "short_circuit_random": sc.validations,
                    "short_circuit_adversarial": adv.validations})
    return out


# -- Simulation VI -----------------------------------------------------------------------------


def _sim6_trial(args) -> list[dict]:
    cfg, trial = args
    rng = trial_rng(cfg.seed, trial)
    truth = 1
    x = rng.beta(cfg.beta[0], cfg.beta[1], cfg.n)  # mass on the true hypothesis
    b0 = np.stack([1 - x, x], axis=1)
    g = erdos_renyi(cfg.n, cfg.p, rng)
    seeded = sorted(int(i) for i in rng.choice(cfg.n, size=max(1, int(round(cfg.rho * cfg.n))), replace=False))
    flips_u = rng.random(len(seeded))  # shared across epsilons: a label flips iff u < eps
    vcfg = ValidityConfig()
    out = []
    mix, w = _pool_operator(g, cfg.w0, cfg.ws)
    for eps in cfg.epsilons:
        toks = {}
        for slot, i in enumerate(seeded):
            flipped = flips_u[slot] < eps
            labels = {"h0": "supports", "h1": "contradicts"} if flipped else {"h1": "supports", "h0": "contradicts"}
            toks[i] = frozenset({issue_token(KEY, f"ev{i:02d}", issued_at=0, support_labels=labels)})
        fl = flood(g, toks, cfg.T)
        out.append(_sim6_none(cfg, trial, eps, b0, truth))
        out.append(_sim6_baseline(cfg, trial, eps, b0, truth, fl, mix, w))
        for k in cfg.ks:
            out.append(_sim6_pbrc(cfg, trial, eps, k, b0, truth, g, fl, vcfg))
    return out


def _acc(b: np.ndarray, truth: int) -> float:
    return float(np.mean(b.argmax(axis=1) == truth))


def _sim6_none(cfg, trial, eps, b0, truth) -> dict:
    acc = _acc(b0, truth)
    return {"arm": "none", "eps": eps, "k": "", "trial": trial, "acc": [acc] * (cfg.T + 1),
            "cascade": int(_is_cascade(b0, truth, cfg.threshold)), "early_cascades": 0}


def _sim6_baseline(cfg, trial, eps, b0, truth, fl, mix, w) -> dict:
    b = b0.copy()
    accs = [_acc(b, truth)]
    for t in range(cfg.T):
        b = _pool_sharpen(b, mix, w, cfg.gamma)
        net = np.array([
            sum(tok.supports("h1") for tok in fl.knowledge[t + 1][i]) - sum(tok.supports("h0") for tok in fl.knowledge[t + 1][i])
            for i in range(len(b))
        ], dtype=float)
        logit = np.log(np.clip(b[:, 1], 1e-12, 1 - 1e-12)) - np.log(np.clip(b[:, 0], 1e-12, 1 - 1e-12))
        p1 = 1.0 / (1.0 + np.exp(-(logit + cfg.evidence_step * net)))
        b = np.stack([1 - p1, p1], axis=1)
        accs.append(_acc(b, truth))
    return {"arm": "baseline", "eps": eps, "k": "", "trial": trial, "acc": accs,
            "cascade": int(_is_cascade(b, truth, cfg.threshold)), "early_cascades": 0}


def _sim6_pbrc(cfg, trial, eps, k, b0, truth, g, fl, vcfg) -> dict:
    c = support_contract(HYPS, k=k, step=cfg.evidence_step, lam=cfg.lam)
    beliefs = [Belief(tuple(r)) for r in b0]
    logs = [AuditLog() if cfg.audit else None for _ in range(g.n)]
    routers = [Router(c, RouterConfig(), vcfg, agent=f"a{i}", log=logs[i]) for i in range(g.n)]
    events_of = [[] for _ in range(g.n)]
    accs = [_acc(np.array([b.weights for b in beliefs]), truth)]
    early = 0
    for t in range(cfg.T):
        know = fl.knowledge[t]
        held = [frozenset(know[i]) for i in range(g.n)]
        nxt = []
        for i in range(g.n):
            msgs = [Message("self", frozenset({f"a{i}"}), t, tuple(sorted(held[i], key=lambda x: x.id)), "my notes")]
            for j in g.in_neighbors(i):
                bj = beliefs[j]
                msgs.append(Message(f"a{j}", frozenset({f"a{i}"}), t, tuple(sorted(held[j], key=lambda x: x.id)),
                                    f"I lean {HYPS[argmax(bj)]}.", conf(bj)))
            e = Event(f"a{i}", t, tuple(msgs))
            if cfg.audit:
                events_of[i].append(e)
            nxt.append(routers[i].step(beliefs[i], e).belief)
        # an agent "holds k supporters" once some event it sees carries k tokens backing one hypothesis
        exposed = [held[i].union(*(held[j] for j in g.in_neighbors(i))) for i in range(g.n)]
        anyone_k = any(sum(tok.supports(h) for tok in ex) >= k for ex in exposed for h in HYPS)
        beliefs = nxt
        arr = np.array([b.weights for b in beliefs])
        accs.append(_acc(arr, truth))
        if not anyone_k and _is_cascade(arr, truth, cfg.threshold):
            early += 1
    arr = np.array([b.weights for b in beliefs])
    row = {"arm": "pbrc", "eps": eps, "k": k, "trial": trial, "acc": accs,
           "cascade": int(_is_cascade(arr, truth, cfg.threshold)), "early_cascades": early}
    if cfg.audit:
        tally = AuditTally()
        for i in range(g.n):
            tally.add(audit_run(logs[i], events_of[i], c, vcfg, Belief(tuple(b0[i]))))
        row.update(_tally_dict("audit_", tally))
    return row


# -- driver ---------------------------------------------------------------------------------------


def _flatten(xs):
    return [r for rows in xs for r in (rows if isinstance(rows, list) else [rows])]


def run_sim(cfg: SimConfig) -> SimMetrics:
    items = [(cfg, t) for t in range(cfg.trials)]
    sid = cfg.sim_id
    if sid in ("I", "Ib"):
        return _aggregate_sim1(cfg, _map(_sim1_trial, items, cfg.jobs))
    m = SimMetrics(sid)
    if sid == "II":
        raw = _map(_sim2_trial, items, cfg.jobs)
        m.raw = raw
        m.rows.append({"pairs": len(raw), "mismatches": sum(r["mismatch"] for r in raw),
                       "sender_sensitive_mismatches": sender_sensitive_mismatch()})
        return m
    if sid == "III":
        raw = _flatten(_map(_sim3_trial, items, cfg.jobs))
        m.raw = raw
        for fam in cfg.families:
            rs = [r for r in raw if r["family"] == fam]
            m.rows.append({"family": fam, "instances": len(rs), "matches": sum(r["match"] for r in rs),
                           "mean_diameter": float(np.mean([r["diameter"] for r in rs]))})
        return m
    if sid == "IV":
        raw = _flatten(_map(_sim4_trial, items, cfg.jobs))
        m.raw = raw
        for q in cfg.q_grid:
            rs = [r for r in raw if r["q"] == q]
            times = [r["adoption_round"] for r in rs if r["adoption_round"] != ""]
            row = {"q": q, "trials": len(rs), "adopted": len(times),
                   "mean_adoption_round": float(np.mean(times)) if times else math.inf,
                   "expected": 1.0 / (1.0 - q), "unsafe_steps": sum(r["unsafe_steps"] for r in rs)}
            for key in sorted(rs[0]):
                if key.startswith("audit_"):
                    row[key] = sum(r[key] for r in rs)
            m.rows.append(row)
        return m
    if sid == "V":
        raw = _flatten(_map(_sim5_trial, items, cfg.jobs))
        m.raw = raw
        for N in cfg.N_grid:
            rs = [r for r in raw if r["N"] == N]
            row = {"N": N, "trials": len(rs)}
            for arm in ("full", "short_circuit_random", "short_circuit_adversarial"):
                vals = [r[arm] for r in rs]
                row[f"{arm}_mean"] = float(np.mean(vals))
                row[f"{arm}_min"] = int(min(vals))
                row[f"{arm}_max"] = int(max(vals))
            row["expected_random"] = (N + 1) / 2
            m.rows.append(row)
        return m
    raw = _flatten(_map(_sim6_trial, items, cfg.jobs))
    keys = []
    for r in raw:
        key = (r["arm"], r["eps"], r["k"])
        if key not in keys:
            keys.append(key)
    for key in keys:
        rs = [r for r in raw if (r["arm"], r["eps"], r["k"]) == key]
        casc = sum(r["cascade"] for r in rs)
        lo, hi = wilson_ci(casc, len(rs))
        row = {"arm": key[0], "eps": key[1], "k": key[2], "trials": len(rs),
               "final_accuracy": float(np.mean([r["acc"][-1] for r in rs])),
               "cascade_rate": casc / len(rs), "ci_lo": lo, "ci_hi": hi,
               "early_cascades": sum(r["early_cascades"] for r in rs)}
        for k in sorted(rs[0]):
            if k.startswith("audit_"):
                row[k] = sum(r[k] for r in rs)
        m.rows.append(row)
        for t in range(cfg.T + 1):
            m.trajectories.append({"arm": key[0], "eps": key[1], "k": key[2], "round": t,
                                   "mean_accuracy": float(np.mean([r["acc"][t] for r in rs]))})
    m.raw = [{k: v for k, v in r.items() if k != "acc"} for r in raw]
    return m


# -- output --------------------------------------------------------------------------------------


def _fmt(v) -> Any:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return v


def write_csv(path: str, rows: Sequence[Mapping]) -> None:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in cols})


def write_outputs(m: SimMetrics, cfg: SimConfig, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, n) for n in ("metrics.csv", "trajectories.csv", "raw.csv", "manifest.json")]
    write_csv(paths[0], m.rows)
    write_csv(paths[1], m.trajectories)
    write_csv(paths[2], m.raw)
    manifest = {"sim_id": cfg.sim_id, "seed": cfg.seed, "config": {k: v for k, v in cfg.to_dict().items() if k != "jobs"}}
    with open(paths[3], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def export_sim1_run(cfg: SimConfig, out_dir: str, trial: int = 0, topology: str = "complete") -> dict:
    """Write one agent's baseline and enforced runs as JSONL for the audit tools.

    The agent is the first one whose baseline argmax changes (agent 0 if none
    does). Files: contract.json, {baseline,pbrc}_log.jsonl,
    {baseline,pbrc}_events.jsonl and run.json with the initial belief.
    """
    from .contract import save_contract
    from .evidence import save_events

    rng = trial_rng(cfg.seed, trial)
    x = rng.beta(cfg.beta[0], cfg.beta[1], cfg.n)
    b0 = np.stack([x, 1 - x], axis=1)
    graphs = {name: _topology(name, cfg.n, cfg.p, rng) for name in cfg.topologies}
    g = graphs[topology] if topology in graphs else _topology(topology, cfg.n, cfg.p, rng)
    vcfg = ValidityConfig()
    c = _fallback_contract(cfg.lam)

    mix, w = _pool_operator(g, cfg.w0, cfg.ws)
    traj = [b0]
    for _ in range(cfg.T):
        traj.append(_pool_sharpen(traj[-1], mix, w, cfg.gamma))
    base = [[Belief(tuple(row)) for row in s] for s in traj]
    agent = next((i for i in range(g.n) if any(argmax(base[t][i]) != argmax(base[0][i]) for t in range(1, cfg.T + 1))), 0)
    base_events = [_social_event(agent, t, g, base[t]) for t in range(cfg.T)]
    base_log = _baseline_log(f"a{agent}", base_events, [base[t + 1][agent] for t in range(cfg.T)], vcfg)

    beliefs = [Belief(tuple(r)) for r in b0]
    log = AuditLog()
    routers = [Router(c, RouterConfig(), vcfg, agent=f"a{i}", log=log if i == agent else None) for i in range(g.n)]
    pbrc_events = []
    for t in range(cfg.T):
        nxt = []
        for i in range(g.n):
            e = _social_event(i, t, g, beliefs)
            if i == agent:
                pbrc_events.append(e)
            nxt.append(routers[i].step(beliefs[i], e).belief)
        beliefs = nxt

    os.makedirs(out_dir, exist_ok=True)
    save_contract(c, os.path.join(out_dir, "contract.json"))
    base_log.save(os.path.join(out_dir, "baseline_log.jsonl"))
    save_events(os.path.join(out_dir, "baseline_events.jsonl"), base_events)
    log.save(os.path.join(out_dir, "pbrc_log.jsonl"))
    save_events(os.path.join(out_dir, "pbrc_events.jsonl"), pbrc_events)
    info = {"agent": f"a{agent}", "topology": topology, "trial": trial, "seed": cfg.seed,
            "initial": [float(v) for v in b0[agent]]}
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return info
