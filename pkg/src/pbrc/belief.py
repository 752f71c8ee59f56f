"""Belief distributions over a finite hypothesis set.

Beliefs are immutable probability vectors. Every operator returns a new
Belief; nothing mutates in place, so values can be shared across trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TIE_TOL = 1e-12
CLAMP = 1e-12


class NegativeMass(ValueError):
    pass


class ZeroMass(ValueError):
    pass


class SpaceMismatch(ValueError):
    pass


@dataclass(frozen=True)
class HypothesisSpace:
    """Ordered hypothesis labels; the order is the canonical tie-break order."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(labels) < 2:
            raise ValueError("a hypothesis space needs at least two labels")
        if len(set(labels)) != len(labels):
            raise ValueError("hypothesis labels must be distinct")
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class Belief:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        total = sum(w)
        if abs(total - 1.0) > 1e-9:
            if total <= 0 or min(w) < 0:
                raise ValueError("belief weights must be nonnegative with positive sum")
            w = tuple(x / total for x in w)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return len(self.weights)

    def array(self) -> np.ndarray:
        return np.array(self.weights, dtype=float)

    def __getitem__(self, i: int) -> float:
        return self.weights[i]

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self):
        return iter(self.weights)


@dataclass(frozen=True)
class DilutionParams:
    lam: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"dilution lambda must lie in (0,1), got {self.lam}")


@dataclass(frozen=True)
class LogOddsStep:
    target: int
    step: float
    cap: float

    def __post_init__(self):
        if self.cap < 0:
            raise ValueError("cap must be nonnegative")
        if abs(self.step) > self.cap:
            raise ValueError("|step| must not exceed cap")


def new_belief(weights: Iterable[float]) -> Belief:
    w = np.asarray(list(weights), dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("a belief needs at least two weights")
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise NegativeMass("weights must be nonnegative")
    total = float(w.sum())
    if total <= 0:
        raise ZeroMass("weights sum to zero")
    return Belief(tuple((w / total).tolist()))


def uniform(m: int) -> Belief:
    return Belief((1.0 / m,) * m)


def conf(b: Belief) -> float:
    return max(b.weights)


def argmax_set(b: Belief) -> frozenset[int]:
    top = conf(b)
    return frozenset(i for i, w in enumerate(b.weights) if top - w <= TIE_TOL)


def argmax(b: Belief) -> int:
    """Single top hypothesis, ties broken by canonical (lowest) index."""
    return min(argmax_set(b))


def tv(b: Belief, b2: Belief) -> float:
    if b.m != b2.m:
        raise SpaceMismatch(f"beliefs over {b.m} and {b2.m} hypotheses")
    return 0.5 * sum(abs(x - y) for x, y in zip(b.weights, b2.weights))


def _lam(p: DilutionParams | float) -> float:
    return p.lam if isinstance(p, DilutionParams) else DilutionParams(float(p)).lam


def dilute(b: Belief, p: DilutionParams | float) -> Belief:
    lam = _lam(p)
    u = 1.0 / b.m
    return Belief(tuple((1.0 - lam) * w + lam * u for w in b.weights))


def dilute_closed_form(b0: Belief, p: DilutionParams | float, t: int) -> Belief:
    if t < 0:
        raise ValueError("t must be nonnegative")
    lam = _lam(p)
    keep = (1.0 - lam) ** t
    u = 1.0 / b0.m
    return Belief(tuple(keep * w + (1.0 - keep) * u for w in b0.weights))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def logodds_update(b: Belief, s: LogOddsStep) -> Belief:
    """Shift logit(b[target]) by the capped step; the rest keeps its proportions."""
    step = max(-s.cap, min(s.cap, s.step))
    if step == 0.0:
        return b
    w = np.clip(np.array(b.weights), CLAMP, 1.0 - CLAMP)
    p = float(w[s.target])
    q = _sigmoid(math.log(p / (1.0 - p)) + step)
    rest = np.delete(w, s.target)
    rest = rest / rest.sum() * (1.0 - q)
    out = np.insert(rest, s.target, q)
    return Belief(tuple((out / out.sum()).tolist()))


def mass_shift(b: Belief, target: int, fraction: float) -> Belief:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0,1]")
    w = [(1.0 - fraction) * x for x in b.weights]
    w[target] += fraction
    return Belief(tuple(w))


def relabel(b: Belief, perm: Sequence[int]) -> Belief:
    """Belief with hypothesis perm[i] carrying the weight of hypothesis i."""
    out = [0.0] * b.m
    for i, j in enumerate(perm):
        out[j] = b.weights[i]
    return Belief(tuple(out))
