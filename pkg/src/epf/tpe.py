"""A compact Tree-structured Parzen Estimator.

The first ``max(10, n_trials // 4)`` trials are drawn at random. After that
the finished trials are split at the ``gamma`` quantile of their loss into
a good and a bad set. Each dimension gets a Parzen density per set: a
Gaussian mixture for numeric dimensions (log scale where declared) and
Laplace-smoothed frequencies for categorical ones. Candidates come from the
good model, and the one with the highest good/bad density ratio is tried next.

Everything that depends on trial history sorts the history first, so the
proposal does not depend on the order in which trials finished.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class SearchFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntDim:
    name: str
    low: int
    high: int
    log: bool = False

    def to_unit(self, v):
        return math.log(v) if self.log else float(v)

    def from_unit(self, u):
        v = math.exp(u) if self.log else u
        return int(min(max(round(v), self.low), self.high))

    @property
    def bounds(self):
        return (self.to_unit(self.low), self.to_unit(self.high))


@dataclass(frozen=True)
class FloatDim:
    name: str
    low: float
    high: float
    log: bool = False

    def to_unit(self, v):
        return math.log(v) if self.log else float(v)

    def from_unit(self, u):
        v = math.exp(u) if self.log else u
        return float(min(max(v, self.low), self.high))

    @property
    def bounds(self):
        return (self.to_unit(self.low), self.to_unit(self.high))


@dataclass(frozen=True)
class CatDim:
    name: str
    choices: tuple


Dim = IntDim | FloatDim | CatDim


@dataclass(frozen=True)
class Space:
    dims: tuple

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for d in self.dims:
            if isinstance(d, CatDim):
                out[d.name] = d.choices[int(rng.integers(len(d.choices)))]
            else:
                lo, hi = d.bounds
                out[d.name] = d.from_unit(rng.uniform(lo, hi))
        return out

    def key(self, params: dict) -> tuple:
        return tuple(repr(params[d.name]) for d in self.dims)


@dataclass
class TpeState:
    space: Space
    gamma: float = 0.25
    n_candidates: int = 24
    seed: int = 0
    trials: list = field(default_factory=list)  # (params, loss)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    def best(self) -> tuple[dict, float, int]:
        """Lowest finite loss; ties go to the earliest trial."""
        best_i, best_loss = -1, math.inf
        for i, (_, loss) in enumerate(self.trials):
            if math.isfinite(loss) and loss < best_loss:
                best_i, best_loss = i, loss
        if best_i < 0:
            raise SearchFailedError("every trial failed or diverged")
        return self.trials[best_i][0], best_loss, best_i


def n_warmup(n_trials: int) -> int:
    return max(10, n_trials // 4)


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


class _Numeric:
    """Gaussian Parzen mixture over observed points plus a flat prior component."""

    def __init__(self, points: np.ndarray, lo: float, hi: float):
        self.lo, self.hi = lo, hi
        self.points = np.sort(points)
        span = hi - lo
        n = self.points.size
        if n > 1:
            sd = 1.06 * self.points.std() * n ** (-0.2)
        else:
            sd = span / 2
        self.sigma = float(np.clip(sd, span / min(100.0, 1.0 + n), span))
        self.w_prior = 1.0 / (n + 1)

    def sample(self, rng) -> float:
        n = self.points.size
        if n == 0 or rng.random() < self.w_prior:
            return float(rng.uniform(self.lo, self.hi))
        centre = self.points[int(rng.integers(n))]
        return float(np.clip(rng.normal(centre, self.sigma), self.lo, self.hi))

    def logpdf(self, u: float) -> float:
        prior = self.w_prior / (self.hi - self.lo) if self.hi > self.lo else self.w_prior
        if self.points.size == 0:
            return math.log(prior)
        z = (u - self.points) / self.sigma
        comp = np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))
        return math.log(prior + (1 - self.w_prior) * comp.mean() + 1e-300)


class _Categorical:
    def __init__(self, values: Sequence, choices: tuple):
        counts = np.array([sum(1 for v in values if v == c) for c in choices], dtype=float)
        self.choices = choices
        self.p = (counts + 1.0) / (counts.sum() + len(choices))

    def sample(self, rng):
        return self.choices[int(rng.choice(len(self.choices), p=self.p))]

    def logpdf(self, v) -> float:
        return math.log(self.p[self.choices.index(v)])


def _model(space: Space, trials: list) -> list:
    models = []
    for d in space.dims:
        vals = [p[d.name] for p, _ in trials]
        if isinstance(d, CatDim):
            models.append(_Categorical(vals, d.choices))
        else:
            lo, hi = d.bounds
            models.append(_Numeric(np.array([d.to_unit(v) for v in vals], dtype=float), lo, hi))
    return models


def propose(state: TpeState, rng: np.random.Generator) -> dict:
    """Next configuration from the good/bad density ratio of finished trials."""
    space = state.space
    done = [(p, l) for p, l in state.trials if math.isfinite(l)]
    if not done:
        return space.sample(rng)
    done.sort(key=lambda t: (t[1], space.key(t[0])))
    n_good = max(1, math.ceil(state.gamma * len(done)))
    good_model = _model(space, done[:n_good])
    bad_model = _model(space, done[n_good:])

    best, best_score = None, -math.inf
    for _ in range(state.n_candidates):
        cand, score = {}, 0.0
        for d, gm, bm in zip(space.dims, good_model, bad_model):
            if isinstance(d, CatDim):
                v = gm.sample(rng)
                score += gm.logpdf(v) - bm.logpdf(v)
            else:
                u = gm.sample(rng)
                v = d.from_unit(u)
                u = d.to_unit(v)
                score += gm.logpdf(u) - bm.logpdf(u)
            cand[d.name] = v
        if score > best_score:
            best, best_score = cand, score
    return best


def tpe_search(objective: Callable[[dict], float], space: Space, n_trials: int, seed: int = 0,
               gamma: float = 0.25, n_candidates: int = 24) -> tuple[dict, TpeState]:
    """Minimise ``objective`` over ``space``; returns the best params and the history.

    Objectives that raise ``ArithmeticError`` or return a non-finite value
    count as diverged trials.
    """
    if n_trials < 10:
        raise ValueError("TPE needs at least 10 trials")
    state = TpeState(space, gamma, n_candidates, seed)
    warm = n_warmup(n_trials)
    for t in range(n_trials):
        rng = trial_rng(seed, t)
        params = space.sample(rng) if t < warm else propose(state, rng)
        try:
            loss = float(objective(params))
        except ArithmeticError:
            loss = math.inf
        if not math.isfinite(loss):
            loss = math.inf
        state.trials.append((params, loss))
    best, _, _ = state.best()
    return best, state
