"""Bounded metaheuristic minimizers (GA, PSO) over mixed continuous/integer boxes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["SearchSpace", "SearchReport", "GAParams", "PSOParams", "ga_minimize", "pso_minimize"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    lower: np.ndarray
    upper: np.ndarray
    integrality: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in shape")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite with lower <= upper")
        integ = np.zeros(lo.shape, bool) if self.integrality is None else np.asarray(self.integrality, bool)
        if integ.shape != lo.shape:
            raise ValueError("integrality flags differ in shape from bounds")
        if np.any(np.ceil(lo[integ]) > np.floor(hi[integ])):
            raise ValueError("integer dimension has no integer inside its bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "integrality", integ)

    @property
    def dims(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def repair(self, x: np.ndarray) -> np.ndarray:
        """Clip into the box and round integer dimensions."""
        x = np.clip(x, self.lower, self.upper)
        if self.integrality.any():
            xi = np.clip(np.round(x[..., self.integrality]), np.ceil(self.lower[self.integrality]),
                         np.floor(self.upper[self.integrality]))
            x[..., self.integrality] = xi
        return x

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = self.lower + rng.random((n, self.dims)) * self.span
        if self.integrality.any():
            lo = np.ceil(self.lower[self.integrality])
            hi = np.floor(self.upper[self.integrality])
            x[:, self.integrality] = rng.integers(lo, hi + 1, size=(n, int(self.integrality.sum())))
        return x


@dataclass
class SearchReport:
    best_point: np.ndarray
    best_value: float
    evaluations: int
    history: list[float] = field(default_factory=list)
    stop_reason: str = ""


@dataclass(frozen=True)
class GAParams:
    pop: int = 200
    generations: int = 100
    seed: int = 0
    tournament: int = 3
    crossover: float = 0.9
    mutation: Optional[float] = None  # per-gene; default 1/dims
    sigma: float = 0.1  # mutation scale as a fraction of the range
    elite: int = 1
    stall_limit: Optional[int] = None


@dataclass(frozen=True)
class PSOParams:
    swarm: int = 100
    iters: int = 200
    stall_limit: Optional[int] = None
    seed: int = 0
    w: float = 0.729
    c1: float = 1.49445
    c2: float = 1.49445
    vmax: float = 0.2  # velocity clamp as a fraction of the range


Evaluator = Callable[[Callable, np.ndarray], Sequence[float]]


def serial_map(fn, xs):
    return [fn(x) for x in xs]


class _Counter:
    """Evaluates batches, counts calls, and replaces non-finite values by +inf."""

    def __init__(self, objective, evaluator: Optional[Evaluator]):
        self.objective = objective
        self.evaluator = evaluator or serial_map
        self.count = 0

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.evaluator(self.objective, list(xs)), dtype=float)
        self.count += len(xs)
        bad = ~np.isfinite(vals)
        if bad.any():
            log.debug("discarding %d non-finite objective values", int(bad.sum()))
            vals[bad] = np.inf
        return vals


def _initial(space, rng, n, initial_points):
    x = space.sample(rng, n)
    if initial_points is not None:
        init = np.atleast_2d(np.asarray(initial_points, dtype=float))[:n]
        x[: len(init)] = space.repair(init.copy())
    return x


def ga_minimize(objective, space: SearchSpace, params: GAParams = GAParams(), *, initial_points=None,
                evaluator: Optional[Evaluator] = None) -> SearchReport:
    """Real-coded GA: tournament selection, uniform crossover, Gaussian mutation, elitism."""
    rng = np.random.default_rng(params.seed)
    evaluate = _Counter(objective, evaluator)
    n, d = params.pop, space.dims
    p_mut = params.mutation if params.mutation is not None else 1.0 / d
    pop = _initial(space, rng, n, initial_points)
    fit = evaluate(pop)
    k = int(np.argmin(fit))
    best_x, best_f = pop[k].copy(), float(fit[k])
    history = [best_f]
    stall = 0
    reason = "generations"
    for _ in range(params.generations):
        # all random numbers for the generation are drawn before evaluation
        cand = rng.integers(0, n, size=(n, params.tournament))
        winners = cand[np.arange(n), np.argmin(fit[cand], axis=1)]
        parents = pop[winners]
        mates = parents[rng.permutation(n)]
        do_cx = rng.random(n) < params.crossover
        mask = (rng.random((n, d)) < 0.5) & do_cx[:, None]
        child = np.where(mask, mates, parents)
        mut = rng.random((n, d)) < p_mut
        child = child + mut * rng.normal(size=(n, d)) * params.sigma * space.span
        child = space.repair(child)
        order = np.argsort(fit, kind="stable")[: params.elite]
        child[: params.elite] = pop[order]
        cfit = evaluate(child[params.elite:])
        pop = child
        fit = np.concatenate([fit[order], cfit])
        k = int(np.argmin(fit))
        if fit[k] < best_f:
            best_x, best_f = pop[k].copy(), float(fit[k])
            stall = 0
        else:
            stall += 1
        history.append(best_f)
        if params.stall_limit is not None and stall >= params.stall_limit:
            reason = "stall"
            break
    return SearchReport(best_x, best_f, evaluate.count, history, reason)


def pso_minimize(objective, space: SearchSpace, params: PSOParams = PSOParams(), *, initial_points=None,
                 evaluator: Optional[Evaluator] = None) -> SearchReport:
    """Inertia-weight particle swarm with velocity clamping."""
    rng = np.random.default_rng(params.seed)
    evaluate = _Counter(objective, evaluator)
    n, d = params.swarm, space.dims
    vmax = params.vmax * space.span
    x = _initial(space, rng, n, initial_points)
    v = (rng.random((n, d)) * 2 - 1) * vmax
    f = evaluate(x)
    pbest, pbest_f = x.copy(), f.copy()
    k = int(np.argmin(f))
    best_x, best_f = x[k].copy(), float(f[k])
    history = [best_f]
    stall = 0
    reason = "iterations"
    for _ in range(params.iters):
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        v = params.w * v + params.c1 * r1 * (pbest - x) + params.c2 * r2 * (best_x - x)
        v = np.clip(v, -vmax, vmax)
        x = space.repair(x + v)
        f = evaluate(x)
        better = f < pbest_f
        pbest[better] = x[better]
        pbest_f[better] = f[better]
        k = int(np.argmin(pbest_f))
        if pbest_f[k] < best_f:
            best_x, best_f = pbest[k].copy(), float(pbest_f[k])
            stall = 0
        else:
            stall += 1
        history.append(best_f)
        if params.stall_limit is not None and stall >= params.stall_limit:
            reason = "stall"
            break
    return SearchReport(best_x, best_f, evaluate.count, history, reason)
