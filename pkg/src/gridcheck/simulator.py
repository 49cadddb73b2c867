"""Monte Carlo oracle: sample CTMC paths by racing exponential clocks.

Random numbers come from numpy's Philox (a 64-bit counter-based generator)
seeded through ``SeedSequence([seed, stream...])``, so an estimate is fully
determined by the seed, the sample count and the query.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import bsccs
from .properties import (BOUNDED_F, BOUNDED_G, BOUNDED_U, CUMUL_REWARD, STEADY_PROB,
                         STEADY_REWARD, Property)
from .statespace import StateSpace

GENERATOR = "numpy.random.Philox"


class SimulationError(Exception):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


@dataclass
class Path:
    states: np.ndarray  # state index per segment
    sojourns: np.ndarray  # time spent in each segment
    labels: list  # action taken at the end of each segment, None for the last
    total_time: float

    def write(self, out, space: StateSpace) -> None:
        for s, tau, lab in zip(self.states, self.sojourns, self.labels):
            out.write(f"{s} {tau!r} {lab if lab is not None else '-'}\n")


@dataclass
class Estimate:
    value: float
    std_error: Optional[float]
    n: int
    seed: int
    generator: str = GENERATOR


def sample_path(space: StateSpace, horizon: float, seed: int, max_jumps: int = 10**6) -> Path:
    """One trajectory up to ``horizon``; self-loops are taken as real jumps."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = make_rng(seed)
    indptr = np.searchsorted(space.src, np.arange(space.n_states + 1))
    E = space.exit_rates
    s, t = space.initial, 0.0
    states, sojourns, labels = [], [], []
    for _ in range(max_jumps):
        rate = E[s]
        tau = rng.exponential(1.0 / rate) if rate > 0 else np.inf
        if t + tau >= horizon:
            states.append(s)
            sojourns.append(horizon - t)
            labels.append(None)
            t = horizon
            break
        lo, hi = indptr[s], indptr[s + 1]
        cum = np.cumsum(space.rate[lo:hi])
        k = lo + min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), hi - lo - 1)
        states.append(s)
        sojourns.append(tau)
        labels.append(space.labels[space.label[k]])
        t += tau
        s = int(space.dst[k])
    else:
        raise SimulationError(f"path exceeded {max_jumps} jumps before the horizon")
    return Path(np.array(states), np.array(sojourns), labels, t)


class _Tables:
    """Per-state jump tables with self-loops split off."""

    def __init__(self, space: StateSpace, reward: Optional[str]):
        n = space.n_states
        loop = space.src == space.dst
        move = ~loop
        self.E = np.bincount(space.src[move], weights=space.rate[move], minlength=n)
        self.src = space.src[move]
        self.dst = space.dst[move]
        self.rate = space.rate[move]
        self.indptr = np.searchsorted(self.src, np.arange(n + 1))
        self.degree = np.diff(self.indptr)
        self.max_degree = int(self.degree.max()) if n else 0
        self.state_reward = np.zeros(n)
        self.impulse = np.zeros(self.src.size)
        self.loop_rate = np.zeros((n, 0))
        self.loop_impulse = np.zeros((n, 0))
        if reward is not None:
            self.state_reward = space.state_reward_vector(reward)
            imp = space.transition_impulses(reward)
            self.impulse = imp[move]
            # loops that carry an impulse, padded to a per-state table
            ls, lr, li = space.src[loop], space.rate[loop], imp[loop]
            keep = li != 0
            ls, lr, li = ls[keep], lr[keep], li[keep]
            if ls.size:
                slot = np.arange(ls.size) - np.searchsorted(ls, ls)
                width = int(slot.max()) + 1
                self.loop_rate = np.zeros((n, width))
                self.loop_impulse = np.zeros((n, width))
                self.loop_rate[ls, slot] = lr
                self.loop_impulse[ls, slot] = li

    def choose(self, s: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Transition index for each state in ``s`` given uniforms ``u``."""
        start = self.indptr[s]
        deg = self.degree[s]
        target = u * self.E[s]
        acc = np.zeros(s.size)
        chosen = np.full(s.size, -1)
        for j in range(self.max_degree):
            live = (j < deg) & (chosen < 0)
            if not live.any():
                break
            k = start[live] + j
            acc[live] += self.rate[k]
            hit = np.flatnonzero(live)[acc[live] > target[live]]
            chosen[hit] = start[hit] + j
        left = chosen < 0  # rounding at the top of a row
        chosen[left] = start[left] + deg[left] - 1
        return chosen

    def loop_reward(self, s: np.ndarray, dt: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.loop_rate.shape[1] == 0:
            return np.zeros(s.size)
        counts = rng.poisson(self.loop_rate[s] * dt[:, None])
        return (counts * self.loop_impulse[s]).sum(axis=1)


def _simulate(space: StateSpace, tables: _Tables, n: int, rng: np.random.Generator,
              t_end: float, stop: Optional[np.ndarray] = None, window_start: float = 0.0,
              predicate: Optional[np.ndarray] = None):
    """Run ``n`` paths in lockstep until ``t_end``.

    Returns (stopped state or -1, reward accrued inside [window_start, t_end],
    time spent in ``predicate`` inside the same window).
    """
    state = np.full(n, space.initial)
    t = np.zeros(n)
    reward = np.zeros(n)
    occupied = np.zeros(n)
    stopped = np.full(n, -1)
    active = np.ones(n, dtype=bool)
    if stop is not None and stop[space.initial]:
        stopped[:] = space.initial
        return stopped, reward, occupied
    while active.any():
        idx = np.flatnonzero(active)
        s = state[idx]
        E = tables.E[s]
        with np.errstate(divide="ignore"):
            tau = rng.exponential(size=idx.size) / E
        t0 = t[idx]
        t1 = np.minimum(t0 + tau, t_end)
        dt = np.clip(t1 - np.maximum(t0, window_start), 0.0, None)
        reward[idx] += tables.state_reward[s] * dt + tables.loop_reward(s, dt, rng)
        if predicate is not None:
            occupied[idx] += np.where(predicate[s], dt, 0.0)
        jumps = t0 + tau < t_end
        done = idx[~jumps]
        active[done] = False
        t[done] = t_end
        idx, s = idx[jumps], s[jumps]
        if idx.size == 0:
            break
        k = tables.choose(s, rng.random(idx.size))
        when = t0[jumps] + tau[jumps]
        reward[idx] += np.where(when >= window_start, tables.impulse[k], 0.0)
        state[idx] = tables.dst[k]
        t[idx] = when
        if stop is not None:
            hit = stop[state[idx]]
            stopped[idx[hit]] = state[idx[hit]]
            active[idx[hit]] = False
    return stopped, reward, occupied


def _summary(samples: np.ndarray, seed: int) -> Estimate:
    n = samples.size
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else None
    return Estimate(mean, se, n, seed)


def estimate(space: StateSpace, prop: Property, n_samples: int, seed: int,
             horizon_for_steady: Optional[float] = None, warmup: float = 0.1) -> Estimate:
    """Statistical estimate of ``prop`` from ``n_samples`` independent paths.

    Steady-state kinds average the time fraction (or reward rate) observed
    after a warm-up over ``n_samples`` replications of length
    ``horizon_for_steady``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = make_rng(seed)
    kind = prop.kind
    if kind in (BOUNDED_F, BOUNDED_G, BOUNDED_U):
        tables = _Tables(space, None)
        phi2 = space.satisfying(prop.phi2)
        if kind == BOUNDED_G:
            good = ~phi2
            stop = good
        elif kind == BOUNDED_U:
            good = phi2
            stop = phi2 | (~space.satisfying(prop.phi1) & ~phi2)
        else:
            good = phi2
            stop = phi2
        stopped, _, _ = _simulate(space, tables, n_samples, rng, prop.bound, stop)
        hit = (stopped >= 0) & good[np.maximum(stopped, 0)]
        samples = hit.astype(float)
        if kind == BOUNDED_G:
            samples = 1.0 - samples
        return _summary(samples, seed)
    if kind == CUMUL_REWARD:
        tables = _Tables(space, prop.reward)
        _, reward, _ = _simulate(space, tables, n_samples, rng, prop.bound)
        return _summary(reward, seed)
    if kind in (STEADY_PROB, STEADY_REWARD):
        if horizon_for_steady is None or not horizon_for_steady > 0:
            raise ValueError("steady-state estimation needs a positive horizon")
        if not 0 <= warmup < 1:
            raise ValueError("warm-up fraction must lie in [0, 1)")
        if len(bsccs(space)) > 1:
            raise SimulationError("model has several bottom components; a long-run "
                                  "estimate would depend on the initial state")
        start = warmup * horizon_for_steady
        span = horizon_for_steady - start
        if kind == STEADY_PROB:
            tables = _Tables(space, None)
            _, _, occupied = _simulate(space, tables, n_samples, rng, horizon_for_steady,
                                       window_start=start,
                                       predicate=space.satisfying(prop.phi2))
            return _summary(occupied / span, seed)
        tables = _Tables(space, prop.reward)
        _, reward, _ = _simulate(space, tables, n_samples, rng, horizon_for_steady,
                                 window_start=start)
        return _summary(reward / span, seed)
    raise ValueError(f"unsupported property kind {kind}")
