"""Transient and steady-state analysis of an explicit CTMC."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve
from scipy.stats import poisson

from .statespace import StateSpace

METHODS = ("power", "jacobi", "gauss-seidel")

_FLOOR = 1e-12


class SolverError(Exception):
    pass


@dataclass(frozen=True)
class SolverOptions:
    method: str = "gauss-seidel"
    epsilon: float = 1e-9
    max_iters: int = 10_000
    truncation: float = 1e-10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}', choose from {', '.join(METHODS)}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0 < self.truncation < 1:
            raise ValueError("truncation epsilon must lie in (0, 1)")


@dataclass
class Stats:
    """Work done by the last solver call, for reporting."""
    iterations: int = 0
    left: int = 0
    right: int = 0
    uniformization_rate: float = 0.0
    residual: float = 0.0


# -- uniformization ------------------------------------------------------------------

def poisson_window(lam: float, eps: float) -> tuple[int, int, np.ndarray]:
    """Left/right truncation points and normalised weights of Poisson(lam).

    Mass outside [left, right] is below ``eps``.  Weights come from the log
    pmf, so very large ``lam`` does not underflow.
    """
    if lam <= 0:
        return 0, 0, np.ones(1)
    left = int(poisson.ppf(eps / 2, lam))
    right = int(poisson.isf(eps / 2, lam)) + 1
    left = max(left - 1, 0)
    k = np.arange(left, right + 1)
    w = np.exp(poisson.logpmf(k, lam))
    return left, right, w / w.sum()


def _uniform_rate(Q: sp.csr_matrix) -> float:
    diag = -Q.diagonal()
    top = float(diag.max()) if diag.size else 0.0
    return 1.02 * top


def _transposed_step(Q: sp.csr_matrix, lam: float) -> sp.csr_matrix:
    """(I + Q/lam) transposed, so that pi_{k+1} = M @ pi_k."""
    n = Q.shape[0]
    P = sp.identity(n, format="csr") + Q / lam
    return sp.csr_matrix(P.T)


def _absorbing_generator(space: StateSpace, absorbing: np.ndarray) -> sp.csr_matrix:
    """Generator with every outgoing rate removed from ``absorbing`` states."""
    Q = space.generator
    if not absorbing.any():
        return Q
    keep = sp.diags((~absorbing).astype(float))
    Q2 = sp.csr_matrix(keep @ Q)
    Q2.eliminate_zeros()
    return Q2


def _initial(space: StateSpace) -> np.ndarray:
    pi = np.zeros(space.n_states)
    pi[space.initial] = 1.0
    return pi


@njit(cache=True)
def _csr_step(indptr, indices, data, x, out):
    for i in range(indptr.size - 1):
        acc = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            acc += data[j] * x[indices[j]]
        # subnormals are two orders of magnitude slower and carry no mass
        out[i] = acc if abs(acc) > 1e-290 else 0.0


@njit(cache=True)
def _weighted_powers(indptr, indices, data, pi, w, left, right):
    """sum over k in [left, right] of w[k - left] * M^k pi."""
    acc = np.zeros_like(pi)
    nxt = np.empty_like(pi)
    for k in range(right + 1):
        if k >= left:
            wk = w[k - left]
            for i in range(pi.size):
                acc[i] += wk * pi[i]
        if k < right:
            _csr_step(indptr, indices, data, pi, nxt)
            pi, nxt = nxt, pi
    return acc


@njit(cache=True)
def _rewarded_powers(indptr, indices, data, pi, rho, tail):
    """sum over k of tail[k] * (M^k pi) . rho."""
    total = 0.0
    nxt = np.empty_like(pi)
    last = tail.size - 1
    for k in range(last + 1):
        dot = 0.0
        for i in range(pi.size):
            dot += pi[i] * rho[i]
        total += tail[k] * dot
        if k < last:
            _csr_step(indptr, indices, data, pi, nxt)
            pi, nxt = nxt, pi
    return total


def transient(Q: sp.csr_matrix, pi0: np.ndarray, t: float, opts: SolverOptions,
              stats: Optional[Stats] = None) -> np.ndarray:
    if t < 0:
        raise ValueError("time bound must be nonnegative")
    lam = _uniform_rate(Q)
    if t == 0 or lam == 0:
        return pi0.copy()
    left, right, w = poisson_window(lam * t, opts.truncation)
    M = _transposed_step(Q, lam)
    acc = _weighted_powers(M.indptr, M.indices, M.data, pi0.astype(float), w, left, right)
    if stats is not None:
        stats.iterations, stats.left, stats.right = right, left, right
        stats.uniformization_rate = lam
    total = acc.sum()
    return acc / total if total > 0 else acc


def transient_distribution(space: StateSpace, t: float, opts: SolverOptions = SolverOptions(),
                           stats: Optional[Stats] = None) -> np.ndarray:
    """Distribution at time ``t`` started from the initial state."""
    return transient(space.generator, _initial(space), t, opts, stats)


def bounded_until(space: StateSpace, phi1: np.ndarray, phi2: np.ndarray, t: float,
                  opts: SolverOptions = SolverOptions(), stats: Optional[Stats] = None) -> float:
    """P[phi1 U<=t phi2] from the initial state; predicates are boolean vectors."""
    if t < 0:
        raise ValueError("time bound must be nonnegative")
    phi2 = np.asarray(phi2, dtype=bool)
    bad = ~np.asarray(phi1, dtype=bool) & ~phi2
    Q = _absorbing_generator(space, phi2 | bad)
    pi = transient(Q, _initial(space), t, opts, stats)
    return float(min(max(pi[phi2].sum(), 0.0), 1.0))


def bounded_reachability(space: StateSpace, target: np.ndarray, t: float,
                         opts: SolverOptions = SolverOptions(),
                         stats: Optional[Stats] = None) -> float:
    """P[F<=t target]."""
    return bounded_until(space, np.ones(space.n_states, dtype=bool), target, t, opts, stats)


def bounded_globally(space: StateSpace, phi: np.ndarray, t: float,
                     opts: SolverOptions = SolverOptions(),
                     stats: Optional[Stats] = None) -> float:
    """P[G<=t phi] = 1 - P[F<=t !phi]."""
    return 1.0 - bounded_reachability(space, ~np.asarray(phi, dtype=bool), t, opts, stats)


def cumulative_expected_reward(space: StateSpace, reward: str | np.ndarray, t: float,
                               opts: SolverOptions = SolverOptions(),
                               stats: Optional[Stats] = None) -> float:
    """E[integral of rho over [0, t]].

    With N ~ Poisson(lam t) jumps of the uniformised chain, the integral
    equals (1/lam) * sum_k P(N > k) * pi_k . rho.
    """
    if t < 0:
        raise ValueError("time bound must be nonnegative")
    rho = space.reward_rate_vector(reward) if isinstance(reward, str) else np.asarray(reward)
    Q = space.generator
    lam = _uniform_rate(Q)
    pi = _initial(space)
    if t == 0:
        return 0.0
    if lam == 0:
        return float(t * pi @ rho)
    _, right, _ = poisson_window(lam * t, opts.truncation)
    tail = poisson.sf(np.arange(right + 1), lam * t)
    M = _transposed_step(Q, lam)
    total = _rewarded_powers(M.indptr, M.indices, M.data, pi, rho.astype(float), tail)
    if stats is not None:
        stats.iterations, stats.right = right, right
        stats.uniformization_rate = lam
    return total / lam


# -- steady state -----------------------------------------------------------------------

def bsccs(space: StateSpace) -> list[np.ndarray]:
    """Bottom strongly connected components, as sorted state-index arrays."""
    n = space.n_states
    R = space.rate_matrix
    ncomp, comp = connected_components(R, directed=True, connection="strong")
    coo = R.tocoo()
    leaving = comp[coo.row] != comp[coo.col]
    not_bottom = np.zeros(ncomp, dtype=bool)
    not_bottom[comp[coo.row[leaving]]] = True
    order = np.argsort(comp, kind="stable")
    bounds = np.searchsorted(comp[order], np.arange(ncomp + 1))
    out = []
    for c in range(ncomp):
        if not not_bottom[c]:
            out.append(np.sort(order[bounds[c]:bounds[c + 1]]))
    out.sort(key=lambda a: a[0] if a.size else n)
    return out


@njit(cache=True)
def _gauss_seidel_sweep(indptr, indices, data, diag, x):
    # one forward sweep of A x = 0 in ascending state order
    for i in range(x.shape[0]):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                acc += data[k] * x[j]
        x[i] = -acc / diag[i]


def _solve_component(Q: sp.csr_matrix, opts: SolverOptions, stats: Stats) -> np.ndarray:
    """Solve pi Q = 0, sum pi = 1 for an irreducible generator."""
    n = Q.shape[0]
    if n == 1:
        return np.ones(1)
    A = sp.csr_matrix(Q.T)  # A pi = 0
    diag = A.diagonal()
    if np.any(diag >= 0):
        raise SolverError("generator has a state without outgoing rate inside a component")
    pi = np.full(n, 1.0 / n)
    if opts.method == "power":
        lam = _uniform_rate(Q)
        step = sp.identity(n, format="csr") + A / lam

        def update(x):
            return step @ x
    elif opts.method == "jacobi":
        off = sp.csr_matrix(A - sp.diags(diag))
        inv = -1.0 / diag

        def update(x):
            return inv * (off @ x)
    else:
        A.sort_indices()
        indptr, indices, data = A.indptr, A.indices, A.data

        def update(x):
            y = x.copy()
            _gauss_seidel_sweep(indptr, indices, data, diag, y)
            return y

    for it in range(1, opts.max_iters + 1):
        new = update(pi)
        s = new.sum()
        if not np.isfinite(s) or s <= 0:
            raise SolverError(f"{opts.method} iteration broke down at step {it}")
        new /= s
        # per-entry relative change, ignoring entries so small that their
        # ratios never settle (deep failure states sit near 1e-40)
        big = new > _FLOOR * new.max()
        change = np.max(np.abs(new[big] - pi[big]) / new[big])
        pi = new
        if change < opts.epsilon:
            residual = float(np.max(np.abs(A @ pi)))
            if residual < opts.epsilon * np.max(np.abs(pi)):
                stats.iterations += it
                stats.residual = max(stats.residual, residual)
                return pi
    residual = float(np.max(np.abs(A @ pi)))
    hint = "" if opts.method == "gauss-seidel" else "; try --method gauss-seidel"
    raise SolverError(f"{opts.method} did not converge within {opts.max_iters} iterations "
                      f"(residual {residual:.3g}){hint}")


def steady_state(space: StateSpace, opts: SolverOptions = SolverOptions(),
                 stats: Optional[Stats] = None) -> np.ndarray:
    """Long-run distribution from the initial state, weighting each BSCC."""
    stats = stats if stats is not None else Stats()
    key = (opts.method, opts.epsilon, opts.max_iters)
    if key in space._steady_cache:
        pi, done = space._steady_cache[key]
        stats.iterations, stats.residual = done.iterations, done.residual
        return pi
    pi = _steady_state(space, opts, stats)
    space._steady_cache[key] = (pi, Stats(**vars(stats)))
    return pi


def _steady_state(space: StateSpace, opts: SolverOptions, stats: Stats) -> np.ndarray:
    n = space.n_states
    Q = space.generator
    comps = bsccs(space)
    in_bscc = np.full(n, -1)
    for i, c in enumerate(comps):
        in_bscc[c] = i
    reach = np.zeros(len(comps))
    if in_bscc[space.initial] >= 0:
        reach[in_bscc[space.initial]] = 1.0
    else:
        transient_states = np.flatnonzero(in_bscc < 0)
        pos = np.full(n, -1)
        pos[transient_states] = np.arange(transient_states.size)
        Qtt = Q[transient_states][:, transient_states]
        e = np.zeros(transient_states.size)
        e[pos[space.initial]] = 1.0
        # expected time spent in each transient state: y (-Qtt) = e
        y = spsolve(sp.csc_matrix(-Qtt.T), e)
        y = np.atleast_1d(y)
        R_tb = space.rate_matrix[transient_states]
        flow = R_tb.T @ y
        for i, c in enumerate(comps):
            reach[i] = flow[c].sum()
        total = reach.sum()
        if total > 0:
            reach /= total
    pi = np.zeros(n)
    for i, c in enumerate(comps):
        if reach[i] <= 0:
            continue
        sub = sp.csr_matrix(Q[c][:, c])
        pi[c] = reach[i] * _solve_component(sub, opts, stats)
    return pi


def steady_state_probability(space: StateSpace, phi: np.ndarray,
                             opts: SolverOptions = SolverOptions(),
                             stats: Optional[Stats] = None) -> float:
    pi = steady_state(space, opts, stats)
    return float(pi[np.asarray(phi, dtype=bool)].sum())


def long_run_expected_reward(space: StateSpace, reward: str | np.ndarray,
                             opts: SolverOptions = SolverOptions(),
                             stats: Optional[Stats] = None) -> float:
    rho = space.reward_rate_vector(reward) if isinstance(reward, str) else np.asarray(reward)
    return float(steady_state(space, opts, stats) @ rho)


def residual(space: StateSpace, pi: np.ndarray) -> float:
    """Infinity norm of pi Q."""
    return float(np.max(np.abs(space.generator.T @ pi)))

