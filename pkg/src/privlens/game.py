"""The privacy game: exact and simulated payoffs, best responses, minimax oracle.

The payoff of a (pmf, channel, estimator) triple is the expected divergence
between the true data pmf and the querier's estimate from n responses. Since
estimates may be taken to depend on the output type only, expectations are
sums over type classes.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import math
import os

import numpy as np
from scipy.special import gammaln, xlogy

from .bounds import optimal_locally_uniform_fit, omega
from .estimators import EstimatorTable
from .mechanisms import RhoQR, build_Wl, resolved_level, validate_rho_qr
from .simplex import (FunctionSpec, NType, kl_divergence, ntype_array, ntype_masses,
                      pmf, push_forward)

MAX_TYPES = 1_000_000
BLOCK = 1 << 15


class BudgetExceeded(ValueError):
    pass


class TheoremCheckFailure(AssertionError):
    pass


def worker_count() -> int:
    """Worker cap from PRIVLENS_THREADS, defaulting to the CPU count."""
    raw = os.environ.get('PRIVLENS_THREADS')
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


@dataclasses.dataclass(frozen=True)
class GameInstance:
    spec: FunctionSpec
    rho: float
    n: int
    p: np.ndarray
    w: RhoQR
    querier: EstimatorTable

    def __post_init__(self):
        if self.w.spec != self.spec:
            raise ValueError('channel was validated against a different spec')
        if self.w.rho < self.rho - 1e-12:
            raise ValueError(f'channel validated at {self.w.rho}, game needs {self.rho}')
        if np.shape(self.p) != (self.spec.r,):
            raise ValueError(f'pmf of dim {np.size(self.p)} vs r={self.spec.r}')
        if self.querier.dim != self.spec.r:
            raise ValueError(f'estimates of dim {self.querier.dim} vs r={self.spec.r}')
        if self.n < 1:
            raise ValueError(f'n must be positive, got {self.n}')

    @property
    def alpha(self) -> np.ndarray:
        return self.p @ self.w.channel


def _divergences(p, estimates) -> np.ndarray:
    """D(p || estimates[i]) for every row, in bits, inf where coverage fails."""
    support = p > 0
    ps = p[support]
    sub = estimates[:, support]
    with np.errstate(divide='ignore'):
        out = (ps * (np.log2(ps) - np.log2(sub))).sum(axis=1)
    out[np.any(sub <= 0, axis=1)] = math.inf
    return np.maximum(out, 0.0)


def exact_privacy(g: GameInstance) -> float:
    k = g.w.channel.shape[1]
    if math.comb(g.n + k - 1, k - 1) > MAX_TYPES:
        raise BudgetExceeded(f'{math.comb(g.n + k - 1, k - 1)} types exceed {MAX_TYPES}')
    counts = ntype_array(g.n, k)
    mass = ntype_masses(g.alpha, counts)
    live = mass > 0
    div = _divergences(g.p, g.querier.matrix(counts[live]))
    if np.any(np.isinf(div)):
        return math.inf
    return math.fsum(mass[live] * div)


def _simulate_block(g: GameInstance, size: int, seed_seq: np.random.SeedSequence,
                    lookup: dict) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    r, k = g.w.channel.shape
    cum_p = np.cumsum(g.p)
    x = np.minimum(np.searchsorted(cum_p, rng.random((size, g.n)), side='right'), r - 1)
    cum_w = np.cumsum(g.w.channel, axis=1)
    u = rng.random((size, g.n))
    z = (cum_w[x] <= u[..., None]).sum(axis=2)
    z = np.minimum(z, k - 1)
    counts = np.zeros((size, k), dtype=np.int64)
    for j in range(k):
        counts[:, j] = (z == j).sum(axis=1)
    codes = counts @ (g.n + 1) ** np.arange(k)
    return np.array([lookup[c] for c in codes.tolist()]) if size else np.empty(0)


def monte_carlo_privacy(g: GameInstance, samples: int, seed: int,
                        workers: int | None = None) -> tuple[float, float]:
    """Sample mean and standard error of D(p || estimate(type(Z^n))).

    Samples are drawn in fixed-size blocks, each with its own child seed, so
    results depend only on (seed, samples) and not on the worker count.
    """
    if samples < 2:
        raise ValueError(f'need at least 2 samples, got {samples}')
    k = g.w.channel.shape[1]
    counts = ntype_array(g.n, k)
    div = _divergences(g.p, g.querier.matrix(counts))
    codes = counts @ (g.n + 1) ** np.arange(k)
    lookup = dict(zip(codes.tolist(), div.tolist()))
    sizes = [BLOCK] * (samples // BLOCK)
    if samples % BLOCK:
        sizes.append(samples % BLOCK)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    workers = min(worker_count() if workers is None else workers, len(sizes))
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _simulate_block(g, a[0], a[1], lookup),
                                  zip(sizes, seqs)))
    else:
        parts = [_simulate_block(g, s, q, lookup) for s, q in zip(sizes, seqs)]
    values = np.concatenate(parts)
    if np.any(np.isinf(values)):
        return math.inf, math.inf
    mean = math.fsum(values) / samples
    std_error = float(np.std(values, ddof=1)) / math.sqrt(samples)
    return mean, std_error


def _payoffs(points: np.ndarray, w: np.ndarray, n: int, querier: EstimatorTable) -> np.ndarray:
    """Exact payoff for every candidate pmf (rows of ``points``)."""
    k = w.shape[1]
    counts = ntype_array(n, k)
    est = querier.matrix(counts)
    alpha = points @ w
    logcoef = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        mass = np.exp(logcoef[None, :] + xlogy(counts[None, :, :], alpha[:, None, :]).sum(axis=2))
        log_est = np.log2(est)
        neg_ent = (xlogy(points, points) / math.log(2)).sum(axis=1)
        cross = np.where(points[:, None, :] > 0,
                         points[:, None, :] * log_est[None, :, :], 0.0).sum(axis=2)
    div = neg_ent[:, None] - cross
    uncovered = ((points[:, None, :] > 0) & (est[None, :, :] <= 0)).any(axis=2)
    div = np.where(uncovered, math.inf, np.maximum(div, 0.0))
    with np.errstate(invalid='ignore'):
        terms = np.where(mass > 0, mass * div, 0.0)
    return terms.sum(axis=1)


def _sparse_candidates(spec: FunctionSpec, querier: EstimatorTable, steps: int,
                       cap: int = 64) -> np.ndarray:
    """k-sparse pmfs: one low-estimate symbol per atom, masses on a grid of the k-simplex."""
    mean_est = np.mean(list(querier.entries.values()), axis=0)
    choices = [sorted(a, key=lambda x: (mean_est[x], x))[:2] for a in spec.atoms]
    supports = [tuple(c[0] for c in choices)]
    for j, c in enumerate(choices):
        for x in c[1:]:
            s = list(supports[0])
            s[j] = x
            supports.append(tuple(s))
    supports = supports[:cap]
    grid = ntype_array(steps, spec.k) / steps
    out = []
    for s in supports:
        block = np.zeros((len(grid), spec.r))
        block[:, list(s)] = grid
        out.append(block)
    return np.concatenate(out)


def best_response_pmf(spec: FunctionSpec, w: RhoQR, n: int, querier: EstimatorTable,
                      resolution: float = 0.05) -> tuple[np.ndarray, float]:
    """Payoff-maximizing data pmf over a grid.

    Uses the full simplex grid for r <= 4 and k-sparse candidates otherwise.
    """
    steps = max(1, round(1.0 / resolution))
    if spec.r <= 4:
        points = ntype_array(steps, spec.r) / steps
    else:
        points = _sparse_candidates(spec, querier, steps)
    values = _payoffs(points, np.asarray(w.channel), n, querier)
    best = int(np.argmax(values))
    return points[best], float(values[best])


@dataclasses.dataclass(frozen=True)
class MinimaxResult:
    value: float
    argmax_W: np.ndarray
    arg_estimator: EstimatorTable
    argmax_P: np.ndarray
    grid_meta: dict

    def to_json(self) -> str:
        return json.dumps({
            'value': self.value,
            'argmax_W': {'rows': self.argmax_W.tolist()},
            'arg_estimator': json.loads(self.arg_estimator.to_json()),
            'argmax_P': self.argmax_P.tolist(),
            'grid_meta': self.grid_meta,
        })


def brute_force_minimax(spec: FunctionSpec, rho: float, n: int, grid: int = 41,
                        eps: float = 1e-4, budget: float = 1e8) -> MinimaxResult:
    """max over channels, min over type-indexed estimators, max over pmfs, all on grids.

    Only binary data with a binary function (r = k = 2) and n in {1, 2}.
    """
    if spec.r != 2 or spec.k != 2 or n not in (1, 2):
        raise ValueError('brute-force minimax supports r = k = 2 and n in {1, 2}')
    n_types = n + 1
    cost = grid ** 4 * n_types
    if cost > budget:
        raise BudgetExceeded(f'{cost:.3g} divergence terms exceed budget {budget:.3g}')
    diag = np.linspace(rho, 1.0, grid)
    est_first = np.clip(np.linspace(0.0, 1.0, grid), eps, 1.0 - eps)
    estimates = np.stack([est_first, 1.0 - est_first], axis=1)
    p_first = np.linspace(0.0, 1.0, grid)
    points = np.stack([p_first, 1.0 - p_first], axis=1)
    counts = ntype_array(n, 2)
    labels = spec.labels
    # D(P_p || e) for every grid pmf p and estimate e
    neg_ent = (xlogy(points, points) / math.log(2)).sum(axis=1)
    div = neg_ent[:, None] - points @ np.log2(estimates).T
    logcoef = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)

    best = (-math.inf, None, None, None)
    for a in diag:
        for b in diag:
            w = np.empty((2, 2))
            for x, d in enumerate((a, b)):
                w[x, labels[x]] = d
                w[x, 1 - labels[x]] = 1.0 - d
            alpha = points @ w
            with np.errstate(divide='ignore'):
                mass = np.exp(logcoef[None, :] + xlogy(counts[None], alpha[:, None]).sum(axis=2))
            terms = [mass[:, t, None] * div for t in range(n_types)]
            total = terms[0]
            for t in range(1, n_types):
                total = total[..., None] + terms[t].reshape((grid,) + (1,) * t + (grid,))
            worst = total.max(axis=0)
            flat = int(np.argmin(worst))
            val = float(worst.flat[flat])
            if val > best[0]:
                idx = np.unravel_index(flat, worst.shape)
                p_idx = int(np.argmax(total[(slice(None),) + idx]))
                best = (val, w, idx, p_idx)
    value, w, idx, p_idx = best
    table = EstimatorTable(
        entries={tuple(int(c) for c in counts[t]): estimates[idx[t]] for t in range(n_types)},
        dim=2)
    meta = {'grid': grid, 'eps': eps, 'channels': grid * grid,
            'estimators': grid ** n_types, 'pmfs': grid, 'n': n, 'rho': rho}
    return MinimaxResult(value=value, argmax_W=w, arg_estimator=table,
                         argmax_P=points[p_idx], grid_meta=meta)


def replay_minimax(result: MinimaxResult, spec: FunctionSpec, rho: float, n: int) -> float:
    """Exact payoff of the stored strategies."""
    g = GameInstance(spec=spec, rho=rho, n=n, p=result.argmax_P,
                     w=validate_rho_qr(result.argmax_W, spec, rho),
                     querier=result.arg_estimator)
    return exact_privacy(g)


def theorem1_equality_check(spec: FunctionSpec, rho: float, omega_fn=omega) -> float:
    """Privacy attained by the merging channel W_l against a point mass.

    Builds W_l, confirms that every point mass on the union U of the first l
    atoms produces the same output law (so the querier cannot tell them apart),
    and returns the best locally uniform fit to such a point mass, which is
    log2 |U|. Raises TheoremCheckFailure if the result disagrees with
    ``omega_fn(spec, rho)`` by more than 1e-9.
    """
    l = resolved_level(rho, spec.k)
    w = build_Wl(spec, l)
    union = [x for a in spec.atoms[:l] for x in a]
    laws = w[union]
    if not np.allclose(laws, laws[0], atol=1e-15, rtol=0):
        raise TheoremCheckFailure('point masses on the merged atoms are distinguishable')
    p = np.zeros(spec.r)
    p[spec.atoms[0][0]] = 1.0
    derived = np.zeros(spec.k)
    derived[:l] = push_forward(p, spec)[:l].sum() / l
    derived[l:] = push_forward(p, spec)[l:]
    if not np.allclose(p @ w, derived, atol=1e-15, rtol=0):
        raise TheoremCheckFailure('output law differs from the l-merged derived pmf')
    if l == spec.k:
        value = kl_divergence(p, np.full(spec.r, 1.0 / spec.r))
    else:
        merged = spec.merged([list(range(l))] + [[j] for j in range(l, spec.k)])
        _, value = optimal_locally_uniform_fit(p, merged)
    expected = omega_fn(spec, rho)
    if abs(value - expected) > 1e-9:
        raise TheoremCheckFailure(f'attained {value!r} but omega is {expected!r}')
    return value


def random_game(rng: np.random.Generator, n_max: int = 5) -> GameInstance:
    """Random instance with a full-support pmf, a valid channel and a Dirichlet estimator table."""
    r = int(rng.integers(2, 6))
    k = int(rng.integers(2, r + 1))
    cuts = np.sort(rng.choice(np.arange(1, r), size=k - 1, replace=False))
    sizes = np.diff(np.concatenate([[0], cuts, [r]]))
    spec = FunctionSpec.from_sizes(sizes.tolist())
    n = int(rng.integers(1, n_max + 1))
    rho = float(rng.uniform(0.0, 1.0))
    rows = np.empty((r, k))
    for x, j in enumerate(spec.labels):
        keep = rho + (1 - rho) * rng.random()
        rows[x, np.arange(k) != j] = (1 - keep) * rng.dirichlet(np.ones(k - 1))
        rows[x, j] = keep
    w = validate_rho_qr(rows, spec, rho)
    p = pmf(rng.dirichlet(np.ones(r)), tol=1e-9)
    entries = {tuple(int(c) for c in t): rng.dirichlet(np.ones(r)) for t in ntype_array(n, k)}
    return GameInstance(spec=spec, rho=w.rho, n=n, p=p, w=w,
                        querier=EstimatorTable(entries=entries, dim=r))


def ntype_of(z, k: int) -> NType:
    return NType(tuple(int(c) for c in np.bincount(np.asarray(z), minlength=k)))
