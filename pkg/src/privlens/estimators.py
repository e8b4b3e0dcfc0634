"""The querier's estimators: locally uniform tables and the projection pipeline.

Given a locally identical channel with core V, the querier projects the
observed type onto the image of the simplex under V, inverts V, smooths, and
spreads the resulting atom masses uniformly inside each atom.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Callable, Mapping

import numpy as np

from .simplex import (DimensionMismatch, FunctionSpec, NType, locally_uniform_pmf,
                      ntype_array, pmf)

COND_LIMIT = 1e12
KKT_TOL = 1e-9
MEMBER_TOL = 1e-12
_EM_CAP = 100_000
_EM_RTOL = 1e-12


class SingularChannel(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


class NotInImage(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class EstimatorTable:
    """Estimates on the data alphabet indexed by output type counts."""
    entries: Mapping[tuple[int, ...], np.ndarray]
    dim: int

    def estimate(self, counts) -> np.ndarray:
        key = tuple(int(c) for c in counts)
        try:
            return self.entries[key]
        except KeyError:
            raise KeyError(f'no estimate for type {key}') from None

    def matrix(self, types: np.ndarray) -> np.ndarray:
        return np.stack([self.estimate(t) for t in types])

    def to_json(self) -> str:
        return json.dumps([{'type': list(t), 'beta': np.asarray(b).tolist()}
                           for t, b in sorted(self.entries.items(), reverse=True)])

    @classmethod
    def from_json(cls, text: str) -> 'EstimatorTable':
        rows = json.loads(text)
        entries = {tuple(int(c) for c in row['type']): pmf(row['beta']) for row in rows}
        dims = {b.size for b in entries.values()}
        if len(dims) != 1:
            raise DimensionMismatch(f'estimates of mixed dimension {sorted(dims)}')
        return cls(entries=entries, dim=dims.pop())

    @classmethod
    def from_function(cls, fn: Callable[[NType], np.ndarray], n: int, k: int) -> 'EstimatorTable':
        """Tabulates ``fn`` over every n-type on k outputs."""
        entries = {}
        for row in ntype_array(n, k):
            t = NType(tuple(int(c) for c in row))
            entries[t.counts] = pmf(fn(t))
        return cls(entries=entries, dim=next(iter(entries.values())).size)


@dataclasses.dataclass(frozen=True)
class LocallyUniformEstimator:
    """Atom masses per type, spread uniformly within atoms of ``spec``.

    ``default`` supplies beta for types missing from the table.
    """
    spec: FunctionSpec
    beta_table: Mapping[tuple[int, ...], np.ndarray]
    default: Callable[[NType], np.ndarray] | None = None

    def beta(self, t: NType) -> np.ndarray:
        if t.counts in self.beta_table:
            return np.asarray(self.beta_table[t.counts], dtype=float)
        if self.default is None:
            raise KeyError(f'no beta for type {t.counts}')
        return np.asarray(self.default(t), dtype=float)

    def to_table(self, n: int, k: int | None = None) -> EstimatorTable:
        k = self.spec.k if k is None else k
        return EstimatorTable.from_function(lambda t: evaluate_locally_uniform(self, t), n, k)


def evaluate_locally_uniform(est: LocallyUniformEstimator, t: NType) -> np.ndarray:
    return pmf(locally_uniform_pmf(pmf(est.beta(t)), est.spec), tol=1e-9)


def _em(q, v, beta, cap=_EM_CAP, rtol=_EM_RTOL):
    """Multiplicative updates beta_i <- beta_i * sum_j q_j V_ij / (beta V)_j."""
    support = q > 0
    qs = q[support]
    vs = v[:, support]
    for it in range(cap):
        ratio = vs @ (qs / (beta @ vs))
        new = beta * ratio
        new /= new.sum()
        change = np.max(np.abs(new - beta) / np.maximum(new, 1e-300))
        beta = new
        if change < rtol:
            return beta, it + 1
    return beta, cap


def _gradient_ratio(q, v, beta) -> np.ndarray:
    """g_i = sum_j q_j V_ij / (beta V)_j; KKT asks g <= 1 with equality on the support."""
    support = q > 0
    return v[:, support] @ (q[support] / (beta @ v[:, support]))


def _objective(qs, s) -> float:
    return float(-np.sum(qs * np.log(s)))


def _enter(qs, vs, beta, j):
    """Exact line search along e_j - beta; the objective is convex in the step."""
    s = beta @ vs
    d = vs[j] - s
    lo, hi = 0.0, 1.0
    if np.all(s + d > 0) and -np.sum(qs * d / (s + d)) <= 0:
        t = 1.0
    else:
        for _ in range(60):
            t = 0.5 * (lo + hi)
            den = s + t * d
            if np.all(den > 0) and -np.sum(qs * d / den) < 0:
                lo = t
            else:
                hi = t
        t = lo
    out = (1.0 - t) * beta
    out[j] += t
    return out


def _newton(q, v, beta, iters=200):
    """Active-set Newton on the simplex faces.

    Takes Newton steps on the current face with a ratio test and an Armijo
    search, dropping coordinates that hit zero, and brings in the coordinate
    with the largest KKT violation once the face is optimal.
    """
    k = beta.size
    support = q > 0
    qs = q[support]
    vs = v[:, support]
    if np.any(beta @ vs <= 0):
        beta = 0.5 * beta + 0.5 / k
    active = beta > 0
    stalled = False
    for _ in range(iters):
        idx = np.flatnonzero(active)
        b = beta[idx]
        s = b @ vs[idx]
        ratio = vs @ (qs / s)
        if stalled or np.max(np.abs(ratio[idx] - 1.0)) <= 1e-11:
            stalled = False
            out = ~active & (ratio > 1.0 + 1e-11)
            if not np.any(out):
                return beta
            j = int(np.argmax(np.where(out, ratio, -np.inf)))
            beta = _enter(qs, vs, beta, j)
            active = beta > 0
            continue
        h = (vs[idx] * (qs / s ** 2)) @ vs[idx].T
        m = idx.size
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = h
        kkt[:m, m] = kkt[m, :m] = 1.0
        # least squares copes with a singular Hessian when q has small support
        step = np.linalg.lstsq(kkt, np.concatenate([ratio[idx], [0.0]]), rcond=None)[0][:m]
        t, block = 1.0, None
        neg = step < 0
        if np.any(neg):
            limits = -b[neg] / step[neg]
            i = int(np.argmin(limits))
            if limits[i] <= 1.0:
                t, block = float(limits[i]), int(np.flatnonzero(neg)[i])
        f0 = _objective(qs, s)
        slope = -float(ratio[idx] @ step)
        # below roundoff the objective cannot rank steps, so trust Newton
        searching = slope < -1e-13 * max(1.0, abs(f0))
        while True:
            cand = np.clip(b + t * step, 0.0, None)
            if block is not None:
                cand[block] = 0.0
            sc = cand @ vs[idx]
            if np.all(sc > 0) and (not searching
                                   or _objective(qs, sc) <= f0 + 1e-4 * t * slope):
                break
            t /= 2
            block = None
            if t <= 1e-16:
                break
        if t <= 1e-16 and block is None:
            stalled = True
            continue
        beta = np.zeros(k)
        beta[idx] = cand / cand.sum()
        active = beta > 0
        stalled = not searching and block is None
    return beta


def _check_square(q, v):
    if v.ndim != 2 or v.shape[0] != v.shape[1] or q.shape[-1] != v.shape[1]:
        raise DimensionMismatch(f'q of dim {q.shape[-1]} vs channel {v.shape}')
    if np.any(np.diag(v) <= 0):
        raise ValueError('reverse I-projection needs a positive diagonal')


def reverse_iprojection(q, v) -> tuple[np.ndarray, np.ndarray]:
    """Member q_tilde = beta V of the image of the simplex that minimizes D(q || beta V).

    Returns (q_tilde, beta). Points already in the image come back unchanged.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_square(q, v)
    k = v.shape[0]
    start = np.full(k, 1.0 / k)
    if np.linalg.cond(v) < COND_LIMIT:
        beta = np.linalg.solve(v.T, q)
        if np.all(beta >= -MEMBER_TOL):
            beta = np.clip(beta, 0.0, None)
            return q.copy(), beta / beta.sum()
        start = np.where(beta > 1e-12, beta, 0.0)
        start = start / start.sum() if start.sum() > 0 else np.full(k, 1.0 / k)
    beta = _newton(q, v, start)
    if not _kkt_ok(_gradient_ratio(q, v, beta), beta):
        beta, iters = _em(q, v, np.full(k, 1.0 / k))
        beta = _newton(q, v, beta)
        if not _kkt_ok(_gradient_ratio(q, v, beta), beta):
            raise NotConverged(f'I-projection did not converge after {iters} iterations')
    return beta @ v, beta


def _kkt_ok(ratio, beta, tol=KKT_TOL) -> bool:
    on = beta > 0
    return bool(np.all(ratio <= 1 + tol) and np.all(np.abs(ratio[on] - 1) <= tol))


def reverse_iprojection_batch(qs, v) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise reverse I-projection of an m x k array of pmfs."""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    v = np.asarray(v, dtype=float)
    _check_square(qs, v)
    k = v.shape[0]
    if k == 2 and v[0, 0] > v[1, 0]:
        # the image is the segment of pmfs (s, 1-s) with v[1,0] <= s <= v[0,0]
        s = np.clip(qs[:, 0], v[1, 0], v[0, 0])
        inside = s == qs[:, 0]
        b0 = (s - v[1, 0]) / (v[0, 0] - v[1, 0])
        betas = np.stack([b0, 1.0 - b0], axis=1)
        tilde = np.where(inside[:, None], qs, betas @ v)
        return tilde, betas
    if np.linalg.cond(v) < COND_LIMIT:
        betas = np.linalg.solve(v.T, qs.T).T
        inside = np.all(betas >= -MEMBER_TOL, axis=1)
    else:
        betas = np.zeros_like(qs)
        inside = np.zeros(len(qs), dtype=bool)
    tilde = qs.copy()
    b = np.clip(betas[inside], 0.0, None)
    betas[inside] = b / b.sum(axis=1, keepdims=True)
    for i in np.flatnonzero(~inside):
        tilde[i], betas[i] = reverse_iprojection(qs[i], v)
    return tilde, betas


def inverse_image(q_tilde, v) -> np.ndarray:
    """Solves b V = q_tilde (row-wise), guarding against ill-conditioned V."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise DimensionMismatch(f'channel must be square, got {v.shape}')
    if not np.linalg.cond(v) < COND_LIMIT:
        raise SingularChannel('channel is singular or too ill-conditioned to invert')
    q_tilde = np.asarray(q_tilde, dtype=float)
    return np.linalg.solve(v.T, q_tilde.T).T


def positivize_kappa(q_tilde, v, n: int) -> np.ndarray:
    """kappa_n(j) = (n (q_tilde V^-1)(j) + 1) / (n + k); full support."""
    k = np.shape(v)[0]
    return (n * inverse_image(q_tilde, v) + 1.0) / (n + k)


def kappa_of_types(counts: np.ndarray, v) -> np.ndarray:
    """kappa_n for every row of ``counts`` (rows must share the same n)."""
    counts = np.atleast_2d(counts)
    n = int(counts[0].sum())
    tilde, _ = reverse_iprojection_batch(counts / n, v)
    return positivize_kappa(tilde, v, n)


def ml_locally_uniform_estimate(t: NType, v, spec: FunctionSpec) -> np.ndarray:
    q_tilde, _ = reverse_iprojection(t.as_pmf(), v)
    kappa = positivize_kappa(q_tilde, v, t.n)
    return locally_uniform_pmf(kappa, spec)


def ml_estimator(v, spec: FunctionSpec) -> LocallyUniformEstimator:
    """The projection-based locally uniform estimator for channel core ``v``."""
    def beta(t: NType) -> np.ndarray:
        q_tilde, _ = reverse_iprojection(t.as_pmf(), v)
        return positivize_kappa(q_tilde, v, t.n)
    return LocallyUniformEstimator(spec=spec, beta_table={}, default=beta)


def robust_ceil(x: float, tol: float = 1e-9) -> int:
    """Ceiling that snaps values within ``tol`` of an integer to that integer."""
    near = round(x)
    if abs(x - near) <= tol:
        return int(near)
    return int(math.ceil(x))


def rounded_type_of_alpha(alpha, n: int) -> NType:
    """Type with Q(j) = ceil(n alpha(j))/n for j >= 1 and the rest on symbol 0."""
    alpha = np.asarray(alpha, dtype=float)
    k = alpha.size
    if alpha[0] < (k - 1) / n - 1e-12:
        raise ValueError(f'alpha(0)={alpha[0]:.6g} below (k-1)/n={(k - 1) / n:.6g}')
    tail = [robust_ceil(n * a) for a in alpha[1:]]
    head = n - sum(tail)
    if head < 0:
        raise ValueError(f'rounding alpha={alpha} at n={n} is infeasible')
    return NType((head, *tail))


@dataclasses.dataclass(frozen=True)
class SmoothSchedule:
    """Rates gamma_n, gamma_hat_n and c_n controlling estimator smoothness."""
    gamma_n: Callable[[int], float]
    gamma_hat_n: Callable[[int], float]
    c_n: Callable[[int], float]

    def penalty(self, n: int) -> float:
        """gamma_hat_n / c_n, the term subtracted in the achievability bound."""
        return self.gamma_hat_n(n) / self.c_n(n)


def default_smooth_schedule(zeta: float = 2.0) -> SmoothSchedule:
    if zeta <= 1:
        raise ValueError(f'zeta must exceed 1, got {zeta}')
    ln2 = math.log(2)
    return SmoothSchedule(
        gamma_n=lambda n: 5.0 * math.sqrt(zeta * ln2 * math.log2(n) / n),
        gamma_hat_n=lambda n: float(n) ** -3,
        c_n=lambda n: 1.0 / (n * math.log2(n + 2)),
    )
