"""Privacy levels and the finite-n upper and lower bounds around them.

omega is the worst-case privacy level, the converse bound is omega plus a
search-based estimate of the estimation penalty Gamma_n, and the achievability
bound is (omega + Lambda_n) * lambda_n for smooth querier estimators.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import math

import numpy as np
from scipy.special import gammaln, xlogy

from .estimators import (NotInImage, SmoothSchedule, default_smooth_schedule,
                         inverse_image, positivize_kappa, reverse_iprojection,
                         reverse_iprojection_batch, robust_ceil)
from .mechanisms import FULL, level_of_rho, merged_size
from .simplex import FunctionSpec, entropy, ntype_array, push_forward

KINDS = ('omega', 'converse', 'achievability', 'lambda_n', 'Lambda_n')
MAX_SCAN = 10_000_000


@dataclasses.dataclass(frozen=True)
class BoundPoint:
    parameter: float
    value: float
    kind: str
    valid: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f'unknown kind {self.kind!r}')


def omega(spec: FunctionSpec, rho: float) -> float:
    """log2 r when rho <= 1/k, else log2 of the l largest atom sizes summed."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f'rho must lie in [0, 1], got {rho}')
    if rho <= 1.0 / spec.k:
        return math.log2(spec.r)
    l = level_of_rho(rho, spec.k)
    return math.log2(sum(spec.sizes[:l]))


def k_prime(spec: FunctionSpec, rho: float) -> int:
    l = level_of_rho(rho, spec.k)
    if l == FULL:
        raise ValueError(f'rho={rho} is in the worst-case regime (rho <= 1/k)')
    return merged_size(spec.k, l)


def lambda_n(k_prime: int, zeta: float, n: int) -> float:
    """1 - 3 exp(4(k'-1) sqrt(zeta) / (5 sqrt(e))) / n^zeta; may be negative for small n."""
    if n < 1:
        raise ValueError(f'n must be positive, got {n}')
    expo = 4.0 * (k_prime - 1) * math.sqrt(zeta) / (5.0 * math.sqrt(math.e))
    return 1.0 - 3.0 * math.exp(expo) / float(n) ** zeta


def _level_parts(spec: FunctionSpec, rho: float) -> tuple[int, int, int]:
    k = spec.k
    l = level_of_rho(rho, k)
    if l == FULL:
        raise ValueError(f'rho={rho} is in the worst-case regime (rho <= 1/k)')
    m = k // l
    return l, m, k - m * l


def mu_n(spec: FunctionSpec, rho: float, n: int) -> float:
    l, m, l_prime = _level_parts(spec, rho)
    if l > spec.k // 2:
        raise ValueError(f'mu_n needs l <= floor(k/2); got l={l}, k={spec.k}')
    a = l * (1.0 - l * rho) / (spec.k - l_prime - l)
    top = min(robust_ceil(n * a) / n, l * rho)
    return (top - a) / (l * rho - a)


def theta_n(spec: FunctionSpec, rho: float, n: int) -> float:
    l, _, _ = _level_parts(spec, rho)
    if l <= spec.k // 2:
        raise ValueError(f'theta_n needs l > floor(k/2); got l={l}, k={spec.k}')
    slack = 1.0 - l * rho
    return (robust_ceil(n * slack) / n - slack) / (l * rho)


def Lambda_n(spec: FunctionSpec, rho: float, n: int,
             schedule: SmoothSchedule | None = None) -> float:
    """Finite-n correction added to omega in the achievability bound.

    Returned as-is even when negative or when n is below min_valid_n.
    """
    schedule = schedule or default_smooth_schedule()
    l, m, _ = _level_parts(spec, rho)
    sizes = spec.sizes
    head = sum(sizes[:l])
    penalty = schedule.penalty(n)
    if l <= spec.k // 2:
        rest = sum(sizes[l:m * l])
        mu = mu_n(spec, rho, n)
        if rest <= head:
            return math.log2(1.0 + rest / (math.e * head) * mu) - penalty
        return math.log2(rest / head) * mu - penalty
    theta = theta_n(spec, rho, n)
    return math.log2(1.0 + sizes[l] / (math.e * head) * theta) - penalty


def min_valid_n_for(k_prime: int, zeta: float = 2.0) -> int:
    """Smallest n meeting the four sufficient conditions of the achievability bound."""
    ln2 = math.log(2)
    km1 = k_prime - 1
    for n in range(max(1, 2 * k_prime), MAX_SCAN):
        if valid_n(k_prime, zeta, n, ln2=ln2, km1=km1):
            return n
    raise RuntimeError(f'no valid n below {MAX_SCAN} for k={k_prime}, zeta={zeta}')


def valid_n(k_prime: int, zeta: float, n: int, ln2=math.log(2), km1=None) -> bool:
    km1 = k_prime - 1 if km1 is None else km1
    if n < 2 * k_prime:
        return False
    g = zeta * ln2 * math.log2(n)
    if not 5.0 * math.sqrt(n * g) > 2 * km1:
        return False
    if 25.0 * g + 4.0 * km1 ** 2 / n - 20.0 * km1 * math.sqrt(g / n) < 20 * k_prime:
        return False
    return lambda_n(k_prime, zeta, n) >= 0


def min_valid_n(spec: FunctionSpec, rho: float, zeta: float = 2.0) -> int:
    return min_valid_n_for(k_prime(spec, rho), zeta)


def achievability_lower_bound(spec: FunctionSpec, rho: float, n: int,
                              schedule: SmoothSchedule | None = None,
                              zeta: float = 2.0) -> float:
    schedule = schedule or default_smooth_schedule(zeta)
    lam = lambda_n(k_prime(spec, rho), zeta, n)
    return (omega(spec, rho) + Lambda_n(spec, rho, n, schedule)) * lam


@functools.lru_cache(maxsize=32)
def _type_table(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    counts = ntype_array(n, k)
    logcoef = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)
    counts.setflags(write=False)
    logcoef.setflags(write=False)
    return counts, logcoef


def _gamma_core(alpha, b, v, n) -> float:
    k = v.shape[0]
    counts, logcoef = _type_table(n, k)
    with np.errstate(divide='ignore'):
        mass = np.exp(logcoef + xlogy(counts, alpha).sum(axis=1))
    keep = mass > 0
    counts, mass = counts[keep], mass[keep]
    _, betas = reverse_iprojection_batch(counts / n, v)
    kappa = (n * betas + 1.0) / (n + k)
    support = b > 0
    div = (b[support] * (np.log2(b[support]) - np.log2(kappa[:, support]))).sum(axis=1)
    return math.fsum(mass * div)


def gamma_n_inner(alpha, v, n: int) -> float:
    """Expected D(alpha V^-1 || kappa_n(Q)) over the n-types Q drawn i.i.d. from alpha."""
    v = np.asarray(v, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    b = inverse_image(alpha, v)
    if b.min() < -1e-9:
        raise NotInImage(f'alpha={alpha} is not in the image of the simplex under v')
    b = np.clip(b, 0.0, None)
    return max(0.0, _gamma_core(alpha, b / b.sum(), v, n))


def gamma_n_inner_reference(alpha, v, n: int) -> float:
    """Slow per-type evaluation through the public pipeline, used as an oracle."""
    v = np.asarray(v, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    b = inverse_image(alpha, v)
    k = v.shape[0]
    total = []
    for row in ntype_array(n, k):
        log_mass = gammaln(n + 1) - gammaln(row + 1).sum() + xlogy(row, alpha).sum()
        mass = math.exp(log_mass) if log_mass > -745 else 0.0
        if mass == 0:
            continue
        q_tilde, _ = reverse_iprojection(row / n, v)
        kappa = positivize_kappa(q_tilde, v, n)
        s = b > 0
        total.append(mass * float(np.sum(b[s] * np.log2(b[s] / kappa[s]))))
    return math.fsum(total)


@dataclasses.dataclass(frozen=True)
class GammaSearch:
    value: float
    evaluations: int
    v: np.ndarray
    beta: np.ndarray


def _decode(theta, k, rho):
    """Maps a point of [0,1]^d to (V, beta) with diag(V) >= rho."""
    u = theta[:k]
    off = theta[k:k + k * (k - 1)].reshape(k, k - 1) if k > 2 else np.ones((k, 1))
    raw_beta = theta[-k:]
    v = np.empty((k, k))
    for j in range(k):
        d = rho + (1.0 - rho) * u[j]
        w = off[j] + 1e-12
        others = (1.0 - d) * w / w.sum()
        v[j, [i for i in range(k) if i != j]] = others
        v[j, j] = d
    beta = np.clip(raw_beta, 0.0, None)
    if beta.sum() == 0:
        beta = np.full(k, 1.0 / k)
    return v, beta / beta.sum()


def gamma_n_sup(spec: FunctionSpec, rho: float, n: int, search_budget: int = 10_000,
                seed: int = 0) -> GammaSearch:
    """Lower estimate of Gamma_n: random multistart plus coordinate pattern search.

    Searches over channel cores V with diagonal >= rho and over beta, with
    alpha = beta V. Deterministic for a given seed.
    """
    if rho <= 0.5:
        raise ValueError(f'the converse search needs rho > 0.5, got {rho}')
    k = spec.k
    dim = 2 * k + (k * (k - 1) if k > 2 else 0)
    rng = np.random.default_rng(seed)
    count = 0

    def value(theta):
        nonlocal count
        count += 1
        v, beta = _decode(theta, k, rho)
        return _gamma_core(beta @ v, beta, v, n)

    starts = [np.ones(dim), np.zeros(dim)]
    for j in range(k):
        corner = np.full(dim, 0.5)
        corner[-k:] = 0.0
        corner[dim - k + j] = 1.0
        starts.append(corner)
        for u in (0.0, 1.0):
            c = corner.copy()
            c[:k] = u
            starts.append(c)
    n_random = max(1, search_budget // 4 - len(starts))
    starts.extend(rng.random((n_random, dim)))
    scored = sorted(((value(s), i, s) for i, s in enumerate(starts)),
                    key=lambda t: (-t[0], t[1]))

    best_val, _, best = scored[0]
    for val, _, x in scored[:3]:
        step = 0.25
        while step > 1e-4 and count < search_budget:
            improved = False
            for i in range(dim):
                for sign in (1.0, -1.0):
                    if count >= search_budget:
                        break
                    y = x.copy()
                    y[i] = min(1.0, max(0.0, y[i] + sign * step))
                    if y[i] == x[i]:
                        continue
                    fy = value(y)
                    if fy > val:
                        x, val, improved = y, fy, True
            if not improved:
                step /= 2
        if val > best_val:
            best_val, best = val, x
    v, beta = _decode(best, k, rho)
    return GammaSearch(value=max(0.0, best_val), evaluations=count, v=v, beta=beta)


def converse_upper_bound(spec: FunctionSpec, rho: float, n: int,
                         search_budget: int = 10_000, seed: int = 0) -> float:
    if rho <= 0.5:
        raise ValueError(f'no converse bound for rho <= 0.5, got {rho}')
    return omega(spec, rho) + gamma_n_sup(spec, rho, n, search_budget, seed).value


def optimal_locally_uniform_fit(p, spec: FunctionSpec) -> tuple[np.ndarray, float]:
    """Best locally uniform approximation to p and its divergence from p.

    The minimizer spreads each atom's mass uniformly; the divergence equals
    sum_j P(A_j) log|A_j| - (H(p) - H(P(A))).
    """
    beta = push_forward(p, spec)
    logs = np.log2(np.asarray(spec.sizes, dtype=float))
    value = math.fsum(beta * logs) - (entropy(p) - entropy(beta))
    return beta, max(0.0, value)


def bound_points(spec: FunctionSpec, rho: float, ns, zeta: float = 2.0,
                 search_budget: int = 10_000, seed: int = 0) -> list[BoundPoint]:
    """omega, lambda_n, Lambda_n, achievability and (for rho > 0.5) converse per n."""
    schedule = default_smooth_schedule(zeta)
    w = omega(spec, rho)
    worst_case = rho <= 1.0 / spec.k
    out = []
    for n in ns:
        out.append(BoundPoint(n, w, 'omega', True))
        if not worst_case:
            kp = k_prime(spec, rho)
            ok = n >= min_valid_n_for(kp, zeta)
            out.append(BoundPoint(n, lambda_n(kp, zeta, n), 'lambda_n', ok))
            out.append(BoundPoint(n, Lambda_n(spec, rho, n, schedule), 'Lambda_n', ok))
            out.append(BoundPoint(n, achievability_lower_bound(spec, rho, n, schedule, zeta),
                                  'achievability', ok))
        if rho > 0.5:
            out.append(BoundPoint(n, converse_upper_bound(spec, rho, n, search_budget, seed),
                                  'converse', True))
    return out


def format_value(x: float) -> str:
    return format(x, '.12g')


def points_to_csv(points) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(['param', 'kind', 'value', 'valid'])
    for p in points:
        writer.writerow([format_value(p.parameter), p.kind, format_value(p.value),
                         'true' if p.valid else 'false'])
    return buf.getvalue()
