"""Recoverable query-response channels and the constructions built from them.

A channel W from the data alphabet to the function-value alphabet is
rho-recoverable when W(f(x)|x) >= rho for every x. Locally identical channels
have equal rows inside each atom and are summarized by a k x k matrix V.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .simplex import DimensionMismatch, FunctionSpec, channel, pmf, push_forward

FULL = 'full'
_SLACK = 1e-12


class RecoverabilityViolation(ValueError):
    """Raised when some rows put less than rho on the correct function value.

    ``x``, ``achieved`` and ``required`` describe the first violating row;
    ``violations`` lists every (x, achieved) pair.
    """

    def __init__(self, violations: list[tuple[int, float]], required: float):
        self.violations = violations
        self.x, self.achieved = violations[0]
        self.required = required
        listed = ', '.join(f'x={x}: {a:.6g}' for x, a in violations[:10])
        super().__init__(f'rows below rho={required:.6g}: {listed}')


@dataclasses.dataclass(frozen=True)
class RhoQR:
    channel: np.ndarray
    rho: float
    spec: FunctionSpec

    @property
    def k(self) -> int:
        return self.spec.k


@dataclasses.dataclass(frozen=True)
class LocallyIdenticalQR:
    """Channel with identical rows inside each atom, stored as its k x k core ``v``.

    ``level`` is the l used to build it, when it came from a block construction.
    """
    v: np.ndarray
    rho: float
    spec: FunctionSpec
    level: int | None = None

    def __post_init__(self):
        k = self.spec.k
        if self.v.shape != (k, k):
            raise DimensionMismatch(f'v has shape {self.v.shape}, expected {(k, k)}')
        diag = np.diag(self.v)
        if np.any(diag < self.rho - _SLACK):
            bad = [(j, float(d)) for j, d in enumerate(diag) if d < self.rho - _SLACK]
            raise RecoverabilityViolation(bad, self.rho)

    def lifted(self) -> np.ndarray:
        """The r x k channel whose row for x is ``v[f(x)]``."""
        out = self.v[self.spec.labels]
        out.setflags(write=False)
        return out

    def as_rho_qr(self) -> RhoQR:
        return validate_rho_qr(self.lifted(), self.spec, self.rho)


@dataclasses.dataclass(frozen=True)
class SparsePmf:
    """A pmf with one chosen symbol per atom carrying that atom's mass."""
    support: tuple[int, ...]
    masses: np.ndarray
    spec: FunctionSpec

    def expand(self) -> np.ndarray:
        out = np.zeros(self.spec.r)
        out[list(self.support)] = self.masses
        return out


def max_recoverability(w, spec: FunctionSpec) -> float:
    """Largest rho for which ``w`` is a rho-QR, i.e. min_x W(f(x)|x)."""
    w = np.asarray(w, dtype=float)
    return float(w[np.arange(spec.r), spec.labels].min())


def validate_rho_qr(w, spec: FunctionSpec, rho: float) -> RhoQR:
    w = channel(w)
    if w.shape != (spec.r, spec.k):
        raise DimensionMismatch(f'channel shape {w.shape}, expected {(spec.r, spec.k)}')
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f'rho must lie in [0, 1], got {rho}')
    hits = w[np.arange(spec.r), spec.labels]
    bad = np.flatnonzero(hits < rho - _SLACK)
    if bad.size:
        raise RecoverabilityViolation([(int(x), float(hits[x])) for x in bad], rho)
    return RhoQR(channel=w, rho=float(rho), spec=spec)


def level_of_rho(rho: float, k: int) -> int | str:
    """The l in [1, k-1] with 1/(l+1) < rho <= 1/l, or ``FULL`` when rho <= 1/k."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f'rho must lie in (0, 1], got {rho}')
    if rho <= 1.0 / k:
        return FULL
    l = max(1, int(math.floor(1.0 / rho)))
    while rho > 1.0 / l:
        l -= 1
    while rho <= 1.0 / (l + 1):
        l += 1
    return l


def resolved_level(rho: float, k: int) -> int:
    """level_of_rho with the worst-case regime mapped to l = k."""
    l = level_of_rho(rho, k)
    return k if l == FULL else l


def merged_size(k: int, l: int) -> int:
    """k' = floor(k/l) + k - floor(k/l)*l, the alphabet size after merging."""
    m = k // l
    return m + k - m * l


def build_Wl(spec: FunctionSpec, l: int) -> np.ndarray:
    """Rows in the first l atoms spread 1/l over outputs 0..l-1; the rest map to f(x)."""
    k = spec.k
    if not 1 <= l <= k:
        raise ValueError(f'l must lie in [1, {k}], got {l}')
    labels = spec.labels
    w = np.zeros((spec.r, k))
    head = labels < l
    w[np.ix_(head, np.arange(l))] = 1.0 / l
    tail = np.flatnonzero(~head)
    w[tail, labels[tail]] = 1.0
    return channel(w)


def build_V1(spec: FunctionSpec, rho: float) -> LocallyIdenticalQR:
    k = spec.k
    l = level_of_rho(rho, k)
    if l == FULL or l > k // 2:
        raise ValueError(f'rho={rho} gives level {l}, outside 1..{k // 2}')
    m = k // l
    top = m * l
    v = np.zeros((k, k))
    v[:top, :top] = (1.0 - l * rho) / (top - l)
    for b in range(m):
        v[b * l:(b + 1) * l, b * l:(b + 1) * l] = rho
    v[top:, top:] = np.eye(k - top)
    return LocallyIdenticalQR(v=channel(v), rho=float(rho), spec=spec, level=l)


def build_V2(spec: FunctionSpec, rho: float, l: int | None = None) -> LocallyIdenticalQR:
    """Top-left l x l block of rho, column l carrying the remainder, identity tail.

    ``l`` defaults to the level of rho, which must exceed floor(k/2). Passing it
    explicitly allows the same shape for any l in [1, k-1] with l*rho <= 1.
    """
    k = spec.k
    if l is None:
        l = level_of_rho(rho, k)
        if l == FULL or l <= k // 2:
            raise ValueError(f'rho={rho} gives level {l}, not above {k // 2}')
    elif not 1 <= l <= k - 1 or l * rho > 1.0 + _SLACK:
        raise ValueError(f'l={l} is incompatible with k={k}, rho={rho}')
    v = np.zeros((k, k))
    v[:l, :l] = rho
    v[:l, l] = 1.0 - l * rho
    v[l:, l:] = np.eye(k - l)
    return LocallyIdenticalQR(v=channel(v), rho=float(rho), spec=spec, level=l)


def merge_columns(v, groups) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return channel(np.stack([v[:, list(g)].sum(axis=1) for g in groups], axis=1))


def v1_groups(k: int, l: int) -> list[list[int]]:
    m = k // l
    return [list(range(b * l, (b + 1) * l)) for b in range(m)] + \
        [[j] for j in range(m * l, k)]


def v2_groups(k: int, l: int) -> list[list[int]]:
    return [list(range(l))] + [[j] for j in range(l, k)]


def merge_V1_prime(v1: LocallyIdenticalQR) -> np.ndarray:
    return merge_columns(v1.v, v1_groups(v1.spec.k, v1.level))


def merge_V2_prime(v2: LocallyIdenticalQR) -> np.ndarray:
    return merge_columns(v2.v, v2_groups(v2.spec.k, v2.level))


def reduce_to_sparse_locally_identical(p, w: RhoQR) -> tuple[SparsePmf, LocallyIdenticalQR]:
    """Sparse pmf and locally identical channel producing the same output law.

    Each atom's mass goes to its smallest symbol; the atom's row of V is the
    p-weighted average of the original rows. Atoms with no mass get rho on the
    diagonal and (1 - rho)/(k - 1) elsewhere.
    """
    spec = w.spec
    p = pmf(p)
    if p.size != spec.r:
        raise DimensionMismatch(f'pmf of dim {p.size} vs spec with r={spec.r}')
    k = spec.k
    masses = push_forward(p, spec)
    v = np.empty((k, k))
    for j, atom in enumerate(spec.atoms):
        idx = list(atom)
        if masses[j] > 0:
            v[j] = p[idx] @ w.channel[idx] / masses[j]
        else:
            v[j] = (1.0 - w.rho) / (k - 1)
            v[j, j] = w.rho
    v /= v.sum(axis=1, keepdims=True)
    sparse = SparsePmf(support=tuple(a[0] for a in spec.atoms), masses=masses, spec=spec)
    return sparse, LocallyIdenticalQR(v=channel(v), rho=w.rho, spec=spec)


def ldp_rho_cap(epsilon: float, k: int) -> float:
    """Largest rho an epsilon-LDP channel onto k outputs can guarantee."""
    if epsilon <= 0:
        raise ValueError(f'epsilon must be positive, got {epsilon}')
    return 1.0 / (1.0 + (k - 1) * math.exp(-epsilon))


def satisfies_ldp(w, epsilon: float, rtol: float = 1e-12) -> bool:
    """True iff W(z|x) <= e^epsilon W(z|x') for all x, x', z.

    A column with both zero and positive entries fails for every finite epsilon.
    """
    w = np.asarray(w, dtype=float)
    hi = w.max(axis=0)
    lo = w.min(axis=0)
    return bool(np.all(hi <= math.exp(epsilon) * lo * (1 + rtol)))


def randomized_response(k: int, epsilon: float) -> np.ndarray:
    """k-ary randomized response, which sits exactly at the LDP rho cap."""
    keep = ldp_rho_cap(epsilon, k)
    w = np.full((k, k), (1.0 - keep) / (k - 1))
    np.fill_diagonal(w, keep)
    return channel(w)
