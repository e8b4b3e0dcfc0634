"""Probability objects on finite alphabets: pmfs, channels, partitions, types.

All information quantities are in bits. Pmfs and channels are plain read-only
numpy arrays that have passed validation; partitions of the data alphabet are
``FunctionSpec`` instances and empirical types are ``NType`` instances.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, xlogy

PMF_TOL = 1e-12


class DimensionMismatch(ValueError):
    pass


def pmf(weights: Iterable[float], tol: float = PMF_TOL) -> np.ndarray:
    """Validates ``weights`` as a pmf and returns it as a read-only float array."""
    if not isinstance(weights, np.ndarray):
        weights = list(weights)
    arr = np.array(weights, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError('pmf must have positive dimension')
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f'pmf has negative or non-finite entries: {arr}')
    if abs(math.fsum(arr) - 1.0) > tol:
        raise ValueError(f'pmf sums to {math.fsum(arr)!r}, not 1')
    arr.setflags(write=False)
    return arr


def channel(rows, tol: float = PMF_TOL) -> np.ndarray:
    """Validates a row-stochastic matrix and returns it as a read-only array."""
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f'channel must be a nonempty matrix, got shape {arr.shape}')
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError('channel has negative or non-finite entries')
    sums = np.array([math.fsum(row) for row in arr])
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ValueError(f'channel rows {bad.tolist()} do not sum to 1: {sums[bad]}')
    arr.setflags(write=False)
    return arr


def channel_to_json(w) -> str:
    return json.dumps({'rows': np.asarray(w, dtype=float).tolist()})


def channel_from_json(text: str) -> np.ndarray:
    return channel(json.loads(text)['rows'])


@dataclasses.dataclass(frozen=True)
class FunctionSpec:
    """Partition of ``{0, ..., r-1}`` into the preimages of ``f``.

    Atoms are stored sorted by decreasing size (stable, so equal-size atoms keep
    their input order). ``order[j]`` is the caller's index of sorted atom ``j``.

    Attributes:
        atoms: sorted atoms, each a sorted tuple of symbols.
        r: size of the data alphabet.
        order: permutation from sorted atom index to the caller's atom index.
    """
    atoms: tuple[tuple[int, ...], ...]
    r: int
    order: tuple[int, ...]

    @classmethod
    def from_atoms(cls, atoms: Sequence[Iterable[int]],
                   r: int | None = None) -> 'FunctionSpec':
        raw = [tuple(sorted(int(x) for x in a)) for a in atoms]
        if any(len(a) == 0 for a in raw):
            raise ValueError('atoms must be nonempty')
        symbols = sorted(itertools.chain.from_iterable(raw))
        if r is None:
            r = len(symbols)
        if symbols != list(range(r)):
            raise ValueError(f'atoms {raw} do not partition range({r})')
        if not 2 <= len(raw) <= r:
            raise ValueError(f'need 2 <= k <= r, got k={len(raw)}, r={r}')
        order = tuple(sorted(range(len(raw)), key=lambda j: -len(raw[j])))
        return cls(atoms=tuple(raw[j] for j in order), r=r, order=order)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> 'FunctionSpec':
        """Contiguous atoms with the given sizes, e.g. (3, 2) -> {0,1,2}, {3,4}."""
        bounds = np.cumsum([0, *sizes])
        return cls.from_atoms([range(bounds[i], bounds[i + 1])
                               for i in range(len(sizes))])

    @classmethod
    def identity(cls, r: int) -> 'FunctionSpec':
        return cls.from_sizes([1] * r)

    @property
    def k(self) -> int:
        return len(self.atoms)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.atoms)

    @property
    def labels(self) -> np.ndarray:
        """``labels[x]`` is the (sorted) atom index f(x)."""
        out = np.empty(self.r, dtype=int)
        for j, atom in enumerate(self.atoms):
            out[list(atom)] = j
        return out

    @property
    def original_atoms(self) -> list[tuple[int, ...]]:
        out: list[tuple[int, ...]] = [()] * self.k
        for j, orig in enumerate(self.order):
            out[orig] = self.atoms[j]
        return out

    def merged(self, groups: Sequence[Sequence[int]]) -> 'FunctionSpec':
        """Coarser partition whose atoms are unions of the given atom groups."""
        return FunctionSpec.from_atoms(
            [sorted(itertools.chain.from_iterable(self.atoms[j] for j in g))
             for g in groups], r=self.r)

    def to_json(self) -> str:
        return json.dumps({'r': self.r, 'atoms': [list(a) for a in self.original_atoms]})

    @classmethod
    def from_json(cls, text: str) -> 'FunctionSpec':
        data = json.loads(text)
        return cls.from_atoms(data['atoms'], r=data.get('r'))


@dataclasses.dataclass(frozen=True)
class NType:
    """Counts of each output symbol in a length-n sequence."""
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts) or sum(self.counts) < 1:
            raise ValueError(f'invalid type counts {self.counts}')

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def dim(self) -> int:
        return len(self.counts)

    def as_pmf(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n


def _check_dims(*arrays) -> None:
    dims = {np.shape(a)[-1] for a in arrays}
    if len(dims) != 1:
        raise DimensionMismatch(f'dimension mismatch: {sorted(dims)}')


def kl_divergence(p, q) -> float:
    """D(p||q) in bits; ``math.inf`` when p is not absolutely continuous wrt q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_dims(p, q)
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    ps, qs = p[support], q[support]
    return max(0.0, math.fsum(ps * (np.log2(ps) - np.log2(qs))))


def kl_divergence_rows(p, qs) -> np.ndarray:
    """D(p||qs[i]) for every row of ``qs`` (vectorized, bits)."""
    p = np.asarray(p, dtype=float)
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    _check_dims(p, qs)
    support = p > 0
    ps = p[support]
    sub = qs[:, support]
    with np.errstate(divide='ignore'):
        terms = ps * (np.log2(ps) - np.log2(sub))
    out = terms.sum(axis=1)
    out[np.any(sub <= 0, axis=1)] = math.inf
    return np.maximum(out, 0.0)


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    return -math.fsum(xlogy(p, p) / math.log(2))


def variational_distance(p, q) -> float:
    """L1 distance sum |p - q|, in [0, 2]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    _check_dims(p, q)
    return math.fsum(np.abs(p - q))


def push_forward(p, spec: FunctionSpec) -> np.ndarray:
    """Atom masses (P(A_0), ..., P(A_{k-1}))."""
    p = np.asarray(p, dtype=float)
    if p.shape != (spec.r,):
        raise DimensionMismatch(f'pmf of dim {p.size} vs spec with r={spec.r}')
    return np.array([math.fsum(p[list(a)]) for a in spec.atoms])


def locally_uniform_pmf(beta, spec: FunctionSpec) -> np.ndarray:
    """Spreads beta_j uniformly over atom j."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.k,):
        raise DimensionMismatch(f'beta of dim {beta.size} vs spec with k={spec.k}')
    sizes = np.asarray(spec.sizes, dtype=float)
    return (beta / sizes)[spec.labels]


def local_uniformity_bound(p, spec: FunctionSpec, beta) -> tuple[float, bool]:
    """Upper bound on D(p || locally uniform(beta)) and whether it is attained.

    The bound is D(P(A)||beta) + sum_j P(A_j) log|A_j|; it is attained exactly
    when p puts all of each atom's mass on a single symbol.
    """
    p = np.asarray(p, dtype=float)
    masses = push_forward(p, spec)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.k,):
        raise DimensionMismatch(f'beta of dim {beta.size} vs spec with k={spec.k}')
    logs = np.log2(np.asarray(spec.sizes, dtype=float))
    bound = kl_divergence(masses, beta) + math.fsum(masses * logs)
    actual = kl_divergence(p, locally_uniform_pmf(beta, spec))
    if math.isinf(bound) or math.isinf(actual):
        return bound, math.isinf(bound) and math.isinf(actual)
    return bound, abs(actual - bound) <= 1e-12


def divergence_var_lower_bound(p, q, q0) -> float:
    """D(p||q0) - var(q, q0) / (smallest nonzero q0), a lower bound on D(p||q).

    Requires support(p) within support(q) within support(q0).
    """
    p, q, q0 = (np.asarray(a, dtype=float) for a in (p, q, q0))
    _check_dims(p, q, q0)
    if np.any((p > 0) & (q <= 0)) or np.any((q > 0) & (q0 <= 0)):
        raise ValueError('support(p) <= support(q) <= support(q0) violated')
    q0_min = q0[q0 > 0].min()
    return kl_divergence(p, q0) - variational_distance(q, q0) / q0_min


def ntype_array(n: int, k: int) -> np.ndarray:
    """All count vectors of length k summing to n, descending lexicographic.

    Stars-and-bars over bar positions; no recursion.
    """
    if n < 1 or k < 1:
        raise ValueError(f'need n >= 1 and k >= 1, got n={n}, k={k}')
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    bars = np.array(list(itertools.combinations(range(n + k - 1), k - 1)),
                    dtype=np.int64)
    edges = np.concatenate(
        [np.full((len(bars), 1), -1), bars, np.full((len(bars), 1), n + k - 1)],
        axis=1)
    counts = np.diff(edges, axis=1) - 1
    return counts[::-1].copy()


def enumerate_ntypes(n: int, k: int) -> list[NType]:
    return [NType(tuple(int(c) for c in row)) for row in ntype_array(n, k)]


def ntype_masses(alpha, counts: np.ndarray) -> np.ndarray:
    """Multinomial probability of each type class (rows of ``counts``)."""
    alpha = np.asarray(alpha, dtype=float)
    counts = np.atleast_2d(counts)
    _check_dims(alpha, counts)
    n = counts.sum(axis=1)
    with np.errstate(divide='ignore'):
        log_mass = (gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)
                    + xlogy(counts, alpha).sum(axis=1))
    return np.exp(log_mass)


def ntype_mass(alpha, t: NType) -> float:
    return float(ntype_masses(alpha, np.asarray([t.counts]))[0])
