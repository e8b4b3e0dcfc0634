"""Numerical verification recipes shared by ``privlens verify`` and the test suite.

Each check returns a ``CheckResult``; none of them raise on a failed property.
"""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Callable

import numpy as np

from . import bounds, game, mechanisms
from .estimators import reverse_iprojection
from .simplex import (FunctionSpec, divergence_var_lower_bound, kl_divergence,
                      local_uniformity_bound, locally_uniform_pmf, variational_distance)


@dataclasses.dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


def random_sorted_spec(rng: np.random.Generator, k_max: int = 5, r_max: int = 12) -> FunctionSpec:
    k = int(rng.integers(2, k_max + 1))
    r = int(rng.integers(k, r_max + 1))
    cuts = np.sort(rng.choice(np.arange(1, r), size=k - 1, replace=False))
    sizes = sorted(np.diff(np.concatenate([[0], cuts, [r]])).tolist(), reverse=True)
    return FunctionSpec.from_sizes(sizes)


def random_core(rng: np.random.Generator, k: int, low: float) -> np.ndarray:
    """Random k x k stochastic matrix with every diagonal entry in [low, 1]."""
    v = np.empty((k, k))
    for j in range(k):
        d = rng.uniform(low, 1.0)
        v[j, np.arange(k) != j] = (1.0 - d) * rng.dirichlet(np.ones(k - 1))
        v[j, j] = d
    return v


def check_omega_table() -> tuple[bool, str]:
    a = FunctionSpec.from_sizes((3, 2))
    b = FunctionSpec.from_sizes((4, 2, 1))
    cases = [(a, 0.4, math.log2(5)), (a, 0.7, math.log2(3)), (b, 0.45, math.log2(6))]
    errs = [abs(bounds.omega(s, rho) - want) for s, rho, want in cases]
    return max(errs) <= 1e-12, f'max error {max(errs):.3g}'


def check_theorem1(samples: int = 100, seed: int = 0,
                   omega_fn=bounds.omega) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(samples):
        spec = random_sorted_spec(rng)
        k = spec.k
        regime = i % 3
        if regime == 0:
            rho = rng.uniform(0.01, 1.0 / k)
        elif regime == 1:
            rho = rng.uniform(1.0 / k, 0.5) if k > 2 else rng.uniform(0.5, 1.0)
        else:
            rho = rng.uniform(0.5, 1.0)
        rho = float(max(rho, 1e-6))
        try:
            got = game.theorem1_equality_check(spec, rho, omega_fn=omega_fn)
        except game.TheoremCheckFailure as exc:
            return False, f'{spec.sizes} rho={rho:.6g}: {exc}'
        worst = max(worst, abs(got - omega_fn(spec, rho)))
    return worst <= 1e-9, f'max |check - omega| = {worst:.3g} over {samples} specs'


def check_minimax_worst_case() -> tuple[bool, str]:
    res = game.brute_force_minimax(FunctionSpec.identity(2), 0.4, 1, grid=41)
    return 0.97 <= res.value <= 1.0, f'value {res.value:.12g}'


def check_minimax_monotone() -> tuple[bool, str]:
    spec = FunctionSpec.identity(2)
    parts, ok = [], True
    for rho in (0.4, 0.8):
        one = game.brute_force_minimax(spec, rho, 1).value
        two = game.brute_force_minimax(spec, rho, 2).value
        ok &= two <= one + 0.03
        parts.append(f'rho={rho}: n1={one:.6g} n2={two:.6g}')
    return ok, '; '.join(parts)


def check_gamma_inner_unit() -> tuple[bool, str]:
    got = bounds.gamma_n_inner([1.0, 0.0], np.eye(2), 1)
    return abs(got - math.log2(1.5)) <= 1e-12, f'value {got:.15g}'


def check_gamma_inner_trend() -> tuple[bool, str]:
    v = np.array([[0.8, 0.2], [0.2, 0.8]])
    vals = [bounds.gamma_n_inner([0.6, 0.4], v, n) for n in (4, 8, 16, 32)]
    decreasing = all(a > b for a, b in zip(vals, vals[1:]))
    shrunk = vals[-1] < 0.25 * vals[0]
    return decreasing and shrunk, (f'values {[round(x, 6) for x in vals]}, '
                                   f'ratio n32/n4 = {vals[-1] / vals[0]:.4f}')


def check_sandwich(budget: int = 10_000, seed: int = 0) -> tuple[bool, str]:
    spec = FunctionSpec.from_sizes((3, 2))
    rho = 0.8
    target = math.log2(3)
    ok = True
    parts = []
    floor = bounds.min_valid_n(spec, rho)
    for n in (64, 256, 1024):
        if n < floor:
            return False, f'n={n} below min_valid_n={floor}'
        lo = bounds.achievability_lower_bound(spec, rho, n)
        hi = bounds.converse_upper_bound(spec, rho, n, budget, seed)
        ok &= lo <= hi
        if n == 1024:
            ok &= abs(lo - target) <= 0.2 and abs(hi - target) <= 0.2
        parts.append(f'n={n}: {lo:.6g} <= {hi:.6g}')
    return ok, '; '.join(parts)


def check_iprojection(samples: int = 100, draws: int = 1000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst_gap = -math.inf
    worst_idem = 0.0
    for _ in range(samples):
        k = int(rng.integers(2, 6))
        v = random_core(rng, k, 0.6)
        q = rng.dirichlet(np.full(k, 0.5))
        if rng.random() < 0.3:
            q[rng.integers(k)] = 0.0
            q /= q.sum()
        q_tilde, _ = reverse_iprojection(q, v)
        best = kl_divergence(q, q_tilde)
        betas = rng.dirichlet(np.ones(k), size=draws)
        rival = min(kl_divergence(q, b @ v) for b in betas)
        worst_gap = max(worst_gap, best - rival)
        again, _ = reverse_iprojection(q_tilde, v)
        worst_idem = max(worst_idem, float(np.abs(again - q_tilde).max()))
    ok = worst_gap <= 1e-9 and worst_idem <= 1e-9
    return ok, f'max advantage of random beta {worst_gap:.3g}, idempotence error {worst_idem:.3g}'


def check_lemma4(samples: int = 10_000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for i in range(samples):
        spec = random_sorted_spec(rng, k_max=4, r_max=8)
        beta = rng.dirichlet(np.ones(spec.k))
        if i % 2:
            p = np.zeros(spec.r)
            for j, atom in enumerate(spec.atoms):
                p[atom[int(rng.integers(len(atom)))]] = 1.0
            p *= rng.dirichlet(np.ones(spec.k))[spec.labels]
        else:
            p = rng.dirichlet(np.ones(spec.r))
        p /= p.sum()
        bound, tight = local_uniformity_bound(p, spec, beta)
        actual = kl_divergence(p, locally_uniform_pmf(beta, spec))
        if actual > bound + 1e-12:
            return False, f'bound {bound!r} below divergence {actual!r}'
        sparse = all(np.count_nonzero(p[list(a)]) <= 1 for a in spec.atoms)
        if tight != sparse:
            return False, f'tight={tight} but sparse={sparse} for p={p}, atoms={spec.atoms}'
    return True, f'{samples} instances'


def check_lemma5(samples: int = 10_000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(samples):
        d = int(rng.integers(2, 7))
        q0 = rng.dirichlet(np.ones(d))
        q = rng.dirichlet(np.ones(d))
        drop = rng.random(d) < 0.3
        if not drop.all():
            q[drop] = 0.0
            q /= q.sum()
        p = rng.dirichlet(np.ones(d)) * (q > 0)
        if rng.random() < 0.3:
            p = p * (rng.random(d) < 0.5)
        if p.sum() == 0:
            p[np.argmax(q)] = 1.0
        p /= p.sum()
        worst = max(worst, divergence_var_lower_bound(p, q, q0) - kl_divergence(p, q))
    return worst <= 1e-12, f'max excess of bound over divergence {worst:.3g}'


def check_pinsker(samples: int = 10_000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(samples):
        d = int(rng.integers(2, 7))
        p = rng.dirichlet(np.full(d, 0.7))
        q = rng.dirichlet(np.full(d, 0.7))
        lhs = variational_distance(p, q)
        rhs = math.sqrt(2 * math.log(2) * kl_divergence(p, q))
        worst = max(worst, lhs - rhs)
    return worst <= 1e-12, f'max excess {worst:.3g}'


def check_monte_carlo(instances: int = 20, samples: int = 100_000,
                      seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        g = game.random_game(rng)
        exact = game.exact_privacy(g)
        mean, se = game.monte_carlo_privacy(g, samples, seed + i)
        if (mean, se) != game.monte_carlo_privacy(g, samples, seed + i):
            return False, f'instance {i} is not reproducible under its seed'
        z = abs(mean - exact) / se if se > 0 else (0.0 if mean == exact else math.inf)
        worst = max(worst, z)
    return worst <= 3.0, f'max |mean - exact| / std_error = {worst:.3f}'


def check_finite_n_limits() -> tuple[bool, str]:
    lam = bounds.lambda_n(2, 2.0, 100)
    spec = FunctionSpec.from_sizes((4, 2, 1))
    sched = bounds.default_smooth_schedule(2.0)
    theta = (1 / 7 - 0.1) / 0.9
    want = math.log2(1 + theta / (6 * math.e)) - sched.penalty(7)
    got = bounds.Lambda_n(spec, 0.45, 7, sched)
    big = 10 ** 5
    lam_big = bounds.lambda_n(bounds.k_prime(spec, 0.45), 2.0, big)
    cap_big = bounds.Lambda_n(spec, 0.45, big, sched)
    ok = (abs(lam - 0.999404) <= 1e-6 and abs(got - want) <= 1e-12
          and abs(cap_big) < 1e-3 and lam_big > 1 - 1e-3)
    return ok, (f'lambda_100={lam:.9f}, Lambda_7={got:.9g} (want {want:.9g}), '
                f'Lambda_1e5={cap_big:.3g}, lambda_1e5={lam_big:.9f}')


def _ldp_channel(rng, spec: FunctionSpec, epsilon: float) -> np.ndarray:
    u = rng.random((spec.r, spec.k))
    w = np.exp(0.5 * epsilon * u)
    return w / w.sum(axis=1, keepdims=True)


def check_ldp(samples: int = 500, seed: int = 0) -> tuple[bool, str]:
    if abs(mechanisms.ldp_rho_cap(math.log(3), 2) - 0.75) > 1e-12:
        return False, 'cap(ln 3, 2) != 0.75'
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        spec = random_sorted_spec(rng, k_max=4, r_max=8)
        eps = float(rng.uniform(0.05, 6.0))
        w = _ldp_channel(rng, spec, eps)
        if not mechanisms.satisfies_ldp(w, eps):
            return False, 'sampled channel violates its own LDP level'
        cap = mechanisms.ldp_rho_cap(eps, spec.k)
        if mechanisms.max_recoverability(w, spec) > cap + 1e-12:
            return False, f'LDP channel recoverable beyond the cap at eps={eps}'
        try:
            mechanisms.validate_rho_qr(w, spec, min(1.0, cap + 1e-9))
            return False, f'validated above the cap at eps={eps}'
        except mechanisms.RecoverabilityViolation:
            pass
        rr = mechanisms.randomized_response(spec.k, eps)
        if not mechanisms.satisfies_ldp(rr, eps):
            return False, 'randomized response fails its LDP level'
        mechanisms.validate_rho_qr(rr, FunctionSpec.identity(spec.k), cap)
    epsilons = np.linspace(0.01, 20.0, 200)
    for sizes, rho in (((3, 2), 0.8), ((4, 2, 1), 0.45), ((2, 2, 1, 1, 1), 0.4)):
        spec = FunctionSpec.from_sizes(sizes)
        l = mechanisms.level_of_rho(rho, spec.k)
        core = (mechanisms.build_V1(spec, rho) if l <= spec.k // 2
                else mechanisms.build_V2(spec, rho))
        for w in (mechanisms.build_Wl(spec, l), core.lifted()):
            if not np.any(w == 0):
                continue
            if any(mechanisms.satisfies_ldp(w, e) for e in epsilons):
                return False, f'mechanism for {sizes} at rho={rho} passes an LDP test'
    return True, f'{samples} random LDP channels; mechanisms rejected for eps <= 20'


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    'omega_table': check_omega_table,
    'theorem1': check_theorem1,
    'minimax_worst_case': check_minimax_worst_case,
    'minimax_monotone': check_minimax_monotone,
    'gamma_inner_unit': check_gamma_inner_unit,
    'gamma_inner_trend': check_gamma_inner_trend,
    'sandwich': check_sandwich,
    'iprojection': check_iprojection,
    'lemma4': check_lemma4,
    'lemma5': check_lemma5,
    'pinsker': check_pinsker,
    'monte_carlo': check_monte_carlo,
    'finite_n_limits': check_finite_n_limits,
    'ldp': check_ldp,
}


def run(names=None, overrides: dict | None = None) -> list[CheckResult]:
    """Runs the named checks (all by default); ``overrides`` swaps in replacements."""
    table = dict(CHECKS)
    table.update(overrides or {})
    names = list(table) if names is None else list(names)
    unknown = [n for n in names if n not in table]
    if unknown:
        raise KeyError(f'unknown checks {unknown}; choose from {sorted(table)}')
    return [_timed(n, table[n]) for n in names]
