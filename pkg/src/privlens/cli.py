"""Command-line entry point: ``privlens <command> [options]``.

Options may also come from a JSON file given with ``--config``; explicit flags
win over the file, which wins over built-in defaults.

Exit codes: 0 success, 2 configuration error, 3 numerical-validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import bounds, checks, game, mechanisms
from .estimators import EstimatorTable, ml_locally_uniform_estimate
from .simplex import FunctionSpec, locally_uniform_pmf, pmf

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfig:
    spec: FunctionSpec | None
    rho: tuple[float, ...]
    n: tuple[int, ...]
    zeta: float
    seed: int
    samples: int
    budget: int
    out: str | None
    format: str
    pmf: tuple[float, ...] | None
    grid: int
    only: tuple[str, ...]
    mutate: bool


DEFAULTS = {
    'spec': None, 'rho': None, 'n': None, 'zeta': 2.0, 'seed': 0, 'samples': 100_000,
    'budget': 10_000, 'out': None, 'format': None, 'pmf': None, 'grid': 41,
    'only': None, 'mutate': False,
}


def parse_spec(text: str) -> FunctionSpec:
    """A path to a spec JSON file, inline JSON, or comma-separated atom sizes."""
    if os.path.exists(text):
        with open(text) as fh:
            text = fh.read()
    text = text.strip()
    try:
        if text.startswith('{'):
            return FunctionSpec.from_json(text)
        if text.startswith('['):
            return FunctionSpec.from_atoms(json.loads(text))
        return FunctionSpec.from_sizes([int(s) for s in text.split(',')])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f'bad --spec {text!r}: {exc}') from None


def parse_rho(value) -> tuple[float, ...]:
    """A single value, a list, or an inclusive range ``a:b:step``."""
    if isinstance(value, (int, float)):
        values = [float(value)]
    elif isinstance(value, list):
        values = [float(v) for v in value]
    else:
        text = str(value)
        try:
            if ':' in text:
                a, b, step = (float(s) for s in text.split(':'))
                if step <= 0:
                    raise ConfigError(f'rho step must be positive, got {step}')
                count = math.floor((b - a) / step + 1e-9) + 1
                values = [round(a + i * step, 12) for i in range(max(count, 0))]
            else:
                values = [float(s) for s in text.split(',')]
        except ValueError:
            raise ConfigError(f'bad --rho {text!r}') from None
    if not values:
        raise ConfigError(f'empty rho range {value!r}')
    bad = [v for v in values if not 0.0 < v <= 1.0]
    if bad:
        raise ConfigError(f'rho values must lie in (0, 1]: {bad}')
    return tuple(values)


def parse_n(value) -> tuple[int, ...]:
    if isinstance(value, int):
        values = [value]
    elif isinstance(value, list):
        values = value
    else:
        try:
            values = [int(s) for s in str(value).split(',') if s.strip()]
        except ValueError:
            raise ConfigError(f'bad --n {value!r}') from None
    if not values or any(int(v) < 1 for v in values):
        raise ConfigError(f'n values must be positive integers, got {value!r}')
    return tuple(int(v) for v in values)


def build_config(args: argparse.Namespace) -> RunConfig:
    merged = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f'cannot read config {args.config}: {exc}') from None
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f'unknown config keys {sorted(unknown)}')
        merged.update(data)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            merged[key] = flag
    spec = merged['spec']
    if spec is not None and not isinstance(spec, FunctionSpec):
        spec = parse_spec(json.dumps(spec) if isinstance(spec, (dict, list)) else str(spec))
    fmt = merged['format']
    if fmt not in (None, 'json', 'csv'):
        raise ConfigError(f'format must be json or csv, got {fmt!r}')
    for key in ('zeta', 'samples', 'budget', 'grid'):
        if not isinstance(merged[key], (int, float)) or merged[key] <= 0:
            raise ConfigError(f'{key} must be positive, got {merged[key]!r}')
    if merged['zeta'] <= 1:
        raise ConfigError(f'zeta must exceed 1, got {merged["zeta"]}')
    p = merged['pmf']
    if isinstance(p, str):
        p = [float(s) for s in p.split(',')]
    only = merged['only']
    if isinstance(only, str):
        only = only.split(',')
    return RunConfig(
        spec=spec,
        rho=parse_rho(merged['rho']) if merged['rho'] is not None else (),
        n=parse_n(merged['n']) if merged['n'] is not None else (),
        zeta=float(merged['zeta']), seed=int(merged['seed']),
        samples=int(merged['samples']), budget=int(merged['budget']),
        out=merged['out'], format=fmt or 'csv', pmf=tuple(p) if p else None,
        grid=int(merged['grid']), only=tuple(only or ()), mutate=bool(merged['mutate']))


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) in (None, ()):
            raise ConfigError(f'--{name} is required for this command')


def _single(values, name: str):
    if len(values) != 1:
        raise ConfigError(f'--{name} takes a single value here, got {len(values)}')
    return values[0]


def _fmt(x: float) -> float:
    return float(format(x, '.12g'))


def _rounded(obj):
    """Rounds every float in a JSON-like structure to 12 significant digits."""
    if isinstance(obj, float):
        return _fmt(obj) if math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def _emit_json(cfg: RunConfig, obj) -> None:
    _emit(cfg, json.dumps(_rounded(obj), indent=2))


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.out:
        with open(cfg.out, 'w') as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith('\n'):
            sys.stdout.write('\n')


def _emit_points(cfg: RunConfig, points) -> None:
    if cfg.format == 'json':
        _emit_json(cfg, [{'param': p.parameter, 'kind': p.kind, 'value': p.value,
                          'valid': p.valid} for p in points])
    else:
        _emit(cfg, bounds.points_to_csv(points))


def cmd_omega(cfg: RunConfig) -> int:
    _require(cfg, 'spec', 'rho')
    rhos = set(cfg.rho)
    if len(cfg.rho) > 1:
        lo, hi = min(cfg.rho), max(cfg.rho)
        rhos |= {1.0 / l for l in range(1, cfg.spec.k + 1) if lo <= 1.0 / l <= hi}
    points = [bounds.BoundPoint(rho, bounds.omega(cfg.spec, rho), 'omega')
              for rho in sorted(rhos)]
    _emit_points(cfg, points)
    return EXIT_OK


def mechanism_report(spec: FunctionSpec, rho: float) -> dict:
    l = mechanisms.level_of_rho(rho, spec.k)
    if l == mechanisms.FULL:
        w = mechanisms.build_Wl(spec, spec.k)
        mechanisms.validate_rho_qr(w, spec, rho)
        return {'regime': 'worst-case', 'rho': rho, 'l': spec.k, 'W_l': {'rows': w.tolist()},
                'omega': bounds.omega(spec, rho), 'rho_qr_valid': True}
    if l <= spec.k // 2:
        core, case = mechanisms.build_V1(spec, rho), 'V1'
        merged = mechanisms.merge_V1_prime(core)
    else:
        core, case = mechanisms.build_V2(spec, rho), 'V2'
        merged = mechanisms.merge_V2_prime(core)
    try:
        core.as_rho_qr()
        valid = True
    except mechanisms.RecoverabilityViolation:
        valid = False
    return {'regime': 'locally-identical', 'case': case, 'rho': rho, 'l': l,
            'l_prime': spec.k - (spec.k // l) * l, 'k_prime': merged.shape[1],
            'V': {'rows': core.v.tolist()}, 'V_prime': {'rows': merged.tolist()},
            'omega': bounds.omega(spec, rho), 'rho_qr_valid': valid}


def cmd_mechanism(cfg: RunConfig) -> int:
    _require(cfg, 'spec', 'rho')
    report = mechanism_report(cfg.spec, _single(cfg.rho, 'rho'))
    _emit_json(cfg, report)
    return EXIT_OK if report['rho_qr_valid'] else EXIT_VALIDATION


def cmd_bounds(cfg: RunConfig) -> int:
    _require(cfg, 'spec', 'rho', 'n')
    if len(cfg.rho) > 1 and len(cfg.n) > 1:
        raise ConfigError('sweep either --rho or --n, not both')
    points = []
    for rho in cfg.rho:
        for p in bounds.bound_points(cfg.spec, rho, cfg.n, cfg.zeta, cfg.budget, cfg.seed):
            param = rho if len(cfg.rho) > 1 else p.parameter
            points.append(dataclasses.replace(p, parameter=param))
    _emit_points(cfg, points)
    return EXIT_OK


def simulation_game(spec: FunctionSpec, rho: float, n: int, p=None) -> game.GameInstance:
    """The constructed mechanism for rho against the projection-based querier."""
    p = pmf(p if p is not None else np.full(spec.r, 1.0 / spec.r), tol=1e-9)
    l = mechanisms.level_of_rho(rho, spec.k)
    if l == mechanisms.FULL:
        w = mechanisms.build_Wl(spec, spec.k)
        core = None
    else:
        li = (mechanisms.build_V1(spec, rho) if l <= spec.k // 2
              else mechanisms.build_V2(spec, rho))
        w, core = li.lifted(), li.v
    if core is not None and np.linalg.cond(core) < 1e12:
        fn = lambda t: ml_locally_uniform_estimate(t, core, spec)
    else:
        fn = lambda t: locally_uniform_pmf((np.asarray(t.counts) + 1.0) / (n + spec.k), spec)
    table = EstimatorTable.from_function(fn, n, spec.k)
    return game.GameInstance(spec=spec, rho=rho, n=n, p=p,
                             w=mechanisms.validate_rho_qr(w, spec, rho), querier=table)


def cmd_simulate(cfg: RunConfig) -> int:
    _require(cfg, 'spec', 'rho', 'n')
    g = simulation_game(cfg.spec, _single(cfg.rho, 'rho'), _single(cfg.n, 'n'), cfg.pmf)
    mean, se = game.monte_carlo_privacy(g, cfg.samples, cfg.seed)
    _emit_json(cfg, {'mean': mean, 'std_error': se, 'samples': cfg.samples,
                     'seed': cfg.seed})
    return EXIT_OK


def cmd_minimax(cfg: RunConfig) -> int:
    _require(cfg, 'rho', 'n')
    spec = cfg.spec or FunctionSpec.identity(2)
    rho, n = _single(cfg.rho, 'rho'), _single(cfg.n, 'n')
    try:
        res = game.brute_force_minimax(spec, rho, n, grid=cfg.grid)
    except game.BudgetExceeded as exc:
        raise ConfigError(str(exc)) from None
    _emit_json(cfg, json.loads(res.to_json()))
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    names = list(cfg.only) or None
    overrides = {}
    if cfg.mutate:
        shifted = lambda spec, rho: bounds.omega(spec, rho) + 1e-3
        overrides['theorem1'] = lambda: checks.check_theorem1(omega_fn=shifted)
    try:
        results = checks.run(names, overrides)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    lines = [f'{"PASS" if r.passed else "FAIL"} {r.name} ({r.seconds:.2f}s): {r.detail}'
             for r in results]
    _emit(cfg, '\n'.join(lines) + '\n')
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


COMMANDS = {
    'omega': cmd_omega, 'mechanism': cmd_mechanism, 'bounds': cmd_bounds,
    'simulate': cmd_simulate, 'minimax': cmd_minimax, 'verify': cmd_verify,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file with option values')
    common.add_argument('--spec', help='spec JSON path, inline JSON, or sizes like 3,2')
    common.add_argument('--rho', help='value, list a,b,c or inclusive range a:b:step')
    common.add_argument('--n', help='value or comma-separated list')
    common.add_argument('--zeta', type=float)
    common.add_argument('--seed', type=int)
    common.add_argument('--samples', type=int)
    common.add_argument('--budget', type=int, help='converse search evaluations')
    common.add_argument('--out', help='write output here instead of stdout')
    common.add_argument('--format', choices=['json', 'csv'])
    common.add_argument('--pmf', help='data pmf for simulate, comma-separated')
    common.add_argument('--grid', type=int, help='points per axis for minimax')
    common.add_argument('--only', help='comma-separated check names for verify')
    common.add_argument('--mutate', action='store_true',
                        help='verify with a perturbed omega (should fail)')
    parser = argparse.ArgumentParser(prog='privlens', description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
