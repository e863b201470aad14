#!/usr/bin/env python3
"""
Platoon Dispatching Experiments
Evaluates and searches threshold policies, solves the discounted problem and
runs the replicated simulation, writing the results as CSV or JSON.
"""

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

# Allow running as `python scripts/platoon_experiments.py`
sys.path.append(str(Path(__file__).parent.parent))

from scripts.des_sim import SimConfig, simulate_replications
from scripts.dp_solver import (
    Boundary,
    TruncationConfig,
    check_convexity,
    extract_threshold,
    q_difference,
    scaled_discounted_value,
    value_iterate_discounted,
    value_iterate_finite,
)
from scripts.platoon_errors import (
    ConfigError,
    ConvergenceError,
    ParameterError,
    PlatoonError,
    StructureViolation,
    ThresholdSearchError,
)
from scripts.platoon_model import ModelParams, validate_params
from scripts.run_config import config_path_label, load_run_config
from scripts.steady_state import (
    DEFAULT_M_CAP,
    asymptotic_limit,
    average_cost_closed_form,
    average_cost_oracle,
    closed_form_branch,
    evaluate_threshold,
    find_optimal_threshold,
    stationary_oracle,
    threshold_map,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_COMPUTATION = 3
EXIT_IO = 4

COMMANDS = ('evaluate', 'search', 'dp', 'simulate', 'sweep', 'thresholds')
FORMATS = ('csv', 'json')
NOT_AVAILABLE = 'n/a'
DIVERGES = 'diverges'
SWEEP_M_MAX = 10

DEFAULTS: Dict[str, Any] = {
    'p': None,
    'q': None,
    'kappa': None,
    'beta': 0.999,
    'm': None,
    'm_max': None,
    'horizon': None,
    'x_max': 200,
    'margin': 10,
    'boundary': Boundary.DISPATCH.value,
    'tol': 1e-6,
    'slots': 1_000_000,
    'reps': 30,
    'seed': 12345,
    'confidence': 0.99,
    'warmup': 0,
    'workers': 1,
    'simulate': False,
    'out': None,
    'format': 'csv',
    'kappas': [1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
    'log_level': 'WARNING',
}

SWEEP_COLUMNS = ['m', 'j_closed', 'j_oracle', 'branch', 'sim_mean', 'sim_ci_lo', 'sim_ci_hi', 'reps', 'slots', 'seed']


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    params: ModelParams
    m: Optional[int]
    m_max: int
    horizon: Optional[int]
    trunc: TruncationConfig
    tol: float
    sim: SimConfig
    simulate: bool
    out: Optional[str]
    format: str
    kappas: Tuple[float, ...]


@dataclass
class Report:
    """Rows written to the output file plus scalar results"""
    columns: List[str]
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any] = field(default_factory=dict)
    exit_code: int = EXIT_OK


def _coerce(settings: Dict[str, Any], key: str, kind: type) -> Any:
    value = settings[key]
    if value is None:
        return None
    if isinstance(value, bool):
        raise ParameterError(key, f"expected {kind.__name__}, got {value!r}")
    try:
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        converted = kind(value)
    except (TypeError, ValueError):
        raise ParameterError(key, f"expected {kind.__name__}, got {value!r}")
    return converted


def merge_settings(args: argparse.Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    """Defaults, overridden by the config file, overridden by explicit flags"""
    settings = dict(DEFAULTS)
    settings.update(config)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def build_spec(command: str, settings: Dict[str, Any]) -> ExperimentSpec:
    """Validate merged settings into an ExperimentSpec"""
    for key in ('p', 'q', 'kappa'):
        if settings[key] is None:
            raise ParameterError(key, f"--{key} is required")

    params = validate_params(
        _coerce(settings, 'p', float),
        _coerce(settings, 'q', float),
        _coerce(settings, 'kappa', float),
        _coerce(settings, 'beta', float),
    )

    m = _coerce(settings, 'm', int)
    if m is not None and m < 0:
        raise ParameterError('m', f"m must be >= 0, got {m}")
    if command == 'evaluate' and m is None:
        raise ParameterError('m', "evaluate requires --m")

    m_max = _coerce(settings, 'm_max', int)
    if m_max is None:
        m_max = SWEEP_M_MAX if command == 'sweep' else DEFAULT_M_CAP
    if m_max < (0 if command == 'sweep' else 1):
        raise ParameterError('m_max', f"m-max out of range: {m_max}")

    horizon = _coerce(settings, 'horizon', int)
    if horizon is not None and horizon < 1:
        raise ParameterError('horizon', f"horizon must be >= 1, got {horizon}")

    try:
        boundary = Boundary(str(settings['boundary']).lower())
    except ValueError:
        choices = ', '.join(b.value for b in Boundary)
        raise ParameterError('boundary', f"boundary must be one of {choices}, got {settings['boundary']!r}")

    tol = _coerce(settings, 'tol', float)
    if not tol > 0:
        raise ParameterError('tol', f"tol must be > 0, got {tol}")

    fmt = str(settings['format']).lower()
    if fmt not in FORMATS:
        raise ParameterError('format', f"format must be one of {', '.join(FORMATS)}, got {settings['format']!r}")

    kappas = settings['kappas']
    if not isinstance(kappas, (list, tuple)) or not kappas:
        raise ParameterError('kappas', f"expected a non-empty list, got {kappas!r}")
    kappas = tuple(_coerce({'kappas': k}, 'kappas', float) for k in kappas)

    return ExperimentSpec(
        command=command,
        params=params,
        m=m,
        m_max=m_max,
        horizon=horizon,
        trunc=TruncationConfig(_coerce(settings, 'x_max', int), _coerce(settings, 'margin', int), boundary),
        tol=tol,
        sim=SimConfig(
            slots=_coerce(settings, 'slots', int),
            replications=_coerce(settings, 'reps', int),
            base_seed=_coerce(settings, 'seed', int),
            confidence_level=_coerce(settings, 'confidence', float),
            warmup_slots=_coerce(settings, 'warmup', int),
            workers=_coerce(settings, 'workers', int),
        ),
        simulate=bool(settings['simulate']),
        out=settings['out'],
        format=fmt,
        kappas=kappas,
    )


def _limit_cell(params: ModelParams) -> Any:
    limit = asymptotic_limit(params)
    return DIVERGES if math.isinf(limit) else limit


def run_evaluate(spec: ExperimentSpec) -> Report:
    """Closed form, oracle, branch, discrepancy and stationary law for one m"""
    result = evaluate_threshold(spec.params, spec.m)
    oracle = stationary_oracle(spec.params, spec.m).probabilities
    scalars = {
        'm': spec.m,
        'j_closed': result.j_closed,
        'j_oracle': result.j_oracle,
        'branch': result.branch.value,
        'discrepancy': result.discrepancy,
        'flagged': result.flagged,
    }
    rows = [
        {'x': x, 'f_closed': float(result.distribution.probabilities[x]), 'f_oracle': float(oracle[x]), **scalars}
        for x in range(spec.m + 1)
    ]
    columns = ['m', 'x', 'f_closed', 'f_oracle', 'j_closed', 'j_oracle', 'branch', 'discrepancy', 'flagged']
    return Report(columns, rows, scalars)


def _curve_report(params: ModelParams, curve: List[float], m_star: Optional[int]) -> Report:
    limit = _limit_cell(params)
    rows = [
        {'m': m, 'j_oracle': j, 'optimal': m == m_star, 'asymptotic_limit': limit}
        for m, j in enumerate(curve)
    ]
    summary = {
        'm_star': m_star,
        'j_star': curve[m_star] if m_star is not None else None,
        'asymptotic_limit': limit,
    }
    return Report(['m', 'j_oracle', 'optimal', 'asymptotic_limit'], rows, summary)


def run_search(spec: ExperimentSpec) -> Report:
    """Optimal threshold by the first non-decrease rule, with the curve up to m*+1"""
    try:
        search = find_optimal_threshold(spec.params, spec.m_max)
    except ThresholdSearchError as e:
        logger.error(str(e))
        report = _curve_report(spec.params, e.curve, None)
        report.summary['error'] = str(e)
        report.exit_code = EXIT_COMPUTATION
        return report
    return _curve_report(spec.params, search.cost_curve, search.m_star)


def run_sweep(spec: ExperimentSpec) -> Report:
    """One row per m in [0, m_max]; simulation columns only with --simulate"""
    rows = []
    for m in range(spec.m_max + 1):
        row = {
            'm': m,
            'j_closed': average_cost_closed_form(spec.params, m),
            'j_oracle': average_cost_oracle(spec.params, m),
            'branch': closed_form_branch(spec.params, m).value,
        }
        if spec.simulate:
            summary = simulate_replications(spec.params, m, spec.sim)
            lo, hi = summary.ci if summary.ci else (NOT_AVAILABLE, NOT_AVAILABLE)
            row.update({
                'sim_mean': summary.grand_mean,
                'sim_ci_lo': lo,
                'sim_ci_hi': hi,
                'reps': spec.sim.replications,
                'slots': spec.sim.slots,
                'seed': spec.sim.base_seed,
            })
        rows.append(row)
    return Report(list(SWEEP_COLUMNS), rows)


def _average_optimum(params: ModelParams) -> Tuple[Optional[int], Optional[float]]:
    try:
        search = find_optimal_threshold(params)
    except ThresholdSearchError as e:
        logger.warning(f"No average-cost optimum for comparison: {e}")
        return None, None
    return search.m_star, search.cost_curve[search.m_star]


def run_dp(spec: ExperimentSpec) -> Report:
    """Discounted (or finite-horizon with --horizon) solve with structural diagnostics"""
    params = spec.params
    try:
        if spec.horizon:
            tables, policies = value_iterate_finite(params, spec.horizon, spec.trunc)
            table, policy = tables[-1], policies[-1]
            reports = [check_convexity(t) for t in tables]
            convexity = min(reports, key=lambda r: r.min_second_difference)
            scaled = None
        else:
            table, policy = value_iterate_discounted(params, spec.trunc, spec.tol)
            convexity = check_convexity(table)
            scaled = scaled_discounted_value(table)
        threshold = extract_threshold(policy)
    except (ConvergenceError, StructureViolation) as e:
        logger.error(str(e))
        detail = getattr(e, 'states', None) or getattr(e, 'residual', None)
        return Report(
            ['error', 'message', 'detail'],
            [{'error': type(e).__name__, 'message': str(e), 'detail': str(detail)}],
            {'error': str(e)},
            EXIT_COMPUTATION,
        )

    m_star, j_star = _average_optimum(params)
    summary = {
        'threshold': threshold,
        'boundary': spec.trunc.boundary.value,
        'reliable': bool(table.reliable),
        'iterations': table.iterations,
        'convexity_passed': bool(convexity.passed),
        'min_second_difference': convexity.min_second_difference,
        'convexity_location': convexity.location,
        'm_star_average': m_star,
        'agrees': threshold == m_star if m_star is not None else None,
        'scaled_value': scaled,
        'j_star': j_star,
    }

    rows = []
    for x in range(table.x_max + 1):
        rows.append({
            'x': x,
            'value': float(table.values[x]),
            'q_difference': q_difference(table, x, params) if 1 <= x <= table.x_max - 1 else None,
            'dispatch_alone': bool(policy.dispatch_alone[x]),
            'dispatch_with_platoon': bool(policy.dispatch_with_platoon[x]),
            'threshold': threshold,
            'convexity_passed': summary['convexity_passed'],
            'm_star_average': m_star,
        })
    columns = ['x', 'value', 'q_difference', 'dispatch_alone', 'dispatch_with_platoon',
               'threshold', 'convexity_passed', 'm_star_average']
    return Report(columns, rows, summary)


def run_simulate(spec: ExperimentSpec) -> Report:
    """Replications at --m (default: the average-cost optimum), plus an aggregate row"""
    m = spec.m
    if m is None:
        m = find_optimal_threshold(spec.params).m_star
        logger.info(f"No --m given, simulating the optimal threshold m={m}")

    result = simulate_replications(spec.params, m, spec.sim)
    rows = [
        {
            'replication': r,
            'seed': seed,
            'mean_cost': mean,
            'ci_lo': None,
            'ci_hi': None,
            'final_queue': final,
            'max_queue': peak,
        }
        for r, (seed, mean, final, peak) in enumerate(zip(
            result.seeds, result.per_replication_means, result.final_queue_lengths, result.max_queue_lengths
        ))
    ]
    lo, hi = result.ci if result.ci else (NOT_AVAILABLE, NOT_AVAILABLE)
    rows.append({
        'replication': 'aggregate',
        'seed': spec.sim.base_seed,
        'mean_cost': result.grand_mean,
        'ci_lo': lo,
        'ci_hi': hi,
        'final_queue': None,
        'max_queue': max(result.max_queue_lengths),
    })
    summary = {
        'm': m,
        'grand_mean': result.grand_mean,
        'ci_half_width': result.ci_half_width if result.ci_half_width is not None else NOT_AVAILABLE,
        'confidence_level': result.confidence_level,
        'replications': spec.sim.replications,
        'slots': spec.sim.slots,
        'slots_simulated': result.slots_simulated,
        'seed': spec.sim.base_seed,
    }
    columns = ['replication', 'seed', 'mean_cost', 'ci_lo', 'ci_hi', 'final_queue', 'max_queue']
    return Report(columns, rows, summary)


def run_thresholds(spec: ExperimentSpec) -> Report:
    """Optimal threshold for each surcharge in --kappas; n/a where it lies beyond --m-max"""
    rows = [
        {
            'kappa': kappa,
            'm_star': NOT_AVAILABLE if m_star is None else m_star,
            'j_star': NOT_AVAILABLE if j_star is None else j_star,
        }
        for kappa, m_star, j_star in threshold_map(spec.params, spec.kappas, spec.m_max)
    ]
    return Report(['kappa', 'm_star', 'j_star'], rows)


COMMAND_RUNNERS: Dict[str, Callable[[ExperimentSpec], Report]] = {
    'evaluate': run_evaluate,
    'search': run_search,
    'dp': run_dp,
    'simulate': run_simulate,
    'sweep': run_sweep,
    'thresholds': run_thresholds,
}


def _csv_cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _json_value(value: Any) -> Any:
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, float):
        return float(f"{value:.12g}")
    if isinstance(value, dict):
        return {k: _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return str(value)


def render(report: Report, command: str, fmt: str) -> str:
    """Format a report; fixed precision, column order and trailing newline"""
    if fmt == 'json':
        document = {
            'command': command,
            'summary': _json_value(report.summary),
            'rows': [{c: _json_value(row.get(c)) for c in report.columns} for row in report.rows],
        }
        return json.dumps(document, indent=2) + "\n"

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([_csv_cell(row.get(c)) for c in report.columns])
    return buffer.getvalue()


def write_output(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text, newline='')


def configure_logging(level_name: str):
    level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(level, int):
        raise ParameterError('log_level', f"unknown log level {level_name!r}")
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )
    logging.getLogger('scripts').setLevel(level)


def print_summary(spec: ExperimentSpec, report: Report, config_file: Optional[str]):
    print("\n" + "=" * 60)
    print(f"SUMMARY ({spec.command})")
    print("=" * 60)
    print(f"p={spec.params.p}, q={spec.params.q}, kappa={spec.params.kappa}, beta={spec.params.beta}")
    print(f"Config: {config_path_label(config_file)}")
    for key, value in report.summary.items():
        print(f"{key}: {_csv_cell(value) or NOT_AVAILABLE}")
    print(f"Rows written: {len(report.rows)}")
    print(f"Results ({spec.format}): {spec.out}")


def _add_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--p', type=float, help='Truck arrival probability per slot')
    parser.add_argument('--q', type=float, help='Platoon arrival probability per slot')
    parser.add_argument('--kappa', type=float, help='Surcharge for dispatching without a platoon')
    parser.add_argument('--beta', type=float, help='Discount factor (default: 0.999)')
    parser.add_argument('--m', type=int, help='Threshold: dispatch alone iff the queue exceeds m')
    parser.add_argument('--m-max', type=int, help='Sweep upper bound / threshold search cap')
    parser.add_argument('--horizon', type=int, help='Finite horizon N for dp (default: discounted)')
    parser.add_argument('--x-max', type=int, help='Queue cap of the DP state space (default: 200)')
    parser.add_argument('--margin', type=int, help='Required gap between threshold and x-max (default: 10)')
    parser.add_argument('--boundary', choices=[b.value for b in Boundary],
                        help='Truck arriving at x-max: dispatch it or discard it (default: dispatch)')
    parser.add_argument('--tol', type=float, help='Value iteration tolerance (default: 1e-6)')
    parser.add_argument('--slots', type=int, help='Slots per replication (default: 1000000)')
    parser.add_argument('--reps', type=int, help='Replications (default: 30)')
    parser.add_argument('--seed', type=int, help='Base seed, unsigned 64-bit (default: 12345)')
    parser.add_argument('--confidence', type=float, help='Confidence level (default: 0.99)')
    parser.add_argument('--warmup', type=int, help='Warmup slots excluded from the mean (default: 0)')
    parser.add_argument('--workers', type=int, help='Worker processes for replications (default: 1)')
    parser.add_argument('--simulate', action='store_const', const=True, help='Add simulation columns to sweep')
    parser.add_argument('--kappas', type=float, nargs='+', help='Surcharges scanned by thresholds')
    parser.add_argument('--out', help='Output file (default: stdout)')
    parser.add_argument('--format', choices=FORMATS, help='Output format (default: csv)')
    parser.add_argument('--config', help='YAML config file mirroring the flags')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR (default: WARNING)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Truck platoon dispatching experiments')
    subparsers = parser.add_subparsers(dest='command', required=True)
    helps = {
        'evaluate': 'Average cost of one threshold policy',
        'search': 'Optimal threshold under the average-cost criterion',
        'dp': 'Discounted or finite-horizon dynamic programming',
        'simulate': 'Replicated simulation of one threshold policy',
        'sweep': 'Average cost over a range of thresholds',
        'thresholds': 'Optimal threshold as a function of kappa',
    }
    for command in COMMANDS:
        _add_flags(subparsers.add_parser(command, help=helps[command]))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()

    args = build_parser().parse_args(argv)

    try:
        config = load_run_config(args.config)
        settings = merge_settings(args, config)
        configure_logging(settings['log_level'])
        spec = build_spec(args.command, settings)
    except (ParameterError, ConfigError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        report = COMMAND_RUNNERS[spec.command](spec)
    except ParameterError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except PlatoonError as e:
        logger.error(f"{spec.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_COMPUTATION

    try:
        write_output(render(report, spec.command, spec.format), spec.out)
    except OSError as e:
        print(f"Error: cannot write {spec.out}: {e.strerror}", file=sys.stderr)
        return EXIT_IO

    if spec.out:
        print_summary(spec, report, args.config)
    return report.exit_code


if __name__ == '__main__':
    sys.exit(main())
