# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""Monte Carlo ensembles: running trials, aggregating outcomes, and checking them."""

import asyncio
import csv
import dataclasses
import json
import math
import sys
import typing as t
from concurrent.futures import Executor, ProcessPoolExecutor
from functools import partial, reduce

import asyncio_pool  # type: ignore[import]
import numpy as np
from jinja2 import Environment, PackageLoader
from scipy import stats as sp_stats

from antsibull_core import app_context

from .dynamics import IntegratorSettings
from .errors import NRuleError, NumericalError, TrialError
from .logging import log
from .oracle import OracleMode, OracleResult, outcome_oracle, signature_key
from .reduction import (
    CollapsePolicy, TrajectoryRecord, run_trajectory, settings_from_args,
)
from .rng import trial_generator
from .scenarios import ScenarioMeta, ScenarioSpec, resolve_scenario


mlog = log.fields(mod=__name__)

#: Trials per work item.  Fixed so that results do not depend on the number of workers.
DEFAULT_CHUNK_SIZE = 250

DEFAULT_SIGMA = 3.0
DEFAULT_P_MIN = 1e-3

#: Expected counts below this are pooled before the chi-square test.
MIN_EXPECTED = 5.0

DEFAULT_BINS = 100


@dataclasses.dataclass(frozen=True)
class InvariantFailure:
    trial: int
    code: str
    message: str


@dataclasses.dataclass(frozen=True)
class TrialOptions:
    t_max: float
    policy: CollapsePolicy = CollapsePolicy.ZERO_NON_CHOSEN
    settings: IntegratorSettings = IntegratorSettings()
    sample_every: t.Optional[float] = None


@dataclasses.dataclass(frozen=True)
class OutcomeStats:
    """
    Aggregated result of an ensemble.

    ``hit_times[k]`` holds the time of event ``k`` for every trial that had one, in trial order.
    Trials that stopped at ``t_max`` with ready components left are counted in ``truncated``.
    """

    scenario: str
    n: int
    t_max: float
    outcome_counts: t.Dict[str, int]
    hit_times: t.Tuple[t.Tuple[float, ...], ...] = ()
    failures: t.Tuple[InvariantFailure, ...] = ()
    truncated: int = 0

    def frequency(self, outcome: str) -> float:
        return self.outcome_counts.get(outcome, 0) / self.n

    def histograms(self, bin_width: t.Optional[float] = None) -> t.List[np.ndarray]:
        """
        Hit-time histogram per event slot.

        The last bin counts trials without that event, so every histogram sums to ``n``.
        """
        bin_width = self.t_max / DEFAULT_BINS if bin_width is None else bin_width
        edges = np.arange(0.0, self.t_max + bin_width, bin_width)
        result = []
        for times in self.hit_times:
            counts, _ = np.histogram(np.asarray(times), bins=edges)
            result.append(np.append(counts, self.n - int(counts.sum())))
        return result


def merge_stats(first: OutcomeStats, second: OutcomeStats) -> OutcomeStats:
    """
    Combine the stats of two disjoint sets of trials.

    Merging is associative; merging shards in trial order reproduces a single run exactly.

    :raises ValueError: If the stats belong to different scenarios or time windows.
    """
    if first.scenario != second.scenario or first.t_max != second.t_max:
        raise ValueError('cannot merge stats of different scenarios or time windows')
    counts = dict(first.outcome_counts)
    for outcome, count in second.outcome_counts.items():
        counts[outcome] = counts.get(outcome, 0) + count
    slots = max(len(first.hit_times), len(second.hit_times))

    def slot(stats: OutcomeStats, k: int) -> t.Tuple[float, ...]:
        return stats.hit_times[k] if k < len(stats.hit_times) else ()

    return OutcomeStats(
        scenario=first.scenario,
        n=first.n + second.n,
        t_max=first.t_max,
        outcome_counts=counts,
        hit_times=tuple(slot(first, k) + slot(second, k) for k in range(slots)),
        failures=first.failures + second.failures,
        truncated=first.truncated + second.truncated,
    )


#
# Invariants
#


def _serial_violation(signature: t.Sequence[str], chain: t.Sequence[str]) -> bool:
    hits = [label for label in signature if label in chain]
    return hits != list(chain[:len(hits)])


def _support_tags(spec: ScenarioSpec, record: TrajectoryRecord, prefix: str) -> t.Set[str]:
    return {tag for index in record.terminal_support
            for tag in spec.graph.basis[index].tags if tag.startswith(prefix)}


def _zero_before_first_hit(spec: ScenarioSpec, record: TrajectoryRecord, tag: str) -> bool:
    if record.events and record.events[0].tag_moduli.get(tag, 0.0) != 0.0:
        return False
    if record.samples is not None:
        first = record.events[0].t_sc if record.events else math.inf
        before = record.samples.times <= first
        if np.any(record.samples.tag_population(spec.graph, tag)[before] != 0.0):
            return False
    return True


def _sequence_problems(signature: t.Tuple[str, ...], completed: bool, meta: ScenarioMeta
                       ) -> t.Iterator[t.Tuple[str, str]]:
    if completed and len(signature) < meta.min_events:
        yield 'too-few-events', f'{len(signature)} events, expected at least {meta.min_events}'
    if meta.max_events is not None and len(signature) > meta.max_events:
        yield 'too-many-events', f'{len(signature)} events, expected at most {meta.max_events}'
    for chain in meta.serial_chains:
        if _serial_violation(signature, chain):
            yield 'serial-order', f'{signature_key(signature)} breaks {signature_key(chain)}'
    if signature and signature[0] in meta.never_first:
        yield 'never-first', f'{signature[0]} was hit first'
    if meta.allowed_sequences is not None:
        allowed = [tuple(sequence) for sequence in meta.allowed_sequences]
        if completed and signature not in allowed:
            yield 'disallowed-sequence', f'{signature_key(signature)} is not an allowed sequence'
        elif not any(sequence[:len(signature)] == signature for sequence in allowed):
            yield 'disallowed-sequence', f'{signature_key(signature)} starts no allowed sequence'


def check_record(record: TrajectoryRecord, spec: ScenarioSpec) -> t.List[InvariantFailure]:
    meta = spec.meta
    problems = list(_sequence_problems(record.signature(), record.completed, meta))
    for tag in meta.zero_before_first_hit:
        if not _zero_before_first_hit(spec, record, tag):
            problems.append(('nonzero-before-first-hit',
                             f'tag {tag} populated before the first event'))
    if meta.single_support_prefix is not None and record.events:
        tags = _support_tags(spec, record, meta.single_support_prefix)
        if len(tags) != 1:
            problems.append(('multiple-support', f'terminal support spans {sorted(tags)}'))
    return [InvariantFailure(record.trial, code, message) for code, message in problems]


def check_invariants(records: t.Iterable[TrajectoryRecord], spec: ScenarioSpec
                     ) -> t.List[InvariantFailure]:
    """
    Evaluate the scenario's assertions on every record.

    :arg records: Records of one scenario.
    :arg spec: The scenario; its ``meta`` holds the assertions.
    :returns: One :class:`InvariantFailure` per broken assertion per trial.
    """
    flog = mlog.fields(func='check_invariants')
    failures = []
    for record in records:
        failures.extend(check_record(record, spec))
    for failure in failures:
        flog.fields(trial=failure.trial, code=failure.code).warning(failure.message)
    return failures


#
# Running trials
#


def aggregate(records: t.Sequence[TrajectoryRecord], spec: ScenarioSpec, t_max: float
              ) -> OutcomeStats:
    counts: t.Dict[str, int] = {}
    slots: t.List[t.List[float]] = []
    for record in records:
        key = signature_key(record.signature())
        counts[key] = counts.get(key, 0) + 1
        for k, event in enumerate(record.events):
            if k == len(slots):
                slots.append([])
            slots[k].append(event.t_sc)
    return OutcomeStats(
        scenario=spec.id,
        n=len(records),
        t_max=t_max,
        outcome_counts=counts,
        hit_times=tuple(tuple(times) for times in slots),
        failures=tuple(check_invariants(records, spec)),
        truncated=sum(1 for record in records if not record.completed),
    )


def run_chunk(spec: ScenarioSpec, start: int, stop: int, seed: int,
              options: TrialOptions) -> OutcomeStats:
    """
    Run trials ``start`` to ``stop - 1`` and aggregate them.

    :raises TrialError: If a trial fails.
    """
    records = []
    for trial in range(start, stop):
        try:
            records.append(run_trajectory(
                spec, trial_generator(seed, trial), t_max=options.t_max, policy=options.policy,
                sample_every=options.sample_every, settings=options.settings,
                trial=trial, rng_seed=seed))
        except NRuleError as e:
            raise TrialError(trial, str(e), numerical=isinstance(e, NumericalError)) from e
    return aggregate(records, spec, options.t_max)


def _chunks(n: int, chunk_size: int) -> t.List[t.Tuple[int, int]]:
    return [(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


async def _in_executor(executor: Executor, func: t.Callable[[], OutcomeStats]) -> OutcomeStats:
    return await asyncio.get_running_loop().run_in_executor(executor, func)


async def run_trials(spec: ScenarioSpec, n: int, seed: int, workers: int,
                     options: TrialOptions, chunk_size: int = DEFAULT_CHUNK_SIZE
                     ) -> t.List[OutcomeStats]:
    """
    Run ``n`` trials, split into chunks of ``chunk_size``.

    With more than one worker the chunks run in worker processes.

    :returns: Stats of every chunk in trial order.
    """
    flog = mlog.fields(func='run_trials')
    chunks = _chunks(n, chunk_size)
    flog.fields(scenario=spec.id, trials=n, chunks=len(chunks), workers=workers).debug('Enter')
    if workers <= 1:
        return [run_chunk(spec, start, stop, seed, options) for start, stop in chunks]

    requestors = []
    with ProcessPoolExecutor(max_workers=workers) as executor:
        async with asyncio_pool.AioPool(size=workers) as pool:
            for start, stop in chunks:
                requestors.append(await pool.spawn(_in_executor(
                    executor, partial(run_chunk, spec, start, stop, seed, options))))
            results = await asyncio.gather(*requestors)
    flog.debug('Leave')
    return list(results)


async def run_ensemble_async(spec: ScenarioSpec, n: int, seed: int = 0, workers: int = 1,
                             options: t.Optional[TrialOptions] = None,
                             chunk_size: int = DEFAULT_CHUNK_SIZE) -> OutcomeStats:
    if n < 1:
        raise ValueError('an ensemble needs at least one trial')
    options = options or TrialOptions(t_max=spec.meta.t_max)
    shards = await run_trials(spec, n, seed, workers, options, chunk_size)
    return reduce(merge_stats, shards)


def run_ensemble(spec: ScenarioSpec, n: int, seed: int = 0, workers: int = 1,
                 options: t.Optional[TrialOptions] = None,
                 chunk_size: int = DEFAULT_CHUNK_SIZE) -> OutcomeStats:
    """
    Run ``n`` independent trajectories of a scenario.

    Trial ``i`` draws from the stream derived from ``(seed, i)`` and aggregation follows trial
    order, so the result does not depend on ``workers``.

    :arg spec: The scenario.
    :arg n: Number of trials.
    :arg seed: Master seed.
    :arg workers: Number of worker processes.
    :arg options: Time window, policy, integrator settings and sampling for every trial.
    :raises TrialError: If a trial fails; carries the trial index.
    """
    flog = mlog.fields(func='run_ensemble')
    stats = asyncio.run(run_ensemble_async(spec, n, seed, workers, options, chunk_size))
    flog.fields(scenario=spec.id, trials=n, outcomes=len(stats.outcome_counts),
                failures=len(stats.failures)).info('Ensemble finished')
    return stats


#
# Statistics
#


@dataclasses.dataclass(frozen=True)
class ComparisonRow:
    outcome: str
    count: int
    frequency: float
    oracle_p: t.Optional[float]
    z: float


@dataclasses.dataclass(frozen=True)
class OracleComparison:
    rows: t.Tuple[ComparisonRow, ...]
    chi2: float
    dof: int
    p_value: float
    max_abs_z: float
    passed: bool

    def to_json(self) -> t.Dict[str, t.Any]:
        return {
            'rows': [{'outcome': row.outcome, 'count': row.count, 'frequency': row.frequency,
                      'oracleP': row.oracle_p, 'z': _finite(row.z)} for row in self.rows],
            'chi2': _finite(self.chi2),
            'dof': self.dof,
            'pValue': self.p_value,
            'maxAbsZ': _finite(self.max_abs_z),
            'passed': self.passed,
        }


def _finite(value: float) -> t.Union[float, str]:
    return value if math.isfinite(value) else str(value)


def _z_score(count: int, n: int, p: float) -> float:
    variance = n * p * (1.0 - p)
    if variance <= 0:
        return 0.0 if count == round(n * p) else math.inf
    return (count - n * p) / math.sqrt(variance)


def _chi_square(observed: t.Sequence[int], expected: t.Sequence[float]
                ) -> t.Tuple[float, int, float]:
    kept_obs = []
    kept_exp = []
    pooled_obs = 0
    pooled_exp = 0.0
    for obs, exp in zip(observed, expected):
        if exp >= MIN_EXPECTED:
            kept_obs.append(obs)
            kept_exp.append(exp)
        else:
            pooled_obs += obs
            pooled_exp += exp
    if pooled_exp > 0:
        kept_obs.append(pooled_obs)
        kept_exp.append(pooled_exp)
    elif pooled_obs > 0:
        return math.inf, max(len(kept_obs), 1), 0.0

    dof = len(kept_obs) - 1
    if dof < 1:
        return 0.0, 0, 1.0
    obs_arr = np.asarray(kept_obs, dtype=float)
    exp_arr = np.asarray(kept_exp, dtype=float)
    statistic = float(np.sum((obs_arr - exp_arr) ** 2 / exp_arr))
    return statistic, dof, float(sp_stats.chi2.sf(statistic, dof))


def compare_to_oracle(stats: OutcomeStats, oracle: OracleResult, sigma: float = DEFAULT_SIGMA,
                      p_min: float = DEFAULT_P_MIN) -> OracleComparison:
    """
    Compare ensemble outcome frequencies with oracle probabilities.

    Every outcome gets a binomial z-score.  Outcomes with expected counts below five are pooled
    for the chi-square test.  The comparison passes when the chi-square p-value exceeds ``p_min``
    and no ``|z|`` exceeds ``sigma``.  Observed outcomes the oracle does not know get probability
    zero and fail.
    """
    outcomes = sorted(set(stats.outcome_counts) | set(oracle.values))
    rows = []
    for outcome in outcomes:
        count = stats.outcome_counts.get(outcome, 0)
        p = oracle.values.get(outcome)
        rows.append(ComparisonRow(outcome=outcome, count=count, frequency=count / stats.n,
                                  oracle_p=p, z=_z_score(count, stats.n, p or 0.0)))
    chi2, dof, p_value = _chi_square([row.count for row in rows],
                                     [stats.n * (row.oracle_p or 0.0) for row in rows])
    max_abs_z = max((abs(row.z) for row in rows), default=0.0)
    return OracleComparison(rows=tuple(rows), chi2=chi2, dof=dof, p_value=p_value,
                            max_abs_z=max_abs_z, passed=p_value > p_min and max_abs_z <= sigma)


def hit_time_median(stats: OutcomeStats, slot: int = 0) -> float:
    """Median time of event ``slot`` over all trials; trials without it count as infinitely late."""
    times = np.sort(np.asarray(stats.hit_times[slot] if slot < len(stats.hit_times) else ()))
    padded = np.concatenate((times, np.full(stats.n - times.size, np.inf)))
    middle = stats.n // 2
    if stats.n % 2:
        return float(padded[middle])
    low, high = padded[middle - 1], padded[middle]
    return float(high) if math.isinf(high) else float((low + high) / 2.0)


def survival_ks(stats: OutcomeStats, cdf: t.Callable[[np.ndarray], np.ndarray],
                slot: int = 0) -> t.Tuple[float, float]:
    """
    Kolmogorov-Smirnov distance of observed hit times to a hit-time distribution.

    Only hits before ``t_max`` are observed, so ``cdf`` is conditioned on ``[0, t_max]``.

    :returns: Tuple of the KS statistic and its p-value.
    """
    times = np.asarray(stats.hit_times[slot] if slot < len(stats.hit_times) else ())
    norm = float(cdf(np.asarray(stats.t_max)))
    result = sp_stats.kstest(times, lambda x: np.minimum(cdf(x) / norm, 1.0))
    return float(result.statistic), float(result.pvalue)


#
# Reports
#


def report_dict(stats: OutcomeStats, comparison: t.Optional[OracleComparison] = None,
                seed: t.Optional[int] = None, policy: t.Optional[CollapsePolicy] = None,
                bin_width: t.Optional[float] = None) -> t.Dict[str, t.Any]:
    bin_width = stats.t_max / DEFAULT_BINS if bin_width is None else bin_width
    return {
        'scenario': stats.scenario,
        'n': stats.n,
        'seed': seed,
        'policy': policy.value if policy else None,
        'tMax': stats.t_max,
        'truncated': stats.truncated,
        'outcomeCounts': dict(sorted(stats.outcome_counts.items())),
        'hitTimeHistograms': {
            'binWidth': bin_width,
            'slots': [counts.tolist() for counts in stats.histograms(bin_width)],
        },
        'hitTimeMedians': [_finite(hit_time_median(stats, k))
                           for k in range(len(stats.hit_times))],
        'invariantFailures': [dataclasses.asdict(failure) for failure in stats.failures],
        'oracleComparison': comparison.to_json() if comparison else None,
    }


def write_report_csv(path: str, stats: OutcomeStats,
                     comparison: t.Optional[OracleComparison] = None) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['outcome', 'count', 'frequency', 'oracleP', 'z'])
        if comparison is not None:
            for row in comparison.rows:
                writer.writerow([row.outcome, row.count, repr(row.frequency),
                                 '' if row.oracle_p is None else repr(row.oracle_p),
                                 repr(row.z)])
        else:
            for outcome, count in sorted(stats.outcome_counts.items()):
                writer.writerow([outcome, count, repr(count / stats.n), '', ''])


def render_summary(stats: OutcomeStats, comparison: t.Optional[OracleComparison] = None,
                   seed: int = 0, policy: CollapsePolicy = CollapsePolicy.ZERO_NON_CHOSEN,
                   max_failures: int = 20) -> str:
    """Render a reStructuredText summary of an ensemble."""
    if comparison is not None:
        rows = [{'outcome': row.outcome, 'count': row.count, 'frequency': row.frequency,
                 'oracle': (f', oracle {row.oracle_p:.5f}, z = {row.z:.2f}'
                            if row.oracle_p is not None else '')}
                for row in comparison.rows]
    else:
        rows = [{'outcome': outcome, 'count': count, 'frequency': count / stats.n, 'oracle': ''}
                for outcome, count in sorted(stats.outcome_counts.items())]
    env = Environment(loader=PackageLoader('nrule_sim', 'data'))
    summary_tmpl = env.get_template('ensemble-summary.rst.j2')
    return summary_tmpl.render(
        title=f'Ensemble of {stats.scenario}',
        stats=stats,
        seed=seed,
        policy=policy.value,
        rows=rows,
        medians=[(k, hit_time_median(stats, k)) for k in range(len(stats.hit_times))],
        comparison=comparison,
        max_failures=max_failures,
    )


def ensemble_command() -> int:
    '''CLI functionality for running an ensemble.'''
    flog = mlog.fields(func='ensemble_command')
    app_ctx = app_context.app_ctx.get()
    extra = app_ctx.extra
    workers: int = extra['workers'] or app_context.lib_ctx.get().thread_max

    spec = resolve_scenario(extra['scenario'], extra['params'])
    options = TrialOptions(
        t_max=spec.meta.t_max if extra['tmax'] is None else extra['tmax'],
        policy=CollapsePolicy(extra['policy']),
        settings=settings_from_args(extra),
        sample_every=extra['samples'],
    )
    flog.fields(scenario=spec.id, trials=extra['trials'], workers=workers).info(
        'Running ensemble')
    stats = run_ensemble(spec, extra['trials'], seed=extra['seed'], workers=workers,
                         options=options)

    comparison = None
    if spec.meta.oracle_mode == OracleMode.RACE.value and not extra['no_oracle']:
        oracle = outcome_oracle(spec, options.t_max, extra['n_steps'])
        comparison = compare_to_oracle(stats, oracle, sigma=extra['sigma'],
                                       p_min=extra['p_min'])

    report = report_dict(stats, comparison, seed=extra['seed'], policy=options.policy,
                         bin_width=extra['bin_width'])
    text = json.dumps(report, indent=2) + '\n'
    if extra['report']:
        with open(extra['report'], 'w', encoding='utf-8') as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if extra['csv']:
        write_report_csv(extra['csv'], stats, comparison)
    if extra['summary']:
        with open(extra['summary'], 'w', encoding='utf-8') as f:
            f.write(render_summary(stats, comparison, seed=extra['seed'], policy=options.policy))

    if extra['assert_']:
        if stats.failures or (comparison is not None and not comparison.passed):
            flog.fields(failures=len(stats.failures)).error('Acceptance check failed')
            return 4
    return 0
