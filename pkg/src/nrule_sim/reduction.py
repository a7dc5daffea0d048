# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""
Stochastic hits, collapse and relaunch, and complete trajectories.

A trajectory alternates three things: evolve the current solution under its truncated generator
while accumulating the hazard, strike one ready component when the accumulated hazard crosses an
exponential threshold, and relaunch a new solution from the chosen component.
"""

import dataclasses
import enum
import json
import sys
import typing as t

import numpy as np

from antsibull_core import app_context

from .dynamics import (
    GeneratorView, IntegratorSettings, WaveState, build_generator, integrate, make_state,
)
from .errors import GraphError
from .graph import (
    ACTIVE_STATUSES, ComponentStatus, StatusMap, SystemGraph, classify,
)
from .logging import log
from .rng import trial_generator
from .scenarios import ScenarioSpec, resolve_scenario


mlog = log.fields(mod=__name__)


class CollapsePolicy(enum.Enum):
    #: Non-chosen components go to zero.
    ZERO_NON_CHOSEN = 'zero'
    #: Non-chosen components are frozen as phantoms.
    KEEP_PHANTOMS = 'phantom'


@dataclasses.dataclass(frozen=True)
class Hit:
    t_sc: float
    chosen: int
    lambda_total: float
    rates: t.Dict[int, float]
    currents: t.Dict[int, float]


@dataclasses.dataclass(frozen=True, eq=False)
class Segment:
    """Outcome of :func:`sample_hit`: the evolved state, the hit if any, and dense samples."""

    state: WaveState
    hit: t.Optional[Hit]
    sample_times: np.ndarray
    sample_amps: np.ndarray


@dataclasses.dataclass(frozen=True)
class StochasticEvent:
    t_sc: float
    chosen: int
    chosen_label: str
    lambda_at_hit: float
    #: Positive current J_K into every ready component at the hit, keyed by label.
    channel_weights: t.Dict[str, float]
    s_before: float
    s_after: float
    #: Square modulus per tag over non-phantom members just before collapse.
    tag_moduli: t.Dict[str, float]

    def to_json(self) -> t.Dict[str, t.Any]:
        return {
            't': self.t_sc,
            'chosen': self.chosen_label,
            'component': self.chosen,
            'lambda': self.lambda_at_hit,
            'sBefore': self.s_before,
            'sAfter': self.s_after,
            'weights': self.channel_weights,
        }


@dataclasses.dataclass(frozen=True, eq=False)
class SampleSeries:
    """Square modulus of every basis state on a time grid."""

    times: np.ndarray
    populations: np.ndarray

    def component_moduli(self, graph: SystemGraph) -> np.ndarray:
        columns = [self.populations[:, graph.members(component.id)].sum(axis=1)
                   for component in graph.components]
        return np.stack(columns, axis=1)

    def tag_population(self, graph: SystemGraph, tag: str) -> np.ndarray:
        return self.populations[:, graph.indices_with_tag(tag)].sum(axis=1)


@dataclasses.dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    scenario: str
    trial: int
    rng_seed: int
    policy: CollapsePolicy
    events: t.Tuple[StochasticEvent, ...]
    terminal_statuses: StatusMap
    #: Basis indices with nonzero amplitude in realized components at the end.
    terminal_support: t.FrozenSet[int]
    t_end: float
    samples: t.Optional[SampleSeries] = None

    def signature(self) -> t.Tuple[str, ...]:
        return tuple(event.chosen_label for event in self.events)

    @property
    def completed(self) -> bool:
        """Whether the trajectory ended with no ready component left, rather than at t_max."""
        return ComponentStatus.READY not in self.terminal_statuses.values()


def _choose(weights: np.ndarray, rng: np.random.Generator) -> int:
    cumulative = np.cumsum(weights)
    pick = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side='right'))
    return min(pick, weights.size - 1)


def sample_hit(state: WaveState, gen: GeneratorView, rng: np.random.Generator, t_max: float,
               settings: IntegratorSettings = IntegratorSettings(),
               sample_times: t.Optional[np.ndarray] = None) -> Segment:
    """
    Evolve a state until the stochastic trigger strikes or ``t_max`` is reached.

    The hit time is the first passage of the accumulated hazard over an exponential threshold.
    The accumulated hazard is integrated together with the amplitudes and the crossing is located
    by root finding on the dense output of the bracketing step.  The channel is then drawn with
    probability proportional to its rate at the hit.

    :arg state: State to evolve.
    :arg gen: Generator for ``state.statuses``.
    :arg rng: Random generator of the trial.
    :arg t_max: End of the time window.
    :arg settings: Integrator settings.
    :arg sample_times: Times in ``(state.t, t_max]`` at which to record the active amplitudes.
    :returns: A :class:`Segment`.  ``hit`` is None if the trigger did not strike.
    """
    if t_max <= state.t:
        raise ValueError(f't_max ({t_max}) must lie after the state time ({state.t})')
    n_active = gen.active.size
    wanted = np.asarray(sample_times if sample_times is not None else (), dtype=float)
    dense = wanted.size > 0
    y0 = state.amp[gen.active]

    if not gen.channels:
        solution = integrate(gen, state.t, y0, t_max, settings, dense_output=dense)
        return _segment(state, gen, solution, t_max, solution.y[:, -1], None, wanted)

    threshold = float(rng.standard_exponential())

    def crossing(t_now: float, y: np.ndarray) -> float:  # pylint:disable=unused-argument
        return float(np.sum(y[n_active:].real)) - threshold

    crossing.terminal = True  # type: ignore[attr-defined]
    crossing.direction = 1.0  # type: ignore[attr-defined]

    y_aug = np.concatenate((y0, np.zeros(len(gen.channels), dtype=complex)))
    solution = integrate(gen, state.t, y_aug, t_max, settings, fun=gen.hazard_rhs,
                         events=crossing, dense_output=dense)
    if solution.status != 1:
        return _segment(state, gen, solution, t_max, solution.y[:n_active, -1], None, wanted)

    t_sc = float(solution.t_events[0][0])
    y_sc = solution.y_events[0][0]
    amps = y_sc[:n_active]
    currents = np.maximum(gen.currents(amps), 0.0)
    rates = currents / float(np.vdot(amps, amps).real)
    weights = rates
    if not np.any(weights > 0):
        # Zero rate at the crossing; fall back on the hazard gathered over the bracketing step.
        previous = solution.y[n_active:, -2].real if solution.y.shape[1] > 1 else 0.0
        weights = y_sc[n_active:].real - previous
        if not np.any(weights > 0):
            weights = y_sc[n_active:].real
    chosen = gen.channels[_choose(np.clip(weights, 0.0, None), rng)]

    hit = Hit(
        t_sc=t_sc,
        chosen=chosen,
        lambda_total=float(np.sum(rates)),
        rates={cid: float(rate) for cid, rate in zip(gen.channels, rates)},
        currents={cid: float(current) for cid, current in zip(gen.channels, currents)},
    )
    return _segment(state, gen, solution, t_sc, amps, hit, wanted)


def _segment(state: WaveState, gen: GeneratorView, solution: t.Any, t_end: float,
             y_end: np.ndarray, hit: t.Optional[Hit], wanted: np.ndarray) -> Segment:
    amp = state.amp.copy()
    amp[gen.active] = y_end
    evolved = WaveState(t=t_end, amp=amp, statuses=state.statuses,
                        s_active=float(np.vdot(y_end, y_end).real))
    times = wanted[(wanted > state.t) & (wanted <= t_end)]
    if times.size:
        sample_amps = solution.sol(times)[:gen.active.size].T
    else:
        sample_amps = np.zeros((0, gen.active.size), dtype=complex)
    return Segment(state=evolved, hit=hit, sample_times=times, sample_amps=sample_amps)


def collapse(graph: SystemGraph, state: WaveState, chosen: int,
             policy: CollapsePolicy = CollapsePolicy.ZERO_NON_CHOSEN) -> WaveState:
    """
    Reduce the state to the chosen ready component.

    The chosen component becomes realized and keeps its accumulated amplitudes unchanged; every
    other realized or ready component becomes a phantom.  Amplitudes are never renormalized.

    :raises GraphError: If ``chosen`` is not ready.
    """
    if state.statuses.get(chosen) is not ComponentStatus.READY:
        raise GraphError(f'component {chosen} is not ready and cannot be chosen')

    statuses = dict(state.statuses)
    amp = state.amp.copy()
    for cid, status in state.statuses.items():
        if cid == chosen:
            statuses[cid] = ComponentStatus.REALIZED
        elif status in ACTIVE_STATUSES:
            statuses[cid] = ComponentStatus.PHANTOM
            if policy is CollapsePolicy.ZERO_NON_CHOSEN:
                amp[graph.members(cid)] = 0.0
    return make_state(graph, state.t, amp, statuses)


def relaunch(graph: SystemGraph, state: WaveState) -> t.Tuple[StatusMap, GeneratorView]:
    """Promote the components beyond the new realized component and build its generator."""
    statuses = classify(graph, state.statuses)
    return statuses, build_generator(graph, statuses)


def tag_moduli(graph: SystemGraph, state: WaveState) -> t.Dict[str, float]:
    """
    Square modulus per tag over every member that is not phantom.

    Dormant members count, so amplitude sitting beyond the next gap shows up here.
    """
    phantom = {member for cid, status in state.statuses.items()
               if status is ComponentStatus.PHANTOM for member in graph.members(cid)}
    moduli = {}
    for tag in sorted(graph.all_tags()):
        members = [i for i in graph.indices_with_tag(tag) if i not in phantom]
        moduli[tag] = float(np.sum(np.abs(state.amp[members]) ** 2)) if members else 0.0
    return moduli


class _Sampler:
    def __init__(self, graph: SystemGraph, t_max: float, sample_every: t.Optional[float]):
        self.enabled = sample_every is not None
        self.grid = (np.arange(0.0, t_max + 0.5 * sample_every, sample_every)
                     if sample_every else np.zeros(0))
        self.grid = self.grid[self.grid <= t_max]
        self.dimension = graph.dimension
        self.times: t.List[np.ndarray] = []
        self.rows: t.List[np.ndarray] = []

    def initial(self, state: WaveState) -> None:
        if self.enabled:
            self.times.append(np.array([state.t]))
            self.rows.append(np.abs(state.amp[np.newaxis, :]) ** 2)

    def add(self, before: WaveState, gen: GeneratorView, segment: Segment) -> None:
        if not self.enabled or not segment.sample_times.size:
            return
        rows = np.tile(np.abs(before.amp) ** 2, (segment.sample_times.size, 1))
        rows[:, gen.active] = np.abs(segment.sample_amps) ** 2
        self.times.append(segment.sample_times)
        self.rows.append(rows)

    def series(self) -> t.Optional[SampleSeries]:
        if not self.enabled:
            return None
        return SampleSeries(times=np.concatenate(self.times),
                            populations=np.concatenate(self.rows, axis=0))


def launch_state(graph: SystemGraph) -> WaveState:
    """
    Initial state of a trajectory, scaled to unit active square modulus.

    Only currents are normalized by the trigger, so this global factor changes no statistics; it
    makes event records independent of how the initial amplitudes were scaled.
    """
    statuses = classify(graph, graph.initial_statuses())
    state = make_state(graph, 0.0, graph.initial_amplitudes, statuses)
    return make_state(graph, 0.0, state.amp / np.sqrt(state.s_active), statuses)


def run_trajectory(scenario: ScenarioSpec, rng: np.random.Generator,
                   t_max: t.Optional[float] = None,
                   policy: CollapsePolicy = CollapsePolicy.ZERO_NON_CHOSEN,
                   sample_every: t.Optional[float] = None,
                   settings: IntegratorSettings = IntegratorSettings(),
                   trial: int = 0, rng_seed: int = 0) -> TrajectoryRecord:
    """
    Run one trial of a scenario.

    :arg scenario: The scenario to run.
    :arg rng: Random generator of this trial.
    :arg t_max: End of the time window.  Defaults to the scenario's suggested value.
    :arg policy: What happens to non-chosen components at a hit.
    :arg sample_every: If given, record the square modulus of every basis state on this grid.
    :arg settings: Integrator settings.
    :arg trial: Trial index, recorded in the result.
    :arg rng_seed: Master seed, recorded in the result.
    :returns: A :class:`TrajectoryRecord`.
    """
    graph = scenario.graph
    t_max = scenario.meta.t_max if t_max is None else t_max
    state = launch_state(graph)
    gen = build_generator(graph, state.statuses)
    sampler = _Sampler(graph, t_max, sample_every)
    sampler.initial(state)

    events: t.List[StochasticEvent] = []
    while state.t < t_max and (gen.channels or sampler.enabled):
        segment = sample_hit(state, gen, rng, t_max, settings, sampler.grid)
        sampler.add(state, gen, segment)
        state = segment.state
        hit = segment.hit
        if hit is None:
            break

        collapsed = collapse(graph, state, hit.chosen, policy)
        events.append(StochasticEvent(
            t_sc=hit.t_sc,
            chosen=hit.chosen,
            chosen_label=graph.label_of(hit.chosen),
            lambda_at_hit=hit.lambda_total,
            channel_weights={graph.label_of(cid): current
                             for cid, current in hit.currents.items()},
            s_before=state.s_active,
            s_after=collapsed.s_active,
            tag_moduli=tag_moduli(graph, state),
        ))
        statuses, gen = relaunch(graph, collapsed)
        state = dataclasses.replace(collapsed, statuses=statuses)

    realized = [member for cid, status in state.statuses.items()
                if status is ComponentStatus.REALIZED for member in graph.members(cid)]
    support = frozenset(m for m in realized if state.amp[m] != 0)
    return TrajectoryRecord(
        scenario=scenario.id,
        trial=trial,
        rng_seed=rng_seed,
        policy=policy,
        events=tuple(events),
        terminal_statuses=dict(state.statuses),
        terminal_support=support,
        t_end=state.t,
        samples=sampler.series(),
    )


def event_log_lines(record: TrajectoryRecord, settings: IntegratorSettings) -> t.List[str]:
    """Render a trajectory as JSON lines: a header, then one object per event."""
    header = {
        'scenario': record.scenario,
        'seed': record.rng_seed,
        'trial': record.trial,
        'tol': settings.tol,
        'policy': record.policy.value,
    }
    return [json.dumps(header)] + [json.dumps(event.to_json()) for event in record.events]


def write_samples_csv(path: str, graph: SystemGraph, samples: SampleSeries) -> None:
    moduli = samples.component_moduli(graph)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(','.join(['t'] + [component.label for component in graph.components]) + '\n')
        for time, row in zip(samples.times, moduli):
            f.write(','.join([repr(float(time))] + [repr(float(value)) for value in row]) + '\n')


def settings_from_args(extra: t.Mapping[str, t.Any]) -> IntegratorSettings:
    return IntegratorSettings(tol=extra['tol'], dt_init=extra['dt_init'],
                              dt_floor=extra['dt_floor'])


def run_command() -> int:
    '''CLI functionality for running a single trajectory.'''
    flog = mlog.fields(func='run_command')
    app_ctx = app_context.app_ctx.get()

    scenario = resolve_scenario(app_ctx.extra['scenario'], app_ctx.extra['params'])
    settings = settings_from_args(app_ctx.extra)
    seed: int = app_ctx.extra['seed']
    policy = CollapsePolicy(app_ctx.extra['policy'])
    flog.fields(scenario=scenario.id, seed=seed, policy=policy.value).info('Running trajectory')

    record = run_trajectory(scenario, trial_generator(seed, 0),
                            t_max=app_ctx.extra['tmax'], policy=policy,
                            sample_every=app_ctx.extra['samples'], settings=settings,
                            trial=0, rng_seed=seed)
    lines = event_log_lines(record, settings)
    if app_ctx.extra['out']:
        with open(app_ctx.extra['out'], 'w', encoding='utf-8') as f:
            f.write('\n'.join(lines) + '\n')
    else:
        sys.stdout.write('\n'.join(lines) + '\n')

    if record.samples is not None and app_ctx.extra['samples_out']:
        write_samples_csv(app_ctx.extra['samples_out'], scenario.graph, record.samples)

    flog.fields(events=len(record.events)).debug('Leave')
    return 0
