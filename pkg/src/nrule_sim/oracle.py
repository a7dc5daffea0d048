# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""
Independent references for the stochastic engine.

Nothing here uses the Runge-Kutta integrator of :mod:`nrule_sim.dynamics`.  Full unitary evolution
diagonalizes the master Hamiltonian; race probabilities apply the truncated generator through
:func:`scipy.sparse.linalg.expm_multiply` on a uniform grid and integrate with composite Simpson.
"""

import dataclasses
import enum
import json
import math
import sys
import typing as t

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.linalg import eigh
from scipy.signal import fftconvolve
from scipy.sparse.linalg import expm_multiply

from antsibull_core import app_context

from .dynamics import GeneratorView, build_generator, make_state
from .errors import OracleError
from .graph import CouplingKind, StatusMap, SystemGraph
from .logging import log
from .reduction import collapse, launch_state, relaunch
from .scenarios import ScenarioSpec, resolve_scenario


mlog = log.fields(mod=__name__)

DEFAULT_N_STEPS = 2 ** 14

NO_HIT = '(no hit)'
EMPTY_SIGNATURE = '(none)'

#: Minimum overlap between launch profiles at different times for the stage tree to be exact.
COLLINEAR_TOL = 1e-8


class OracleMode(enum.Enum):
    UNITARY = 'unitary'
    RACE = 'race'
    CLOSED_FORM = 'closed-form'
    MODULUS = 'modulus'


@dataclasses.dataclass(frozen=True)
class OracleResult:
    mode: OracleMode
    values: t.Dict[str, float]
    error_estimate: float = 0.0
    #: Time series for unitary results: ``t`` plus one column per observable.
    series: t.Optional[t.Dict[str, t.List[float]]] = None

    def total(self) -> float:
        return math.fsum(self.values.values())

    def to_json(self) -> t.Dict[str, t.Any]:
        result: t.Dict[str, t.Any] = {
            'mode': self.mode.value,
            'values': self.values,
            'errorEstimate': self.error_estimate,
        }
        if self.series is not None:
            result['series'] = self.series
        return result


def signature_key(labels: t.Sequence[str]) -> str:
    """Outcome id of an event signature."""
    return '>'.join(labels) if labels else EMPTY_SIGNATURE


#
# Full unitary evolution
#


def master_hamiltonian(graph: SystemGraph) -> np.ndarray:
    """Diagonal, continuous couplings, and every gap with its Hermitian conjugate."""
    matrix = graph.continuous_matrix()
    for coupling in graph.couplings:
        if coupling.kind is CouplingKind.GAP:
            matrix[coupling.target, coupling.source] += coupling.value
            matrix[coupling.source, coupling.target] += np.conjugate(coupling.value)
    return matrix


def _initial_vector(graph: SystemGraph) -> np.ndarray:
    amp = np.asarray(graph.initial_amplitudes, dtype=complex)
    return amp / np.linalg.norm(amp)


def unitary_series(graph: SystemGraph, times: t.Sequence[float],
                   amp: t.Optional[np.ndarray] = None) -> np.ndarray:
    """
    Evolve under the full master Hamiltonian without any truncation or reduction.

    :arg graph: The system graph.
    :arg times: Times at which to report the state.
    :arg amp: Initial amplitudes.  Defaults to the normalized initial amplitudes of the graph.
    :returns: Array of shape ``(len(times), D)``.
    """
    energies, vectors = eigh(master_hamiltonian(graph))
    start = vectors.conj().T @ (_initial_vector(graph) if amp is None else amp)
    phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), energies))
    return (phases * start) @ vectors.T


def unitary_evolve(graph: SystemGraph, time: float) -> np.ndarray:
    return unitary_series(graph, [time])[0]


def _indices(graph: SystemGraph, name: str) -> t.List[int]:
    if name in graph.all_tags():
        return graph.indices_with_tag(name)
    return graph.members(graph.component_by_label(name).id)


def population_overlap(graph: SystemGraph, name_a: str, name_b: str,
                       times: t.Sequence[float]) -> t.Tuple[float, float]:
    """
    Largest simultaneous population of two observables under unitary evolution.

    :arg name_a: A tag or a component label.
    :arg name_b: A tag or a component label.
    :returns: Tuple of ``max_t min(P_a(t), P_b(t))`` and the time where it is attained.
    """
    populations = np.abs(unitary_series(graph, times)) ** 2
    both = np.minimum(populations[:, _indices(graph, name_a)].sum(axis=1),
                      populations[:, _indices(graph, name_b)].sum(axis=1))
    best = int(np.argmax(both))
    return float(both[best]), float(times[best])


#
# Race quadrature on the truncated generator
#


@dataclasses.dataclass(frozen=True, eq=False)
class RaceStage:
    gen: GeneratorView
    probabilities: t.Dict[int, float]
    no_hit: float
    error_estimate: float
    #: Normalized amplitudes each ready component would carry into its launch.
    profiles: t.Dict[int, np.ndarray]
    collinear: t.Dict[int, bool]
    #: Quadrature grid, one hit-time density column per channel and the integrated hazard.
    times: np.ndarray
    densities: np.ndarray
    accumulated: np.ndarray


def _densities(gen: GeneratorView, times: np.ndarray, amps: np.ndarray
               ) -> t.Tuple[np.ndarray, np.ndarray]:
    derivs = (-1j * (gen.matrix @ amps.T)).T
    flows = 2.0 * (amps.conj() * derivs).real
    currents = np.maximum(flows @ gen.channel_matrix.T, 0.0)
    squares = np.sum(np.abs(amps) ** 2, axis=1)
    rates = currents / squares[:, np.newaxis]
    accumulated = cumulative_simpson(rates.sum(axis=1), x=times, initial=0.0)
    return rates * np.exp(-accumulated)[:, np.newaxis], accumulated


def _profile(gen: GeneratorView, graph: SystemGraph, amps: np.ndarray, cid: int
             ) -> t.Tuple[np.ndarray, bool]:
    position = {int(member): pos for pos, member in enumerate(gen.active)}
    columns = [position[member] for member in graph.members(cid)]
    block = amps[:, columns]
    norms = np.linalg.norm(block, axis=1)
    final = block[-1] / norms[-1] if norms[-1] > 0 else block[-1]
    significant = norms > 1e-12 * max(float(norms.max()), 1e-300)
    overlaps = np.abs(block[significant].conj() @ final) / norms[significant]
    return final, bool(np.all(overlaps >= 1.0 - COLLINEAR_TOL))


def race_stage(graph: SystemGraph, statuses: StatusMap, amp: np.ndarray, t_max: float,
               n_steps: int = DEFAULT_N_STEPS) -> RaceStage:
    """
    First-hit probabilities of one stage by quadrature.

    ``P_K = integral of lambda_K(t) exp(-Lambda(t)) dt`` over ``[0, t_max]`` with composite Simpson
    on ``n_steps`` intervals.  The error estimate compares with the same rule on half the points.

    :raises OracleError: If ``n_steps`` is not a positive even number of at least 4.
    """
    if n_steps < 4 or n_steps % 2:
        raise OracleError(f'n_steps must be an even number of at least 4, got {n_steps}')
    gen = build_generator(graph, statuses)
    times = np.linspace(0.0, t_max, n_steps + 1)
    if not gen.channels:
        return RaceStage(gen=gen, probabilities={}, no_hit=1.0, error_estimate=0.0,
                         profiles={}, collinear={}, times=times,
                         densities=np.zeros((times.size, 0)), accumulated=np.zeros(times.size))

    amps = expm_multiply(-1j * gen.matrix, amp[gen.active], start=0.0, stop=t_max,
                         num=n_steps + 1, endpoint=True)
    densities, accumulated = _densities(gen, times, amps)
    fine = simpson(densities, x=times, axis=0)
    coarse_densities, _ = _densities(gen, times[::2], amps[::2])
    coarse = simpson(coarse_densities, x=times[::2], axis=0)
    error = float(np.max(np.abs(fine - coarse))) / 15.0

    probabilities = {}
    profiles = {}
    collinear = {}
    for row, cid in enumerate(gen.channels):
        probabilities[cid] = float(fine[row])
        profiles[cid], collinear[cid] = _profile(gen, graph, amps, cid)
    return RaceStage(gen=gen, probabilities=probabilities, no_hit=float(np.exp(-accumulated[-1])),
                     error_estimate=error, profiles=profiles, collinear=collinear, times=times,
                     densities=densities, accumulated=accumulated)


def race_quadrature(graph: SystemGraph, statuses: StatusMap, amp: np.ndarray, t_max: float,
                    n_steps: int = DEFAULT_N_STEPS,
                    max_error: t.Optional[float] = None) -> OracleResult:
    """
    Per-channel first-hit probabilities of one stage, keyed by component label.

    The mass that does not hit by ``t_max`` is reported under :data:`NO_HIT`.

    :arg max_error: If given, fail when the Richardson error estimate exceeds it.
    :raises OracleError: If the resolution is too coarse for ``max_error``.
    """
    stage = race_stage(graph, statuses, amp, t_max, n_steps)
    if max_error is not None and stage.error_estimate > max_error:
        raise OracleError(f'quadrature error estimate {stage.error_estimate:g} exceeds'
                          f' {max_error:g}; increase n_steps')
    values = {graph.label_of(cid): p for cid, p in stage.probabilities.items()}
    values[NO_HIT] = stage.no_hit
    return OracleResult(mode=OracleMode.RACE, values=values, error_estimate=stage.error_estimate)


def square_modulus_shares(graph: SystemGraph, statuses: StatusMap, amp: np.ndarray,
                          time: float) -> OracleResult:
    """
    Share of each ready component in the ready square modulus after hit-free evolution.

    Each share is the time-integrated current into the component.  For completed interactions it
    tends to the race probability.
    """
    gen = build_generator(graph, statuses)
    evolved = expm_multiply(-1j * time * gen.matrix, amp[gen.active])
    position = {int(member): pos for pos, member in enumerate(gen.active)}
    moduli = {}
    for cid in gen.channels:
        columns = [position[m] for m in graph.members(cid)]
        moduli[graph.label_of(cid)] = float(np.sum(np.abs(evolved[columns]) ** 2))
    total = math.fsum(moduli.values())
    values = {label: (value / total if total > 0 else 0.0) for label, value in moduli.items()}
    return OracleResult(mode=OracleMode.MODULUS, values=values)


@dataclasses.dataclass(frozen=True, eq=False)
class _StageNode:
    stage: RaceStage
    children: t.Dict[int, '_StageNode']

    def error_estimate(self) -> float:
        return self.stage.error_estimate + math.fsum(
            child.error_estimate() for child in self.children.values())


def _within_window(density: np.ndarray, table: np.ndarray, times: np.ndarray) -> np.ndarray:
    """
    ``integral_0^w density(tau) table(w - tau) dtau`` for every grid point ``w``.

    Constant tables reduce to cumulative Simpson; otherwise the convolution uses the trapezoid rule.
    """
    if np.all(table == table[0]):
        return table[0] * cumulative_simpson(density, x=times, initial=0.0)
    step = times[1] - times[0]
    full = fftconvolve(density, table)[:times.size]
    return step * (full - 0.5 * (density[0] * table + density * table[0]))


def _window_tables(graph: SystemGraph, node: _StageNode, stride: int
                   ) -> t.Dict[t.Tuple[str, ...], np.ndarray]:
    """Probability of every signature suffix as a function of the window left at launch."""
    stage = node.stage
    times = stage.times[::stride]
    tables: t.Dict[t.Tuple[str, ...], np.ndarray] = {(): np.exp(-stage.accumulated[::stride])}
    for row, cid in enumerate(stage.gen.channels):
        child = node.children.get(cid)
        if child is None:
            continue
        label = graph.label_of(cid)
        density = stage.densities[::stride, row]
        for suffix, table in _window_tables(graph, child, stride).items():
            tables[(label,) + suffix] = _within_window(density, table, times)
    return tables


def outcome_oracle(spec: ScenarioSpec, t_max: t.Optional[float] = None,
                   n_steps: int = DEFAULT_N_STEPS) -> OracleResult:
    """
    Probabilities of complete event signatures within one window ``[0, t_max]``.

    Every stage is raced from its launch and each channel is relaunched from the profile it
    accumulated.  A stage launched at a hit time ``tau`` only has ``t_max - tau`` left, so child
    outcomes are integrated against the parent's hit-time density.  Mass that does not hit before
    the window closes goes to the signature ending there.

    :raises OracleError: If a launch profile changes direction over time, since the relaunch then
        depends on the hit time.
    """
    flog = mlog.fields(func='outcome_oracle')
    graph = spec.graph
    t_max = spec.meta.t_max if t_max is None else t_max

    def expand(statuses: StatusMap, amp: np.ndarray) -> _StageNode:
        stage = race_stage(graph, statuses, amp, t_max, n_steps)
        children = {}
        for cid, probability in stage.probabilities.items():
            if probability <= 0.0:
                continue
            if not stage.collinear[cid]:
                raise OracleError(f'launch profile of {graph.label_of(cid)} changes direction'
                                  ' over time; outcome probabilities depend on hit times')
            launched = amp.copy()
            launched[graph.members(cid)] = stage.profiles[cid]
            state = collapse(graph, make_state(graph, 0.0, launched, statuses), cid)
            next_statuses, _ = relaunch(graph, state)
            children[cid] = expand(next_statuses, state.amp)
        return _StageNode(stage=stage, children=children)

    start = launch_state(graph)
    root = expand(start.statuses, start.amp)
    fine = _window_tables(graph, root, 1)
    coarse = _window_tables(graph, root, 2)
    # One Richardson step on the second order convolutions.
    values = {signature_key(key): max((4.0 * float(table[-1]) - float(coarse[key][-1])) / 3.0, 0.0)
              for key, table in fine.items()}
    window_error = max(abs(float(fine[key][-1] - coarse[key][-1])) for key in fine) / 3.0
    result = OracleResult(mode=OracleMode.RACE, values=values,
                          error_estimate=root.error_estimate() + window_error)
    flog.fields(scenario=spec.id, outcomes=len(result.values),
                error=result.error_estimate).info('Outcome oracle converged')
    return result


#
# Closed forms
#


def _single_gap_survival(g: float, t: float) -> t.Dict[str, float]:
    survival = 1.0 / (1.0 + g * g * t * t)
    return {'survival': survival, 'hit': 1.0 - survival}


def _rabi(g: float, t: float) -> t.Dict[str, float]:
    return {'P0': math.cos(g * t) ** 2, 'P1': math.sin(g * t) ** 2}


def _constant_ratio_race(couplings: t.Sequence[float],
                         labels: t.Optional[t.Sequence[str]] = None) -> t.Dict[str, float]:
    squares = [g * g for g in couplings]
    total = math.fsum(squares)
    if total == 0:
        raise OracleError('constant-ratio-race needs a nonzero coupling')
    labels = labels if labels is not None else [str(i) for i in range(len(squares))]
    return {label: square / total for label, square in zip(labels, squares)}


def _chain_transfer(hop: float, chain_len: int, t: float) -> t.Dict[str, float]:
    return {'end': math.sin(hop * t) ** (2 * (chain_len - 1))}


CLOSED_FORMS: t.Dict[str, t.Callable[..., t.Dict[str, float]]] = {
    'single-gap-survival': _single_gap_survival,
    'rabi': _rabi,
    'constant-ratio-race': _constant_ratio_race,
    'chain-transfer': _chain_transfer,
}


def closed_forms(case: str, **params: t.Any) -> OracleResult:
    """
    Exact values for small instances.

    ``single-gap-survival`` (g, t): survival ``1 / (1 + g^2 t^2)``.
    ``rabi`` (g, t): populations ``cos^2(g t)`` and ``sin^2(g t)``.
    ``constant-ratio-race`` (couplings, labels): ``g_i^2 / sum g^2``.
    ``chain-transfer`` (hop, chain_len, t): end population ``sin^(2(N - 1))(hop t)``.

    :raises OracleError: If the case is unknown.
    """
    if case not in CLOSED_FORMS:
        raise OracleError(f'unknown closed form {case!r}; known: {", ".join(CLOSED_FORMS)}')
    return OracleResult(mode=OracleMode.CLOSED_FORM, values=CLOSED_FORMS[case](**params))


#
# Reports
#


def unitary_report(spec: ScenarioSpec, t_max: t.Optional[float] = None,
                   samples: int = 201) -> OracleResult:
    """Per-component and per-tag populations under full unitary evolution on a uniform grid."""
    graph = spec.graph
    t_max = spec.meta.t_max if t_max is None else t_max
    times = np.linspace(0.0, t_max, samples)
    populations = np.abs(unitary_series(graph, times)) ** 2
    series: t.Dict[str, t.List[float]] = {'t': times.tolist()}
    for component in graph.components:
        series[component.label] = populations[:, graph.members(component.id)].sum(axis=1).tolist()
    for tag in sorted(graph.all_tags()):
        series[f'tag:{tag}'] = populations[:, graph.indices_with_tag(tag)].sum(axis=1).tolist()
    drift = float(np.max(np.abs(populations.sum(axis=1) - 1.0)))
    final = {component.label: series[component.label][-1] for component in graph.components}
    return OracleResult(mode=OracleMode.UNITARY, values=final, error_estimate=drift,
                        series=series)


def oracle_for(spec: ScenarioSpec, mode: OracleMode, t_max: t.Optional[float] = None,
               n_steps: int = DEFAULT_N_STEPS) -> OracleResult:
    if mode is OracleMode.UNITARY:
        return unitary_report(spec, t_max)
    if mode is OracleMode.RACE:
        return outcome_oracle(spec, t_max, n_steps)
    if mode is OracleMode.MODULUS:
        start = launch_state(spec.graph)
        return square_modulus_shares(spec.graph, start.statuses, start.amp,
                                     spec.meta.t_max if t_max is None else t_max)
    raise OracleError(f'mode {mode.value} needs explicit parameters; use closed_forms()')


def oracle_command() -> int:
    '''CLI functionality for computing an oracle report.'''
    flog = mlog.fields(func='oracle_command')
    app_ctx = app_context.app_ctx.get()

    spec = resolve_scenario(app_ctx.extra['scenario'], app_ctx.extra['params'])
    mode = OracleMode(app_ctx.extra['mode'] or spec.meta.oracle_mode)
    flog.fields(scenario=spec.id, mode=mode.value).info('Computing oracle')
    result = oracle_for(spec, mode, app_ctx.extra['tmax'], app_ctx.extra['n_steps'])

    report = dict(result.to_json(), scenario=spec.id)
    text = json.dumps(report, indent=2) + '\n'
    if app_ctx.extra['out']:
        with open(app_ctx.extra['out'], 'w', encoding='utf-8') as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0

