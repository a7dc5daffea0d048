# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""
Truncated Schroedinger dynamics.

The generator is built from the current component statuses: realized members evolve under the
diagonal energies and continuous couplings among themselves, ready members only accumulate inflow
across gaps from realized members.  Ready amplitudes never feed back and ready components do not
advance their own phase.  Dormant and phantom members are frozen.
"""

import dataclasses
import typing as t

import numpy as np
from scipy.integrate import solve_ivp

from .errors import GraphError, NumericalError
from .graph import (
    ComponentStatus, Coupling, CouplingKind, StatusMap, SystemGraph, active_indices,
    ready_components,
)
from .logging import log


mlog = log.fields(mod=__name__)

DEFAULT_TOL = 1e-9
DEFAULT_DT_INIT = 1e-3
DEFAULT_DT_FLOOR = 1e-12

#: Total square modulus below which a state counts as degenerate.
S_FLOOR = 1e-30

#: Integration scheme of the main engine.  The oracle uses matrix exponentials instead.
RK_METHOD = 'DOP853'


@dataclasses.dataclass(frozen=True)
class IntegratorSettings:
    tol: float = DEFAULT_TOL
    dt_init: float = DEFAULT_DT_INIT
    dt_floor: float = DEFAULT_DT_FLOOR

    def __post_init__(self):
        if self.tol <= 0 or self.dt_init <= 0 or self.dt_floor <= 0:
            raise ValueError('tol, dt_init and dt_floor must be positive')


@dataclasses.dataclass(frozen=True, eq=False)
class WaveState:
    """
    Dynamical state of one trajectory.

    ``amp`` covers the whole basis; ``s_active`` is the square modulus over realized and ready
    members.
    """

    t: float
    amp: np.ndarray
    statuses: StatusMap
    s_active: float


def make_state(graph: SystemGraph, t: float, amp: np.ndarray,
               statuses: t.Mapping[int, ComponentStatus]) -> WaveState:
    amp = np.asarray(amp, dtype=complex)
    active = active_indices(graph, statuses)
    s_active = float(np.vdot(amp[active], amp[active]).real) if active.size else 0.0
    return WaveState(t=float(t), amp=amp, statuses=dict(statuses), s_active=s_active)


@dataclasses.dataclass(frozen=True, eq=False)
class GeneratorView:
    """
    The truncated generator for one set of statuses.

    ``active`` lists realized then ready basis indices in ascending order; ``matrix`` is the
    generator on that subspace, so the active amplitudes obey ``dy/dt = -1j * matrix @ y``.
    ``channel_matrix`` sums per-member flows into per-ready-component currents.
    """

    active: np.ndarray
    realized: np.ndarray
    realized_block: np.ndarray
    inflow_map: t.Dict[int, t.Tuple[Coupling, ...]]
    channels: t.Tuple[int, ...]
    matrix: np.ndarray
    channel_matrix: np.ndarray

    @property
    def has_channels(self) -> bool:
        return bool(self.channels)

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:  # pylint:disable=unused-argument
        return -1j * (self.matrix @ y)

    def currents(self, y: np.ndarray, dy: t.Optional[np.ndarray] = None) -> np.ndarray:
        """Probability current into each ready channel for active amplitudes ``y``."""
        if dy is None:
            dy = self.rhs(0.0, y)
        flow = 2.0 * (y.conjugate() * dy).real
        return self.channel_matrix @ flow

    def rates(self, y: np.ndarray) -> np.ndarray:
        """Per-channel hazard max(J, 0) / s."""
        s_active = float(np.vdot(y, y).real)
        if s_active <= S_FLOOR:
            raise NumericalError(f'degenerate state: total square modulus {s_active:g}')
        return np.maximum(self.currents(y), 0.0) / s_active

    def hazard_rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        """
        Right-hand side of the amplitudes augmented with one accumulated hazard per channel.

        The trailing ``len(channels)`` entries are real-valued integrals stored as complex.
        """
        n_active = self.active.size
        amps = y[:n_active]
        damps = self.rhs(t, amps)
        s_active = float(np.vdot(amps, amps).real)
        if s_active <= S_FLOOR:
            raise NumericalError(f'degenerate state at t={t:g}: square modulus {s_active:g}')
        rates = np.maximum(self.currents(amps, damps), 0.0) / s_active
        return np.concatenate((damps, rates.astype(complex)))


def build_generator(graph: SystemGraph, statuses: t.Mapping[int, ComponentStatus]
                    ) -> GeneratorView:
    """
    Build the truncated generator for a classify fixed point.

    :arg graph: The system graph.
    :arg statuses: Component statuses.
    :returns: The :class:`GeneratorView`.
    :raises GraphError: If a continuous coupling joins a realized member to a ready member.
    """
    owner = graph.component_of
    status_of = {member: statuses[cid] for member, cid in owner.items()}
    realized = np.array(sorted(m for m, s in status_of.items()
                               if s is ComponentStatus.REALIZED), dtype=int)
    active = active_indices(graph, statuses)
    position = {int(member): pos for pos, member in enumerate(active)}
    channels = tuple(ready_components(statuses))

    matrix = np.zeros((active.size, active.size), dtype=complex)
    for member in realized:
        matrix[position[member], position[member]] = graph.diag[member]

    inflow: t.Dict[int, t.List[Coupling]] = {cid: [] for cid in channels}
    for coupling in graph.couplings:
        source = status_of[coupling.source]
        target = status_of[coupling.target]
        if coupling.kind is CouplingKind.CONTINUOUS:
            pair = {source, target}
            if ComponentStatus.REALIZED in pair and ComponentStatus.READY in pair:
                raise GraphError(
                    f'continuous coupling {coupling.source}->{coupling.target} joins a realized'
                    ' and a ready member; ready components could not be isolated')
            if source is ComponentStatus.REALIZED and target is ComponentStatus.REALIZED:
                matrix[position[coupling.target], position[coupling.source]] += coupling.value
        elif source is ComponentStatus.REALIZED and target is ComponentStatus.READY:
            matrix[position[coupling.target], position[coupling.source]] += coupling.value
            inflow[owner[coupling.target]].append(coupling)

    channel_matrix = np.zeros((len(channels), active.size))
    for row, cid in enumerate(channels):
        for member in graph.components_by_id[cid].members:
            channel_matrix[row, position[member]] = 1.0

    realized_pos = [position[int(m)] for m in realized]
    return GeneratorView(
        active=active,
        realized=realized,
        realized_block=matrix[np.ix_(realized_pos, realized_pos)].copy(),
        inflow_map={cid: tuple(couplings) for cid, couplings in inflow.items()},
        channels=channels,
        matrix=matrix,
        channel_matrix=channel_matrix,
    )


def derivative(gen: GeneratorView, amp: np.ndarray) -> np.ndarray:
    """
    Time derivative of a full amplitude vector under the truncated generator.

    Dormant and phantom entries get a zero derivative.
    """
    amp = np.asarray(amp, dtype=complex)
    result = np.zeros_like(amp)
    result[gen.active] = gen.rhs(0.0, amp[gen.active])
    return result


def check_solution(solution: t.Any, dt_floor: float) -> None:
    """Raise :class:`NumericalError` if solve_ivp failed or had to shrink below the floor."""
    if solution.status == -1:
        raise NumericalError(f'integrator failed: {solution.message}')
    steps = np.diff(solution.t)
    # The final step is cut short at the end of the span or at an event.
    if steps.size > 1 and float(np.min(steps[:-1])) < dt_floor:
        raise NumericalError(
            f'step size {float(np.min(steps[:-1])):g} fell below the floor {dt_floor:g}')


def integrate(gen: GeneratorView, t0: float, y0: np.ndarray, t1: float,
              settings: IntegratorSettings, **kwargs: t.Any) -> t.Any:
    """
    Integrate active amplitudes from ``t0`` to ``t1`` with adaptive Runge-Kutta stepping.

    Extra keyword arguments go to :func:`scipy.integrate.solve_ivp`.
    """
    fun = kwargs.pop('fun', gen.rhs)
    solution = solve_ivp(fun, (t0, t1), y0, method=RK_METHOD, rtol=settings.tol,
                         atol=settings.tol, first_step=min(settings.dt_init, t1 - t0), **kwargs)
    check_solution(solution, settings.dt_floor)
    return solution


def step(state: WaveState, gen: GeneratorView, dt: float,
         settings: IntegratorSettings = IntegratorSettings()) -> WaveState:
    """
    Advance a state by ``dt`` under the truncated generator.

    :arg state: The state to advance.
    :arg gen: Generator matching ``state.statuses``.
    :arg dt: Time to advance by.  Zero returns the state unchanged.
    :arg settings: Integrator tolerance and step limits.
    :raises NumericalError: If the tolerance cannot be met above the step floor.
    """
    if dt < 0:
        raise ValueError('dt must not be negative')
    if dt == 0 or gen.active.size == 0:
        return dataclasses.replace(state, t=state.t + dt)

    solution = integrate(gen, state.t, state.amp[gen.active], state.t + dt, settings)
    amp = state.amp.copy()
    amp[gen.active] = solution.y[:, -1]
    s_active = float(np.vdot(amp[gen.active], amp[gen.active]).real)
    return WaveState(t=state.t + dt, amp=amp, statuses=state.statuses, s_active=s_active)


def _channel_row(gen: GeneratorView, component: int) -> int:
    try:
        return gen.channels.index(component)
    except ValueError:
        raise GraphError(f'component {component} is not ready') from None


def gap_current(state: WaveState, gen: GeneratorView, component: int) -> float:
    """
    Probability current J_K into a ready component.

    J_K is the exact time derivative of the component's square modulus, so it can be negative.

    :raises GraphError: If ``component`` is not ready.
    """
    row = _channel_row(gen, component)
    return float(gen.currents(state.amp[gen.active])[row])


def hazard(state: WaveState, gen: GeneratorView) -> t.Tuple[float, t.Dict[int, float]]:
    """
    Stochastic hazard of a state.

    :returns: Tuple of the total rate and a map from ready component to its rate
        ``max(J_K, 0) / s``.
    :raises NumericalError: If the active square modulus is degenerate.
    """
    active = state.amp[gen.active]
    s_active = float(np.vdot(active, active).real)
    if s_active <= S_FLOOR:
        raise NumericalError(f'degenerate state: total square modulus {s_active:g}')
    if not gen.channels:
        return 0.0, {}
    rates = gen.rates(active)
    per_component = {cid: float(rate) for cid, rate in zip(gen.channels, rates)}
    return float(np.sum(rates)), per_component
