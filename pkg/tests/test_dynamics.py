# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026

import math

import numpy as np
import pytest

from nrule_sim.dynamics import (
    IntegratorSettings, build_generator, derivative, gap_current, hazard, make_state, step,
)
from nrule_sim.errors import GraphError, NumericalError
from nrule_sim.graph import ComponentStatus as S
from nrule_sim.reduction import launch_state
from nrule_sim.scenarios import (
    detector_capture, laser_cycle, observer_chain, rabi_absorption, series_counter,
)


TIGHT = IntegratorSettings(tol=1e-12)


def start(spec):
    state = launch_state(spec.graph)
    return state, build_generator(spec.graph, state.statuses)


def test_generator_layout():
    graph = laser_cycle().graph
    state, gen = start(laser_cycle())
    assert gen.active.tolist() == [0, 1, 2]
    assert gen.realized.tolist() == [0]
    assert [graph.label_of(cid) for cid in gen.channels] == ['lasing']
    # Ready members have no phase of their own and do not feed back.
    assert np.all(gen.matrix[:, 1:] == 0)
    assert state.s_active == pytest.approx(1.0)


def test_rabi_quarter_period():
    spec = rabi_absorption(g=1.0, gamma=0.0)
    state, gen = start(spec)
    evolved = step(state, gen, math.pi / 2, TIGHT)
    assert abs(evolved.amp[0]) == pytest.approx(0.0, abs=1e-8)
    assert abs(evolved.amp[1]) == pytest.approx(1.0, abs=1e-8)
    assert evolved.t == pytest.approx(math.pi / 2)


def test_single_gap_inflow():
    spec = detector_capture(g=1.0)
    state, gen = start(spec)
    evolved = step(state, gen, 1.0)
    assert abs(evolved.amp[1]) ** 2 == pytest.approx(1.0, abs=1e-8)
    assert abs(evolved.amp[0]) == 1.0
    assert evolved.s_active == pytest.approx(2.0, abs=1e-8)


def test_realized_norm_without_inflow():
    spec = rabi_absorption(g=1.3, gamma=0.0)
    state, gen = start(spec)
    evolved = step(state, gen, 100.0, TIGHT)
    realized = evolved.amp[gen.realized]
    assert float(np.vdot(realized, realized).real) == pytest.approx(1.0, abs=1e-8)
    assert evolved.amp[2] == 0


def test_zero_step_is_identity():
    state, gen = start(detector_capture())
    same = step(state, gen, 0.0)
    assert same.t == state.t
    assert np.array_equal(same.amp, state.amp)
    with pytest.raises(ValueError):
        step(state, gen, -1.0)


def test_gap_current_matches_closed_form():
    gamma = 0.3
    state, gen = start(rabi_absorption(g=1.0, gamma=gamma))
    emission = gen.channels[0]
    for t_now in (0.5, 1.0, 2.5, 4.0):
        evolved = step(state, gen, t_now, TIGHT)
        expected = 2 * gamma ** 2 * (1 - math.cos(t_now)) * math.sin(t_now)
        assert gap_current(evolved, gen, emission) == pytest.approx(expected, abs=1e-9)


def test_gap_current_can_be_negative():
    state, gen = start(rabi_absorption(g=1.0, gamma=0.3))
    evolved = step(state, gen, 4.0, TIGHT)
    assert gap_current(evolved, gen, gen.channels[0]) < 0
    total, rates = hazard(evolved, gen)
    assert total == 0.0
    assert rates == {gen.channels[0]: 0.0}


def test_ready_modulus_is_accumulated_current():
    gamma = 0.3
    state, gen = start(rabi_absorption(g=1.0, gamma=gamma))
    evolved = step(state, gen, 2.0, TIGHT)
    assert abs(evolved.amp[2]) ** 2 == pytest.approx(gamma ** 2 * (1 - math.cos(2.0)) ** 2,
                                                     abs=1e-9)


def test_current_converges_at_second_order():
    state, gen = start(rabi_absorption(g=1.0, gamma=0.3))
    t_now = 1.7
    exact = gap_current(step(state, gen, t_now, TIGHT), gen, gen.channels[0])

    def ready_modulus(at):
        return abs(step(state, gen, at, TIGHT).amp[2]) ** 2

    errors = []
    for h in (0.2, 0.1, 0.05):
        estimate = (ready_modulus(t_now + h) - ready_modulus(t_now - h)) / (2 * h)
        errors.append(abs(estimate - exact))
    orders = [math.log2(errors[k] / errors[k + 1]) for k in range(len(errors) - 1)]
    assert min(orders) >= 1.9


def test_hazard_of_single_gap():
    state, gen = start(detector_capture(g=2.0))
    evolved = step(state, gen, 0.5, TIGHT)
    total, rates = hazard(evolved, gen)
    # 2 g^2 t / (1 + g^2 t^2)
    assert total == pytest.approx(2 * 4 * 0.5 / (1 + 4 * 0.25), rel=1e-8)
    assert list(rates.values()) == [pytest.approx(total)]


def test_dormant_tags_stay_exactly_zero():
    spec = observer_chain()
    state, gen = start(spec)
    evolved = step(state, gen, 10.0)
    b1 = spec.graph.indices_with_tag('B1')
    assert np.all(evolved.amp[b1] == 0)
    # The ready window state accumulates, its chain partners do not.
    assert abs(evolved.amp[1]) > 0
    assert np.all(derivative(gen, evolved.amp)[b1] == 0)


def test_counter_freezes_dormant_readings():
    spec = series_counter(3)
    state, gen = start(spec)
    evolved = step(state, gen, 3.0)
    assert evolved.amp[2] == 0 and evolved.amp[3] == 0
    assert evolved.statuses[2] is S.DORMANT


def test_gap_current_needs_ready_component():
    spec = series_counter(3)
    state, gen = start(spec)
    with pytest.raises(GraphError):
        gap_current(state, gen, 2)


def test_degenerate_state():
    spec = detector_capture()
    statuses = launch_state(spec.graph).statuses
    gen = build_generator(spec.graph, statuses)
    empty = make_state(spec.graph, 0.0, np.zeros(2, dtype=complex), statuses)
    with pytest.raises(NumericalError):
        hazard(empty, gen)


def test_degenerate_state_without_channels():
    spec = detector_capture()
    statuses = {0: S.REALIZED, 1: S.PHANTOM}
    gen = build_generator(spec.graph, statuses)
    assert gen.channels == ()
    lone = make_state(spec.graph, 0.0, np.array([1.0, 0.0], dtype=complex), statuses)
    assert hazard(lone, gen) == (0.0, {})
    empty = make_state(spec.graph, 0.0, np.zeros(2, dtype=complex), statuses)
    with pytest.raises(NumericalError):
        hazard(empty, gen)


@pytest.mark.parametrize('factor', [10.0, 1j, 0.3 - 2.0j])
def test_hazard_ignores_global_factor(factor):
    spec = rabi_absorption(g=1.0, gamma=0.3)
    state, gen = start(spec)
    evolved = step(state, gen, 1.3, TIGHT)
    scaled = make_state(spec.graph, evolved.t, evolved.amp * factor, evolved.statuses)
    total, rates = hazard(evolved, gen)
    scaled_total, scaled_rates = hazard(scaled, gen)
    assert total > 0
    assert scaled_total == pytest.approx(total, rel=1e-12)
    assert scaled_rates == {cid: pytest.approx(rate, rel=1e-12) for cid, rate in rates.items()}


def test_step_floor():
    state, gen = start(rabi_absorption(g=1.0, gamma=0.0))
    with pytest.raises(NumericalError):
        step(state, gen, 10.0, IntegratorSettings(tol=1e-13, dt_init=1e-3, dt_floor=1.0))


def test_invalid_settings():
    with pytest.raises(ValueError):
        IntegratorSettings(tol=0.0)
