# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026

import json
import math

import numpy as np
import pytest

from nrule_sim.dynamics import IntegratorSettings, build_generator, make_state, step
from nrule_sim.errors import GraphError
from nrule_sim.graph import ComponentStatus as S
from nrule_sim.reduction import (
    CollapsePolicy, collapse, event_log_lines, launch_state, relaunch, run_trajectory,
    sample_hit, tag_moduli, write_samples_csv,
)
from nrule_sim.rng import trial_generator
from nrule_sim.scenarios import (
    detector_capture, laser_cycle, localization, neutron_decay, observer_chain, parallel_branch,
    rabi_absorption, scenario_from_dict, scenario_to_dict, series_counter, staged_network,
)


def run(spec, trial=0, seed=1234, **kwargs):
    return run_trajectory(spec, trial_generator(seed, trial), trial=trial, rng_seed=seed,
                          **kwargs)


def test_trial_streams_are_independent_of_order():
    first = trial_generator(7, 3).random(4)
    trial_generator(7, 2).random(100)
    assert np.array_equal(trial_generator(7, 3).random(4), first)
    assert not np.array_equal(trial_generator(7, 4).random(4), first)
    with pytest.raises(ValueError):
        trial_generator(-1, 0)


def test_counter_reads_in_order():
    spec = series_counter(3)
    for trial in range(5):
        record = run(spec, trial=trial, t_max=1e4)
        assert record.signature() == ('A1', 'A2', 'A3')
        times = [event.t_sc for event in record.events]
        assert times == sorted(times)
        assert record.completed
        assert record.terminal_statuses[3] is S.REALIZED


def test_no_events_without_gaps():
    spec = rabi_absorption(g=1.0, gamma=0.0)
    t_max = 200 * math.pi
    record = run(spec, t_max=t_max, sample_every=10.0, settings=IntegratorSettings(tol=1e-12))
    assert record.events == ()
    assert record.t_end == pytest.approx(t_max)
    assert not record.completed
    norms = record.samples.populations[:, :2].sum(axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-8
    assert np.all(record.samples.populations[:, 2] == 0)


def test_laser_needs_two_hits():
    spec = laser_cycle()
    for trial in range(10):
        record = run(spec, trial=trial)
        assert len(record.events) == 2
        assert record.signature()[0] == 'lasing'
        assert record.signature()[1] in ('metastable', 'fast')


def test_pump_off_means_no_hits():
    record = run(laser_cycle(gamma32=0.0), t_max=20.0)
    assert record.events == ()


def test_staged_network_relaunches_twice():
    record = run(staged_network(), t_max=1e3)
    assert record.signature()[0] == 'S1'
    assert record.signature()[1] in ('S2', 'S3')
    assert record.events[1].t_sc > record.events[0].t_sc


def test_trajectories_are_deterministic():
    spec = parallel_branch()
    first = run(spec, trial=11)
    second = run(spec, trial=11)
    assert [e.to_json() for e in first.events] == [e.to_json() for e in second.events]
    assert first.terminal_support == second.terminal_support


def test_policies_give_identical_events():
    spec = parallel_branch()
    for trial in range(5):
        zero = run(spec, trial=trial, policy=CollapsePolicy.ZERO_NON_CHOSEN)
        kept = run(spec, trial=trial, policy=CollapsePolicy.KEEP_PHANTOMS)
        assert [(e.t_sc, e.chosen) for e in zero.events] == \
            [(e.t_sc, e.chosen) for e in kept.events]
        assert kept.policy is CollapsePolicy.KEEP_PHANTOMS


def test_scaled_initial_amplitude_changes_nothing():
    spec = parallel_branch()
    data = scenario_to_dict(spec)
    data['initialAmplitudes'] = [{'index': 0, 're': 10.0, 'im': 0.0}]
    scaled = scenario_from_dict(data)
    for trial in range(5):
        plain = run(spec, trial=trial)
        tenfold = run(scaled, trial=trial)
        assert [(e.t_sc, e.chosen, e.s_after) for e in plain.events] == \
            [(e.t_sc, e.chosen, e.s_after) for e in tenfold.events]


def test_launch_state_is_normalized():
    state = launch_state(localization(bubbles=4).graph)
    assert state.s_active == pytest.approx(1.0, abs=1e-15)
    assert state.t == 0.0


def test_collapse_and_relaunch():
    spec = parallel_branch()
    graph = spec.graph
    state = launch_state(graph)
    gen = build_generator(graph, state.statuses)
    evolved = step(state, gen, 0.5)
    right = graph.component_by_label('A_r').id
    left = graph.component_by_label('A_l').id
    final = graph.component_by_label('A_f').id

    reduced = collapse(graph, evolved, right)
    assert reduced.statuses[right] is S.REALIZED
    assert reduced.statuses[0] is S.PHANTOM and reduced.statuses[left] is S.PHANTOM
    assert reduced.amp[graph.members(left)[0]] == 0 and reduced.amp[0] == 0
    assert reduced.amp[graph.members(right)[0]] == evolved.amp[graph.members(right)[0]]
    assert reduced.s_active == pytest.approx(abs(evolved.amp[1]) ** 2)

    statuses, new_gen = relaunch(graph, reduced)
    assert statuses[final] is S.READY
    assert new_gen.channels == (final,)

    kept = collapse(graph, evolved, right, CollapsePolicy.KEEP_PHANTOMS)
    assert np.array_equal(kept.amp, evolved.amp)
    assert kept.s_active == reduced.s_active

    with pytest.raises(GraphError):
        collapse(graph, evolved, final)


def test_sample_hit_window():
    spec = detector_capture()
    state = launch_state(spec.graph)
    gen = build_generator(spec.graph, state.statuses)
    with pytest.raises(ValueError):
        sample_hit(state, gen, trial_generator(0, 0), 0.0)
    segment = sample_hit(state, gen, trial_generator(0, 0), 1e6)
    assert segment.hit is not None
    assert segment.state.t == segment.hit.t_sc
    assert segment.hit.chosen == 1
    assert segment.hit.lambda_total == pytest.approx(
        2 * segment.hit.t_sc / (1 + segment.hit.t_sc ** 2), rel=1e-6)


def test_detector_hit_fraction():
    spec = detector_capture(g=1.0)
    t_max = 2.0
    n = 1000
    hits = sum(1 for trial in range(n) if run(spec, trial=trial, t_max=t_max).events)
    p = 1.0 - 1.0 / (1.0 + t_max ** 2)
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= 3 * sigma


def test_observer_sees_one_brain_state_before_the_hit():
    spec = observer_chain()
    b1 = spec.graph.indices_with_tag('B1')
    checked = 0
    for trial in range(5):
        record = run(spec, trial=trial, t_max=60.0, sample_every=0.1)
        if not record.events or record.events[0].t_sc > 50.0:
            continue
        checked += 1
        first = record.events[0]
        assert first.tag_moduli['B1'] == 0.0
        before = record.samples.times <= first.t_sc
        assert np.all(record.samples.populations[before][:, b1] == 0)
        after = record.samples.tag_population(spec.graph, 'B1')[~before]
        assert after.max() > 0.5 * first.s_after
    assert checked > 0


def test_localized_support():
    spec = localization(bubbles=8)
    for trial in range(10):
        record = run(spec, trial=trial)
        assert len(record.events) == 1
        tags = {tag for index in record.terminal_support
                for tag in spec.graph.basis[index].tags}
        assert tags == {record.events[0].chosen_label}


def test_frozen_packet_decays_in_place():
    spec = neutron_decay(length=8, hop=0.0, width=0.0, center=5.0)
    for trial in range(5):
        assert run(spec, trial=trial).signature() == ('decay:5',)


def test_event_log_and_samples(tmp_path):
    spec = detector_capture()
    settings = IntegratorSettings()
    record = run(spec, t_max=100.0, sample_every=1.0, settings=settings)
    lines = event_log_lines(record, settings)
    header = json.loads(lines[0])
    assert header == {'scenario': 'detector-capture', 'seed': 1234, 'trial': 0, 'tol': 1e-9,
                      'policy': 'zero'}
    event = json.loads(lines[1])
    assert event['chosen'] == 'd1'
    assert event['sAfter'] == pytest.approx(event['t'] ** 2, rel=1e-6)
    assert set(event['weights']) == {'d1'}

    path = tmp_path / 'samples.csv'
    write_samples_csv(str(path), spec.graph, record.samples)
    rows = path.read_text().splitlines()
    assert rows[0] == 't,d0,d1'
    assert len(rows) == 1 + record.samples.times.size


def test_tag_moduli_count_dormant_members():
    graph = observer_chain().graph
    window = graph.component_by_label('d1.B').id
    amp = np.zeros(graph.dimension, dtype=complex)
    amp[0] = 1.0
    amp[graph.indices_with_tag('B1')] = 0.5

    dormant = tag_moduli(graph, make_state(graph, 0.0, amp, {0: S.REALIZED, window: S.DORMANT}))
    assert dormant['B1'] == pytest.approx(0.25)
    assert dormant['B0'] == pytest.approx(1.0)

    phantom = tag_moduli(graph, make_state(graph, 0.0, amp, {0: S.REALIZED, window: S.PHANTOM}))
    assert phantom['B1'] == 0.0
