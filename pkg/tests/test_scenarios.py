# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026

import json

import numpy as np
import pytest

from nrule_sim.errors import InvalidScenarioError, ScenarioError
from nrule_sim.graph import ComponentStatus as S
from nrule_sim.scenarios import (
    SCENARIOS, ScenarioMeta, build_scenario, check_meta_references, check_scenario,
    coerce_params, default_t_max, dump_scenario, load_scenario, localization, multi_sequence,
    neutron_decay, observer_chain, parameter_schema, rabi_absorption, rabi_emission,
    resolve_scenario, scenario_from_dict, scenario_to_dict, series_counter,
    transfer_couplings,
)


@pytest.mark.parametrize('scenario_id', sorted(SCENARIOS))
def test_registered_scenarios_are_consistent(scenario_id):
    spec = build_scenario(scenario_id)
    assert spec.id == scenario_id
    assert check_scenario(spec) == []
    assert spec.meta.t_max > 0


@pytest.mark.parametrize('scenario_id', sorted(SCENARIOS))
def test_file_format_keeps_everything(scenario_id, tmp_path):
    spec = build_scenario(scenario_id)
    path = tmp_path / f'{scenario_id}.json'
    text = dump_scenario(spec, str(path))
    assert json.loads(path.read_text()) == json.loads(text)

    loaded = load_scenario(str(path))
    assert loaded.id == spec.id
    assert loaded.meta == spec.meta
    assert loaded.graph.basis == spec.graph.basis
    assert loaded.graph.components == spec.graph.components
    assert loaded.graph.couplings == spec.graph.couplings
    assert np.array_equal(loaded.graph.initial_amplitudes, spec.graph.initial_amplitudes)
    assert scenario_to_dict(loaded) == scenario_to_dict(spec)


def test_file_id_defaults_to_file_name(tmp_path):
    data = scenario_to_dict(build_scenario('detector-capture'))
    del data['id']
    del data['meta']
    path = tmp_path / 'my-detector.json'
    path.write_text(json.dumps(data))
    spec = load_scenario(str(path))
    assert spec.id == 'my-detector'
    assert spec.meta.t_max == pytest.approx(50.0)


@pytest.mark.parametrize('mutate', [
    lambda data: data.update(extra=1),
    lambda data: data['basis'][0].update(energy=1.0),
    lambda data: data['couplings'][0].update(kind='tunnel'),
    lambda data: data['components'][0].update(initialStatus='maybe'),
    lambda data: data['meta'].update(oracleMode='guess'),
    lambda data: data['meta'].update(tMax=-1.0),
    lambda data: data.pop('diag'),
])
def test_schema_rejects_bad_files(mutate):
    data = scenario_to_dict(build_scenario('parallel-branch'))
    mutate(data)
    with pytest.raises(ScenarioError):
        scenario_from_dict(data)


def test_unreadable_file(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"basis": [')
    with pytest.raises(ScenarioError):
        load_scenario(str(path))
    with pytest.raises(ScenarioError):
        load_scenario(str(tmp_path / 'missing.json'))


def test_meta_references():
    data = scenario_to_dict(build_scenario('parallel-branch'))
    data['meta']['neverFirst'] = ['A_x']
    data['meta']['zeroBeforeFirstHit'] = ['B7']
    data['meta']['maxEvents'] = 1
    codes = [violation.code for violation in check_meta_references(scenario_from_dict(data))]
    assert codes == ['meta-unknown-component', 'meta-unknown-tag', 'meta-event-bounds']


def test_resolve_scenario(tmp_path):
    assert resolve_scenario('series-counter', {'n': '4'}).meta.max_events == 4

    data = scenario_to_dict(build_scenario('detector-capture'))
    data['components'][1]['initialStatus'] = 'dormant'
    path = tmp_path / 'dormant.json'
    path.write_text(json.dumps(data))
    with pytest.raises(InvalidScenarioError) as excinfo:
        resolve_scenario(str(path))
    assert excinfo.value.codes == ('dormant-adjacent',)
    assert 'dormant-adjacent' in str(excinfo.value)

    good = tmp_path / 'good.json'
    dump_scenario(build_scenario('detector-capture'), str(good))
    assert resolve_scenario(str(good)).id == 'detector-capture'
    with pytest.raises(ScenarioError):
        resolve_scenario(str(good), {'g': '2'})
    with pytest.raises(ScenarioError):
        resolve_scenario('no-such-scenario')


def test_params():
    kinds = {name: kind for name, kind, _ in parameter_schema('series-counter')}
    assert kinds == {'n': 'int', 'g': 'float', 'couplings': 'floats'}
    assert coerce_params('series-counter', {'n': '2', 'couplings': '1,0.5'}) == {
        'n': 2, 'couplings': (1.0, 0.5)}
    with pytest.raises(ScenarioError):
        coerce_params('series-counter', {'m': '2'})
    with pytest.raises(ScenarioError):
        coerce_params('series-counter', {'n': 'two'})
    with pytest.raises(ScenarioError):
        build_scenario('series-counter', {'n': 1})
    with pytest.raises(ScenarioError):
        build_scenario('series-counter', {'n': 2, 'couplings': (1.0,)})


def test_counter_meta():
    meta = series_counter(4).meta
    assert meta.serial_chains == (('A1', 'A2', 'A3', 'A4'),)
    assert meta.never_first == ('A2', 'A3', 'A4')
    assert (meta.min_events, meta.max_events) == (4, 4)


def test_observer_chain_shape():
    spec = observer_chain(chain_len=4)
    graph = spec.graph
    assert [state.label for state in graph.basis] == [
        'd0w.B0', 'd1w.B0', 'd1d.1', 'd1d.2', 'd1d.B1']
    assert graph.indices_with_tag('B1') == [4]
    assert graph.component_by_label('d1.B').initial_status is S.READY
    assert spec.meta.oracle_mode == 'unitary'
    assert transfer_couplings(4, 1.0) == pytest.approx([3 ** 0.5, 2.0, 3 ** 0.5])


def test_multi_sequence_has_six_endings():
    spec = multi_sequence()
    assert len(spec.meta.allowed_sequences) == 6
    assert ('AB2', 'AB2b') in spec.meta.allowed_sequences


def test_rabi_builders_differ_in_start_only():
    absorption = rabi_absorption(photons=10)
    emission = rabi_emission(photons=9)
    assert [s.label for s in absorption.graph.basis] == [s.label for s in emission.graph.basis]
    assert absorption.graph.couplings == emission.graph.couplings
    assert absorption.graph.initial_amplitudes[0] == 1
    assert emission.graph.initial_amplitudes[1] == 1


def test_packet_and_bubbles():
    spec = neutron_decay(length=16)
    assert np.linalg.norm(spec.graph.initial_amplitudes) == pytest.approx(1.0)
    assert len(spec.graph.components) == 17
    weights = localization(bubbles=3).graph.initial_amplitudes
    assert np.abs(weights[[0, 3, 6]]) ** 2 == pytest.approx([1 / 6, 2 / 6, 3 / 6])
    with pytest.raises(ScenarioError):
        localization(bubbles=2, weights=(1.0, -1.0))


def test_default_t_max():
    assert default_t_max(series_counter(2, couplings=(0.5, 2.0)).graph) == pytest.approx(100.0)
    assert ScenarioMeta().oracle_mode == 'race'
