# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026

import dataclasses

import numpy as np
import pytest

from nrule_sim.errors import GraphError
from nrule_sim.graph import (
    BasisState, Component, ComponentStatus as S, Coupling, CouplingKind, SystemGraph,
    active_indices, classify, validate,
)
from nrule_sim.scenarios import SCENARIOS, build_scenario, series_counter, staged_network


def two_state(up=1.0, down=1.0, kind=CouplingKind.CONTINUOUS, amplitudes=(1.0, 0.0),
              same_component=True):
    basis = (BasisState(0, 'a'), BasisState(1, 'b'))
    if same_component:
        components = (Component(0, 'ab', frozenset({0, 1}), S.REALIZED),)
    else:
        components = (Component(0, 'a', frozenset({0}), S.REALIZED),
                      Component(1, 'b', frozenset({1}), S.READY))
    couplings = [Coupling(0, 1, up, kind)]
    if kind is CouplingKind.CONTINUOUS:
        couplings.append(Coupling(1, 0, down, kind))
    return SystemGraph(basis=basis, components=components, diag=np.zeros(2),
                       couplings=tuple(couplings),
                       initial_amplitudes=np.array(amplitudes, dtype=complex))


def test_minimal_gap_graph_passes():
    report = validate(two_state(kind=CouplingKind.GAP, same_component=False))
    assert report.ok, report.codes()


def test_non_hermitian_continuous_block():
    report = validate(two_state(up=1.0, down=0.5))
    assert 'non-hermitian' in report.codes()


def test_complex_conjugate_couplings_are_hermitian():
    assert validate(two_state(up=1 + 2j, down=1 - 2j)).ok


def test_ready_not_adjacent():
    graph = series_counter(3).graph
    statuses = {c.id: c.initial_status for c in graph.components}
    a2 = graph.component_by_label('A2').id
    statuses[a2] = S.READY
    broken = dataclasses.replace(graph, components=tuple(
        dataclasses.replace(c, initial_status=statuses[c.id]) for c in graph.components))
    assert 'ready-not-adjacent' in validate(broken).codes()


def test_dormant_adjacent():
    graph = series_counter(3).graph
    broken = dataclasses.replace(graph, components=tuple(
        dataclasses.replace(c, initial_status=S.DORMANT) if c.label == 'A1' else c
        for c in graph.components))
    assert 'dormant-adjacent' in validate(broken).codes()


def test_structural_violations():
    graph = two_state(kind=CouplingKind.GAP, same_component=False)

    overlapping = dataclasses.replace(graph, components=(
        Component(0, 'a', frozenset({0, 1}), S.REALIZED),
        Component(1, 'b', frozenset({1}), S.READY)))
    assert 'overlapping-membership' in validate(overlapping).codes()

    internal = dataclasses.replace(
        graph, components=(Component(0, 'ab', frozenset({0, 1}), S.REALIZED),))
    assert 'internal-gap' in validate(internal).codes()

    charged = dataclasses.replace(graph, initial_amplitudes=np.array([1.0, 0.5], dtype=complex))
    assert 'amplitude-on-inactive' in validate(charged).codes()

    disconnected = dataclasses.replace(graph, couplings=())
    codes = validate(disconnected).codes()
    assert 'unreachable-component' in codes

    bad_index = dataclasses.replace(graph, couplings=(Coupling(0, 7, 1.0, CouplingKind.GAP),))
    assert validate(bad_index).codes() == ['coupling-index']


def test_continuous_across_components():
    graph = two_state(same_component=False)
    assert 'continuous-cross-component' in validate(graph).codes()


def test_classify_counter():
    graph = series_counter(3).graph
    start = {c.id: (S.REALIZED if c.label == 'A0' else S.DORMANT) for c in graph.components}
    result = classify(graph, start)
    by_label = {graph.label_of(cid): status for cid, status in result.items()}
    assert by_label == {'A0': S.REALIZED, 'A1': S.READY, 'A2': S.DORMANT, 'A3': S.DORMANT}


def test_classify_two_parallel_gaps():
    graph = staged_network().graph
    statuses = {c.id: S.DORMANT for c in graph.components}
    statuses[graph.component_by_label('S0').id] = S.PHANTOM
    statuses[graph.component_by_label('S1').id] = S.REALIZED
    result = classify(graph, statuses)
    assert result[graph.component_by_label('S2').id] is S.READY
    assert result[graph.component_by_label('S3').id] is S.READY
    assert result[graph.component_by_label('S0').id] is S.PHANTOM


def test_classify_without_gaps_is_identity():
    graph = two_state()
    statuses = {0: S.REALIZED}
    assert classify(graph, statuses) == statuses


def test_classify_is_idempotent_and_never_demotes():
    graph = build_scenario('multi-sequence').graph
    once = classify(graph, graph.initial_statuses())
    assert classify(graph, once) == once
    for cid, status in graph.initial_statuses().items():
        if status in (S.REALIZED, S.PHANTOM):
            assert once[cid] is status


def test_classify_needs_realized():
    graph = series_counter(2).graph
    with pytest.raises(GraphError):
        classify(graph, {c.id: S.DORMANT for c in graph.components})


def test_every_ready_component_is_adjacent_after_classify():
    graph = build_scenario('parallel-branch').graph
    statuses = classify(graph, graph.initial_statuses())
    realized = {cid for cid, status in statuses.items() if status is S.REALIZED}
    for cid, status in statuses.items():
        adjacent = any(cid in graph.gap_targets[r] for r in realized)
        assert (status is S.READY) == (adjacent and status not in (S.REALIZED, S.PHANTOM))


@pytest.mark.parametrize('scenario_id', sorted(SCENARIOS))
def test_every_scenario_validates(scenario_id):
    report = validate(build_scenario(scenario_id).graph)
    assert report.ok, report.codes()


def test_active_indices_are_sorted():
    graph = build_scenario('laser-cycle').graph
    statuses = classify(graph, graph.initial_statuses())
    assert active_indices(graph, statuses).tolist() == [0, 1, 2]
