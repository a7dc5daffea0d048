# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""Scenario builders, the scenario registry, and the scenario file format."""

import dataclasses
import inspect
import json
import math
import os.path
import typing as t

import numpy as np
import pydantic as p

from antsibull_core import app_context

from .errors import InvalidScenarioError, ScenarioError
from .graph import (
    BasisState, Component, ComponentStatus, Coupling, CouplingKind, SystemGraph, Violation,
    classify, validate,
)
from .logging import log
from .schemas import ScenarioFileModel


mlog = log.fields(mod=__name__)

#: Suggested time window in units of the slowest nonzero coupling.
T_MAX_FACTOR = 50.0


@dataclasses.dataclass(frozen=True)
class ScenarioMeta:
    """Assertions about a scenario that can be checked on trajectory records alone."""

    #: Events every trajectory that ends without ready components must have.
    min_events: int = 0
    max_events: t.Optional[int] = None
    #: Component labels that must be hit in this relative order when they are hit.
    serial_chains: t.Tuple[t.Tuple[str, ...], ...] = ()
    #: Component labels that may never be the first event.
    never_first: t.Tuple[str, ...] = ()
    #: Complete event signatures that are allowed, or None for any.
    allowed_sequences: t.Optional[t.Tuple[t.Tuple[str, ...], ...]] = None
    #: Tags whose population must be exactly zero before the first event.
    zero_before_first_hit: t.Tuple[str, ...] = ()
    #: Terminal support must lie in basis states sharing one tag with this prefix.
    single_support_prefix: t.Optional[str] = None
    t_max: float = T_MAX_FACTOR
    oracle_mode: str = 'race'


@dataclasses.dataclass(frozen=True, eq=False)
class ScenarioSpec:
    id: str
    graph: SystemGraph
    meta: ScenarioMeta
    params: t.Dict[str, t.Any] = dataclasses.field(default_factory=dict)


class _GraphBuilder:
    def __init__(self) -> None:
        self.basis: t.List[BasisState] = []
        self.diag: t.List[float] = []
        self.components: t.List[t.Tuple[str, t.List[int], bool]] = []
        self.couplings: t.List[Coupling] = []
        self.amplitudes: t.Dict[int, complex] = {}

    def state(self, label: str, tags: t.Iterable[str] = (), energy: float = 0.0) -> int:
        index = len(self.basis)
        self.basis.append(BasisState(index=index, label=label, tags=frozenset(tags)))
        self.diag.append(float(energy))
        return index

    def component(self, label: str, members: t.Sequence[int], realized: bool = False) -> int:
        self.components.append((label, list(members), realized))
        return len(self.components) - 1

    def continuous(self, source: int, target: int, value: complex) -> None:
        self.couplings.append(Coupling(source, target, value))
        self.couplings.append(Coupling(target, source, value.conjugate()
                                       if isinstance(value, complex) else value))

    def gap(self, source: int, target: int, value: float) -> None:
        self.couplings.append(Coupling(source, target, value, CouplingKind.GAP))

    def amplitude(self, index: int, value: complex) -> None:
        self.amplitudes[index] = complex(value)

    def build(self) -> SystemGraph:
        amplitudes = np.zeros(len(self.basis), dtype=complex)
        for index, value in self.amplitudes.items():
            amplitudes[index] = value
        components = tuple(
            Component(id=cid, label=label, members=frozenset(members),
                      initial_status=(ComponentStatus.REALIZED if realized
                                      else ComponentStatus.DORMANT))
            for cid, (label, members, realized) in enumerate(self.components))
        graph = SystemGraph(basis=tuple(self.basis), components=components,
                            diag=np.array(self.diag, dtype=float),
                            couplings=tuple(self.couplings), initial_amplitudes=amplitudes)
        statuses = classify(graph, graph.initial_statuses())
        return dataclasses.replace(graph, components=tuple(
            dataclasses.replace(component, initial_status=statuses[component.id])
            for component in components))


def default_t_max(graph: SystemGraph) -> float:
    """``T_MAX_FACTOR`` over the smallest nonzero coupling magnitude."""
    magnitudes = [abs(coupling.value) for coupling in graph.couplings if coupling.value != 0]
    return T_MAX_FACTOR / min(magnitudes) if magnitudes else T_MAX_FACTOR


def _spec(scenario_id: str, graph: SystemGraph, params: t.Mapping[str, t.Any],
          **meta: t.Any) -> ScenarioSpec:
    meta.setdefault('t_max', default_t_max(graph))
    return ScenarioSpec(id=scenario_id, graph=graph, meta=ScenarioMeta(**meta),
                        params=dict(params))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ScenarioError(message)


#
# Builders
#


def detector_capture(g: float = 1.0) -> ScenarioSpec:
    """A particle outside a detector and the detector having captured it, across one gap."""
    _require(g >= 0, 'g must not be negative')
    builder = _GraphBuilder()
    outside = builder.state('psi.d0')
    captured = builder.state('d1')
    builder.component('d0', [outside], realized=True)
    builder.component('d1', [captured])
    builder.gap(outside, captured, g)
    builder.amplitude(outside, 1.0)
    return _spec('detector-capture', builder.build(), {'g': g}, min_events=1, max_events=1)


def series_counter(n: int = 3, g: float = 1.0,
                   couplings: t.Optional[t.Tuple[float, ...]] = None) -> ScenarioSpec:
    """
    A counter A0 -> A1 -> ... -> An whose readings are separated by gaps.

    :arg n: Number of gaps.
    :arg g: Coupling of every gap, unless ``couplings`` is given.
    :arg couplings: One coupling per gap.
    """
    _require(n >= 2, 'a counter needs at least two gaps')
    values = tuple(couplings) if couplings is not None else (g,) * n
    _require(len(values) == n, f'expected {n} couplings, got {len(values)}')
    builder = _GraphBuilder()
    states = [builder.state(f'A{k}') for k in range(n + 1)]
    for k, state in enumerate(states):
        builder.component(f'A{k}', [state], realized=k == 0)
    for k, value in enumerate(values):
        builder.gap(states[k], states[k + 1], value)
    builder.amplitude(states[0], 1.0)
    chain = tuple(f'A{k}' for k in range(1, n + 1))
    return _spec('series-counter', builder.build(), {'n': n, 'g': g, 'couplings': couplings},
                 min_events=n, max_events=n, serial_chains=(chain,), never_first=chain[1:])


def parallel_branch(g_r: float = 1.0, g_l: float = 2.0, g_f: float = 1.0) -> ScenarioSpec:
    """A diamond A0 -> {A_r, A_l} -> A_f: clockwise or counterclockwise, never A_f first."""
    _require(g_r >= 0 and g_l >= 0 and g_f >= 0, 'couplings must not be negative')
    builder = _GraphBuilder()
    start = builder.state('A0')
    right = builder.state('A_r')
    left = builder.state('A_l')
    final = builder.state('A_f')
    builder.component('A0', [start], realized=True)
    builder.component('A_r', [right])
    builder.component('A_l', [left])
    builder.component('A_f', [final])
    builder.gap(start, right, g_r)
    builder.gap(start, left, g_l)
    builder.gap(right, final, g_f)
    builder.gap(left, final, g_f)
    builder.amplitude(start, 1.0)
    return _spec('parallel-branch', builder.build(), {'g_r': g_r, 'g_l': g_l, 'g_f': g_f},
                 min_events=2, max_events=2, never_first=('A_f',),
                 allowed_sequences=(('A_r', 'A_f'), ('A_l', 'A_f')))


def transfer_couplings(chain_len: int, hop: float) -> t.List[float]:
    """Hopping couplings ``hop * sqrt(k * (N - k))`` that move a state from end to end."""
    return [hop * math.sqrt(k * (chain_len - k)) for k in range(1, chain_len)]


def observer_chain(g: float = 0.5, hop: float = 1.0, chain_len: int = 3) -> ScenarioSpec:
    """
    A detector capture watched by an observer.

    The capture gap leads into a window state of a single component inside which the detector
    state is carried along a hopping chain until the observer's brain state changes from B0 to B1.
    """
    _require(chain_len >= 2, 'the observer chain needs at least two states')
    _require(g >= 0 and hop >= 0, 'couplings must not be negative')
    builder = _GraphBuilder()
    before = builder.state('d0w.B0', tags=('B0',))
    chain = []
    for k in range(chain_len):
        if k == 0:
            chain.append(builder.state('d1w.B0', tags=('B0',)))
        elif k == chain_len - 1:
            chain.append(builder.state('d1d.B1', tags=('B1',)))
        else:
            chain.append(builder.state(f'd1d.{k}'))
    builder.component('d0w.B0', [before], realized=True)
    builder.component('d1.B', chain)
    for k, value in enumerate(transfer_couplings(chain_len, hop)):
        builder.continuous(chain[k], chain[k + 1], value)
    builder.gap(before, chain[0], g)
    builder.amplitude(before, 1.0)
    return _spec('observer-chain', builder.build(), {'g': g, 'hop': hop, 'chain_len': chain_len},
                 min_events=1, max_events=1, zero_before_first_hit=('B1',),
                 oracle_mode='unitary')


def multi_sequence(first: t.Tuple[float, ...] = (1.0, 1.0, 1.0),
                   second: t.Tuple[float, ...] = (1.0, 1.0)) -> ScenarioSpec:
    """A two level tree of gaps: ``len(first)`` branches, each splitting ``len(second)`` ways."""
    _require(len(first) >= 1 and len(second) >= 1, 'both levels need at least one branch')
    builder = _GraphBuilder()
    root = builder.state('AB0')
    builder.component('AB0', [root], realized=True)
    builder.amplitude(root, 1.0)
    sequences = []
    for i, g_first in enumerate(first, start=1):
        middle = builder.state(f'AB{i}')
        builder.component(f'AB{i}', [middle])
        builder.gap(root, middle, g_first)
        for j, g_second in enumerate(second):
            label = f'AB{i}{chr(ord("a") + j)}'
            leaf = builder.state(label)
            builder.component(label, [leaf])
            builder.gap(middle, leaf, g_second)
            sequences.append((f'AB{i}', label))
    return _spec('multi-sequence', builder.build(), {'first': first, 'second': second},
                 min_events=2, max_events=2, never_first=tuple(label for _, label in sequences),
                 allowed_sequences=tuple(sequences))


def _rabi(scenario_id: str, g: float, gamma: float, photons: int, excited_start: bool
          ) -> ScenarioSpec:
    _require(photons >= 1, 'photons must be at least 1')
    _require(g >= 0 and gamma >= 0, 'couplings must not be negative')
    builder = _GraphBuilder()
    if excited_start:
        ground = builder.state(f'{photons + 1}ph.a0')
        excited = builder.state(f'{photons}ph.a1')
        emitted = builder.state(f'{photons}ph.a0+ph')
    else:
        ground = builder.state(f'{photons}ph.a0')
        excited = builder.state(f'{photons - 1}ph.a1')
        emitted = builder.state(f'{photons - 1}ph.a0+ph')
    builder.component('rabi', [ground, excited], realized=True)
    builder.component('emission', [emitted])
    builder.continuous(ground, excited, g)
    builder.gap(excited, emitted, gamma)
    builder.amplitude(excited if excited_start else ground, 1.0)
    return _spec(scenario_id, builder.build(), {'g': g, 'gamma': gamma, 'photons': photons},
                 max_events=1)


def rabi_absorption(g: float = 1.0, gamma: float = 0.2, photons: int = 10) -> ScenarioSpec:
    """An atom in its ground state absorbing from a field of ``photons`` photons."""
    return _rabi('rabi-absorption', g, gamma, photons, excited_start=False)


def rabi_emission(g: float = 1.0, gamma: float = 0.2, photons: int = 10) -> ScenarioSpec:
    """An excited atom in a field of ``photons`` photons."""
    return _rabi('rabi-emission', g, gamma, photons, excited_start=True)


def laser_cycle(g: float = 1.0, gamma32: float = 1.0, gamma_meta: float = 0.05,
                gamma_fast: float = 2.0, photons: int = 10) -> ScenarioSpec:
    """
    One photon pumped into a laser beam.

    The pump gap a3 -> a2 is followed by the a2 <-> a1 stimulated emission block, which leaves
    through one of two competing gaps: the metastable emission off a2 or the fast decay off a1.
    """
    _require(min(g, gamma32, gamma_meta, gamma_fast) >= 0, 'couplings must not be negative')
    builder = _GraphBuilder()
    pumped = builder.state(f'{photons}ph.a3')
    upper = builder.state(f'{photons}ph.a2.ex')
    lower = builder.state(f'{photons + 1}ph.a1.ex')
    metastable = builder.state(f'{photons}ph.a1.ex.exx')
    fast = builder.state(f'{photons + 1}ph.a0.ex.exx')
    builder.component('pump', [pumped], realized=True)
    builder.component('lasing', [upper, lower])
    builder.component('metastable', [metastable])
    builder.component('fast', [fast])
    builder.gap(pumped, upper, gamma32)
    builder.continuous(upper, lower, g)
    builder.gap(upper, metastable, gamma_meta)
    builder.gap(lower, fast, gamma_fast)
    builder.amplitude(pumped, 1.0)
    params = {'g': g, 'gamma32': gamma32, 'gamma_meta': gamma_meta, 'gamma_fast': gamma_fast,
              'photons': photons}
    return _spec('laser-cycle', builder.build(), params, min_events=2, max_events=2,
                 serial_chains=(('lasing', 'metastable'), ('lasing', 'fast')),
                 never_first=('metastable', 'fast'),
                 allowed_sequences=(('lasing', 'metastable'), ('lasing', 'fast')))


def packet_profile(length: int, width: float, center: float, k0: float) -> np.ndarray:
    """Normalized discrete Gaussian with momentum ``k0``; ``width <= 0`` puts it on one site."""
    sites = np.arange(length)
    if width <= 0:
        profile = np.zeros(length, dtype=complex)
        profile[int(round(center))] = 1.0
        return profile
    profile = np.exp(-((sites - center) ** 2) / (2.0 * width ** 2) + 1j * k0 * sites)
    return profile / np.linalg.norm(profile)


def neutron_decay(length: int = 16, hop: float = 1.0, g_decay: float = 0.1,
                  width: t.Optional[float] = None, center: t.Optional[float] = None,
                  k0: float = math.pi / 2) -> ScenarioSpec:
    """
    A neutron packet moving along a lattice that decays at one stochastically chosen site.

    Each site has its own decay component, so inflow follows the packet.
    """
    _require(length >= 2, 'the lattice needs at least two sites')
    width = length / 8 if width is None else width
    center = length / 4 if center is None else center
    _require(0 <= center <= length - 1, 'the packet center must lie on the lattice')
    builder = _GraphBuilder()
    sites = [builder.state(f'n@{j}', tags=(f'site:{j}',)) for j in range(length)]
    products = [builder.state(f'epv@{j}', tags=(f'site:{j}',)) for j in range(length)]
    builder.component('n', sites, realized=True)
    for j, product in enumerate(products):
        builder.component(f'decay:{j}', [product])
    for j in range(length - 1):
        builder.continuous(sites[j], sites[j + 1], -hop)
    for site, product in zip(sites, products):
        builder.gap(site, product, g_decay)
    for site, value in zip(sites, packet_profile(length, width, center, k0)):
        if value != 0:
            builder.amplitude(site, value)
    params = {'length': length, 'hop': hop, 'g_decay': g_decay, 'width': width,
              'center': center, 'k0': k0}
    return _spec('neutron-decay', builder.build(), params, min_events=1, max_events=1,
                 single_support_prefix='site:')


def localization(bubbles: int = 8, g: float = 1.0, gamma: float = 0.3,
                 weights: t.Optional[t.Tuple[float, ...]] = None) -> ScenarioSpec:
    """
    An atom decohered into bubbles that is reduced to one of them when a photon is emitted.

    :arg bubbles: Number of bubbles.
    :arg g: Rabi coupling inside every bubble.
    :arg gamma: Emission gap of every bubble.
    :arg weights: Relative square modulus of the bubbles.  Defaults to ``k + 1`` for bubble ``k``.
    """
    _require(bubbles >= 1, 'need at least one bubble')
    weights = tuple(weights) if weights is not None else tuple(
        float(k + 1) for k in range(bubbles))
    _require(len(weights) == bubbles, f'expected {bubbles} weights, got {len(weights)}')
    _require(all(w > 0 for w in weights), 'bubble weights must be positive')
    total = sum(weights)
    builder = _GraphBuilder()
    atom = []
    emitted = []
    for k in range(bubbles):
        tag = (f'bubble:{k}',)
        ground = builder.state(f'a0@{k}', tags=tag)
        excited = builder.state(f'a1@{k}', tags=tag)
        atom.extend((ground, excited))
        emitted.append(builder.state(f'a0@{k}+ph', tags=tag))
        builder.continuous(ground, excited, g)
        builder.gap(excited, emitted[-1], gamma)
        builder.amplitude(ground, math.sqrt(weights[k] / total))
    builder.component('atom', atom, realized=True)
    for k, state in enumerate(emitted):
        builder.component(f'bubble:{k}', [state])
    return _spec('localization', builder.build(),
                 {'bubbles': bubbles, 'g': g, 'gamma': gamma, 'weights': weights},
                 min_events=1, max_events=1, single_support_prefix='bubble:')


def staged_network(omega0: float = 1.0, g01: float = 0.5, omega1: float = 1.0,
                   g12: float = 0.5, g13: float = 1.0) -> ScenarioSpec:
    """
    Two staged Hamiltonians: S0 leads across one gap into S1, which has two parallel gaps.

    Each stage is a two-state block; its gaps leave from the second member.
    """
    builder = _GraphBuilder()
    s0 = [builder.state('S0a'), builder.state('S0b')]
    s1 = [builder.state('S1a'), builder.state('S1b')]
    s2 = builder.state('S2')
    s3 = builder.state('S3')
    builder.component('S0', s0, realized=True)
    builder.component('S1', s1)
    builder.component('S2', [s2])
    builder.component('S3', [s3])
    builder.continuous(s0[0], s0[1], omega0)
    builder.continuous(s1[0], s1[1], omega1)
    builder.gap(s0[1], s1[0], g01)
    builder.gap(s1[1], s2, g12)
    builder.gap(s1[1], s3, g13)
    builder.amplitude(s0[0], 1.0)
    params = {'omega0': omega0, 'g01': g01, 'omega1': omega1, 'g12': g12, 'g13': g13}
    return _spec('staged-network', builder.build(), params, min_events=2, max_events=2,
                 never_first=('S2', 'S3'), allowed_sequences=(('S1', 'S2'), ('S1', 'S3')))


SCENARIOS: t.Dict[str, t.Callable[..., ScenarioSpec]] = {
    'detector-capture': detector_capture,
    'series-counter': series_counter,
    'parallel-branch': parallel_branch,
    'observer-chain': observer_chain,
    'multi-sequence': multi_sequence,
    'rabi-absorption': rabi_absorption,
    'rabi-emission': rabi_emission,
    'laser-cycle': laser_cycle,
    'neutron-decay': neutron_decay,
    'localization': localization,
    'staged-network': staged_network,
}


#
# Parameters
#


def _param_kind(parameter: inspect.Parameter) -> str:
    annotation = parameter.annotation
    if annotation is int:
        return 'int'
    if annotation is float or annotation == t.Optional[float]:
        return 'float'
    return 'floats'


def parameter_schema(scenario_id: str) -> t.List[t.Tuple[str, str, t.Any]]:
    """Return ``(name, kind, default)`` for every builder parameter of a scenario."""
    signature = inspect.signature(SCENARIOS[scenario_id])
    return [(name, _param_kind(parameter), parameter.default)
            for name, parameter in signature.parameters.items()]


def coerce_params(scenario_id: str, raw: t.Mapping[str, str]) -> t.Dict[str, t.Any]:
    """
    Convert ``NAME=VALUE`` strings into builder arguments.

    :raises ScenarioError: If a name is unknown or a value does not parse.
    """
    kinds = {name: kind for name, kind, _ in parameter_schema(scenario_id)}
    params: t.Dict[str, t.Any] = {}
    for name, text in raw.items():
        if name not in kinds:
            raise ScenarioError(f'{scenario_id} has no parameter {name!r};'
                                f' known: {", ".join(sorted(kinds))}')
        try:
            if kinds[name] == 'int':
                params[name] = int(text)
            elif kinds[name] == 'float':
                params[name] = float(text)
            else:
                params[name] = tuple(float(item) for item in text.split(',') if item.strip())
        except ValueError:
            raise ScenarioError(f'cannot parse {name}={text!r} as {kinds[name]}') from None
    return params


def build_scenario(scenario_id: str, params: t.Optional[t.Mapping[str, t.Any]] = None
                   ) -> ScenarioSpec:
    """
    Build a registered scenario.

    :arg scenario_id: Key of :data:`SCENARIOS`.
    :arg params: Builder arguments.  String values are coerced with :func:`coerce_params`.
    :raises ScenarioError: If the id or a parameter is unknown or invalid.
    """
    if scenario_id not in SCENARIOS:
        raise ScenarioError(f'unknown scenario {scenario_id!r}')
    params = dict(params or {})
    raw = {name: value for name, value in params.items() if isinstance(value, str)}
    params.update(coerce_params(scenario_id, raw))
    try:
        return SCENARIOS[scenario_id](**params)
    except TypeError as e:
        raise ScenarioError(f'{scenario_id}: {e}') from e


#
# Scenario file format
#


_META_KEYS = {
    'min_events': 'minEvents',
    'max_events': 'maxEvents',
    'serial_chains': 'serialChains',
    'never_first': 'neverFirst',
    'allowed_sequences': 'allowedSequences',
    'zero_before_first_hit': 'zeroBeforeFirstHit',
    'single_support_prefix': 'singleSupportPrefix',
    't_max': 'tMax',
    'oracle_mode': 'oracleMode',
}


def _meta_to_dict(meta: ScenarioMeta) -> t.Dict[str, t.Any]:
    def plain(value: t.Any) -> t.Any:
        if isinstance(value, tuple):
            return [plain(item) for item in value]
        return value

    return {key: plain(getattr(meta, name)) for name, key in _META_KEYS.items()}


def scenario_to_dict(spec: ScenarioSpec) -> t.Dict[str, t.Any]:
    """Serialize a scenario into the scenario file structure."""
    graph = spec.graph
    amplitudes = np.asarray(graph.initial_amplitudes, dtype=complex)
    return {
        'id': spec.id,
        'basis': [{'index': state.index, 'label': state.label, 'tags': sorted(state.tags)}
                  for state in graph.basis],
        'components': [{'id': component.id, 'label': component.label,
                        'members': sorted(component.members),
                        'initialStatus': component.initial_status.value}
                       for component in graph.components],
        'diag': [float(energy) for energy in graph.diag],
        'couplings': [{'from': coupling.source, 'to': coupling.target,
                       're': float(complex(coupling.value).real),
                       'im': float(complex(coupling.value).imag),
                       'kind': coupling.kind.value}
                      for coupling in graph.couplings],
        'initialAmplitudes': [{'index': index, 're': float(value.real), 'im': float(value.imag)}
                              for index, value in enumerate(amplitudes) if value != 0],
        'meta': _meta_to_dict(spec.meta),
    }


def scenario_from_dict(data: t.Mapping[str, t.Any], default_id: str = 'file') -> ScenarioSpec:
    """
    Parse the scenario file structure.

    The graph is not validated here; see :func:`check_scenario`.

    :raises ScenarioError: If the structure does not match the schema.
    """
    try:
        model = ScenarioFileModel.parse_obj(data)
    except p.ValidationError as e:
        raise ScenarioError(f'invalid scenario file: {e}') from e

    dim = len(model.basis)
    amplitudes = np.zeros(dim, dtype=complex)
    for entry in model.initial_amplitudes:
        if entry.index >= dim:
            raise ScenarioError(f'initial amplitude for missing basis state {entry.index}')
        amplitudes[entry.index] = complex(entry.re, entry.im)

    def coupling_value(entry: t.Any) -> t.Union[float, complex]:
        return complex(entry.re, entry.im) if entry.im != 0 else entry.re

    graph = SystemGraph(
        basis=tuple(BasisState(index=entry.index, label=entry.label, tags=frozenset(entry.tags))
                    for entry in model.basis),
        components=tuple(Component(id=entry.id, label=entry.label,
                                   members=frozenset(entry.members),
                                   initial_status=ComponentStatus(entry.initial_status))
                         for entry in model.components),
        diag=np.array(model.diag, dtype=float),
        couplings=tuple(Coupling(entry.from_, entry.to, coupling_value(entry),
                                 CouplingKind(entry.kind))
                        for entry in model.couplings),
        initial_amplitudes=amplitudes,
    )
    if model.meta is None:
        meta = ScenarioMeta(t_max=default_t_max(graph))
    else:
        fields = model.meta.dict()
        meta = ScenarioMeta(
            min_events=fields['min_events'],
            max_events=fields['max_events'],
            serial_chains=tuple(tuple(chain) for chain in fields['serial_chains']),
            never_first=tuple(fields['never_first']),
            allowed_sequences=(None if fields['allowed_sequences'] is None
                               else tuple(tuple(seq) for seq in fields['allowed_sequences'])),
            zero_before_first_hit=tuple(fields['zero_before_first_hit']),
            single_support_prefix=fields['single_support_prefix'],
            t_max=fields['t_max'],
            oracle_mode=fields['oracle_mode'],
        )
    return ScenarioSpec(id=model.id or default_id, graph=graph, meta=meta)


def load_scenario(path: str) -> ScenarioSpec:
    '''Read a scenario file.  The id defaults to the file name without extension.'''
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ScenarioError(f'cannot read scenario file {path}: {e}') from e
    return scenario_from_dict(data, default_id=os.path.splitext(os.path.basename(path))[0])


def dump_scenario(spec: ScenarioSpec, path: t.Optional[str] = None) -> str:
    text = json.dumps(scenario_to_dict(spec), indent=2) + '\n'
    if path is not None:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    return text


def check_meta_references(spec: ScenarioSpec) -> t.List[Violation]:
    """Report meta assertions that name components or tags the graph does not have."""
    labels = {component.label for component in spec.graph.components}
    tags = spec.graph.all_tags()
    meta = spec.meta
    violations = []
    named = set(meta.never_first)
    for chain in meta.serial_chains:
        named.update(chain)
    for sequence in meta.allowed_sequences or ():
        named.update(sequence)
    for label in sorted(named - labels):
        violations.append(Violation('meta-unknown-component',
                                    f'meta refers to unknown component {label!r}'))
    for tag in sorted(set(meta.zero_before_first_hit) - tags):
        violations.append(Violation('meta-unknown-tag', f'meta refers to unknown tag {tag!r}'))
    if meta.single_support_prefix is not None and not any(
            tag.startswith(meta.single_support_prefix) for tag in tags):
        violations.append(Violation(
            'meta-unknown-tag', f'no tag starts with {meta.single_support_prefix!r}'))
    if meta.max_events is not None and meta.max_events < meta.min_events:
        violations.append(Violation('meta-event-bounds', 'maxEvents is below minEvents'))
    return violations


def check_scenario(spec: ScenarioSpec) -> t.List[Violation]:
    return list(validate(spec.graph).violations) + check_meta_references(spec)


def resolve_scenario(ref: str, params: t.Optional[t.Mapping[str, t.Any]] = None
                     ) -> ScenarioSpec:
    """
    Turn a scenario id or a scenario file name into a validated scenario.

    :arg ref: A registered id or the path of a scenario file.
    :arg params: Builder arguments.  Only allowed with registered ids.
    :raises ScenarioError: If the reference cannot be resolved.
    :raises InvalidScenarioError: If the scenario does not validate.
    """
    if ref in SCENARIOS:
        spec = build_scenario(ref, params)
    elif os.path.isfile(ref):
        if params:
            raise ScenarioError('--param can only be used with registered scenario ids')
        spec = load_scenario(ref)
    else:
        raise ScenarioError(f'{ref!r} is neither a registered scenario nor a file;'
                            f' known scenarios: {", ".join(SCENARIOS)}')
    violations = check_scenario(spec)
    if violations:
        raise InvalidScenarioError(spec.id, [violation.code for violation in violations])
    return spec


#
# Commands
#


def validate_command() -> int:
    '''CLI functionality for validating a scenario file.'''
    flog = mlog.fields(func='validate_command')
    app_ctx = app_context.app_ctx.get()
    path: str = app_ctx.extra['scenario_file']

    spec = load_scenario(path)
    violations = check_scenario(spec)
    for violation in violations:
        print(f'{path}: {violation.code}: {violation.message}')
    flog.fields(scenario=spec.id, violations=len(violations)).info('Validated scenario')
    if violations:
        return 2
    print(f'{path}: ok')
    return 0


def list_scenarios_command() -> int:
    '''CLI functionality for listing the registered scenarios and their parameters.'''
    for scenario_id in SCENARIOS:
        params = ', '.join(f'{name}: {kind} = {default!r}'
                           for name, kind, default in parameter_schema(scenario_id))
        print(f'{scenario_id} ({params})')
    return 0


def dump_scenario_command() -> int:
    '''CLI functionality for writing a registered scenario as a scenario file.'''
    app_ctx = app_context.app_ctx.get()
    spec = build_scenario(app_ctx.extra['scenario'], app_ctx.extra['params'])
    text = dump_scenario(spec, app_ctx.extra['out'])
    if app_ctx.extra['out'] is None:
        print(text, end='')
    return 0
