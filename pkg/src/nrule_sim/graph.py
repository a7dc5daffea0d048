# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""
Component/gap graph of a closed system.

A :class:`SystemGraph` is the static topology of a scenario: basis states, the components they are
grouped into, the real diagonal energies, and the couplings between basis states.  Couplings are
angular frequencies (hbar = 1); a coupling from ``n`` to ``m`` with value ``v`` is the matrix element
``H[m][n] = v``.  Continuous couplings are listed in both directions; a gap is listed once, in its
irreversible direction.
"""

import dataclasses
import enum
import typing as t
from collections import deque
from functools import cached_property

import numpy as np

from .errors import GraphError


#: Absolute tolerance used when checking that the continuous block is Hermitian.
HERMITIAN_ATOL = 1e-12


class ComponentStatus(enum.Enum):
    REALIZED = 'realized'
    READY = 'ready'
    PHANTOM = 'phantom'
    DORMANT = 'dormant'


class CouplingKind(enum.Enum):
    CONTINUOUS = 'continuous'
    # Irreversible and discontinuous.
    GAP = 'gap'


StatusMap = t.Dict[int, ComponentStatus]

#: Statuses whose members take part in the truncated dynamics.
ACTIVE_STATUSES = frozenset((ComponentStatus.REALIZED, ComponentStatus.READY))


@dataclasses.dataclass(frozen=True)
class BasisState:
    index: int
    label: str
    tags: t.FrozenSet[str] = frozenset()


@dataclasses.dataclass(frozen=True)
class Component:
    id: int
    label: str
    members: t.FrozenSet[int]
    initial_status: ComponentStatus = ComponentStatus.DORMANT


@dataclasses.dataclass(frozen=True)
class Coupling:
    source: int
    target: int
    value: complex
    kind: CouplingKind = CouplingKind.CONTINUOUS


@dataclasses.dataclass(frozen=True, eq=False)
class SystemGraph:
    """
    Immutable topology of a scenario.

    ``diag`` holds one real energy per basis state and ``initial_amplitudes`` one complex amplitude
    per basis state.  The graph is shared read-only between trajectories.
    """

    basis: t.Tuple[BasisState, ...]
    components: t.Tuple[Component, ...]
    diag: np.ndarray
    couplings: t.Tuple[Coupling, ...]
    initial_amplitudes: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.basis)

    @cached_property
    def components_by_id(self) -> t.Dict[int, Component]:
        return {component.id: component for component in self.components}

    @cached_property
    def component_of(self) -> t.Dict[int, int]:
        """Map basis index to the id of the component holding it."""
        owner: t.Dict[int, int] = {}
        for component in self.components:
            for member in component.members:
                owner.setdefault(member, component.id)
        return owner

    @cached_property
    def gap_targets(self) -> t.Dict[int, t.FrozenSet[int]]:
        """Map component id to the ids of components its gap couplings lead into."""
        targets: t.Dict[int, t.Set[int]] = {component.id: set() for component in self.components}
        owner = self.component_of
        for coupling in self.couplings:
            if coupling.kind is not CouplingKind.GAP:
                continue
            source = owner.get(coupling.source)
            target = owner.get(coupling.target)
            if source is None or target is None or source == target:
                continue
            targets[source].add(target)
        return {cid: frozenset(ids) for cid, ids in targets.items()}

    @property
    def initial_realized(self) -> t.FrozenSet[int]:
        return frozenset(component.id for component in self.components
                         if component.initial_status is ComponentStatus.REALIZED)

    def initial_statuses(self) -> StatusMap:
        return {component.id: component.initial_status for component in self.components}

    def members(self, component_id: int) -> t.List[int]:
        return sorted(self.components_by_id[component_id].members)

    def label_of(self, component_id: int) -> str:
        return self.components_by_id[component_id].label

    def component_by_label(self, label: str) -> Component:
        for component in self.components:
            if component.label == label:
                return component
        raise GraphError(f'No component labelled {label!r}')

    def indices_with_tag(self, tag: str) -> t.List[int]:
        return [state.index for state in self.basis if tag in state.tags]

    def all_tags(self) -> t.FrozenSet[str]:
        return frozenset(tag for state in self.basis for tag in state.tags)

    def continuous_matrix(self) -> np.ndarray:
        """Diagonal energies plus all continuous couplings as a dense matrix."""
        matrix = np.diag(np.asarray(self.diag, dtype=complex))
        for coupling in self.couplings:
            if coupling.kind is CouplingKind.CONTINUOUS:
                matrix[coupling.target, coupling.source] += coupling.value
        return matrix


@dataclasses.dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    violations: t.Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> t.List[str]:
        return [violation.code for violation in self.violations]


def _check_basis(graph: SystemGraph) -> t.List[Violation]:
    violations = []
    indices = [state.index for state in graph.basis]
    if sorted(indices) != list(range(len(indices))):
        violations.append(Violation('basis-index',
                                    'basis indices must be dense 0..D-1 and unique'))
    dim = len(indices)
    if np.shape(graph.diag) != (dim,):
        violations.append(Violation('diag-length', f'diag must hold {dim} energies'))
    if np.shape(graph.initial_amplitudes) != (dim,):
        violations.append(Violation('amplitude-length',
                                    f'initialAmplitudes must hold {dim} values'))
    for coupling in graph.couplings:
        if not (0 <= coupling.source < dim and 0 <= coupling.target < dim):
            violations.append(Violation(
                'coupling-index',
                f'coupling {coupling.source}->{coupling.target} refers to a missing basis state'))
    return violations


def _check_membership(graph: SystemGraph) -> t.List[Violation]:
    violations = []
    ids = [component.id for component in graph.components]
    if len(set(ids)) != len(ids):
        violations.append(Violation('component-id', 'component ids must be unique'))

    seen: t.Dict[int, int] = {}
    for component in graph.components:
        if not component.members:
            violations.append(Violation('empty-component',
                                        f'component {component.label} has no members'))
        for member in component.members:
            if member in seen:
                violations.append(Violation(
                    'overlapping-membership',
                    f'basis state {member} belongs to components {seen[member]} and'
                    f' {component.id}'))
            else:
                seen[member] = component.id
    missing = set(range(graph.dimension)) - set(seen)
    if missing:
        violations.append(Violation('uncovered-basis',
                                    f'basis states {sorted(missing)} belong to no component'))
    return violations


def _check_couplings(graph: SystemGraph) -> t.List[Violation]:
    violations = []
    owner = graph.component_of
    matrix = graph.continuous_matrix()
    if not np.allclose(matrix, matrix.conj().T, rtol=0.0, atol=HERMITIAN_ATOL):
        violations.append(Violation('non-hermitian',
                                    'continuous couplings and diagonal are not Hermitian'))
    for coupling in graph.couplings:
        source = owner.get(coupling.source)
        target = owner.get(coupling.target)
        if source is None or target is None:
            continue
        if coupling.kind is CouplingKind.GAP and source == target:
            violations.append(Violation(
                'internal-gap',
                f'gap {coupling.source}->{coupling.target} lies inside component'
                f' {graph.label_of(source)}'))
        elif coupling.kind is CouplingKind.CONTINUOUS and source != target:
            violations.append(Violation(
                'continuous-cross-component',
                f'continuous coupling {coupling.source}->{coupling.target} joins components'
                f' {graph.label_of(source)} and {graph.label_of(target)}'))
    return violations


def _check_statuses(graph: SystemGraph) -> t.List[Violation]:
    violations = []
    initial = graph.initial_statuses()
    if not graph.initial_realized:
        return [Violation('no-realized', 'no component is initially realized')]

    amplitudes = np.asarray(graph.initial_amplitudes)
    for component in graph.components:
        if component.initial_status is ComponentStatus.REALIZED:
            continue
        if any(amplitudes[m] != 0 for m in component.members if m < len(amplitudes)):
            violations.append(Violation(
                'amplitude-on-inactive',
                f'{component.initial_status.value} component {component.label} carries initial'
                ' amplitude'))
    if not np.any(amplitudes != 0):
        violations.append(Violation('zero-initial-amplitude', 'all initial amplitudes are zero'))

    expected = classify(graph, {
        cid: ComponentStatus.DORMANT if status is ComponentStatus.READY else status
        for cid, status in initial.items()})
    for cid, status in initial.items():
        if status is ComponentStatus.READY and expected[cid] is not ComponentStatus.READY:
            violations.append(Violation(
                'ready-not-adjacent',
                f'component {graph.label_of(cid)} is declared ready but no gap leads into it'
                ' from a realized component'))
        elif status is ComponentStatus.DORMANT and expected[cid] is ComponentStatus.READY:
            violations.append(Violation(
                'dormant-adjacent',
                f'component {graph.label_of(cid)} is declared dormant but a gap leads into it'
                ' from a realized component'))
    return violations


def _check_reachability(graph: SystemGraph) -> t.List[Violation]:
    neighbours: t.Dict[int, t.Set[int]] = {component.id: set() for component in graph.components}
    owner = graph.component_of
    for coupling in graph.couplings:
        source = owner.get(coupling.source)
        target = owner.get(coupling.target)
        if source is None or target is None:
            continue
        neighbours[source].add(target)
        if coupling.kind is CouplingKind.CONTINUOUS:
            neighbours[target].add(source)

    reached = set(graph.initial_realized)
    queue = deque(reached)
    while queue:
        for nxt in neighbours[queue.popleft()]:
            if nxt not in reached:
                reached.add(nxt)
                queue.append(nxt)
    return [Violation('unreachable-component',
                      f'component {component.label} cannot be reached from the initial state')
            for component in graph.components if component.id not in reached]


def validate(graph: SystemGraph) -> ValidationReport:
    """
    Check a graph for structural consistency.

    :arg graph: The graph to check.
    :returns: A :class:`ValidationReport`.  Problems are reported, never raised.
    """
    violations = _check_basis(graph)
    if violations:
        # Index problems make the remaining checks meaningless.
        return ValidationReport(tuple(violations))
    violations.extend(_check_membership(graph))
    if violations:
        return ValidationReport(tuple(violations))
    violations.extend(_check_couplings(graph))
    violations.extend(_check_statuses(graph))
    violations.extend(_check_reachability(graph))
    return ValidationReport(tuple(violations))


def classify(graph: SystemGraph, statuses: t.Mapping[int, ComponentStatus]) -> StatusMap:
    """
    Promote dormant components that a realized component reaches across a gap.

    Realized and phantom components are fixed points; dormant components beyond the next gap stay
    dormant, so the solution is carried up to but not beyond the next ready components.

    :arg graph: The system graph.
    :arg statuses: Current status of every component.
    :returns: A new status map.
    :raises GraphError: If no component is realized.
    """
    if not any(status is ComponentStatus.REALIZED for status in statuses.values()):
        raise GraphError('classify needs at least one realized component')

    result = dict(statuses)
    for cid, status in statuses.items():
        if status is not ComponentStatus.REALIZED:
            continue
        for target in graph.gap_targets.get(cid, ()):
            if result.get(target) is ComponentStatus.DORMANT:
                result[target] = ComponentStatus.READY
    return result


def ready_components(statuses: t.Mapping[int, ComponentStatus]) -> t.List[int]:
    return sorted(cid for cid, status in statuses.items() if status is ComponentStatus.READY)


def active_indices(graph: SystemGraph, statuses: t.Mapping[int, ComponentStatus]) -> np.ndarray:
    """Sorted basis indices of realized and ready members."""
    members = [member for cid, status in statuses.items() if status in ACTIVE_STATUSES
               for member in graph.components_by_id[cid].members]
    return np.array(sorted(members), dtype=int)
