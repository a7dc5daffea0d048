# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""Exceptions raised by nrule_sim."""

import typing as t


class NRuleError(Exception):
    """Base class for all nrule_sim errors."""


class GraphError(NRuleError):
    """A system graph or a status map was used in a way its topology does not allow."""


class ScenarioError(NRuleError):
    """Unknown scenario, bad builder parameters, or a scenario file rejected by the schema."""


class InvalidScenarioError(ScenarioError):
    """A scenario graph or its metadata failed validation."""

    def __init__(self, scenario: str, codes: t.Sequence[str]):
        super().__init__(scenario, tuple(codes))
        self.scenario = scenario
        self.codes = tuple(codes)

    def __str__(self) -> str:
        return f'scenario {self.scenario} failed validation: {", ".join(self.codes)}'


class NumericalError(NRuleError):
    """The integrator could not meet its tolerance, or a state degenerated."""


class OracleError(NRuleError):
    """An oracle could not produce a result with the requested accuracy."""


class TrialError(NRuleError):
    """
    A single ensemble trial failed.

    The arguments are kept in ``args`` so the exception survives pickling across worker processes.
    """

    def __init__(self, trial: int, message: str, numerical: bool = False):
        super().__init__(trial, message, numerical)
        self.trial = trial
        self.message = message
        self.numerical = numerical

    def __str__(self) -> str:
        return f'trial {self.trial}: {self.message}'
