# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""
Logging for nrule_sim.

Library code binds ``mlog = log.fields(mod=__name__)`` and logs through it.  Nothing is emitted
until an application calls :func:`initialize_app_logging` and configures twiggy emitters.
"""

import os

import twiggy  # type: ignore[import]


#: The logger used by all nrule_sim modules.
log = twiggy.log.name('nrule_sim')
log.min_level = twiggy.levels.DISABLED


def initialize_app_logging() -> None:
    """
    Enable the nrule_sim logger for use by an application.

    Setting ``NRULE_SIM_EARLY_DEBUG`` in the environment sends debug output to stderr right away,
    before any config file has been read.
    """
    log.min_level = twiggy.levels.DEBUG
    if os.environ.get('NRULE_SIM_EARLY_DEBUG', False):
        twiggy.quick_setup(min_level=twiggy.levels.DEBUG)
