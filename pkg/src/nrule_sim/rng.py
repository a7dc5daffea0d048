# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""Per-trial random streams derived from a master seed."""

import numpy as np


def trial_generator(master_seed: int, trial: int) -> np.random.Generator:
    '''
    Return the random generator for one trial.

    Streams are Philox (counter based) keyed by ``SeedSequence(master_seed, spawn_key=(trial,))``,
    so a trial draws the same numbers no matter which worker runs it or in which order.
    '''
    if master_seed < 0 or trial < 0:
        raise ValueError('seed and trial index must not be negative')
    sequence = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    return np.random.Generator(np.random.Philox(sequence))
