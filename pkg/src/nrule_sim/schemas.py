# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""Schemas for scenario files."""

import typing as t

import pydantic as p


class BaseModel(p.BaseModel):
    class Config:
        extra = p.Extra.forbid
        allow_population_by_field_name = True


class BasisStateModel(BaseModel):
    index: p.conint(ge=0)  # type: ignore[valid-type]
    label: str
    tags: t.List[str] = []


class ComponentModel(BaseModel):
    id: int
    label: str
    members: t.List[p.conint(ge=0)]  # type: ignore[valid-type]
    initial_status: str = p.Field('dormant', alias='initialStatus')

    # pylint:disable=no-self-argument
    @p.validator('initial_status')
    def check_status(cls, value: str) -> str:
        if value not in ('realized', 'ready', 'phantom', 'dormant'):
            raise ValueError(f'unknown component status {value!r}')
        return value


class CouplingModel(BaseModel):
    from_: p.conint(ge=0) = p.Field(..., alias='from')  # type: ignore[valid-type]
    to: p.conint(ge=0)  # type: ignore[valid-type]
    re: float
    im: float = 0.0
    kind: str = 'continuous'

    # pylint:disable=no-self-argument
    @p.validator('kind')
    def check_kind(cls, value: str) -> str:
        if value not in ('continuous', 'gap'):
            raise ValueError(f'unknown coupling kind {value!r}')
        return value


class AmplitudeModel(BaseModel):
    index: p.conint(ge=0)  # type: ignore[valid-type]
    re: float
    im: float = 0.0


class ScenarioMetaModel(BaseModel):
    min_events: p.conint(ge=0) = p.Field(0, alias='minEvents')  # type: ignore[valid-type]
    max_events: t.Optional[p.conint(ge=0)] = p.Field(  # type: ignore[valid-type]
        None, alias='maxEvents')
    serial_chains: t.List[t.List[str]] = p.Field([], alias='serialChains')
    never_first: t.List[str] = p.Field([], alias='neverFirst')
    allowed_sequences: t.Optional[t.List[t.List[str]]] = p.Field(None, alias='allowedSequences')
    zero_before_first_hit: t.List[str] = p.Field([], alias='zeroBeforeFirstHit')
    single_support_prefix: t.Optional[str] = p.Field(None, alias='singleSupportPrefix')
    t_max: p.confloat(gt=0) = p.Field(50.0, alias='tMax')  # type: ignore[valid-type]
    oracle_mode: str = p.Field('race', alias='oracleMode')

    # pylint:disable=no-self-argument
    @p.validator('oracle_mode')
    def check_oracle_mode(cls, value: str) -> str:
        if value not in ('unitary', 'race', 'closed-form', 'modulus'):
            raise ValueError(f'unknown oracle mode {value!r}')
        return value


class ScenarioFileModel(BaseModel):
    id: t.Optional[str] = None
    basis: t.List[BasisStateModel]
    components: t.List[ComponentModel]
    diag: t.List[float]
    couplings: t.List[CouplingModel] = []
    initial_amplitudes: t.List[AmplitudeModel] = p.Field(..., alias='initialAmplitudes')
    meta: t.Optional[ScenarioMetaModel] = None
