"""Compact model of a single SOT-MRAM cell.

The MTJ resistance depends on the relative magnetization angle between the
free and pinned layers and on the bias-dependent tunneling magnetoresistance.
All quantities are SI (meters, ohms, volts, siemens).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class MagState(enum.IntEnum):
    """Free-layer orientation relative to the pinned layer."""

    P = 0
    AP = 1

    @property
    def theta(self) -> float:
        return 0.0 if self is MagState.P else math.pi

    def flipped(self) -> "MagState":
        return MagState.AP if self is MagState.P else MagState.P


@dataclass(frozen=True)
class DeviceParams:
    mtj_length: float = 50e-9
    mtj_width: float = 30e-9
    hm_length: float = 100e-9
    hm_width: float = 50e-9
    hm_thickness: float = 3e-9
    ra_product: float = 10e-12  # ohm*m^2 (10 ohm*um^2)
    v0: float = 0.65
    tmr0: float = 100.0
    # kept for completeness; the TMR bias formula has no temperature term
    temperature: float = 300.0

    def __post_init__(self):
        for name in ("mtj_length", "mtj_width", "hm_length", "hm_width",
                     "hm_thickness", "ra_product", "v0", "tmr0", "temperature"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"DeviceParams.{name} must be a positive finite number, got {value!r}")

    @property
    def hm_volume(self) -> float:
        return self.hm_length * self.hm_width * self.hm_thickness


@dataclass(frozen=True)
class MtjCell:
    params: DeviceParams = field(default_factory=DeviceParams)
    state: MagState = MagState.P

    def with_state(self, state: MagState) -> "MtjCell":
        return MtjCell(self.params, MagState(state))


def mtj_area(params: DeviceParams) -> float:
    """Elliptical junction area l * w * pi / 4."""
    return params.mtj_length * params.mtj_width * math.pi / 4


def base_resistance(params: DeviceParams) -> float:
    """Parallel-state resistance RA / area."""
    return params.ra_product / mtj_area(params)


def tmr(params: DeviceParams, v_bias):
    """Bias-dependent TMR ratio, (tmr0/100) / (1 + (v/v0)^2).

    Accepts scalars or numpy arrays.
    """
    ratio = (params.tmr0 / 100.0) / (1.0 + (np.asarray(v_bias, dtype=float) / params.v0) ** 2)
    return ratio if ratio.ndim else float(ratio)


def _angle_formula(r_mtj, ratio, theta):
    return 2.0 * r_mtj * (1.0 + ratio) / (2.0 + ratio * (1.0 + np.cos(theta)))


def resistance_at_angle(params: DeviceParams, theta: float, v_bias: float = 0.0) -> float:
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    return float(_angle_formula(base_resistance(params), tmr(params, v_bias), theta))


def state_resistance(params: DeviceParams, state, v_bias=0.0):
    """Resistance for a state (or integer array of states) at the given bias.

    P evaluates to R_MTJ exactly and AP to R_MTJ * (1 + TMR); the general
    angle formula reduces to these at theta = 0 and pi, and the closed forms
    avoid the rounding the cosine would introduce.
    """
    r_mtj = base_resistance(params)
    r = np.where(np.asarray(state) == MagState.AP, r_mtj * (1.0 + np.asarray(tmr(params, v_bias))), r_mtj)
    return r if r.ndim else float(r)


def resistance(cell: MtjCell, v_bias: float = 0.0) -> float:
    return state_resistance(cell.params, cell.state, v_bias)


def conductance(cell: MtjCell, v_bias: float = 0.0) -> float:
    return 1.0 / resistance(cell, v_bias)


def state_conductance(params: DeviceParams, state, v_bias=0.0):
    return 1.0 / state_resistance(params, state, v_bias)
