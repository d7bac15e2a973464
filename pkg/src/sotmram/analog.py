"""Behavioral circuit models: sigmoidal neuron, differential synapse, crossbar layer.

The crossbar stores each synapse as a pair of MTJ states. A pair in states
(P, AP) encodes +1 and (AP, P) encodes -1. Row currents are summed by a
differential transimpedance amplifier whose output rides on the neuron's
inverter midpoint, so a zero net current drives the neuron to 0.5.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .device import DeviceParams, MagState, MtjCell, conductance, state_conductance

DEFAULT_READ_VOLTAGE = 0.1
DEFAULT_BARE_GAIN = 40.0


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class SynapsePair:
    cell_plus: MtjCell
    cell_minus: MtjCell

    @classmethod
    def for_weight(cls, weight: int, params: DeviceParams | None = None) -> "SynapsePair":
        params = params or DeviceParams()
        plus, minus = weight_to_states(weight)
        return cls(MtjCell(params, plus), MtjCell(params, minus))

    @property
    def weight(self) -> int:
        return states_to_weight(self.cell_plus.state, self.cell_minus.state)


def weight_to_states(weight: int) -> tuple[MagState, MagState]:
    if weight == 1:
        return MagState.P, MagState.AP
    if weight == -1:
        return MagState.AP, MagState.P
    raise ValueError(f"binary weight must be -1 or +1, got {weight!r}")


def states_to_weight(plus: MagState, minus: MagState) -> int:
    """Sign encoded by a pair; 0 if both cells share a state."""
    return int(minus) - int(plus)


@dataclass(frozen=True)
class NeuronCircuit:
    """2T-2R neuron: a P/AP divider in front of a CMOS inverter.

    ``bare_gain`` is the logistic gain of the inverter alone, expressed so that
    its VTC is ``vdd * logistic(-bare_gain * (v - midpoint) / vdd)``.
    """

    params: DeviceParams = field(default_factory=DeviceParams)
    vdd: float = 0.8
    vss: float = 0.0
    inverter_midpoint: float | None = None
    bare_gain: float = DEFAULT_BARE_GAIN
    cell_p: MtjCell | None = None
    cell_ap: MtjCell | None = None

    def __post_init__(self):
        if self.inverter_midpoint is None:
            object.__setattr__(self, "inverter_midpoint", (self.vdd + self.vss) / 2)
        if self.cell_p is None:
            object.__setattr__(self, "cell_p", MtjCell(self.params, MagState.P))
        if self.cell_ap is None:
            object.__setattr__(self, "cell_ap", MtjCell(self.params, MagState.AP))
        if self.cell_p.state is not MagState.P or self.cell_ap.state is not MagState.AP:
            raise ValueError("neuron requires its first cell in P and its second in AP")
        if not self.vss < self.inverter_midpoint < self.vdd:
            raise ValueError("inverter midpoint must lie strictly between vss and vdd")
        if not self.bare_gain > 0:
            raise ValueError("inverter gain must be positive")

    @property
    def divider_factor(self) -> float:
        """Fraction of an input swing that reaches the inverter gate."""
        g_p = conductance(self.cell_p)
        g_ap = conductance(self.cell_ap)
        return g_p / (g_p + g_ap)

    @property
    def inverter_gain(self) -> float:
        """Composite (divider + inverter) gain seen from the neuron input."""
        return self.bare_gain * self.divider_factor


@dataclass(frozen=True)
class DiffAmpParams:
    transimpedance_gain: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.transimpedance_gain) and self.transimpedance_gain > 0):
            raise ValueError("transimpedance gain must be positive and finite")


@dataclass
class CrossbarLayer:
    """One MLP layer realized as an array of synapse pairs plus a bias column.

    States are held as int8 arrays of :class:`MagState` values; ``plus`` and
    ``minus`` have shape (out_nodes, in_nodes).
    """

    plus: np.ndarray
    minus: np.ndarray
    bias_plus: np.ndarray
    bias_minus: np.ndarray
    neurons: list[NeuronCircuit]
    params: DeviceParams = field(default_factory=DeviceParams)
    read_voltage_full_scale: float = DEFAULT_READ_VOLTAGE
    amp: DiffAmpParams = field(default_factory=DiffAmpParams)
    nonideal_tmr_bias: bool = False

    def __post_init__(self):
        self.plus = np.asarray(self.plus, dtype=np.int8)
        self.minus = np.asarray(self.minus, dtype=np.int8)
        self.bias_plus = np.asarray(self.bias_plus, dtype=np.int8)
        self.bias_minus = np.asarray(self.bias_minus, dtype=np.int8)
        if self.plus.ndim != 2 or self.plus.shape != self.minus.shape:
            raise ValueError("synapse grid must be a rectangular (out, in) pair of arrays")
        out_nodes = self.plus.shape[0]
        if self.bias_plus.shape != (out_nodes,) or self.bias_minus.shape != (out_nodes,):
            raise ValueError("bias column length must equal the row count")
        if len(self.neurons) != out_nodes:
            raise ValueError("one neuron per row is required")
        if not self.read_voltage_full_scale > 0:
            raise ValueError("read voltage must be positive")

    @classmethod
    def blank(cls, in_nodes: int, out_nodes: int, params: DeviceParams | None = None,
              read_voltage: float = DEFAULT_READ_VOLTAGE, nonideal: bool = False,
              neuron: NeuronCircuit | None = None) -> "CrossbarLayer":
        """Freshly fabricated layer with every pair holding weight +1, calibrated."""
        params = params or DeviceParams()
        neuron = neuron or NeuronCircuit(params)
        layer = cls(
            plus=np.full((out_nodes, in_nodes), MagState.P, dtype=np.int8),
            minus=np.full((out_nodes, in_nodes), MagState.AP, dtype=np.int8),
            bias_plus=np.full(out_nodes, MagState.P, dtype=np.int8),
            bias_minus=np.full(out_nodes, MagState.AP, dtype=np.int8),
            neurons=[neuron] * out_nodes,
            params=params,
            read_voltage_full_scale=read_voltage,
            nonideal_tmr_bias=nonideal,
        )
        return calibrate_neuron(layer)

    @property
    def out_nodes(self) -> int:
        return self.plus.shape[0]

    @property
    def in_nodes(self) -> int:
        return self.plus.shape[1]

    def synapse(self, row: int, col: int) -> SynapsePair:
        return SynapsePair(MtjCell(self.params, MagState(int(self.plus[row, col]))),
                           MtjCell(self.params, MagState(int(self.minus[row, col]))))

    def bias_synapse(self, row: int) -> SynapsePair:
        return SynapsePair(MtjCell(self.params, MagState(int(self.bias_plus[row]))),
                           MtjCell(self.params, MagState(int(self.bias_minus[row]))))

    def sign_matrix(self) -> np.ndarray:
        """Decoded weights in {-1, 0, +1}; 0 marks a pair with equal states."""
        return self.minus.astype(np.int64) - self.plus.astype(np.int64)

    def sign_bias(self) -> np.ndarray:
        return self.bias_minus.astype(np.int64) - self.bias_plus.astype(np.int64)


def _check_inputs(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1) or np.any(np.isnan(x)):
        raise ValueError("normalized inputs must lie in [0, 1]")
    return x


def synapse_current(pair: SynapsePair, x: float, v_full: float = DEFAULT_READ_VOLTAGE,
                    nonideal: bool = False) -> float:
    """Signed differential read current I+ - I- for one pair."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"normalized input must lie in [0, 1], got {x}")
    v = x * v_full
    v_bias = v if nonideal else 0.0
    return v * (conductance(pair.cell_plus, v_bias) - conductance(pair.cell_minus, v_bias))


def input_transfer(layer: CrossbarLayer, x) -> np.ndarray:
    """Per-input current magnitude x*v*(G_P - G_AP(x*v)) of a +1 pair.

    A pair with sign s in {-1, 0, +1} draws exactly ``s`` times this current,
    whatever the read bias, because the P conductance has no bias dependence.
    """
    v = np.asarray(x, dtype=float) * layer.read_voltage_full_scale
    v_bias = v if layer.nonideal_tmr_bias else np.zeros_like(v)
    g_p = state_conductance(layer.params, MagState.P)
    g_ap = state_conductance(layer.params, np.full(v.shape, MagState.AP), v_bias)
    return v * (g_p - g_ap)


def row_currents(layer: CrossbarLayer, x) -> np.ndarray:
    """Net differential current per row, for one input vector or a batch."""
    x = _check_inputs(x)
    if x.shape[-1] != layer.in_nodes:
        raise ValueError(f"expected {layer.in_nodes} inputs, got {x.shape[-1]}")
    bias_current = input_transfer(layer, 1.0)
    return input_transfer(layer, x) @ layer.sign_matrix().T + bias_current * layer.sign_bias()


def row_output(layer: CrossbarLayer, row: int, x) -> float:
    """Differential amplifier output for one row, relative to its common-mode level."""
    return layer.amp.transimpedance_gain * row_currents(layer, x)[..., row]


def neuron_transfer(n: NeuronCircuit, v_in):
    """Normalized neuron output in (0, 1); decreasing, 0.5 at the midpoint."""
    return expit(-n.inverter_gain * (np.asarray(v_in, dtype=float) - n.inverter_midpoint) / n.vdd)


def neuron_vtc_divider(n: NeuronCircuit, v_in):
    """Gate voltage and output voltage of the divider-loaded inverter."""
    g_p = conductance(n.cell_p)
    g_ap = conductance(n.cell_ap)
    v_in = np.asarray(v_in, dtype=float)
    v_gate = (v_in * g_p + n.inverter_midpoint * g_ap) / (g_p + g_ap)
    v_out = n.vdd * expit(-n.bare_gain * (v_gate - n.inverter_midpoint) / n.vdd)
    return v_gate, v_out


def bare_inverter_vtc(n: NeuronCircuit, v_in):
    return n.vdd * expit(-n.bare_gain * (np.asarray(v_in, dtype=float) - n.inverter_midpoint) / n.vdd)


def calibrate_neuron(layer: CrossbarLayer, reference: SynapsePair | None = None) -> CrossbarLayer:
    """Set the amplifier gain so one unit of weighted input is one unit of logit.

    After calibration a single +1 synapse at full-scale input shifts the neuron's
    logistic argument by exactly -1, so in the ideal case the layer computes
    ``logistic(-(W x + b))``.
    """
    reference = reference or SynapsePair.for_weight(1, layer.params)
    delta_g = conductance(reference.cell_plus) - conductance(reference.cell_minus)
    if delta_g == 0:
        raise CalibrationError("reference synapse has zero conductance difference")
    n = layer.neurons[0]
    if any(m.inverter_gain != n.inverter_gain or m.vdd != n.vdd for m in layer.neurons):
        raise CalibrationError("neurons in one layer must share gain and supply")
    gain = n.vdd / (n.inverter_gain * layer.read_voltage_full_scale * abs(delta_g))
    return dataclasses.replace(layer, amp=DiffAmpParams(gain))


def layer_forward(layer: CrossbarLayer, x) -> np.ndarray:
    """Analog evaluation of the whole layer (one vector or an (N, in) batch)."""
    v_diff = layer.amp.transimpedance_gain * row_currents(layer, x)
    gains = np.array([n.inverter_gain / n.vdd for n in layer.neurons])
    mids = np.array([n.inverter_midpoint for n in layer.neurons])
    # amplifier output common mode sits at each neuron's midpoint
    v_in = mids + v_diff
    return expit(-gains * (v_in - mids))
