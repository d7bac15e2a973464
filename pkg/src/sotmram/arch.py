"""Crossbar controller: control signalling, programming, cycle accounting, bookkeeping."""
from __future__ import annotations

import dataclasses
import enum
import threading
from dataclasses import dataclass, field

import numpy as np

from .analog import CrossbarLayer, NeuronCircuit, calibrate_neuron, layer_forward
from .device import DeviceParams, MagState

GPU_CYCLES_PER_IMAGE = 1e5
NEURON_POWER = 64e-6  # W
NEURON_AREA = 0.02e-12  # m^2


class Level(str, enum.Enum):
    VDD = "VDD"
    GND = "GND"
    HIZ = "Hi-Z"
    VIN = "VIN"


class Operation(str, enum.Enum):
    TRAIN_PLUS = "train+1"
    TRAIN_MINUS = "train-1"
    INFERENCE = "inference"


@dataclass(frozen=True)
class ControlSignals:
    wwl: Level
    rwl: Level
    bl: Level
    sl: Level
    in_: Level

    def as_dict(self) -> dict[str, str]:
        return {"WWL": self.wwl.value, "RWL": self.rwl.value, "BL": self.bl.value,
                "SL": self.sl.value, "IN": self.in_.value}


_SIGNALS = {
    Operation.TRAIN_PLUS: ControlSignals(Level.VDD, Level.GND, Level.VDD, Level.GND, Level.HIZ),
    Operation.TRAIN_MINUS: ControlSignals(Level.VDD, Level.GND, Level.GND, Level.VDD, Level.HIZ),
    Operation.INFERENCE: ControlSignals(Level.GND, Level.VDD, Level.HIZ, Level.HIZ, Level.VIN),
}


def signal_table(op: Operation) -> ControlSignals:
    return _SIGNALS[Operation(op)]


class CycleCounter:
    """Monotone training/inference clock-cycle tallies, safe to bump from threads."""

    def __init__(self, training_cycles: int = 0, inference_cycles: int = 0):
        self._training = training_cycles
        self._inference = inference_cycles
        self._lock = threading.Lock()

    @property
    def training_cycles(self) -> int:
        return self._training

    @property
    def inference_cycles(self) -> int:
        return self._inference

    def add_training(self, n: int) -> None:
        if n < 0:
            raise ValueError("cycle counts only increase")
        with self._lock:
            self._training += n

    def add_inference(self, n: int) -> None:
        if n < 0:
            raise ValueError("cycle counts only increase")
        with self._lock:
            self._inference += n

    def snapshot(self) -> dict[str, int]:
        return {"training_cycles": self._training, "inference_cycles": self._inference}

    def __repr__(self):
        return f"CycleCounter(training_cycles={self._training}, inference_cycles={self._inference})"


def program_layer(layer: CrossbarLayer, weights, biases, counter: CycleCounter) -> CrossbarLayer:
    """Write binary weights and biases into the array, one row per clock cycle.

    A +1 entry puts the pair in (P, AP) and a -1 entry in (AP, P). The row's
    write word line gates per-column BL/SL drivers, so a whole row (bias pair
    included) is written in a single cycle. The neuron cells are forced to
    (P, AP) alongside.
    """
    weights = np.asarray(weights)
    biases = np.asarray(biases)
    if weights.shape != (layer.out_nodes, layer.in_nodes):
        raise ValueError(f"weight matrix shape {weights.shape} does not match "
                         f"layer ({layer.out_nodes}, {layer.in_nodes})")
    if biases.shape != (layer.out_nodes,):
        raise ValueError(f"bias vector shape {biases.shape} does not match {layer.out_nodes} rows")
    if not (np.isin(weights, (-1, 1)).all() and np.isin(biases, (-1, 1)).all()):
        raise ValueError("weights and biases must be binary (-1 or +1)")

    plus = np.where(weights > 0, MagState.P, MagState.AP).astype(np.int8)
    bias_plus = np.where(biases > 0, MagState.P, MagState.AP).astype(np.int8)
    neurons = [dataclasses.replace(n, cell_p=n.cell_p.with_state(MagState.P),
                                   cell_ap=n.cell_ap.with_state(MagState.AP))
               for n in layer.neurons]
    programmed = dataclasses.replace(
        layer, plus=plus, minus=1 - plus, bias_plus=bias_plus, bias_minus=1 - bias_plus,
        neurons=neurons)
    counter.add_training(layer.out_nodes)
    return programmed


def decode_layer(layer: CrossbarLayer) -> tuple[np.ndarray, np.ndarray]:
    """Read the programmed signs back out of the cell states."""
    return layer.sign_matrix(), layer.sign_bias()


@dataclass
class MlpPipeline:
    layers: list[CrossbarLayer]
    counter: CycleCounter = field(default_factory=CycleCounter)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_nodes != b.in_nodes:
                raise ValueError(f"layer widths do not chain: {a.out_nodes} -> {b.in_nodes}")

    @classmethod
    def build(cls, sizes, params: DeviceParams | None = None, read_voltage: float = 0.1,
              nonideal: bool = False, neuron: NeuronCircuit | None = None) -> "MlpPipeline":
        return cls([CrossbarLayer.blank(i, o, params, read_voltage, nonideal, neuron)
                    for i, o in zip(sizes[:-1], sizes[1:])])

    @property
    def sizes(self) -> list[int]:
        if not self.layers:
            return []
        return [self.layers[0].in_nodes] + [layer.out_nodes for layer in self.layers]


def program_pipeline(p: MlpPipeline, weights, biases) -> MlpPipeline:
    if len(weights) != len(p.layers) or len(biases) != len(p.layers):
        raise ValueError("parameter list length does not match the number of layers")
    p.layers = [program_layer(layer, w, b, p.counter) for layer, w, b in zip(p.layers, weights, biases)]
    return p


def recalibrate(p: MlpPipeline) -> MlpPipeline:
    p.layers = [calibrate_neuron(layer) for layer in p.layers]
    return p


def pipeline_infer(p: MlpPipeline, x) -> tuple[np.ndarray, int]:
    """Run inputs through every layer.

    A single input vector costs one clock cycle irrespective of depth; an
    (N, in) batch costs N.
    """
    x = np.asarray(x, dtype=float)
    if not p.layers:
        raise ValueError("pipeline has no layers")
    if x.shape[-1] != p.layers[0].in_nodes:
        raise ValueError(f"expected {p.layers[0].in_nodes} inputs, got {x.shape[-1]}")
    n_inputs = 1 if x.ndim == 1 else x.shape[0]
    if n_inputs == 0:
        return np.empty((0, p.layers[-1].out_nodes)), 0
    for layer in p.layers:
        x = layer_forward(layer, x)
    p.counter.add_inference(n_inputs)
    return x, n_inputs


def gpu_cycle_estimate(batch: int, cycles_per_image: float = GPU_CYCLES_PER_IMAGE) -> float:
    if batch < 0:
        raise ValueError("batch must be non-negative")
    return batch * cycles_per_image


def speedup(batch: int, crossbar_cycles: int, cycles_per_image: float = GPU_CYCLES_PER_IMAGE) -> float:
    return gpu_cycle_estimate(batch, cycles_per_image) / crossbar_cycles


@dataclass(frozen=True)
class PowerAreaReport:
    neuron_count: int
    per_neuron_power: float
    per_neuron_area: float
    total_power: float
    total_area: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def power_area_report(p: MlpPipeline, per_neuron_power: float = NEURON_POWER,
                      per_neuron_area: float = NEURON_AREA) -> PowerAreaReport:
    count = sum(layer.out_nodes for layer in p.layers)
    return PowerAreaReport(count, per_neuron_power, per_neuron_area,
                           count * per_neuron_power, count * per_neuron_area)
