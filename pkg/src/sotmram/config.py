"""Experiment configuration as a flat mapping of dotted keys.

Config files are JSON objects such as ``{"device.ra_product": 10, "train.epochs": 5}``.
Lengths are given in nm and the RA product in ohm*um^2 as in the device data
sheet; they are converted to SI when the config is turned into model objects.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .analog import DEFAULT_BARE_GAIN, DEFAULT_READ_VOLTAGE, NeuronCircuit
from .arch import GPU_CYCLES_PER_IMAGE, NEURON_AREA, NEURON_POWER
from .device import DeviceParams
from .train import Binarization, TrainConfig

NM = 1e-9
OHM_UM2 = 1e-12

DEFAULTS: dict[str, object] = {
    "device.mtj_length": 50.0,
    "device.mtj_width": 30.0,
    "device.hm_length": 100.0,
    "device.hm_width": 50.0,
    "device.hm_thickness": 3.0,
    "device.ra_product": 10.0,
    "device.v0": 0.65,
    "device.tmr0": 100.0,
    "device.temperature": 300.0,
    "topology": [784, 16, 10],
    "train.learning_rate": 0.01,
    "train.epochs": 10,
    "train.batch_size": 100,
    "train.binarization": "deterministic",
    "train.delta_b": 0.0,
    "train.init_scale": 0.5,
    "analog.read_voltage": DEFAULT_READ_VOLTAGE,
    "analog.nonideal": True,
    "analog.vdd": 0.8,
    "analog.vss": 0.0,
    "analog.bare_gain": DEFAULT_BARE_GAIN,
    "arch.gpu_cycles_per_image": GPU_CYCLES_PER_IMAGE,
    "arch.neuron_power": NEURON_POWER,
    "arch.neuron_area": NEURON_AREA,
    "data.dir": None,
    "output.dir": "runs/latest",
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value, default):
    if default is None or value is None:
        return value
    try:
        if key == "topology":
            if isinstance(value, str):
                value = [v for v in value.replace("x", ",").split(",") if v.strip()]
            sizes = [int(v) for v in value]
            if len(sizes) < 2 or min(sizes) < 1:
                raise ConfigError("topology needs at least two layer sizes, each >= 1")
            return sizes
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("on", "true", "1", "yes"):
                    return True
                if lowered in ("off", "false", "0", "no"):
                    return False
                raise ConfigError(f"{key}: expected on/off, got {value!r}")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{key}: cannot interpret {value!r} ({e})") from e


@dataclass
class ExperimentConfig:
    values: dict

    @classmethod
    def from_mapping(cls, mapping: dict | None = None) -> "ExperimentConfig":
        values = dict(DEFAULTS)
        for key, value in (mapping or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value, DEFAULTS[key])
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object of dotted keys")
        return cls.from_mapping(doc)

    def override(self, **changes) -> "ExperimentConfig":
        merged = {k: v for k, v in self.values.items()}
        for key, value in changes.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value, DEFAULTS[key])
        cfg = ExperimentConfig(merged)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def validate(self) -> None:
        try:
            self.device_params()
            self.train_config()
            self.neuron()
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e
        if not self["analog.read_voltage"] > 0:
            raise ConfigError("analog.read_voltage must be positive")

    def device_params(self) -> DeviceParams:
        v = self.values
        return DeviceParams(
            mtj_length=v["device.mtj_length"] * NM,
            mtj_width=v["device.mtj_width"] * NM,
            hm_length=v["device.hm_length"] * NM,
            hm_width=v["device.hm_width"] * NM,
            hm_thickness=v["device.hm_thickness"] * NM,
            ra_product=v["device.ra_product"] * OHM_UM2,
            v0=v["device.v0"],
            tmr0=v["device.tmr0"],
            temperature=v["device.temperature"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            learning_rate=v["train.learning_rate"],
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            binarization=Binarization(v["train.binarization"]),
            delta_b=v["train.delta_b"],
            rng_seed=v["seed"],
            init_scale=v["train.init_scale"],
        )

    def neuron(self) -> NeuronCircuit:
        v = self.values
        return NeuronCircuit(self.device_params(), vdd=v["analog.vdd"], vss=v["analog.vss"],
                             bare_gain=v["analog.bare_gain"])

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True) + "\n"
