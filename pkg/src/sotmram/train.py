"""Hardware-aware teacher-student training of binarized sigmoid MLPs.

The teacher holds real weights and biases clipped to [-1, 1]. Every step the
teacher is binarized into a student, the student is run forward and
differentiated, and the student's gradients are applied to the teacher
unchanged (identity straight-through estimator). Neurons compute
``o = logistic(-(W x + b))``, which is what the SOT-MRAM neuron realizes.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import data as data_mod
from .arch import MlpPipeline, pipeline_infer, program_pipeline

CHECKPOINT_VERSION = 1


class Binarization(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 100
    binarization: Binarization = Binarization.DETERMINISTIC
    delta_b: float = 0.0
    rng_seed: int = 0
    init_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "binarization", Binarization(self.binarization))
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class TeacherNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, scale: float = 0.5) -> "TeacherNet":
        weights = [rng.uniform(-scale, scale, (o, i)) for i, o in zip(sizes[:-1], sizes[1:])]
        biases = [rng.uniform(-scale, scale, o) for o in sizes[1:]]
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "TeacherNet":
        return TeacherNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class StudentView:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


@dataclass
class LayerRecord:
    x: np.ndarray
    y: np.ndarray
    o: np.ndarray


@dataclass
class Metrics:
    epoch: list[int] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    confusion: np.ndarray | None = None

    def append(self, epoch, train_acc, test_acc, mean_loss):
        self.epoch.append(epoch)
        self.train_acc.append(train_acc)
        self.test_acc.append(test_acc)
        self.mean_loss.append(mean_loss)

    def rows(self):
        return list(zip(self.epoch, self.train_acc, self.test_acc, self.mean_loss))


def binarize_deterministic(w, delta_b: float = 0.0):
    """+1 where w >= delta_b, else -1."""
    out = np.where(np.asarray(w) >= delta_b, 1.0, -1.0)
    return out if out.ndim else float(out)


def binarize_stochastic(w, rng: np.random.Generator):
    """+1 with probability clamp((w + 1) / 2, 0, 1), else -1."""
    w = np.asarray(w, dtype=float)
    if np.any(np.abs(w) > 1):
        raise ValueError("stochastic binarization expects values in [-1, 1]")
    p = np.clip((w + 1) / 2, 0, 1)
    out = np.where(rng.random(w.shape) < p, 1.0, -1.0)
    return out if out.ndim else float(out)


def clip_teacher(net: TeacherNet) -> TeacherNet:
    return TeacherNet([np.clip(w, -1, 1) for w in net.weights],
                      [np.clip(b, -1, 1) for b in net.biases])


def snapshot(net: TeacherNet, config: TrainConfig, rng: np.random.Generator | None = None) -> StudentView:
    if config.binarization is Binarization.STOCHASTIC:
        if rng is None:
            raise ValueError("stochastic binarization needs a random generator")
        return StudentView([binarize_stochastic(w, rng) for w in net.weights],
                           [binarize_stochastic(b, rng) for b in net.biases])
    return student_of(net, config)


def student_of(net: TeacherNet, config: TrainConfig) -> StudentView:
    """Deployed student: deterministic binarization whatever scheme trained it."""
    return StudentView([binarize_deterministic(w, config.delta_b) for w in net.weights],
                       [binarize_deterministic(b, config.delta_b) for b in net.biases])


def forward(net, x) -> list[LayerRecord]:
    """Per-layer pre-activations and outputs for a vector or an (N, in) batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.weights[0].shape[1]:
        raise ValueError(f"expected {net.weights[0].shape[1]} inputs, got {x.shape[-1]}")
    records = []
    for w, b in zip(net.weights, net.biases):
        y = x @ w.T + b
        o = expit(-y)
        records.append(LayerRecord(x, y, o))
        x = o
    return records


def predict(net, x) -> np.ndarray:
    return forward(net, x)[-1].o


def loss(o, target):
    """Binary cross-entropy summed over classes (and over a batch, if given)."""
    o = np.asarray(o, dtype=float)
    t = np.asarray(target, dtype=float)
    if o.shape != t.shape:
        raise ValueError("prediction and target shapes differ")
    return float(-np.sum(t * np.log(o) + (1 - t) * np.log1p(-o)))


def backward(view, records: list[LayerRecord], targets) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the batch-summed loss w.r.t. every weight and bias of ``view``.

    With o = logistic(-y) and binary cross-entropy, dL/dy = t - o at the
    output layer. Hidden layers use do/dy = -o (1 - o).
    """
    t = np.asarray(targets, dtype=float)
    out = records[-1]
    if out.o.shape != t.shape:
        raise ValueError("targets do not match the output layer shape")
    d_y = np.atleast_2d(t - out.o)
    grads_w: list[np.ndarray] = [None] * len(records)
    grads_b: list[np.ndarray] = [None] * len(records)
    for k in range(len(records) - 1, -1, -1):
        rec = records[k]
        x = np.atleast_2d(rec.x)
        grads_w[k] = d_y.T @ x
        grads_b[k] = d_y.sum(axis=0)
        if k:
            prev_o = np.atleast_2d(records[k - 1].o)
            d_y = (d_y @ view.weights[k]) * (-prev_o * (1 - prev_o))
    return grads_w, grads_b


def sgd_step(net: TeacherNet, grads_w, grads_b, lr: float) -> TeacherNet:
    stepped = TeacherNet([w - lr * g for w, g in zip(net.weights, grads_w)],
                         [b - lr * g for b, g in zip(net.biases, grads_b)])
    return clip_teacher(stepped)


def accuracy(net, x, labels) -> float:
    if len(x) == 0:
        return 0.0
    return float(np.mean(predict(net, x).argmax(axis=1) == labels))


def confusion_matrix(predicted, labels, num_classes: int = data_mod.NUM_CLASSES) -> np.ndarray:
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(labels), np.asarray(predicted)), 1)
    return m


def _epoch_seeds(config: TrainConfig, epoch: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    shuffle, binar = np.random.SeedSequence([config.rng_seed, epoch]).spawn(2)
    return shuffle, binar


def init_teacher(sizes, config: TrainConfig) -> TeacherNet:
    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed]).spawn(1)[0])
    return clip_teacher(TeacherNet.init(sizes, rng, config.init_scale))


def train_epoch(net: TeacherNet, config: TrainConfig, dataset: data_mod.Dataset, epoch: int):
    """One pass over the training split; returns the updated teacher and a metrics row."""
    if len(dataset.train_x) == 0:
        raise ValueError("training split is empty")
    shuffle_seed, binar_seed = _epoch_seeds(config, epoch)
    rng = np.random.default_rng(binar_seed)
    for x, t in data_mod.batches(dataset.train_x, dataset.train_y, config.batch_size, shuffle_seed,
                                  net.sizes[-1]):
        view = snapshot(net, config, rng)
        records = forward(view, x)
        gw, gb = backward(view, records, t)
        net = sgd_step(net, gw, gb, config.learning_rate)
    return net, evaluate_row(student_of(net, config), dataset, epoch)


def evaluate_row(net, dataset: data_mod.Dataset, epoch: int) -> tuple[int, float, float, float]:
    """(epoch, train accuracy, test accuracy, mean per-sample training loss)."""
    out = predict(net, dataset.train_x)
    mean_loss = loss(out, data_mod.one_hot(dataset.train_y, out.shape[1])) / len(dataset.train_x)
    return (epoch,
            float(np.mean(out.argmax(axis=1) == dataset.train_y)),
            accuracy(net, dataset.test_x, dataset.test_y),
            mean_loss)


def map_to_crossbar(view: StudentView, pipeline: MlpPipeline) -> MlpPipeline:
    if view.sizes != pipeline.sizes:
        raise ValueError(f"student topology {view.sizes} does not match crossbar {pipeline.sizes}")
    return program_pipeline(pipeline, view.weights, view.biases)


def crossbar_accuracy(pipeline: MlpPipeline, x, labels) -> tuple[float, np.ndarray]:
    if len(x) == 0:
        return 0.0, np.empty(0, dtype=np.int64)
    out, _ = pipeline_infer(pipeline, x)
    predicted = out.argmax(axis=1)
    return float(np.mean(predicted == labels)), predicted


def save_checkpoint(path, teacher: TeacherNet, student: StudentView) -> None:
    from .reporting import atomic_write_text

    doc = {
        "format": "sotmram-checkpoint",
        "schema_version": CHECKPOINT_VERSION,
        "topology": teacher.sizes,
        "teacher": {"weights": [w.tolist() for w in teacher.weights],
                    "biases": [b.tolist() for b in teacher.biases]},
        "student": {"weights": [w.astype(int).tolist() for w in student.weights],
                    "biases": [b.astype(int).tolist() for b in student.biases]},
    }
    atomic_write_text(path, json.dumps(doc))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[TeacherNet, StudentView]:
    try:
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != "sotmram-checkpoint" or doc.get("schema_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
        sizes = doc["topology"]
        if not isinstance(sizes, list) or len(sizes) < 2:
            raise CheckpointError(f"{path}: topology must list at least two layer sizes")
        teacher = TeacherNet([np.array(w, dtype=float) for w in doc["teacher"]["weights"]],
                             [np.array(b, dtype=float) for b in doc["teacher"]["biases"]])
        student = StudentView([np.array(w, dtype=float) for w in doc["student"]["weights"]],
                              [np.array(b, dtype=float) for b in doc["student"]["biases"]])
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    for net in (teacher, student):
        if any(w.ndim != 2 for w in net.weights) or net.sizes != sizes or \
                any(b.shape != (w.shape[0],) for w, b in zip(net.weights, net.biases)):
            raise CheckpointError(f"{path}: parameter shapes disagree with topology {sizes}")
    for arr in student.weights + student.biases:
        if not np.isin(arr, (-1, 1)).all():
            raise CheckpointError(f"{path}: student parameters are not binary")
    return teacher, student
