"""Neural-network CPD for the urgency node U given (cases per 100K, change).

A single sigmoid hidden layer feeds a softmax over U in (-1, 0, 1). Training
minimizes the mean cross-entropy against soft (probabilistic) labels with
full-batch gradient descent.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from simlr.pgm.cpt import ConfigError

logger = logging.getLogger(__name__)

HIDDEN = 64
N_FEATURES = 2
N_CLASSES = 3
LEARNING_RATE = 0.05
EPOCHS = 5000
CASES_PER = 1e5

WEIGHTS_FORMAT = "simlr-nn-cpd"
WEIGHTS_VERSION = 1
_PARAM_NAMES = ("w1", "b1", "w2", "b2")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class UrgencyFeatures:
    """Weekly new infections per 100K (``c``) and its week-over-week change (``v``)."""

    c: float
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.c) and math.isfinite(self.v)):
            raise ValueError(f"non-finite urgency features: {self}")
        if self.c < 0:
            raise ValueError(f"cases per 100K must be non-negative, got {self.c}")


def urgency_features(weekly_cases: Sequence[float], population: float) -> UrgencyFeatures:
    """Features from the last two weekly new-infection counts."""
    if len(weekly_cases) < 2:
        raise ValueError("need two weeks of cases to compute the change feature")
    c_prev = CASES_PER * weekly_cases[-2] / population
    c = CASES_PER * weekly_cases[-1] / population
    return UrgencyFeatures(c, c - c_prev)


@dataclass(frozen=True)
class SoftLabelDataset:
    """Feature rows ``x = (c, v)`` with label distributions over U = (-1, 0, 1)."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.x.shape[1] != N_FEATURES:
            raise ValueError("features must have shape (n, 2)")
        if self.p.shape != (len(self.x), N_CLASSES):
            raise ValueError("labels must have shape (n, 3)")
        if len(self.x) == 0:
            raise ValueError("dataset is empty")
        if np.any(self.p < 0) or np.any(np.abs(self.p.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("every label row must be a probability distribution")

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def read_csv(cls, source) -> "SoftLabelDataset":
        """Read columns ``c, v, p_minus1, p_0, p_plus1`` from a path or file object."""
        if isinstance(source, (str, Path)):
            with open(source, newline="") as fh:
                return cls._from_reader(csv.DictReader(fh))
        return cls._from_reader(csv.DictReader(source))

    @classmethod
    def _from_reader(cls, reader: csv.DictReader) -> "SoftLabelDataset":
        need = ["c", "v", "p_minus1", "p_0", "p_plus1"]
        if reader.fieldnames is None or any(col not in reader.fieldnames for col in need):
            raise ConfigError(f"soft-label file needs columns {need}, got {reader.fieldnames}")
        rows = [[float(r[col]) for col in need] for r in reader]
        arr = np.asarray(rows, dtype=float).reshape(-1, 5)
        return cls(arr[:, :2], arr[:, 2:])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c", "v", "p_minus1", "p_0", "p_plus1"])
            for x, p in zip(self.x, self.p):
                w.writerow([repr(float(v)) for v in (*x, *p)])


def default_soft_labels() -> SoftLabelDataset:
    with resources.files("simlr").joinpath("data/soft_labels.csv").open("r") as fh:
        return SoftLabelDataset.read_csv(fh)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class NnCpd:
    w1: np.ndarray  # (2, 64)
    b1: np.ndarray  # (64,)
    w2: np.ndarray  # (64, 3)
    b2: np.ndarray  # (3,)
    x_mean: np.ndarray  # (2,)
    x_scale: np.ndarray  # (2,)

    def __post_init__(self) -> None:
        hidden = self.b1.shape[0] if self.b1.ndim == 1 else -1
        expected = {
            "w1": (N_FEATURES, hidden),
            "b1": (hidden,),
            "w2": (hidden, N_CLASSES),
            "b2": (N_CLASSES,),
            "x_mean": (N_FEATURES,),
            "x_scale": (N_FEATURES,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(f"NN-CPD {name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.x_scale <= 0):
            raise ConfigError("feature scales must be positive")

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def with_params(self, params: dict[str, np.ndarray]) -> "NnCpd":
        return NnCpd(params["w1"], params["b1"], params["w2"], params["b2"], self.x_mean, self.x_scale)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_scale

    def log_proba(self, x: np.ndarray) -> np.ndarray:
        xs = self.standardize(np.atleast_2d(x))
        h = _sigmoid(xs @ self.w1 + self.b1)
        return _log_softmax(h @ self.w2 + self.b2)

    def proba(self, x: np.ndarray) -> np.ndarray:
        """Rows of P(U | c, v) over (-1, 0, 1) for feature rows ``x``."""
        q = np.exp(self.log_proba(x))
        return q / q.sum(axis=-1, keepdims=True)

    def save(self, path: str | Path) -> None:
        arrays = {name: getattr(self, name) for name in (*_PARAM_NAMES, "x_mean", "x_scale")}
        with open(path, "wb") as fh:
            np.savez(
                fh,
                format=np.array(WEIGHTS_FORMAT),
                version=np.array(WEIGHTS_VERSION),
                hidden=np.array(self.b1.shape[0]),
                **arrays,
            )

    @classmethod
    def load(cls, path: str | Path) -> "NnCpd":
        try:
            with np.load(path, allow_pickle=False) as data:
                if str(data["format"]) != WEIGHTS_FORMAT or int(data["version"]) != WEIGHTS_VERSION:
                    raise ConfigError(f"{path}: not a version-{WEIGHTS_VERSION} NN-CPD weights file")
                net = cls(
                    **{k: data[k].copy() for k in (*_PARAM_NAMES, "x_mean", "x_scale")}
                )
                if int(data["hidden"]) != net.b1.shape[0]:
                    raise ConfigError(f"{path}: hidden size header does not match weights")
                return net
        except (OSError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"cannot read NN-CPD weights from {path}: {exc}") from exc


def urgency_distribution(features: UrgencyFeatures, net: NnCpd) -> np.ndarray:
    """P(U | c, v) over (-1, 0, 1)."""
    return net.proba(np.array([[features.c, features.v]]))[0]


def loss_and_grad(
    net: NnCpd, x: np.ndarray, p: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy against soft labels and its gradient."""
    n = len(x)
    xs = net.standardize(x)
    h = _sigmoid(xs @ net.w1 + net.b1)
    logq = _log_softmax(h @ net.w2 + net.b2)
    loss = float(-np.sum(p * logq) / n)

    q = np.exp(logq)
    dz2 = (q * p.sum(axis=1, keepdims=True) - p) / n
    dh = dz2 @ net.w2.T
    dz1 = dh * h * (1.0 - h)
    grads = {
        "w1": xs.T @ dz1,
        "b1": dz1.sum(axis=0),
        "w2": h.T @ dz2,
        "b2": dz2.sum(axis=0),
    }
    return loss, grads


def cross_entropy(q: np.ndarray, p: np.ndarray) -> float:
    return float(-np.sum(p * np.log(q)) / len(p))


def init_nn_cpd(dataset: SoftLabelDataset, seed: int, hidden: int = HIDDEN) -> NnCpd:
    rng = np.random.default_rng(seed)
    mean = dataset.x.mean(axis=0)
    scale = dataset.x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return NnCpd(
        w1=rng.normal(0.0, np.sqrt(2.0 / (N_FEATURES + hidden)), size=(N_FEATURES, hidden)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, np.sqrt(2.0 / (hidden + N_CLASSES)), size=(hidden, N_CLASSES)),
        b2=np.zeros(N_CLASSES),
        x_mean=mean,
        x_scale=scale,
    )


def train_nn_cpd(
    dataset: SoftLabelDataset,
    seed: int,
    learning_rate: float = LEARNING_RATE,
    epochs: int = EPOCHS,
    hidden: int = HIDDEN,
) -> NnCpd:
    """Fit the urgency network to soft labels; deterministic given ``seed``."""
    logger.info(
        "training NN-CPD: full batch, step size %g, %d epochs, %d hidden units, seed %d",
        learning_rate,
        epochs,
        hidden,
        seed,
    )
    net = init_nn_cpd(dataset, seed, hidden)
    params = {k: v.copy() for k, v in net.params.items()}
    loss = math.nan
    for epoch in range(epochs):
        loss, grads = loss_and_grad(net, dataset.x, dataset.p)
        if not math.isfinite(loss):
            norms = {k: float(np.linalg.norm(g)) for k, g in grads.items()}
            raise TrainingError(f"non-finite loss {loss} at epoch {epoch}; gradient norms {norms}")
        for k in params:
            params[k] -= learning_rate * grads[k]
        net = net.with_params(params)
    final, _ = loss_and_grad(net, dataset.x, dataset.p)
    logger.info("NN-CPD training done: loss %.6f after %d epochs", final, epochs)
    return net
