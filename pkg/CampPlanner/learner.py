"""
Small multiclass classifier shared by the context selector and the
policy-learning baselines: a ReLU MLP trained full-batch with Adam on
cross-entropy.
"""

from __future__ import annotations

import copy
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import DimensionMismatchError, TrainingDivergedError

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (50, 32, 10)
DEFAULT_LR = 1e-4
DEFAULT_LOSS_TARGET = 1e-3
DEFAULT_MAX_EPOCHS = 50_000
LOSS_TOLERANCE = 1e-6
MIN_LR = 1e-12
FORMAT_VERSION = 1

DTYPE = torch.float64


def _build_network(input_dim: int, hidden: Sequence[int], n_classes: int) -> nn.Sequential:
    sizes = [input_dim, *hidden, n_classes]
    layers: List[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers).to(DTYPE)


def _glorot_init(network: nn.Sequential, rng: np.random.Generator) -> None:
    with torch.no_grad():
        for layer in network:
            if isinstance(layer, nn.Linear):
                fan_out, fan_in = layer.weight.shape
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                layer.weight.copy_(torch.from_numpy(rng.uniform(-limit, limit, size=(fan_out, fan_in))))
                layer.bias.zero_()


class Classifier:
    """Feature vector -> class index.

    Inputs are divided by the per-feature max-abs scale seen at training
    time. Treat instances as immutable once trained.
    """

    def __init__(self, input_dim: int, n_classes: int, hidden: Sequence[int] = DEFAULT_HIDDEN,
                 scale: Optional[np.ndarray] = None, network: Optional[nn.Sequential] = None):
        if input_dim < 1 or n_classes < 1:
            raise ValueError("input_dim and n_classes must be positive")
        self.input_dim = int(input_dim)
        self.n_classes = int(n_classes)
        self.hidden = tuple(int(h) for h in hidden)
        self.scale = np.ones(self.input_dim) if scale is None else np.asarray(scale, dtype=float)
        self.network = network if network is not None else _build_network(self.input_dim, self.hidden, self.n_classes)

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.n_classes)

    def _inputs(self, X) -> torch.Tensor:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatchError(f"expected {self.input_dim} features, got {X.shape[1]}")
        return torch.from_numpy(X / self.scale)

    def scores(self, X) -> np.ndarray:
        with torch.no_grad():
            return self.network(self._inputs(X)).numpy()

    def predict(self, x) -> int:
        """Argmax class score; the lowest index wins ties."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise DimensionMismatchError(f"predict expects one feature vector, got shape {x.shape}")
        return int(np.argmax(self.scores(x)[0]))

    def predict_many(self, X) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)

    def accuracy(self, X, Y) -> float:
        return float(np.mean(self.predict_many(X) == np.asarray(Y)))

    def loss_and_gradients(self, X, Y) -> Tuple[float, List[np.ndarray]]:
        """Mean cross-entropy and its gradient for every parameter (weights and biases, layer order)."""
        self.network.zero_grad()
        loss = F.cross_entropy(self.network(self._inputs(X)), torch.as_tensor(np.asarray(Y), dtype=torch.long))
        loss.backward()
        grads = [p.grad.detach().numpy().copy() for p in self.network.parameters()]
        self.network.zero_grad()
        return float(loss.item()), grads

    def loss(self, X, Y) -> float:
        with torch.no_grad():
            return float(F.cross_entropy(self.network(self._inputs(X)),
                                         torch.as_tensor(np.asarray(Y), dtype=torch.long)).item())

    def get_weights(self) -> List[np.ndarray]:
        return [p.detach().numpy().copy() for p in self.network.parameters()]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        with torch.no_grad():
            for p, w in zip(self.network.parameters(), weights):
                p.copy_(torch.from_numpy(np.asarray(w, dtype=float)))

    def save(self, path: str, meta: Optional[Mapping[str, Any]] = None) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        torch.save({
            "version": FORMAT_VERSION,
            "input_dim": self.input_dim,
            "n_classes": self.n_classes,
            "hidden": list(self.hidden),
            "scale": self.scale.tolist(),
            "state_dict": self.network.state_dict(),
            "meta": dict(meta or {}),
        }, path)
        logger.info(f"Classifier saved to {path}")

    @classmethod
    def load(cls, path: str) -> Tuple["Classifier", Dict[str, Any]]:
        data = torch.load(path, weights_only=False)
        version = data.get("version")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported classifier format version {version}")
        clf = cls(data["input_dim"], data["n_classes"], data["hidden"], np.asarray(data["scale"]))
        clf.network.load_state_dict(data["state_dict"])
        return clf, data.get("meta", {})


@dataclass
class TrainingResult:
    classifier: Classifier
    loss: float
    epochs: int
    converged: bool
    flags: List[str] = field(default_factory=list)


def _snapshot(network: nn.Module, optimizer: torch.optim.Optimizer):
    return copy.deepcopy(network.state_dict()), copy.deepcopy(optimizer.state_dict())


def train_classifier(X, Y, n_classes: Optional[int] = None, lr: float = DEFAULT_LR,
                     loss_target: float = DEFAULT_LOSS_TARGET, max_epochs: int = DEFAULT_MAX_EPOCHS,
                     rng: Optional[np.random.Generator] = None,
                     hidden: Sequence[int] = DEFAULT_HIDDEN) -> TrainingResult:
    """Full-batch Adam on mean cross-entropy until loss <= loss_target or max_epochs.

    A step that raises the loss by more than LOSS_TOLERANCE is undone and the
    learning rate halved, so the accepted loss never increases.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=int).ravel()
    if len(X) == 0 or len(X) != len(Y):
        raise ValueError(f"need matching, non-empty X and Y (got {len(X)} and {len(Y)})")
    n_classes = int(n_classes if n_classes is not None else Y.max() + 1)
    if Y.min() < 0 or Y.max() >= n_classes:
        raise ValueError(f"class indices must lie in [0, {n_classes})")
    rng = rng if rng is not None else np.random.default_rng(0)

    scale = np.max(np.abs(X), axis=0)
    scale[scale == 0] = 1.0
    clf = Classifier(X.shape[1], n_classes, hidden, scale)
    _glorot_init(clf.network, rng)
    inputs = clf._inputs(X)
    targets = torch.as_tensor(Y, dtype=torch.long)
    optimizer = torch.optim.Adam(clf.network.parameters(), lr=lr)

    accepted = math.inf
    snapshot = _snapshot(clf.network, optimizer)
    converged = False
    flags: List[str] = []
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        optimizer.zero_grad()
        loss = F.cross_entropy(clf.network(inputs), targets)
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch} "
                                        f"(lr={optimizer.param_groups[0]['lr']:.2e}, last loss {accepted:.4g})")
        if value > accepted + LOSS_TOLERANCE:
            # restoring the optimizer would also restore the old rate
            lr = optimizer.param_groups[0]["lr"] * 0.5
            clf.network.load_state_dict(snapshot[0])
            optimizer.load_state_dict(snapshot[1])
            for group in optimizer.param_groups:
                group["lr"] = lr
            if lr < MIN_LR:
                break
            continue
        accepted = value
        snapshot = _snapshot(clf.network, optimizer)
        if value <= loss_target:
            converged = True
            break
        loss.backward()
        optimizer.step()

    clf.network.load_state_dict(snapshot[0])
    if not converged:
        message = f"classifier stopped at loss {accepted:.4g} after {epoch} epochs (target {loss_target})"
        logger.warning(message)
        flags.append(message)
    else:
        logger.debug(f"classifier converged to loss {accepted:.4g} in {epoch} epochs")
    return TrainingResult(clf, accepted, epoch, converged, flags)


def predict(clf: Classifier, x) -> int:
    return clf.predict(x)
