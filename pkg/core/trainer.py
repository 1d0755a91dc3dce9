from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from core.config import TrainConfig
from core.data import Dataset, batch_iter
from core.network import NetworkSpec, NonFiniteLoss, WeightSet, backward_and_step, predict

logger = logging.getLogger(__name__)

_PREDICT_CHUNK = 512


def training_streams(seed: int, individual_seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent (initialization, data order) streams for one training job."""
    init_seq, order_seq = np.random.SeedSequence([int(seed), int(individual_seed)]).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(order_seq)


def eval_steps(n: int, batch_size: int) -> int:
    return n // batch_size


@dataclass
class Trainer:
    """Plain SGD over a fixed network spec; the order stream reshuffles every epoch."""

    spec: NetworkSpec
    weights: WeightSet
    cfg: TrainConfig
    order_rng: np.random.Generator
    epoch_losses: List[float] = field(default_factory=list)

    def train_epoch(self, dataset: Dataset) -> float:
        total, count = 0.0, 0
        for images, labels in batch_iter(dataset, self.cfg.batch_size, shuffle=self.order_rng):
            self.weights, loss = backward_and_step(self.spec, images, labels, self.weights, self.cfg)
            total += loss * len(labels)
            count += len(labels)
        mean_loss = total / max(count, 1)
        self.epoch_losses.append(mean_loss)
        return mean_loss

    def fit(self, dataset: Dataset, epochs: int) -> List[float]:
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(epochs):
                self.train_epoch(dataset)
        if not self.weights_finite():
            # the loss is read before each step, so the last update is checked here
            raise NonFiniteLoss(f"weights became non-finite after {len(self.epoch_losses)} epochs")
        return self.epoch_losses

    def weights_finite(self) -> bool:
        return all(
            np.isfinite(params.weights).all() and np.isfinite(params.bias).all()
            for params in self.weights
            if params is not None
        )

    def batch_errors(self, dataset: Dataset) -> np.ndarray:
        """Classification error of each full batch in storage order; leftovers are unused."""
        batch_size = self.cfg.batch_size
        if eval_steps(len(dataset), batch_size) == 0:
            batch_size = len(dataset)
        errors = [
            float(np.mean(self.predict(images) != labels))
            for images, labels in batch_iter(dataset, batch_size, drop_last=True)
        ]
        return np.asarray(errors, dtype=np.float64)

    def predict(self, images: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            chunks = [
                predict(self.spec, images[start:start + _PREDICT_CHUNK], self.weights)
                for start in range(0, len(images), _PREDICT_CHUNK)
            ]
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)

    def error_rate(self, dataset: Dataset) -> float:
        if len(dataset) == 0:
            raise ValueError("cannot measure error on an empty dataset")
        return float(np.mean(self.predict(dataset.images) != dataset.labels))


__all__ = ["Trainer", "eval_steps", "training_streams"]
