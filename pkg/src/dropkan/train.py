"""Adam, minibatch training loop, evaluation and metric logging."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autograd import LossKind, backward, default_loss, loss_eval, predict_labels
from .layers import KanNetwork, network_forward

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient stops being finite; carries the step index."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.detail = message
        self.step = step


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, config: AdamConfig = AdamConfig()) -> AdamState:
    """In-place bias-corrected Adam update of ``params``; returns the advanced state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must align")
    for index, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient {index} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NonFiniteError(f"gradient {index} has {bad} non-finite entries", state.t + 1)
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return state


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.01
    adam: AdamConfig = AdamConfig()
    seed: int = 0
    loss: Optional[LossKind] = None   # None: picked from output width and class count
    eval_every: int = 100

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.eval_every <= 0:
            raise ValueError("eval_every must be positive")
        if self.loss is not None:
            object.__setattr__(self, "loss", LossKind(self.loss))


@dataclass
class MetricRecord:
    step: int
    split: str
    loss: float
    accuracy: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class MetricLog:
    records: list = field(default_factory=list)

    def add(self, record: MetricRecord) -> None:
        if self.records and record.step < self.records[-1].step:
            raise ValueError("metric steps must be non-decreasing")
        self.records.append(record)

    def for_split(self, split: str) -> list:
        return [r for r in self.records if r.split == split]

    def to_jsonl(self, include_time: bool = False) -> str:
        lines = []
        for r in self.records:
            doc = asdict(r)
            if not include_time:
                doc.pop("wall_time")
            lines.append(json.dumps(doc, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def write(self, path, include_time: bool = False) -> None:
        Path(path).write_text(self.to_jsonl(include_time))

    @classmethod
    def from_jsonl(cls, text: str) -> "MetricLog":
        return cls([MetricRecord(**json.loads(line)) for line in text.splitlines() if line.strip()])


def evaluate(net: KanNetwork, features, labels, loss_kind=None, n_classes: Optional[int] = None):
    """Eval-mode ``(accuracy, mean loss)`` on one split."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty split")
    out, _ = network_forward(net, features, training=False)
    if loss_kind is None:
        loss_kind = default_loss(out.shape[1], n_classes or out.shape[1])
    loss, _ = loss_eval(out, labels, loss_kind, n_classes)
    pred = predict_labels(out, loss_kind, n_classes)
    return float(np.mean(pred == labels)), loss


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches: reshuffle per epoch, keep the short tail batch."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def train(net: KanNetwork, splits, config: TrainConfig,
          on_step: Optional[Callable[[int, KanNetwork], None]] = None,
          clock: Callable[[], float] = time.perf_counter):
    """Train ``net`` in place for exactly ``config.steps`` Adam updates.

    ``splits`` is a :class:`~dropkan.data.DatasetSplits`. Validation (and
    training-set) metrics are logged every ``config.eval_every`` steps and at the
    last step, where the test split is also scored. ``on_step(step, net)`` runs
    after each update. Returns ``(net, MetricLog)``.
    """
    n_classes = splits.n_classes
    n_out = net.architecture[-1]
    loss_kind = config.loss or default_loss(n_out, n_classes)
    batch_seq, mask_seq = np.random.SeedSequence(config.seed).spawn(2)
    batch_rng = np.random.default_rng(batch_seq)
    mask_rng = np.random.default_rng(mask_seq)

    params = net.params()
    state = AdamState.zeros_like(params)
    metrics = MetricLog()
    start = clock()
    batches = epoch_batches(len(splits.y_train), config.batch_size, batch_rng)

    for step in range(1, config.steps + 1):
        idx = next(batches)
        out, caches = network_forward(net, splits.x_train[idx], training=True, rng=mask_rng)
        loss, grad = loss_eval(out, splits.y_train[idx], loss_kind, n_classes)
        if not np.isfinite(loss):
            raise NonFiniteError(f"training loss is {loss}", step)
        grads = backward(net, caches, grad)
        try:
            adam_step(params, grads.arrays(), state, config.learning_rate, config.adam)
        except NonFiniteError as exc:
            raise NonFiniteError(exc.detail, step) from exc
        if on_step is not None:
            on_step(step, net)
        if step % config.eval_every == 0 or step == config.steps:
            now = clock() - start
            for name, x, y in (("train", splits.x_train, splits.y_train),
                               ("valid", splits.x_valid, splits.y_valid)):
                acc, val_loss = evaluate(net, x, y, loss_kind, n_classes)
                metrics.add(MetricRecord(step, name, val_loss, acc, now))
            log.debug("step %d valid acc %.4f", step, metrics.records[-1].accuracy)
    acc, test_loss = evaluate(net, splits.x_test, splits.y_test, loss_kind, n_classes)
    metrics.add(MetricRecord(config.steps, "test", test_loss, acc, clock() - start))
    return net, metrics
