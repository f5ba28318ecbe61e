"""Adamax training and per-sample / per-subject evaluation of the classifier."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledDataset
from .engine import ModelSpec, Weights, backprop, init_weights, predict_logits, run_layers
from .errors import DegenerateDataset, ShapeMismatch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.001
    batch_size: int = 70
    epochs: int = 30
    rng_seed: int = 0
    dropout_rate: float = 0.25
    patience: int | None = None  # early stopping on validation loss; off by default

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass
class AdamaxState:
    m: list[np.ndarray]
    u: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params) -> "AdamaxState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adamax_step(params, grads, state: AdamaxState | None, config: TrainConfig):
    """One Adamax update with decoupled weight decay.

    ``u`` follows ``max(beta2 * u, |g|)`` and the decay multiplies every
    parameter by ``1 - lr * weight_decay``. Returns ``(new_params, new_state)``;
    the inputs are not modified.
    """
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameter arrays vs {len(grads)} gradients")
    state = AdamaxState.zeros(params) if state is None else state
    t = state.t + 1
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2
    step = lr / (1.0 - b1**t)
    shrink = 1.0 - lr * config.weight_decay
    new_p, new_m, new_u = [], [], []
    for p, g, m, u in zip(params, grads, state.m, state.u):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        u = np.maximum(b2 * u, np.abs(g))
        new_p.append(p * shrink - step * m / (u + config.epsilon))
        new_m.append(m)
        new_u.append(u)
    return new_p, AdamaxState(new_m, new_u, t)


def cross_entropy(logits, labels):
    """Softmax cross-entropy from logits.

    Works on a single 2-vector or a ``(N, 2)`` batch. Returns the loss(es)
    and the gradient w.r.t. the logits, ``softmax(logits) - onehot(label)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=-1))
    picked = np.take_along_axis(z, labels[..., None], axis=-1)[..., 0]
    probs = np.exp(z - lse[..., None])
    onehot = np.zeros_like(z)
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return lse - picked, probs - onehot


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float = float("nan")
    val_loss: float = float("nan")


def _set_arrays(weights: Weights, arrays) -> Weights:
    it = iter(arrays)
    return Weights({i: (next(it), next(it)) for i in sorted(weights.params)})


def _check_trainable(ds: LabeledDataset) -> None:
    if len(ds) == 0:
        raise DegenerateDataset("dataset is empty")
    ds.check_labeled()
    missing = {0, 1} - set(np.unique(ds.labels).tolist())
    if missing:
        raise DegenerateDataset(f"class {sorted(missing)} absent from the training set")


def train(
    spec: ModelSpec,
    dataset: LabeledDataset,
    config: TrainConfig,
    validation: LabeledDataset | None = None,
) -> tuple[Weights, list[EpochRecord]]:
    """Minibatch Adamax on softmax cross-entropy.

    Initialisation, shuffling and dropout masks each draw from their own
    stream derived from ``config.rng_seed``, so results are reproducible bit
    for bit. ``train_acc`` is the running accuracy of the (dropout-on)
    training batches.
    """
    _check_trainable(dataset)
    if dataset.shape != spec.input_shape:
        raise ShapeMismatch(f"dataset samples {dataset.shape} vs model input {spec.input_shape}")
    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(config.rng_seed).spawn(3)
    weights = init_weights(spec, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    state = AdamaxState.zeros(weights.arrays())
    top = spec.classifier_layer
    n = len(dataset)
    history: list[EpochRecord] = []
    best = (np.inf, weights, 0)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = dataset.samples[idx][:, None]
            y = dataset.labels[idx]
            outputs, switches, masks = run_layers(
                spec, weights, x, stop=top, rng=drop_rng, dropout_rate=config.dropout_rate
            )
            logits = outputs[-1]
            losses, dlogits = cross_entropy(logits, y)
            total_loss += float(losses.sum())
            correct += int((logits.argmax(axis=1) == y).sum())
            _, pgrads = backprop(
                spec, weights, x, outputs, switches, masks, dlogits / len(idx), top, param_grads=True
            )
            grads = [g for i in sorted(pgrads) for g in pgrads[i]]
            new_arrays, state = adamax_step(weights.arrays(), grads, state, config)
            weights = _set_arrays(weights, new_arrays)
        rec = EpochRecord(epoch, total_loss / n, correct / n)
        if validation is not None and len(validation):
            vlogits = predict_logits(spec, weights, validation.samples)
            rec.val_loss = float(cross_entropy(vlogits, validation.labels)[0].mean())
            rec.val_acc = float((vlogits.argmax(axis=1) == validation.labels).mean())
        history.append(rec)
        log.info("epoch %d loss %.4f acc %.3f val_acc %.3f", epoch, rec.loss, rec.train_acc, rec.val_acc)
        if config.patience is not None and validation is not None:
            if rec.val_loss < best[0]:
                best = (rec.val_loss, weights, epoch)
            elif epoch - best[2] >= config.patience:
                log.info("early stop at epoch %d, keeping epoch %d", epoch, best[2])
                return best[1], history
    return weights, history


def write_history_csv(path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "train_acc", "val_acc"])
        for r in history:
            w.writerow([r.epoch, repr(r.loss), repr(r.train_acc), repr(r.val_acc)])


class Outcome(str, enum.Enum):
    """Classification outcome; class 1 is the positive class."""

    TP = "TP"
    TN = "TN"
    FP = "FP"
    FN = "FN"

    @classmethod
    def of(cls, label: int, predicted: int) -> "Outcome":
        if label == 1:
            return cls.TP if predicted == 1 else cls.FN
        return cls.FP if predicted == 1 else cls.TN


@dataclass
class Evaluation:
    logits: np.ndarray
    predictions: np.ndarray
    outcomes: list[Outcome]
    sample_accuracy: float
    subject_accuracy: float
    subject_predictions: dict[int, int] = field(default_factory=dict)


def majority_vote(predictions) -> int:
    """Most common prediction; ties go to class 0."""
    predictions = np.asarray(predictions)
    ones = int((predictions == 1).sum())
    return 1 if ones > len(predictions) - ones else 0


def evaluate(spec: ModelSpec, weights: Weights, dataset: LabeledDataset, logits=None) -> Evaluation:
    """Argmax accuracy per sample and majority-vote accuracy per subject."""
    if logits is None:
        logits = predict_logits(spec, weights, dataset.samples)
    return evaluate_predictions(logits, dataset)


def evaluate_predictions(logits, dataset: LabeledDataset) -> Evaluation:
    logits = np.asarray(logits)
    preds = logits.argmax(axis=1)
    outcomes = [Outcome.of(int(y), int(p)) for y, p in zip(dataset.labels, preds)]
    sample_acc = float((preds == dataset.labels).mean()) if len(preds) else float("nan")
    subj_pred = {}
    hits = []
    for sid in dataset.subjects():
        mask = dataset.subject_ids == sid
        vote = majority_vote(preds[mask])
        subj_pred[int(sid)] = vote
        hits.append(vote == dataset.labels[mask][0])
    subject_acc = float(np.mean(hits)) if hits else float("nan")
    return Evaluation(logits, preds, outcomes, sample_acc, subject_acc, subj_pred)
