"""Deterministic single-sequence Adam training."""
from __future__ import annotations

import hashlib
import logging

import numpy as np

from .. import metrics
from ..errors import ConfigError, NumericError, TrainError
from ..seqdata import Dataset
from .model import ModelParams, TrainConfig, loss_and_grads, predict
from .optim import Adam, clip_global_norm

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "loss", "acc", "edit", "f1")


def _content_key(x, y) -> bytes:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x.frames).tobytes())
    h.update(np.ascontiguousarray(y.labels).tobytes())
    return h.digest()


def train(model: ModelParams, dataset: Dataset, cfg: TrainConfig, indices=None, callback=None):
    """Train a copy of ``model`` on ``dataset`` items ``indices`` (default: all).

    One sequence per Adam step.  Each epoch visits the items in a permutation
    drawn from ``cfg.seed``; items are first put in a canonical order keyed by
    their content, so the result does not depend on how the dataset was
    assembled.  History records per-epoch mean loss and the mean training
    metrics of the predictions made during the epoch's forward passes.

    ``callback(epoch, model, record)`` runs after every epoch; returning
    ``True`` stops training early.
    """
    if not cfg.clip_norm > 0:
        raise ConfigError(f"clip_norm must be > 0, got {cfg.clip_norm}")
    indices = list(range(len(dataset.items))) if indices is None else list(indices)
    if not indices:
        raise ConfigError("training set is empty")
    model = model.copy()
    items = sorted((dataset.items[i] for i in indices), key=lambda it: _content_key(*it))
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(items))
        losses, scores = [], []
        for step, i in enumerate(order):
            x, y = items[i]
            try:
                loss, grads, z = loss_and_grads(model, x.frames, y.labels, train=True, rng=rng,
                                                return_logits=True)
            except NumericError as exc:
                raise TrainError(f"diverged at epoch {epoch}, step {step}: {exc}") from exc
            if cfg.weight_decay:
                for k in grads:
                    grads[k] = grads[k] + cfg.weight_decay * model.params[k]
            clip_global_norm(grads, cfg.clip_norm)
            opt.step(model.params, grads)
            losses.append(loss)
            scores.append(metrics.score_sequence(np.argmax(z, axis=1), y.labels))
        mean = metrics.mean_scores(scores)
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "acc": mean.accuracy,
                  "edit": mean.edit, "f1": mean.f1}
        history.append(record)
        log.info("epoch %d loss %.5f train %s", epoch, record["loss"], mean)
        if callback is not None and callback(epoch, model, record):
            break
    return model, history


def evaluate(model: ModelParams, dataset: Dataset, indices=None, ignore=None):
    """Per-sequence scores and their unweighted mean."""
    indices = list(range(len(dataset.items))) if indices is None else list(indices)
    per = [metrics.score_sequence(predict(model, dataset.items[i][0].frames),
                                  dataset.items[i][1].labels, ignore) for i in indices]
    return per, metrics.mean_scores(per)
