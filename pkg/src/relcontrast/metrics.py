"""Evaluation metrics."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInput, LengthMismatch, SingleClass


def auc_roc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative; ties count one half.

    Computed from average ranks (Mann-Whitney U).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.shape} scores vs {labels.shape} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mae(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"{pred.shape} predictions vs {target.shape} targets")
    if pred.size == 0:
        raise EmptyInput("mae of an empty input")
    return float(np.mean(np.abs(pred - target)))
