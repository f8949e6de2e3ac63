"""Regression and ranking losses, each returning ``(loss, d loss / d scores)``."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

LN2 = np.log(2.0)


def mse_loss(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValidationError(f"scores {s.shape} and labels {y.shape} differ in shape")
    if s.size == 0:
        raise ValidationError("MSE of an empty batch is undefined")
    r = s - y
    return float(np.mean(r * r)), 2.0 * r / s.size


def _ranks(scores):
    """1-based rank by descending score; ties keep input order."""
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def delta_ndcg(scores, labels):
    """``|dNDCG_ij|`` for swapping items i and j at their current ranks."""
    gains = np.power(2.0, labels) - 1.0
    disc = 1.0 / np.log2(1.0 + _ranks(scores))
    ideal = np.sort(gains)[::-1]
    idcg = np.sum(ideal / np.log2(2.0 + np.arange(len(ideal))))
    if idcg <= 0:
        return np.zeros((len(scores), len(scores)))
    return np.abs(np.subtract.outer(gains, gains) * np.subtract.outer(disc, disc)) / idcg


def lambda_rank_loss(scores, labels, group_ids):
    """Pairwise logistic loss weighted by ``|dNDCG|`` (LambdaLoss style).

    Sums ``|dNDCG_ij| * log2(1 + exp(-(s_i - s_j)))`` over pairs in the same
    group with ``label_i > label_j`` and divides by the number of such pairs.
    The ``dNDCG`` weights depend on the current ranks and are treated as
    constants when differentiating.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    g = np.asarray(group_ids)
    grad = np.zeros_like(s)
    total = 0.0
    pairs = 0
    for gid in np.unique(g):
        idx = np.flatnonzero(g == gid)
        if len(idx) < 2:
            continue
        sg, yg = s[idx], y[idx]
        strict = yg[:, None] > yg[None, :]
        n_pairs = int(strict.sum())
        if n_pairs == 0:
            continue
        w = delta_ndcg(sg, yg) * strict
        diff = sg[:, None] - sg[None, :]
        total += float(np.sum(w * np.logaddexp(0.0, -diff))) / LN2
        # d/d diff of log2(1 + e^-diff) = -sigmoid(-diff) / ln2
        coef = -w * (0.5 * (1.0 - np.tanh(0.5 * diff))) / LN2
        grad[idx] += coef.sum(axis=1) - coef.sum(axis=0)
        pairs += n_pairs
    if pairs == 0:
        return 0.0, grad
    return total / pairs, grad / pairs


def task_loss(kind: str, scores, labels, group_ids):
    if kind == "mse":
        return mse_loss(scores, labels)
    if kind == "lambda_rank":
        return lambda_rank_loss(scores, labels, group_ids)
    raise ValueError(f"unknown loss {kind!r}")
