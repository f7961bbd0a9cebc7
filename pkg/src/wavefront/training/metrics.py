"""Ranking metrics: accuracy, average precision, ROC AUC and d-prime."""

from __future__ import annotations

import math
import warnings
from typing import Dict

import numpy as np
from scipy.stats import rankdata

# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549671010739305e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _poly(coeffs, x):
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def norm_ppf(p: float) -> float:
    """Inverse standard normal CDF, accurate to ~1e-15 after one Halley step."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"probability {p} outside [0, 1]")
    if p == 0.0:
        return -math.inf
    if p == 1.0:
        return math.inf
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = _poly(_C, q) / (_poly(_D, q) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = q * _poly(_A, r) / (_poly(_B, r) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -_poly(_C, q) / (_poly(_D, q) * q + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def d_prime(auc: float) -> float:
    """``sqrt(2) * norm_ppf(auc)``; zero at chance, infinite at a perfect ranking."""
    return math.sqrt(2.0) * norm_ppf(auc)


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when only one class is present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum over score thresholds of ``(R_k - R_{k-1}) * P_k``; tied scores share a threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = tp[last]
    precision = tp / (last + 1.0)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def metrics(scores, labels) -> Dict[str, float]:
    """Accuracy, macro AP, macro AUC and the d-prime of the macro AUC.

    ``labels`` is an integer class vector or an ``(N, C)`` binary matrix.
    Classes with only positives or only negatives are excluded from the
    macro averages with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise ValueError(f"scores must be (N, C), got {scores.shape}")
    if labels.ndim == 1:
        if labels.size and (labels.min() < 0 or labels.max() >= scores.shape[1]):
            raise ValueError("label index outside the score columns")
        accuracy = float(np.mean(np.argmax(scores, axis=1) == labels))
        binary = _one_hot(labels.astype(int), scores.shape[1])
    else:
        binary = labels.astype(bool)
        accuracy = float(np.mean((scores > 0) == binary))
    if binary.shape != scores.shape:
        raise ValueError(f"labels {binary.shape} and scores {scores.shape} are not aligned")
    aps, aucs = [], []
    for c in range(scores.shape[1]):
        column = binary[:, c].astype(bool)
        if column.all() or not column.any():
            warnings.warn(f"class {c} has a single label value; excluded from AP/AUC averages")
            continue
        aps.append(average_precision(scores[:, c], column))
        aucs.append(roc_auc(scores[:, c], column))
    if not aucs:
        return {"accuracy": accuracy, "average_precision": math.nan, "auc": math.nan, "d_prime": math.nan}
    auc = float(np.mean(aucs))
    return {"accuracy": accuracy, "average_precision": float(np.mean(aps)), "auc": auc, "d_prime": d_prime(auc)}
