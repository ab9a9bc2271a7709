"""Shapley-value explanations for trained models.

Coalition values are interventional: v(S) is the mean model margin over
the background set with the coalition's features taken from the explained
instance. Exact enumeration covers up to 15 active features; permutation
sampling handles the rest. Everything operates in margin (log-odds) space,
where the ensemble is additive, so local accuracy is exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBackground, FeatureMaskMismatch, HeterogeneousMask, TooManyFeatures
from .model import TrainedModel, predict_margin

EXACT_FEATURE_LIMIT = 15
DEFAULT_PERMUTATIONS = 2000
DEFAULT_BACKGROUND_SIZE = 100


@dataclass
class Explanation:
    base_value: float
    phi: np.ndarray
    prediction_margin: float
    feature_values: np.ndarray
    feature_names: list[str]
    standard_errors: np.ndarray | None = None


@dataclass
class GlobalImportance:
    feature_names: list[str]
    values: np.ndarray


def _check_inputs(model: TrainedModel, x: np.ndarray, background: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 2 or background.shape[0] == 0:
        raise EmptyBackground("background must be a non-empty matrix")
    if x.shape[0] != model.n_features or background.shape[1] != model.n_features:
        raise FeatureMaskMismatch("instance/background width does not match the model")
    return x, background


def shapley_exact(model: TrainedModel, x, background) -> Explanation:
    """Exact Shapley values by full coalition enumeration (d <= 15)."""
    x, background = _check_inputs(model, x, background)
    d = model.n_features
    if d > EXACT_FEATURE_LIMIT:
        raise TooManyFeatures(f"{d} features exceed the exact-mode limit of {EXACT_FEATURE_LIMIT}")
    n_masks = 1 << d
    b = background.shape[0]

    values = np.empty(n_masks, dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, b * d))  # keep hybrid batches around 32 MB
    for start in range(0, n_masks, chunk):
        masks = range(start, min(start + chunk, n_masks))
        hybrids = np.tile(background, (len(masks), 1))
        for row, mask in enumerate(masks):
            block = hybrids[row * b : (row + 1) * b]
            for j in range(d):
                if mask >> j & 1:
                    block[:, j] = x[j]
        margins = predict_margin(model, hybrids)
        values[start : start + len(masks)] = margins.reshape(len(masks), b).mean(axis=1)

    fact = [math.factorial(i) for i in range(d + 1)]
    weights = [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)]
    phi = np.zeros(d, dtype=np.float64)
    for mask in range(n_masks):
        size = bin(mask).count("1")
        if size == d:
            continue
        v_s = values[mask]
        w = weights[size]
        for j in range(d):
            if not mask >> j & 1:
                phi[j] += w * (values[mask | (1 << j)] - v_s)

    return Explanation(
        base_value=float(values[0]),
        phi=phi,
        prediction_margin=float(predict_margin(model, x)),
        feature_values=x,
        feature_names=list(model.feature_names),
    )


def shapley_sampled(
    model: TrainedModel,
    x,
    background,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> Explanation:
    """Permutation-sampling Shapley estimate with per-feature standard errors."""
    x, background = _check_inputs(model, x, background)
    d = model.n_features
    b = background.shape[0]
    rng = np.random.default_rng(seed)

    v_empty = float(np.mean(predict_margin(model, background)))
    sums = np.zeros(d, dtype=np.float64)
    sq_sums = np.zeros(d, dtype=np.float64)
    for _ in range(n_permutations):
        order = rng.permutation(d)
        hybrids = np.empty((d, b, d), dtype=np.float64)
        state = background.copy()
        for step, j in enumerate(order):
            state[:, j] = x[j]
            hybrids[step] = state
        margins = predict_margin(model, hybrids.reshape(d * b, d)).reshape(d, b)
        step_values = margins.mean(axis=1)
        prev = v_empty
        for step, j in enumerate(order):
            delta = step_values[step] - prev
            sums[j] += delta
            sq_sums[j] += delta * delta
            prev = step_values[step]

    phi = sums / n_permutations
    if n_permutations > 1:
        variance = (sq_sums - n_permutations * phi * phi) / (n_permutations - 1)
        se = np.sqrt(np.maximum(variance, 0.0) / n_permutations)
    else:
        se = np.full(d, np.inf)
    return Explanation(
        base_value=v_empty,
        phi=phi,
        prediction_margin=float(predict_margin(model, x)),
        feature_values=x,
        feature_names=list(model.feature_names),
        standard_errors=se,
    )


def global_importance(explanations) -> GlobalImportance:
    """Mean absolute contribution per feature, sorted descending."""
    explanations = list(explanations)
    if not explanations:
        raise ValueError("need at least one explanation")
    names = explanations[0].feature_names
    for e in explanations[1:]:
        if e.feature_names != names:
            raise HeterogeneousMask("explanations cover different feature masks")
    mean_abs = np.mean([np.abs(e.phi) for e in explanations], axis=0)
    order = sorted(range(len(names)), key=lambda i: (-mean_abs[i], names[i]))
    return GlobalImportance(
        feature_names=[names[i] for i in order],
        values=mean_abs[np.array(order)],
    )


def export_beeswarm(explanations, path=None, instance_ids=None):
    """Long-format rows (feature, instance, phi, feature_value).

    Rows are ordered by global importance rank, then instance id.
    """
    explanations = list(explanations)
    importance = global_importance(explanations)
    ids = list(instance_ids) if instance_ids is not None else [str(i) for i in range(len(explanations))]
    name_to_col = {n: i for i, n in enumerate(explanations[0].feature_names)}
    rows = []
    for feat in importance.feature_names:
        col = name_to_col[feat]
        for inst, e in sorted(zip(ids, explanations), key=lambda p: p[0]):
            rows.append((feat, inst, float(e.phi[col]), float(e.feature_values[col])))
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "instance", "phi", "feature_value"])
            for row in rows:
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
    return rows


def export_waterfall(explanation: Explanation, path=None):
    """Cumulative contribution table from base value to prediction margin.

    Features with exactly zero contribution are omitted; ties in |phi|
    order lexicographically.
    """
    order = sorted(
        (i for i in range(len(explanation.phi)) if explanation.phi[i] != 0.0),
        key=lambda i: (-abs(explanation.phi[i]), explanation.feature_names[i]),
    )
    rows = [("baseline", "", "", explanation.base_value)]
    cumulative = explanation.base_value
    for i in order:
        cumulative += float(explanation.phi[i])
        rows.append(
            (
                explanation.feature_names[i],
                float(explanation.feature_values[i]),
                float(explanation.phi[i]),
                cumulative,
            )
        )
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "feature_value", "phi", "cumulative"])
            for name, value, phi, cum in rows:
                writer.writerow(
                    [name, "" if value == "" else repr(value), "" if phi == "" else repr(phi), repr(cum)]
                )
    return rows
