"""Gradient-boosted tree classifier, metrics, and the experiment protocol.

The booster is a from-scratch implementation of second-order gradient
boosting with logistic loss: exact greedy splits on gradient/hessian sums,
leaf values -G/(H + 1), margins in log-odds space. Split scanning and batch
prediction run on the kernels backend (numba or numpy).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import COVID_PERIODS, QUARTILES, ControlFeatures
from .errors import (
    ClassTooSmall,
    ConfigError,
    FeatureMaskMismatch,
    ResampleExhaustion,
    SingleClassInput,
)
from .textfeat import midranks, text_flag_names

LAMBDA = 1.0
BLOCK_ORDER = ("N", "F", "E", "C")
FEATURE_SETS = ("C", "C+N", "C+F", "C+E", "C+N+F", "C+N+E", "C+F+E", "C+N+F+E")

NUTRITION_NAMES = ["kcal", "protein_g", "carb_g", "fat_g"]
DISCRIMINATOR_NAMES = ["disc_positive", "disc_negative"]
CONTROL_NAMES = (
    ["is_weekend"]
    + [f"covid_{p.lower()}" for p in COVID_PERIODS]
    + ["experienced_user"]
    + [f"day_{q.lower()}" for q in QUARTILES]
    + ["tag_i_ate", "tag_homemade", "tag_pro_chef"]
)
_TAG_SLOT = {"IAte": 0, "Homemade": 1, "ProChef": 2}


def encode_controls(ctrl: ControlFeatures) -> np.ndarray:
    out = np.zeros(len(CONTROL_NAMES), dtype=np.float64)
    out[0] = ctrl.is_weekend
    out[1 + COVID_PERIODS.index(ctrl.covid_period)] = 1.0
    out[4] = ctrl.is_experienced_user
    out[5 + QUARTILES.index(ctrl.day_quartile)] = 1.0
    slot = _TAG_SLOT.get(ctrl.tag)
    if slot is not None:
        out[9 + slot] = 1.0
    return out


@dataclass
class FeatureTable:
    """Per-post feature blocks in canonical N, F, E, C order."""

    ids: list[str]
    blocks: dict[str, np.ndarray]
    names: dict[str, list[str]]

    def matrix_for(self, feature_sets: str) -> tuple[np.ndarray, list[str]]:
        wanted = set(feature_sets.split("+"))
        unknown = wanted - set(BLOCK_ORDER)
        if unknown:
            raise ConfigError(f"unknown feature block(s) {sorted(unknown)} in {feature_sets!r}")
        absent = [b for b in wanted if b not in self.blocks]
        if absent:
            raise FeatureMaskMismatch(f"blocks {absent} not built in this table")
        cols, names = [], []
        for block in BLOCK_ORDER:
            if block in wanted:
                cols.append(self.blocks[block])
                names.extend(self.names[block])
        return np.hstack(cols), names


def build_feature_table(posts, estimates, controls) -> FeatureTable:
    """N, F, C blocks for `posts` (every post must have an estimate).

    `estimates` maps post id -> NutritionEstimate, `controls` maps post
    id -> ControlFeatures. The E block is appended later, after mining on
    the training split only.
    """
    from .textfeat import match_descriptors

    ids, n_rows, f_rows, c_rows = [], [], [], []
    for post in posts:
        est = estimates[post.id]
        ids.append(post.id)
        n_rows.append([est.kcal, est.protein_g, est.carb_g, est.fat_g])
        f_rows.append(match_descriptors(post.title_clean))
        c_rows.append(encode_controls(controls[post.id]))
    return FeatureTable(
        ids=ids,
        blocks={
            "N": np.array(n_rows, dtype=np.float64),
            "F": np.array(f_rows, dtype=np.float64),
            "C": np.array(c_rows, dtype=np.float64),
        },
        names={
            "N": list(NUTRITION_NAMES),
            "F": text_flag_names(),
            "C": list(CONTROL_NAMES),
        },
    )


def add_discriminator_block(table: FeatureTable, flags: dict[str, tuple[int, int]]) -> FeatureTable:
    e = np.array([flags[i] for i in table.ids], dtype=np.float64)
    blocks = dict(table.blocks)
    names = dict(table.names)
    blocks["E"] = e
    names["E"] = list(DISCRIMINATOR_NAMES)
    return FeatureTable(ids=table.ids, blocks=blocks, names=names)


@dataclass
class GbtModelConfig:
    n_estimators: int
    max_depth: int
    learning_rate: float
    seed: int = 0
    loss: str = "binary_logistic"

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must be in (0, 1]")


# Paper-protocol defaults per task.
ENGAGEMENT_CONFIG = dict(n_estimators=26, max_depth=4, learning_rate=0.3)
RESONANCE_CONFIG = dict(n_estimators=36, max_depth=2, learning_rate=0.4)


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class TrainedModel:
    trees: list[Tree]
    base_margin: float
    config: GbtModelConfig
    feature_names: list[str]
    feature_set_label: str = ""
    training_logloss: list[float] = field(default_factory=list)
    _arrays: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def ensemble_arrays(self):
        if self._arrays is None:
            if self.trees:
                feat = np.concatenate([t.feature for t in self.trees])
                thr = np.concatenate([t.threshold for t in self.trees])
                sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
                offsets = np.concatenate([[0], np.cumsum(sizes)])
                left = np.concatenate(
                    [np.where(t.left >= 0, t.left + off, -1) for t, off in zip(self.trees, offsets)]
                )
                right = np.concatenate(
                    [np.where(t.right >= 0, t.right + off, -1) for t, off in zip(self.trees, offsets)]
                )
                leaf = np.concatenate([t.value for t in self.trees])
            else:
                feat = np.empty(0, dtype=np.int64)
                thr = leaf = np.empty(0, dtype=np.float64)
                left = right = np.empty(0, dtype=np.int64)
                offsets = np.zeros(1, dtype=np.int64)
            self._arrays = (
                feat.astype(np.int64),
                thr.astype(np.float64),
                left.astype(np.int64),
                right.astype(np.int64),
                leaf.astype(np.float64),
                offsets.astype(np.int64),
            )
        return self._arrays


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


def _logloss(y: np.ndarray, prob: np.ndarray) -> float:
    p = np.clip(prob, 1e-15, 1.0 - 1e-15)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def _build_tree(X: np.ndarray, grad: np.ndarray, hess: np.ndarray, max_depth: int) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)

        best_gain, best_f, best_thr = 0.0, -1, 0.0
        if depth < max_depth and rows.size >= 2:
            for f in range(X.shape[1]):
                vals = X[rows, f]
                order = np.argsort(vals, kind="stable")
                svals = vals[order]
                gain, pos = kernels.best_split_scan(svals, grad[rows][order], hess[rows][order], LAMBDA)
                if pos >= 0 and gain > best_gain:
                    thr = (svals[pos] + svals[pos + 1]) / 2.0
                    if not svals[pos] < thr:  # midpoint collapsed onto the left value
                        thr = float(svals[pos + 1])
                    best_gain, best_f, best_thr = gain, f, float(thr)
        if best_f >= 0:
            mask = X[rows, best_f] < best_thr
            lid = grow(rows[mask], depth + 1)
            rid = grow(rows[~mask], depth + 1)
            feature[node] = best_f
            threshold[node] = best_thr
            left[node] = lid
            right[node] = rid
        else:
            g = float(grad[rows].sum())
            h = float(hess[rows].sum())
            value[node] = -g / (h + LAMBDA)
        return node

    grow(np.arange(X.shape[0], dtype=np.int64), 0)
    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
    )


def train_gbt(X: np.ndarray, y: np.ndarray, cfg: GbtModelConfig, feature_names=None) -> TrainedModel:
    """Fit the boosted ensemble; deterministic given the input order."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("X and y must be non-empty and aligned")
    prevalence = float(y.mean())
    if prevalence <= 0.0 or prevalence >= 1.0:
        raise SingleClassInput("training data must contain both classes")
    base = math.log(prevalence / (1.0 - prevalence))
    names = list(feature_names) if feature_names else [f"f{i}" for i in range(X.shape[1])]

    margins = np.full(X.shape[0], base, dtype=np.float64)
    trees: list[Tree] = []
    losses = [_logloss(y, _sigmoid(margins))]
    for _ in range(cfg.n_estimators):
        prob = _sigmoid(margins)
        grad = prob - y
        hess = prob * (1.0 - prob)
        tree = _build_tree(X, grad, hess, cfg.max_depth)
        trees.append(tree)
        single = TrainedModel(trees=[tree], base_margin=0.0, config=cfg, feature_names=names)
        margins += cfg.learning_rate * _raw_tree_sum(single, X)
        losses.append(_logloss(y, _sigmoid(margins)))
    return TrainedModel(
        trees=trees,
        base_margin=base,
        config=cfg,
        feature_names=names,
        training_logloss=losses,
    )


def _raw_tree_sum(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    feat, thr, left, right, leaf, offsets = model.ensemble_arrays()
    if offsets.shape[0] == 1:
        return np.zeros(X.shape[0], dtype=np.float64)
    return kernels.tree_margin_sum(feat, thr, left, right, leaf, offsets, np.ascontiguousarray(X, dtype=np.float64))


def predict_margin(model: TrainedModel, x: np.ndarray) -> float | np.ndarray:
    """Raw log-odds margin: base + lr * sum of leaf values."""
    x = np.asarray(x, dtype=np.float64)
    one = x.ndim == 1
    X = x[None, :] if one else x
    if X.shape[1] != model.n_features:
        raise FeatureMaskMismatch(f"expected {model.n_features} features, got {X.shape[1]}")
    margins = model.base_margin + model.config.learning_rate * _raw_tree_sum(model, X)
    return float(margins[0]) if one else margins


def predict_proba(model: TrainedModel, x: np.ndarray) -> float | np.ndarray:
    margin = predict_margin(model, x)
    if np.isscalar(margin):
        return float(_sigmoid(np.array([margin]))[0])
    return _sigmoid(margin)


def model_to_json(model: TrainedModel) -> str:
    def node_dict(tree: Tree, idx: int):
        if tree.feature[idx] < 0:
            return {"value": float(tree.value[idx])}
        return {
            "feature": int(tree.feature[idx]),
            "threshold": float(tree.threshold[idx]),
            "left": node_dict(tree, int(tree.left[idx])),
            "right": node_dict(tree, int(tree.right[idx])),
        }

    return json.dumps(
        {
            "format": "nutripipe-gbt-v1",
            "base_margin": model.base_margin,
            "config": {
                "n_estimators": model.config.n_estimators,
                "max_depth": model.config.max_depth,
                "learning_rate": model.config.learning_rate,
                "seed": model.config.seed,
                "loss": model.config.loss,
            },
            "feature_names": model.feature_names,
            "feature_set_label": model.feature_set_label,
            "training_logloss": model.training_logloss,
            "trees": [node_dict(t, 0) for t in model.trees],
        },
        indent=2,
        sort_keys=True,
    )


def model_from_json(text: str) -> TrainedModel:
    obj = json.loads(text)
    if obj.get("format") != "nutripipe-gbt-v1":
        raise ValueError(f"unsupported model format {obj.get('format')!r}")

    def build(node_obj, arrays):
        idx = len(arrays["feature"])
        for key in arrays:
            arrays[key].append(0)
        if "value" in node_obj:
            arrays["feature"][idx] = -1
            arrays["threshold"][idx] = 0.0
            arrays["left"][idx] = -1
            arrays["right"][idx] = -1
            arrays["value"][idx] = node_obj["value"]
        else:
            arrays["feature"][idx] = node_obj["feature"]
            arrays["threshold"][idx] = node_obj["threshold"]
            arrays["value"][idx] = 0.0
            arrays["left"][idx] = build(node_obj["left"], arrays)
            arrays["right"][idx] = build(node_obj["right"], arrays)
        return idx

    trees = []
    for tree_obj in obj["trees"]:
        arrays = {"feature": [], "threshold": [], "left": [], "right": [], "value": []}
        build(tree_obj, arrays)
        trees.append(
            Tree(
                feature=np.array(arrays["feature"], dtype=np.int64),
                threshold=np.array(arrays["threshold"], dtype=np.float64),
                left=np.array(arrays["left"], dtype=np.int64),
                right=np.array(arrays["right"], dtype=np.int64),
                value=np.array(arrays["value"], dtype=np.float64),
            )
        )
    cfg = GbtModelConfig(**obj["config"])
    return TrainedModel(
        trees=trees,
        base_margin=obj["base_margin"],
        config=cfg,
        feature_names=obj["feature_names"],
        feature_set_label=obj.get("feature_set_label", ""),
        training_logloss=obj.get("training_logloss", []),
    )


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties at 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("ROC-AUC needs both classes")
    ranks = midranks(scores)
    u = float(ranks[labels == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def bootstrap_ci(scores, labels, n_bootstrap: int = 1000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap interval for ROC-AUC over (score, label) pairs.

    Single-class resamples are redrawn; the total draw budget is capped at
    ten times n_bootstrap.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    roc_auc(scores, labels)  # validates both classes are present
    rng = np.random.default_rng(seed)
    n = len(scores)
    cap = 10 * n_bootstrap
    aucs = np.empty(n_bootstrap, dtype=np.float64)
    filled = 0
    draws = 0
    while filled < n_bootstrap:
        if draws >= cap:
            raise ResampleExhaustion(f"exceeded {cap} resampling draws")
        idx = rng.integers(0, n, size=n)
        draws += 1
        yl = labels[idx]
        if (yl == 1).all() or (yl == 0).all():
            continue
        aucs[filled] = roc_auc(scores[idx], yl)
        filled += 1
    alpha = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(aucs, [alpha, 100.0 - alpha])
    return float(low), float(high)


def stratified_split(y, test_fraction: float = 0.2, seed: int = 0):
    """Single stratified train/test split; returns sorted index arrays."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    test_idx = []
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        if members.size < 2:
            raise ClassTooSmall(f"class {cls} has {members.size} samples")
        shuffled = rng.permutation(members)
        n_test = min(max(1, int(round(members.size * test_fraction))), members.size - 1)
        test_idx.append(shuffled[:n_test])
    test = np.sort(np.concatenate(test_idx))
    mask = np.ones(len(y), dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask), test


def stratified_kfold(y, k: int = 5, seed: int = 0):
    """Stratified k-fold partitions; class ratios within one sample per fold."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds: list[list[np.ndarray]] = [[] for _ in range(k)]
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if members.size < k:
            raise ClassTooSmall(f"class {cls} has {members.size} < k={k} samples")
        shuffled = rng.permutation(members)
        for f in range(k):
            folds[f].append(shuffled[f::k])
    out = []
    all_idx = np.arange(len(y))
    for f in range(k):
        val = np.sort(np.concatenate(folds[f]))
        mask = np.ones(len(y), dtype=bool)
        mask[val] = False
        out.append((all_idx[mask], val))
    return out


@dataclass
class TuningGrid:
    estimators: tuple = (10, 50, 100, 500, 1000)
    depths: tuple = (1, 2, 3, 4, 10, 15)
    learning_rates: tuple = (0.01, 0.1, 0.2, 0.3, 0.4)


# The paper-scale grid adds the 50,000-estimator point; desk runs cap at 1,000.
FULL_GRID = TuningGrid(estimators=(10, 50, 100, 500, 1000, 50000))


def tune_hyperparameters(
    X,
    y,
    grid: TuningGrid | None = None,
    n_random: int = 20,
    seed: int = 0,
    k: int = 5,
) -> GbtModelConfig:
    """Randomized search over the grid, then grid search around the winner.

    Phase two scans adjacent grid values on every axis and integer-refines
    n_estimators at 10 evenly spaced points between its bracketing grid
    values. Ties break toward fewer estimators, then smaller depth and rate.
    """
    grid = grid or TuningGrid()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    combos = list(itertools.product(grid.estimators, grid.depths, grid.learning_rates))
    if not combos:
        raise ConfigError("empty tuning grid")
    folds = stratified_kfold(y, k=k, seed=seed)
    cache: dict[tuple, float] = {}

    def score(combo) -> float:
        if combo not in cache:
            est, depth, lr = combo
            cfg = GbtModelConfig(n_estimators=est, max_depth=depth, learning_rate=lr, seed=seed)
            aucs = []
            for train_idx, val_idx in folds:
                model = train_gbt(X[train_idx], y[train_idx], cfg)
                aucs.append(roc_auc(predict_margin(model, X[val_idx]), y[val_idx]))
            cache[combo] = float(np.mean(aucs))
        return cache[combo]

    rng = np.random.default_rng(seed)
    n_sample = min(n_random, len(combos))
    picked = rng.choice(len(combos), size=n_sample, replace=False)
    phase1 = [combos[i] for i in sorted(picked)]
    winner = min(phase1, key=lambda cb: (-score(cb), cb[0], cb[1], cb[2]))

    def neighborhood(axis: tuple, value) -> list:
        i = axis.index(value)
        return sorted(set(axis[max(0, i - 1) : i + 2]))

    ei = grid.estimators.index(winner[0])
    lo = grid.estimators[max(0, ei - 1)]
    hi = grid.estimators[min(len(grid.estimators) - 1, ei + 1)]
    refined = sorted({int(round(v)) for v in np.linspace(lo, hi, 10)})
    candidates = set(
        itertools.product(
            neighborhood(grid.estimators, winner[0]),
            neighborhood(grid.depths, winner[1]),
            neighborhood(grid.learning_rates, winner[2]),
        )
    )
    candidates.update((est, winner[1], winner[2]) for est in refined)
    best = min(sorted(candidates), key=lambda cb: (-score(cb), cb[0], cb[1], cb[2]))
    return GbtModelConfig(n_estimators=best[0], max_depth=best[1], learning_rate=best[2], seed=seed)


@dataclass
class EvalReport:
    feature_set_label: str
    roc_auc: float
    ci_low: float
    ci_high: float
    n_bootstrap: int = 1000


@dataclass
class ExperimentResult:
    reports: list[EvalReport]
    models: dict[str, TrainedModel]
    train_idx: np.ndarray
    test_idx: np.ndarray
    test_scores: dict[str, np.ndarray]


def run_experiment_matrix(
    table: FeatureTable,
    y,
    cfg: GbtModelConfig,
    *,
    feature_sets=FEATURE_SETS,
    split=None,
    test_fraction: float = 0.2,
    n_bootstrap: int = 1000,
    seed: int = 0,
) -> ExperimentResult:
    """Train and evaluate every feature-set combination on one shared split."""
    y = np.asarray(y, dtype=np.int64)
    if split is None:
        split = stratified_split(y, test_fraction=test_fraction, seed=seed)
    train_idx, test_idx = split
    reports = []
    models: dict[str, TrainedModel] = {}
    test_scores: dict[str, np.ndarray] = {}
    for i, label in enumerate(feature_sets):
        X, names = table.matrix_for(label)
        model = train_gbt(X[train_idx], y[train_idx], cfg, feature_names=names)
        model.feature_set_label = label
        scores = predict_margin(model, X[test_idx])
        auc = roc_auc(scores, y[test_idx])
        boot_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        low, high = bootstrap_ci(scores, y[test_idx], n_bootstrap=n_bootstrap, seed=boot_seed)
        reports.append(
            EvalReport(feature_set_label=label, roc_auc=auc, ci_low=low, ci_high=high, n_bootstrap=n_bootstrap)
        )
        models[label] = model
        test_scores[label] = scores
    return ExperimentResult(
        reports=reports, models=models, train_idx=train_idx, test_idx=test_idx, test_scores=test_scores
    )
