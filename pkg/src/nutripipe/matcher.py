"""Similarity matching of titles to food items and weighted nutrition estimates.

Calibration picks the similarity threshold as the median over sampled posts
of each post's high quantile of similarities to the whole database, rounded
up to whole percent. Estimation keeps the five most similar items at or
above the threshold and aggregates densities by similarity-weighted mean.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import cosine  # noqa: F401  (re-exported for callers)
from .errors import EmptySample, MissingVector
from .food_db import FoodDatabase

log = logging.getLogger(__name__)

DEFAULT_KCAL_LOW = 32.0  # 100 g of strawberries
DEFAULT_KCAL_HIGH = 717.0  # 100 g of butter
MAX_MATCHES = 5
MISSING_ABORT_FRACTION = 0.01


@dataclass
class CalibrationConfig:
    sample_size: int = 5000
    per_post_quantile: float = 0.999
    rounding_precision: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.per_post_quantile < 1:
            raise ValueError("per_post_quantile must be in (0, 1)")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


@dataclass
class CalibrationReport:
    per_post_quantiles: np.ndarray
    median_quantile: float
    threshold: float
    sample_size_used: int
    skipped_titles: list[str] = field(default_factory=list)
    extra_thresholds: dict[float, float] = field(default_factory=dict)


@dataclass
class NutritionEstimate:
    kcal: float
    protein_g: float
    carb_g: float
    fat_g: float
    matches: list[tuple[str, float]]

    @property
    def matched_count(self) -> int:
        return len(self.matches)


@dataclass
class CorpusEstimates:
    estimates: dict[str, NutritionEstimate]
    no_match: list[str]
    missing_vector: list[str]
    scan_count: int
    title_estimates: dict[str, NutritionEstimate] = field(default_factory=dict)


@dataclass
class OutlierCounts:
    below: int = 0
    above: int = 0


class MatcherIndex:
    """Normalized database vectors plus densities, built once per corpus."""

    def __init__(self, db: FoodDatabase, vectors):
        ids = [item.id for item in db]
        mat, missing = vectors.matrix(ids)
        if missing:
            frac = len(missing) / max(1, len(ids))
            if frac >= MISSING_ABORT_FRACTION:
                raise MissingVector(missing)
            log.warning("skipping %d food items without vectors: %s", len(missing), missing[:5])
            keep = [i for i, item in enumerate(db) if item.id not in set(missing)]
        else:
            keep = range(len(ids))
        items = [db.items[i] for i in keep]
        self.ids = [item.id for item in items]
        self.densities = np.array(
            [[it.kcal, it.protein_g, it.carb_g, it.fat_g] for it in items], dtype=np.float64
        )
        sub = mat[list(keep)].astype(np.float64)
        norms = np.linalg.norm(sub, axis=1)
        norms[norms == 0.0] = 1.0
        self.matrix = sub / norms[:, None]
        self.skipped = list(missing)

    @property
    def count(self) -> int:
        return len(self.ids)

    def similarities(self, query: np.ndarray) -> np.ndarray:
        q = query.astype(np.float64)
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            return np.zeros(self.count)
        return self.matrix @ (q / norm)


def nearest_rank_quantile(values: np.ndarray, q: float) -> float:
    """k-th smallest with k = ceil(q * n) (nearest-rank-ceiling)."""
    n = values.shape[0]
    if n == 0:
        raise EmptySample("quantile of empty sample")
    k = math.ceil(round(q * n, 9))
    k = min(max(k, 1), n)
    return float(np.partition(values, k - 1)[k - 1])


def round_up_to_precision(x: float, precision: float) -> float:
    steps = math.ceil(round(x / precision, 9))
    return steps * precision


def calibrate_threshold(
    titles, db: FoodDatabase, vectors, cfg: CalibrationConfig, extra_quantiles=()
) -> CalibrationReport:
    """Derive the similarity threshold from a seeded sample of titles.

    `extra_quantiles` recomputes the threshold at alternative quantiles from
    the same similarity scan (robustness check).
    """
    titles = list(titles)
    if not titles:
        raise EmptySample("no titles to calibrate on")
    rng = np.random.default_rng(cfg.rng_seed)
    if len(titles) > cfg.sample_size:
        picked = rng.choice(len(titles), size=cfg.sample_size, replace=False)
        sample = [titles[i] for i in sorted(picked)]
    else:
        sample = titles

    index = MatcherIndex(db, vectors)
    mat, missing = vectors.matrix(sample)
    if missing:
        if len(missing) / len(sample) >= MISSING_ABORT_FRACTION:
            raise MissingVector(missing)
        log.warning("skipping %d sampled titles without vectors", len(missing))
        missing_set = set(missing)
        keep = [i for i, t in enumerate(sample) if t not in missing_set]
        mat = mat[keep]
    if mat.shape[0] == 0:
        raise EmptySample("every sampled title lacked a vector")

    q64 = mat.astype(np.float64)
    norms = np.linalg.norm(q64, axis=1)
    norms[norms == 0.0] = 1.0
    sims = (q64 / norms[:, None]) @ index.matrix.T

    def threshold_at(q: float) -> tuple[np.ndarray, float, float]:
        k = math.ceil(round(q * index.count, 9))
        k = min(max(k, 1), index.count)
        per_post = np.partition(sims, k - 1, axis=1)[:, k - 1]
        median = float(np.median(per_post))
        thr = round_up_to_precision(median, cfg.rounding_precision)
        return per_post, median, min(max(thr, 0.0), 1.0)

    per_post, median, threshold = threshold_at(cfg.per_post_quantile)
    extras = {q: threshold_at(q)[2] for q in extra_quantiles}
    return CalibrationReport(
        per_post_quantiles=per_post,
        median_quantile=median,
        threshold=threshold,
        sample_size_used=mat.shape[0],
        skipped_titles=list(missing),
        extra_thresholds=extras,
    )


def _estimate_from_sims(sims: np.ndarray, index: MatcherIndex, threshold: float) -> NutritionEstimate | None:
    passing = np.flatnonzero(sims >= threshold)
    if passing.size == 0:
        return None
    ranked = sorted(passing, key=lambda i: (-sims[i], index.ids[i]))[:MAX_MATCHES]
    weights = sims[ranked]
    dens = index.densities[ranked]
    agg = (weights[:, None] * dens).sum(axis=0) / weights.sum()
    matches = [(index.ids[i], float(sims[i])) for i in ranked]
    return NutritionEstimate(
        kcal=float(agg[0]), protein_g=float(agg[1]), carb_g=float(agg[2]), fat_g=float(agg[3]),
        matches=matches,
    )


def estimate_nutrition(title: str, db: FoodDatabase, vectors, threshold: float) -> NutritionEstimate | None:
    """Estimate densities for one title; None when nothing passes the threshold."""
    index = MatcherIndex(db, vectors)
    vec, missing = vectors.matrix([title])
    if missing:
        raise MissingVector(missing)
    sims = index.similarities(vec[0])
    return _estimate_from_sims(sims, index, threshold)


def estimate_corpus(posts, db: FoodDatabase, vectors, threshold: float, chunk: int = 512) -> CorpusEstimates:
    """Estimate every post via its cleaned title, memoized per unique title.

    Results map post id -> estimate, ordered by post id; posts whose title
    matched nothing (or had no vector) are listed instead of aborting.
    """
    index = MatcherIndex(db, vectors)
    unique_titles: list[str] = []
    seen: set[str] = set()
    for post in posts:
        if post.title_clean not in seen:
            seen.add(post.title_clean)
            unique_titles.append(post.title_clean)

    memo: dict[str, NutritionEstimate | None] = {}
    missing_titles: set[str] = set()
    scan_count = 0
    for start in range(0, len(unique_titles), chunk):
        batch = unique_titles[start : start + chunk]
        mat, missing = vectors.matrix(batch)
        missing_set = set(missing)
        q64 = mat.astype(np.float64)
        norms = np.linalg.norm(q64, axis=1)
        nonzero = norms > 0.0
        q64[nonzero] = q64[nonzero] / norms[nonzero, None]
        sims = q64 @ index.matrix.T
        for i, title in enumerate(batch):
            if title in missing_set:
                missing_titles.add(title)
                memo[title] = None
                continue
            scan_count += 1
            memo[title] = _estimate_from_sims(sims[i], index, threshold)

    estimates: dict[str, NutritionEstimate] = {}
    no_match: list[str] = []
    missing_vector: list[str] = []
    for post in sorted(posts, key=lambda p: p.id):
        if post.title_clean in missing_titles:
            missing_vector.append(post.id)
            continue
        est = memo[post.title_clean]
        if est is None:
            no_match.append(post.id)
        else:
            estimates[post.id] = est
    title_estimates = {t: e for t, e in memo.items() if e is not None}
    return CorpusEstimates(
        estimates=estimates,
        no_match=no_match,
        missing_vector=missing_vector,
        scan_count=scan_count,
        title_estimates=title_estimates,
    )


def filter_outliers(
    estimates: dict[str, NutritionEstimate],
    low: float = DEFAULT_KCAL_LOW,
    high: float = DEFAULT_KCAL_HIGH,
) -> tuple[dict[str, NutritionEstimate], OutlierCounts]:
    """Keep estimates with low <= kcal <= high; bounds are inclusive."""
    if not low < high:
        raise ValueError("low bound must be below high bound")
    counts = OutlierCounts()
    kept: dict[str, NutritionEstimate] = {}
    for key, est in estimates.items():
        if est.kcal < low:
            counts.below += 1
        elif est.kcal > high:
            counts.above += 1
        else:
            kept[key] = est
    return kept, counts
