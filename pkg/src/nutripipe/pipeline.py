"""Pipeline orchestration: staged execution with content-hash caching.

Each stage records its input hashes, parameter hash, seed, and row counts
in manifest.json; a stage whose recorded inputs and parameters still match
is skipped. Wall-clock timings live only under the manifest's "timings"
key, which is excluded from determinism comparisons.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig, dumps_config
from .corpus import (
    Labels,
    PostRecord,
    build_labels,
    derive_controls,
    experienced_user_set,
    ingest_posts,
    preprocess,
)
from .embeddings import FallbackVectors, StoreVectors, load_vector_store
from .errors import ConfigError, IncompleteRun, StageFailure
from .explain import (
    export_beeswarm,
    export_waterfall,
    global_importance,
    shapley_exact,
    shapley_sampled,
)
from .food_db import export_food_db, load_food_db
from .matcher import (
    CalibrationConfig,
    NutritionEstimate,
    calibrate_threshold,
    estimate_corpus,
    filter_outliers,
)
from .model import (
    NUTRITION_NAMES,
    FeatureTable,
    GbtModelConfig,
    add_discriminator_block,
    bootstrap_ci,
    model_from_json,
    model_to_json,
    predict_margin,
    roc_auc,
    stratified_split,
    train_gbt,
)
from .textfeat import (
    DiscriminatorSet,
    discriminator_flags,
    load_stopwords,
    mann_whitney_u,
    mine_discriminators,
    spearman_rho,
    text_flag_names,
)

log = logging.getLogger(__name__)

ROBUSTNESS_QUANTILES = (0.95, 0.99, 0.9999)
KCAL_BINS = 40
MACRO_BINS = 50


@dataclass
class RunContext:
    cfg: PipelineConfig
    run_dir: str
    manifest: dict
    cache: dict = field(default_factory=dict)

    def path(self, rel: str) -> str:
        return os.path.join(self.run_dir, rel)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _params_hash(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode("utf-8")).hexdigest()


def _write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- artifacts

POSTS_HEADER = [
    "id", "author", "title_clean", "created_utc", "num_comments", "score", "tag",
    "engagement", "resonance",
]
ESTIMATES_HEADER = [
    "post_id", "kcal", "protein_g", "carb_g", "fat_g", "matched_count",
    "top_match_id", "top_similarity",
]


def write_posts_table(path: str, posts: list[PostRecord], labels: Labels | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSTS_HEADER)
        for post in posts:
            label = labels.by_id.get(post.id) if labels else None
            resonance = "" if label is None or label.resonance is None else label.resonance
            writer.writerow(
                [
                    post.id, post.author, post.title_clean, post.created_utc,
                    post.num_comments, post.score, post.tag,
                    int(post.num_comments >= 1), resonance,
                ]
            )


def read_posts_table(path: str) -> list[PostRecord]:
    posts = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            posts.append(
                PostRecord(
                    id=row["id"],
                    author=row["author"],
                    title_raw=row["title_clean"],
                    title_clean=row["title_clean"],
                    created_utc=int(row["created_utc"]),
                    num_comments=int(row["num_comments"]),
                    score=int(row["score"]),
                    tag=row["tag"],
                )
            )
    return posts


def write_estimates(path: str, estimates: dict[str, NutritionEstimate]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ESTIMATES_HEADER)
        for post_id in sorted(estimates):
            est = estimates[post_id]
            top_id, top_sim = est.matches[0]
            writer.writerow(
                [
                    post_id, repr(est.kcal), repr(est.protein_g), repr(est.carb_g),
                    repr(est.fat_g), est.matched_count, top_id, repr(top_sim),
                ]
            )


def read_estimates(path: str) -> dict[str, dict]:
    out = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["post_id"]] = {
                "kcal": float(row["kcal"]),
                "protein_g": float(row["protein_g"]),
                "carb_g": float(row["carb_g"]),
                "fat_g": float(row["fat_g"]),
            }
    return out


def _vector_provider(ctx: RunContext, db) -> object:
    if ctx.cfg.vectors:
        return StoreVectors(load_vector_store(ctx.cfg.vectors))
    alias = {item.id: item.description for item in db}
    return FallbackVectors(dim=ctx.cfg.fallback_dim, alias=alias)


# ------------------------------------------------------------------- stages


def stage_ingest_db(ctx: RunContext) -> dict:
    db, report = load_food_db(ctx.cfg.food_db)
    export_food_db(db, ctx.path("db.csv"))
    ctx.cache["db"] = db
    return {
        "rows_read": report.rows_read,
        "items_loaded": report.loaded,
        "rejected_numeric": report.rejected_numeric,
        "rejected_invalid": report.rejected_invalid,
        "duplicate_ids": report.duplicate_ids,
        "flagged_macro_sum": report.flagged_macro_sum,
    }


def stage_ingest_posts(ctx: RunContext) -> dict:
    raw, ingest_report = ingest_posts(ctx.cfg.posts)
    posts, filter_report = preprocess(raw)
    write_posts_table(ctx.path("posts.csv"), posts)
    _write_json(
        ctx.path("filter_report.json"),
        {
            "lines_read": ingest_report.lines_read,
            "parsed": ingest_report.parsed,
            "bad_json": ingest_report.bad_json,
            "missing_keys": ingest_report.missing_keys,
            "empty_or_deleted": filter_report.empty_or_deleted,
            "duplicates": filter_report.duplicates,
            "after_preprocessing": filter_report.output_count,
        },
    )
    ctx.cache["posts"] = posts
    return {
        "collected": ingest_report.lines_read,
        "parsed": ingest_report.parsed,
        "after_preprocessing": filter_report.output_count,
    }


def stage_calibrate(ctx: RunContext) -> dict:
    if ctx.cfg.threshold > 0:
        payload = {
            "threshold": ctx.cfg.threshold,
            "source": "config",
            "quantile": ctx.cfg.quantile,
        }
        _write_json(ctx.path("calibration.json"), payload)
        return {"threshold_percent": round(100 * ctx.cfg.threshold, 6)}

    db = ctx.cache.get("db") or load_food_db(ctx.path("db.csv"))[0]
    posts = ctx.cache.get("posts") or read_posts_table(ctx.path("posts.csv"))
    vectors = _vector_provider(ctx, db)
    cal_cfg = CalibrationConfig(
        sample_size=ctx.cfg.sample_size,
        per_post_quantile=ctx.cfg.quantile,
        rounding_precision=ctx.cfg.precision,
        rng_seed=ctx.cfg.stage_seed("calibrate"),
    )
    report = calibrate_threshold(
        [p.title_clean for p in posts], db, vectors, cal_cfg,
        extra_quantiles=ROBUSTNESS_QUANTILES,
    )
    _write_json(
        ctx.path("calibration.json"),
        {
            "threshold": report.threshold,
            "median_quantile": report.median_quantile,
            "quantile": ctx.cfg.quantile,
            "sample_size_used": report.sample_size_used,
            "source": "calibration",
            "robustness_thresholds": {repr(q): t for q, t in report.extra_thresholds.items()},
        },
    )
    return {
        "sample_size_used": report.sample_size_used,
        "threshold_percent": round(100 * report.threshold, 6),
    }


def stage_estimate(ctx: RunContext) -> dict:
    db = ctx.cache.get("db") or load_food_db(ctx.path("db.csv"))[0]
    posts = ctx.cache.get("posts") or read_posts_table(ctx.path("posts.csv"))
    threshold = _read_json(ctx.path("calibration.json"))["threshold"]
    vectors = _vector_provider(ctx, db)
    corpus_est = estimate_corpus(posts, db, vectors, threshold)

    kept_titles, meal_counts = filter_outliers(
        corpus_est.title_estimates, low=ctx.cfg.kcal_low, high=ctx.cfg.kcal_high
    )
    kept_posts, post_counts = filter_outliers(
        corpus_est.estimates, low=ctx.cfg.kcal_low, high=ctx.cfg.kcal_high
    )
    write_estimates(ctx.path("estimates.csv"), kept_posts)
    _write_json(
        ctx.path("estimate_report.json"),
        {
            "threshold": threshold,
            "unique_meals_scanned": corpus_est.scan_count,
            "unique_meals_estimated": len(corpus_est.title_estimates),
            "unique_meals_retained": len(kept_titles),
            "meals_below": meal_counts.below,
            "meals_above": meal_counts.above,
            "posts_no_match": len(corpus_est.no_match),
            "posts_missing_vector": len(corpus_est.missing_vector),
            "posts_below": post_counts.below,
            "posts_above": post_counts.above,
            "posts_with_estimates": len(kept_posts),
        },
    )
    return {
        "unique_meals_estimated": len(corpus_est.title_estimates),
        "unique_meals_retained": len(kept_titles),
        "posts_with_estimates": len(kept_posts),
    }


def stage_featurize(ctx: RunContext) -> dict:
    posts = ctx.cache.get("posts") or read_posts_table(ctx.path("posts.csv"))
    estimates = read_estimates(ctx.path("estimates.csv"))
    modeling = sorted((p for p in posts if p.id in estimates), key=lambda p: p.id)

    experienced, exp_threshold = experienced_user_set(posts, ctx.cfg.experienced_fraction)
    bounds = ctx.cfg.covid_bounds()
    controls = {p.id: derive_controls(p, experienced, bounds) for p in modeling}

    labels = build_labels(
        modeling,
        resonant_quantile=ctx.cfg.resonant_quantile,
        seed=ctx.cfg.stage_seed("labels"),
    )

    from .model import build_feature_table

    est_objs = {
        pid: NutritionEstimate(matches=[("", 1.0)], **vals) for pid, vals in estimates.items()
    }
    table = build_feature_table(modeling, est_objs, controls)

    with open(ctx.path("features.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        names = table.names["N"] + table.names["F"] + table.names["C"]
        writer.writerow(["id"] + names)
        full = np.hstack([table.blocks["N"], table.blocks["F"], table.blocks["C"]])
        for i, pid in enumerate(table.ids):
            writer.writerow([pid] + [repr(float(v)) for v in full[i]])

    splits: dict[str, dict[str, str]] = {}
    for task in ctx.cfg.tasks:
        if task == "engagement":
            ids = table.ids
            y = np.array([int(post.num_comments >= 1) for post in modeling])
        else:
            ids = labels.balanced_ids
            y = np.array([labels.by_id[i].resonance for i in ids], dtype=np.int64)
        train_idx, test_idx = stratified_split(
            y, test_fraction=ctx.cfg.test_fraction, seed=ctx.cfg.stage_seed(f"split:{task}")
        )
        assignment = {}
        for pos, pid in enumerate(ids):
            assignment[pid] = "train"
        for pos in test_idx:
            assignment[ids[pos]] = "test"
        splits[task] = assignment

    with open(ctx.path("labels.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "engagement", "resonance", "split_engagement", "split_resonance"])
        for post in modeling:
            lab = labels.by_id[post.id]
            writer.writerow(
                [
                    post.id,
                    lab.engagement,
                    "" if lab.resonance is None else lab.resonance,
                    splits.get("engagement", {}).get(post.id, ""),
                    splits.get("resonance", {}).get(post.id, ""),
                ]
            )
    _write_json(
        ctx.path("labels_meta.json"),
        {
            "resonance_threshold": labels.resonance_threshold,
            "resonant_count": labels.resonant_count,
            "balanced_count": len(labels.balanced_ids),
            "experienced_threshold_posts": exp_threshold,
            "experienced_authors": len(experienced),
        },
    )
    write_posts_table(ctx.path("posts_labeled.csv"), modeling, labels)
    return {
        "modeling_posts": len(modeling),
        "with_comments": int(sum(1 for p in modeling if p.num_comments >= 1)),
        "resonant": labels.resonant_count,
        "balanced_subset": len(labels.balanced_ids),
    }


@dataclass
class TaskData:
    task: str
    ids: list[str]
    table: FeatureTable
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray


def _load_task_data(ctx: RunContext, task: str, with_discriminators: bool = True) -> TaskData:
    rows = []
    with open(ctx.path("labels.csv"), "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    feature_rows = {}
    with open(ctx.path("features.csv"), "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            feature_rows[row[0]] = [float(v) for v in row[1:]]
    names = header[1:]
    n_width = len(NUTRITION_NAMES)
    f_width = len(text_flag_names())

    split_col = f"split_{task}"
    label_col = "engagement" if task == "engagement" else "resonance"
    ids, y, split = [], [], []
    for row in rows:
        if row[split_col]:
            ids.append(row["id"])
            y.append(int(row[label_col]))
            split.append(row[split_col])
    matrix = np.array([feature_rows[i] for i in ids], dtype=np.float64)
    table = FeatureTable(
        ids=ids,
        blocks={
            "N": matrix[:, :n_width],
            "F": matrix[:, n_width : n_width + f_width],
            "C": matrix[:, n_width + f_width :],
        },
        names={
            "N": names[:n_width],
            "F": names[n_width : n_width + f_width],
            "C": names[n_width + f_width :],
        },
    )
    if with_discriminators:
        dset = DiscriminatorSet.from_json(
            open(ctx.path(f"discriminators_{task}.json"), encoding="utf-8").read()
        )
        stop = load_stopwords()
        titles = _titles_by_id(ctx)
        flags = {pid: discriminator_flags(titles[pid], dset, stop) for pid in ids}
        table = add_discriminator_block(table, flags)
    split = np.array(split)
    return TaskData(
        task=task,
        ids=ids,
        table=table,
        y=np.array(y, dtype=np.int64),
        train_idx=np.flatnonzero(split == "train"),
        test_idx=np.flatnonzero(split == "test"),
    )


def _titles_by_id(ctx: RunContext) -> dict[str, str]:
    posts = ctx.cache.get("posts") or read_posts_table(ctx.path("posts.csv"))
    ctx.cache["posts"] = posts
    return {p.id: p.title_clean for p in posts}


def stage_mine(ctx: RunContext) -> dict:
    titles = _titles_by_id(ctx)
    stop = load_stopwords()
    counts = {}
    for task in ctx.cfg.tasks:
        data = _load_task_data(ctx, task, with_discriminators=False)
        train_ids = [data.ids[i] for i in data.train_idx]
        train_y = data.y[data.train_idx]
        pos = [titles[pid] for pid, lab in zip(train_ids, train_y) if lab == 1]
        neg = [titles[pid] for pid, lab in zip(train_ids, train_y) if lab == 0]
        dset = mine_discriminators(
            pos, neg, cutoff=ctx.cfg.cutoff, alpha=ctx.cfg.alpha, stopwords=stop
        )
        with open(ctx.path(f"discriminators_{task}.json"), "w", encoding="utf-8") as fh:
            fh.write(dset.to_json())
            fh.write("\n")
        counts[f"{task}_positive_words"] = len(dset.positive_words)
        counts[f"{task}_negative_words"] = len(dset.negative_words)
    return counts


def _task_model_config(ctx: RunContext, task: str) -> GbtModelConfig:
    tuned_path = ctx.path(os.path.join("models", task, "tuned.json"))
    if ctx.cfg.use_tuned and os.path.exists(tuned_path):
        obj = _read_json(tuned_path)
        return GbtModelConfig(
            n_estimators=obj["n_estimators"],
            max_depth=obj["max_depth"],
            learning_rate=obj["learning_rate"],
            seed=ctx.cfg.stage_seed(f"train:{task}"),
        )
    base = ctx.cfg.task_model_config(task)
    return GbtModelConfig(seed=ctx.cfg.stage_seed(f"train:{task}"), **base)


def stage_train(ctx: RunContext) -> dict:
    counts = {}
    for task in ctx.cfg.tasks:
        data = _load_task_data(ctx, task)
        cfg = _task_model_config(ctx, task)
        os.makedirs(ctx.path(os.path.join("models", task)), exist_ok=True)
        for label in ctx.cfg.feature_sets:
            X, names = data.table.matrix_for(label)
            model = train_gbt(X[data.train_idx], data.y[data.train_idx], cfg, feature_names=names)
            model.feature_set_label = label
            with open(ctx.path(os.path.join("models", task, f"{label}.json")), "w", encoding="utf-8") as fh:
                fh.write(model_to_json(model))
                fh.write("\n")
        counts[f"{task}_models"] = len(ctx.cfg.feature_sets)
        counts[f"{task}_train_rows"] = int(data.train_idx.size)
        counts[f"{task}_test_rows"] = int(data.test_idx.size)
    return counts


def stage_evaluate(ctx: RunContext) -> dict:
    counts = {}
    for task in ctx.cfg.tasks:
        data = _load_task_data(ctx, task)
        rows = []
        for i, label in enumerate(ctx.cfg.feature_sets):
            model = model_from_json(
                open(ctx.path(os.path.join("models", task, f"{label}.json")), encoding="utf-8").read()
            )
            X, _ = data.table.matrix_for(label)
            scores = predict_margin(model, X[data.test_idx])
            auc = roc_auc(scores, data.y[data.test_idx])
            low, high = bootstrap_ci(
                scores,
                data.y[data.test_idx],
                n_bootstrap=ctx.cfg.n_bootstrap,
                seed=ctx.cfg.stage_seed(f"evaluate:{task}:{label}"),
            )
            rows.append((label, auc, low, high))
        with open(ctx.path(f"results_{task}.csv"), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature_set", "auc", "ci_low", "ci_high"])
            for label, auc, low, high in rows:
                writer.writerow([label, repr(auc), repr(low), repr(high)])
        counts[f"{task}_evaluated"] = len(rows)
    return counts


def stage_explain(ctx: RunContext) -> dict:
    counts = {}
    for task in ctx.cfg.tasks:
        data = _load_task_data(ctx, task)
        rng = np.random.default_rng(ctx.cfg.stage_seed(f"explain:{task}"))
        for label in ctx.cfg.explain_feature_sets:
            if label not in ctx.cfg.feature_sets:
                raise ConfigError(f"explain set {label!r} is not among the trained feature sets")
            model = model_from_json(
                open(ctx.path(os.path.join("models", task, f"{label}.json")), encoding="utf-8").read()
            )
            X, _ = data.table.matrix_for(label)
            train_rows = X[data.train_idx]
            bg_n = min(ctx.cfg.background_size, train_rows.shape[0])
            background = train_rows[rng.choice(train_rows.shape[0], size=bg_n, replace=False)]
            if ctx.cfg.explain_instance_ids:
                row_of = {pid: i for i, pid in enumerate(data.ids)}
                missing_ids = [pid for pid in ctx.cfg.explain_instance_ids if pid not in row_of]
                if missing_ids:
                    raise ConfigError(f"explain instance ids not in the {task} dataset: {missing_ids}")
                instance_rows = np.array([row_of[pid] for pid in ctx.cfg.explain_instance_ids])
            else:
                inst_n = min(ctx.cfg.explain_instances, data.test_idx.size)
                picked = np.sort(rng.choice(data.test_idx.size, size=inst_n, replace=False))
                instance_rows = data.test_idx[picked]

            explanations = []
            ids = []
            for row in instance_rows:
                if ctx.cfg.explain_mode == "exact":
                    exp = shapley_exact(model, X[row], background)
                else:
                    exp = shapley_sampled(
                        model,
                        X[row],
                        background,
                        n_permutations=ctx.cfg.explain_permutations,
                        seed=ctx.cfg.stage_seed(f"explain:{task}:{label}:{data.ids[row]}"),
                    )
                explanations.append(exp)
                ids.append(data.ids[row])

            out_dir = ctx.path(os.path.join("explanations", task, label))
            os.makedirs(out_dir, exist_ok=True)
            export_beeswarm(explanations, os.path.join(out_dir, "beeswarm.csv"), instance_ids=ids)
            importance = global_importance(explanations)
            with open(os.path.join(out_dir, "importance.csv"), "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["feature", "mean_abs_phi"])
                for name, value in zip(importance.feature_names, importance.values):
                    writer.writerow([name, repr(float(value))])
            export_waterfall(explanations[0], os.path.join(out_dir, f"waterfall_{ids[0]}.csv"))
            counts[f"{task}_{label}_instances"] = len(explanations)
    return counts


def _histogram_csv(path: str, values_by_class: dict[str, np.ndarray], lo: float, hi: float, bins: int):
    edges = np.linspace(lo, hi, bins + 1)
    class_names = list(values_by_class)
    hists = {
        name: np.histogram(np.clip(vals, lo, hi), bins=edges)[0]
        for name, vals in values_by_class.items()
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high"] + class_names)
        for b in range(bins):
            writer.writerow(
                [repr(float(edges[b])), repr(float(edges[b + 1]))]
                + [int(hists[name][b]) for name in class_names]
            )


def stage_report(ctx: RunContext) -> dict:
    required = ["posts.csv", "estimates.csv", "labels.csv", "labels_meta.json"]
    required += [f"results_{task}.csv" for task in ctx.cfg.tasks]
    missing = [rel for rel in required if not os.path.exists(ctx.path(rel))]
    if missing:
        raise IncompleteRun(f"missing artifacts: {missing}")

    os.makedirs(ctx.path("report"), exist_ok=True)
    stages = ctx.manifest.get("stages", {})

    def stage_count(stage: str, key: str):
        return stages.get(stage, {}).get("counts", {}).get(key)

    funnel = [
        ("collected", stage_count("ingest_posts", "collected")),
        ("after_preprocessing", stage_count("ingest_posts", "after_preprocessing")),
        ("with_estimates", stage_count("featurize", "modeling_posts")),
        ("with_comments", stage_count("featurize", "with_comments")),
        ("resonant", stage_count("featurize", "resonant")),
    ]
    with open(ctx.path("report/funnel.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "posts"])
        for name, value in funnel:
            writer.writerow([name, value])

    estimates = read_estimates(ctx.path("estimates.csv"))
    labels_rows = list(csv.DictReader(open(ctx.path("labels.csv"), encoding="utf-8", newline="")))
    metrics = ["kcal", "protein_g", "carb_g", "fat_g"]

    stats_all: dict[str, dict] = {}
    for task in ctx.cfg.tasks:
        label_col = "engagement" if task == "engagement" else "resonance"
        groups = {"positive": [], "negative": []}
        for row in labels_rows:
            if not row[label_col]:
                continue
            target = "positive" if row[label_col] == "1" else "negative"
            groups[target].append(estimates[row["id"]])
        task_stats = {}
        for metric in metrics:
            pos_vals = np.array([e[metric] for e in groups["positive"]])
            neg_vals = np.array([e[metric] for e in groups["negative"]])
            lo, hi, bins = (
                (ctx.cfg.kcal_low, ctx.cfg.kcal_high, KCAL_BINS)
                if metric == "kcal"
                else (0.0, 100.0, MACRO_BINS)
            )
            _histogram_csv(
                ctx.path(f"report/hist_{metric}_{task}.csv"),
                {"positive": pos_vals, "negative": neg_vals},
                lo, hi, bins,
            )
            if pos_vals.size and neg_vals.size:
                mw = mann_whitney_u(pos_vals, neg_vals)
                task_stats[metric] = {"U": mw.statistic, "p_value": mw.p_value}
        stats_all[task] = task_stats

    posts = {p.id: p for p in (ctx.cache.get("posts") or read_posts_table(ctx.path("posts.csv")))}
    modeling_ids = [row["id"] for row in labels_rows]
    scores = [posts[i].score for i in modeling_ids]
    comments = [posts[i].num_comments for i in modeling_ids]
    try:
        rho = spearman_rho(scores, comments)
        stats_all["spearman_score_comments"] = {"rho": rho.statistic, "p_value": rho.p_value}
    except Exception:  # constant scores in tiny fixtures
        stats_all["spearman_score_comments"] = None
    _write_json(ctx.path("report/stats.json"), stats_all)

    lines = ["nutripipe run report", "====================", ""]
    lines.append("Filtering funnel (posts):")
    for name, value in funnel:
        lines.append(f"  {name:<22} {value}")
    lines.append("")
    calibration = _read_json(ctx.path("calibration.json"))
    lines.append(
        f"Similarity threshold: {calibration['threshold']:.4f} (source: {calibration.get('source')})"
    )
    lines.append("")
    for task in ctx.cfg.tasks:
        lines.append(f"ROC-AUC ({task}):")
        with open(ctx.path(f"results_{task}.csv"), encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                lines.append(
                    f"  {row['feature_set']:<10} {float(row['auc']):.3f} "
                    f"[{float(row['ci_low']):.3f}, {float(row['ci_high']):.3f}]"
                )
        lines.append("")
        for label in ctx.cfg.explain_feature_sets:
            imp_path = ctx.path(os.path.join("explanations", task, label, "importance.csv"))
            if os.path.exists(imp_path):
                lines.append(f"Top features by mean |phi| ({task}, {label}):")
                with open(imp_path, encoding="utf-8", newline="") as fh:
                    for i, row in enumerate(csv.DictReader(fh)):
                        if i >= 10:
                            break
                        lines.append(f"  {row['feature']:<20} {float(row['mean_abs_phi']):.4f}")
                lines.append("")
    with open(ctx.path("report/summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"report_sections": len(ctx.cfg.tasks)}


# -------------------------------------------------------------- stage table


def _model_paths(ctx: RunContext) -> list[str]:
    return [
        os.path.join("models", task, f"{label}.json")
        for task in ctx.cfg.tasks
        for label in ctx.cfg.feature_sets
    ]


def _explain_paths(ctx: RunContext) -> list[str]:
    out = []
    for task in ctx.cfg.tasks:
        for label in ctx.cfg.explain_feature_sets:
            base = os.path.join("explanations", task, label)
            out += [os.path.join(base, "beeswarm.csv"), os.path.join(base, "importance.csv")]
    return out


def _report_paths(ctx: RunContext) -> list[str]:
    out = ["report/funnel.csv", "report/stats.json", "report/summary.txt"]
    for task in ctx.cfg.tasks:
        out += [f"report/hist_{m}_{task}.csv" for m in ("kcal", "protein_g", "carb_g", "fat_g")]
    return out


STAGES: list[dict] = [
    {
        "name": "ingest_db",
        "inputs": lambda ctx: [ctx.cfg.food_db],
        "outputs": lambda ctx: ["db.csv"],
        "params": lambda ctx: {},
        "run": stage_ingest_db,
    },
    {
        "name": "ingest_posts",
        "inputs": lambda ctx: [ctx.cfg.posts],
        "outputs": lambda ctx: ["posts.csv", "filter_report.json"],
        "params": lambda ctx: {},
        "run": stage_ingest_posts,
    },
    {
        "name": "calibrate",
        "inputs": lambda ctx: ["db.csv", "posts.csv"] + ([ctx.cfg.vectors] if ctx.cfg.vectors else []),
        "outputs": lambda ctx: ["calibration.json"],
        "params": lambda ctx: {
            "sample_size": ctx.cfg.sample_size,
            "quantile": ctx.cfg.quantile,
            "precision": ctx.cfg.precision,
            "threshold": ctx.cfg.threshold,
            "fallback_dim": ctx.cfg.fallback_dim,
        },
        "run": stage_calibrate,
    },
    {
        "name": "estimate",
        "inputs": lambda ctx: ["db.csv", "posts.csv", "calibration.json"]
        + ([ctx.cfg.vectors] if ctx.cfg.vectors else []),
        "outputs": lambda ctx: ["estimates.csv", "estimate_report.json"],
        "params": lambda ctx: {
            "kcal_low": ctx.cfg.kcal_low,
            "kcal_high": ctx.cfg.kcal_high,
            "fallback_dim": ctx.cfg.fallback_dim,
        },
        "run": stage_estimate,
    },
    {
        "name": "featurize",
        "inputs": lambda ctx: ["posts.csv", "estimates.csv"],
        "outputs": lambda ctx: ["features.csv", "labels.csv", "labels_meta.json", "posts_labeled.csv"],
        "params": lambda ctx: {
            "covid_start": ctx.cfg.covid_start,
            "covid_end": ctx.cfg.covid_end,
            "experienced_fraction": ctx.cfg.experienced_fraction,
            "resonant_quantile": ctx.cfg.resonant_quantile,
            "tasks": ctx.cfg.tasks,
            "test_fraction": ctx.cfg.test_fraction,
        },
        "run": stage_featurize,
    },
    {
        "name": "mine",
        "inputs": lambda ctx: ["posts.csv", "features.csv", "labels.csv"],
        "outputs": lambda ctx: [f"discriminators_{task}.json" for task in ctx.cfg.tasks],
        "params": lambda ctx: {"cutoff": ctx.cfg.cutoff, "alpha": ctx.cfg.alpha, "tasks": ctx.cfg.tasks},
        "run": stage_mine,
    },
    {
        "name": "train",
        "inputs": lambda ctx: ["features.csv", "labels.csv"]
        + [f"discriminators_{task}.json" for task in ctx.cfg.tasks]
        + [
            path
            for task in ctx.cfg.tasks
            for path in [os.path.join("models", task, "tuned.json")]
            if ctx.cfg.use_tuned and os.path.exists(ctx.path(path))
        ],
        "outputs": _model_paths,
        "params": lambda ctx: {
            "tasks": ctx.cfg.tasks,
            "feature_sets": ctx.cfg.feature_sets,
            "use_tuned": ctx.cfg.use_tuned,
            "model": {task: ctx.cfg.task_model_config(task) for task in ctx.cfg.tasks},
        },
        "run": stage_train,
    },
    {
        "name": "evaluate",
        "inputs": lambda ctx: ["features.csv", "labels.csv"] + _model_paths(ctx),
        "outputs": lambda ctx: [f"results_{task}.csv" for task in ctx.cfg.tasks],
        "params": lambda ctx: {"n_bootstrap": ctx.cfg.n_bootstrap, "feature_sets": ctx.cfg.feature_sets},
        "run": stage_evaluate,
    },
    {
        "name": "explain",
        "inputs": lambda ctx: ["features.csv", "labels.csv"] + _model_paths(ctx),
        "outputs": _explain_paths,
        "params": lambda ctx: {
            "explain_feature_sets": ctx.cfg.explain_feature_sets,
            "mode": ctx.cfg.explain_mode,
            "instances": ctx.cfg.explain_instances,
            "permutations": ctx.cfg.explain_permutations,
            "background_size": ctx.cfg.background_size,
        },
        "run": stage_explain,
    },
    {
        "name": "report",
        "inputs": lambda ctx: ["posts.csv", "estimates.csv", "labels.csv", "calibration.json"]
        + [f"results_{task}.csv" for task in ctx.cfg.tasks],
        "outputs": _report_paths,
        "params": lambda ctx: {"tasks": ctx.cfg.tasks, "explain_feature_sets": ctx.cfg.explain_feature_sets},
        "run": stage_report,
    },
]

STAGE_NAMES = [s["name"] for s in STAGES]


def _resolve_inputs(ctx: RunContext, paths: list[str]) -> dict[str, str]:
    hashes = {}
    for p in paths:
        run_relative = ctx.path(p)
        if not os.path.isabs(p) and os.path.exists(run_relative):
            absolute = run_relative
        elif os.path.exists(p):
            absolute = p
        else:
            raise StageFailure("resolve-inputs", f"missing input {p}")
        hashes[p] = _sha256(absolute)
    return hashes


def _run_stage(ctx: RunContext, spec: dict, force: bool = False) -> bool:
    """Execute one stage unless its manifest entry is still valid; returns True on cache hit."""
    name = spec["name"]
    try:
        inputs = _resolve_inputs(ctx, spec["inputs"](ctx))
        params = dict(spec["params"](ctx))
        params["seed"] = ctx.cfg.stage_seed(name)
        phash = _params_hash(params)
        outputs = spec["outputs"](ctx)
        entry = ctx.manifest.get("stages", {}).get(name)
        if (
            not force
            and entry
            and entry.get("params") == phash
            and entry.get("inputs") == inputs
            and all(os.path.exists(ctx.path(rel)) for rel in outputs)
        ):
            log.info("stage %s: cache hit", name)
            return True
        log.info("stage %s: running", name)
        started = time.time()
        counts = spec["run"](ctx)
        elapsed = time.time() - started
        out_hashes = {rel: _sha256(ctx.path(rel)) for rel in outputs}
        ctx.manifest.setdefault("stages", {})[name] = {
            "inputs": inputs,
            "params": phash,
            "seed": params["seed"],
            "counts": counts,
            "outputs": out_hashes,
        }
        ctx.manifest.setdefault("timings", {})[name] = round(elapsed, 3)
        _write_json(os.path.join(ctx.run_dir, "manifest.json"), ctx.manifest)
        return False
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, stages: list[str] | None = None, force: bool = False) -> RunContext:
    """Run the staged pipeline into cfg.out_dir; partial runs are resumable."""
    cfg.validate()
    run_dir = cfg.out_dir
    os.makedirs(run_dir, exist_ok=True)
    manifest_path = os.path.join(run_dir, "manifest.json")
    manifest = _read_json(manifest_path) if os.path.exists(manifest_path) else {}
    ctx = RunContext(cfg=cfg, run_dir=run_dir, manifest=manifest)
    with open(os.path.join(run_dir, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))

    wanted = stages or STAGE_NAMES
    unknown = [s for s in wanted if s not in STAGE_NAMES]
    if unknown:
        raise ConfigError(f"unknown stage(s) {unknown}; valid: {STAGE_NAMES}")
    for spec in STAGES:
        if spec["name"] in wanted:
            _run_stage(ctx, spec, force=force)
    return ctx
