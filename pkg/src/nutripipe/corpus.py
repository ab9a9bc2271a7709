"""Post ingestion, preprocessing, labels, and control features.

Preprocessing drops empty/deleted posts, removes same-author duplicates
posted within five minutes, and strips titles down to letters, digits,
whitespace, and ``' - & ( ) / , .``. Engagement means at least one comment;
resonance contrasts the top percentile by comment count against a balanced
sample of posts with at most one comment.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import NotEnoughNonResonant

log = logging.getLogger(__name__)

TAGS = ("IAte", "Homemade", "ProChef", "OtherOrMissing")
COVID_PERIODS = ("Pre", "During", "Post")
QUARTILES = ("Q1", "Q2", "Q3", "Q4")

# Half-open COVID period bounds, UTC: Pre < start; During in [start, end); Post >= end.
DEFAULT_COVID_START = int(datetime(2020, 3, 1, tzinfo=timezone.utc).timestamp())
DEFAULT_COVID_END = int(datetime(2021, 7, 1, tzinfo=timezone.utc).timestamp())

DEDUP_WINDOW_SECONDS = 300
DELETED_MARKERS = ("[deleted]", "[removed]")

_KEEP_PUNCT = set("'-&()/,.")


@dataclass
class PostRecord:
    id: str
    author: str
    title_raw: str
    title_clean: str
    created_utc: int
    num_comments: int
    score: int = 0
    tag: str = "OtherOrMissing"


@dataclass
class ControlFeatures:
    is_weekend: int
    covid_period: str
    is_experienced_user: int
    day_quartile: str
    tag: str


@dataclass
class LabelSet:
    engagement: int
    resonance: int | None = None


@dataclass
class IngestReport:
    lines_read: int = 0
    parsed: int = 0
    bad_json: int = 0
    missing_keys: int = 0


@dataclass
class FilterReport:
    input_count: int = 0
    empty_or_deleted: int = 0
    duplicates: int = 0
    output_count: int = 0


@dataclass
class Labels:
    by_id: dict[str, LabelSet]
    resonance_threshold: int
    resonant_count: int
    balanced_ids: list[str] = field(default_factory=list)


def clean_title(raw: str) -> str:
    """Keep letters, digits, whitespace and ' - & ( ) / , . ; collapse runs."""
    kept = []
    for ch in raw:
        if ch.isalpha() or ch.isdigit() or ch.isspace() or ch in _KEEP_PUNCT:
            kept.append(ch)
    return " ".join("".join(kept).split())


def normalize_tag(flair: str | None) -> str:
    if not flair:
        return "OtherOrMissing"
    lowered = flair.lower()
    if "i ate" in lowered:
        return "IAte"
    if "homemade" in lowered:
        return "Homemade"
    if "pro/chef" in lowered:
        return "ProChef"
    return "OtherOrMissing"


REQUIRED_POST_KEYS = ("id", "author", "title", "created_utc", "num_comments")


def ingest_posts(path) -> tuple[list[PostRecord], IngestReport]:
    """Parse a JSON Lines post dump; malformed lines are counted and skipped."""
    report = IngestReport()
    posts: list[PostRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            report.lines_read += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                report.bad_json += 1
                continue
            if not isinstance(obj, dict) or any(k not in obj for k in REQUIRED_POST_KEYS):
                report.missing_keys += 1
                continue
            try:
                title = str(obj["title"])
                posts.append(
                    PostRecord(
                        id=str(obj["id"]),
                        author=str(obj["author"]),
                        title_raw=title,
                        title_clean=clean_title(title),
                        created_utc=int(obj["created_utc"]),
                        num_comments=max(0, int(obj["num_comments"])),
                        score=int(obj.get("score", 0) or 0),
                        tag=normalize_tag(obj.get("link_flair_text")),
                    )
                )
                report.parsed += 1
            except (TypeError, ValueError):
                report.missing_keys += 1
    return posts, report


def preprocess(posts: list[PostRecord]) -> tuple[list[PostRecord], FilterReport]:
    """Drop empty/deleted posts, then same-author duplicates within 5 minutes.

    A duplicate chain is anchored at its earliest retained post: later posts
    with the same author and cleaned title are dropped while within 300 s of
    the anchor; the first one beyond the window survives and re-anchors.
    """
    report = FilterReport(input_count=len(posts))
    alive: list[PostRecord] = []
    for post in posts:
        cleaned = clean_title(post.title_raw)
        title_raw = post.title_raw.strip()
        if (
            not title_raw
            or title_raw.lower() in DELETED_MARKERS
            or post.author == "[deleted]"
            or not cleaned
        ):
            report.empty_or_deleted += 1
            continue
        if cleaned != post.title_clean:
            post = dataclasses.replace(post, title_clean=cleaned)
        alive.append(post)

    groups: dict[tuple[str, str], list[int]] = {}
    for pos, post in enumerate(alive):
        groups.setdefault((post.author, post.title_clean), []).append(pos)

    dropped: set[int] = set()
    for positions in groups.values():
        if len(positions) == 1:
            continue
        ordered = sorted(positions, key=lambda p: (alive[p].created_utc, p))
        anchor = alive[ordered[0]].created_utc
        for pos in ordered[1:]:
            ts = alive[pos].created_utc
            if ts - anchor <= DEDUP_WINDOW_SECONDS:
                dropped.add(pos)
                report.duplicates += 1
            else:
                anchor = ts

    survivors = [post for pos, post in enumerate(alive) if pos not in dropped]
    report.output_count = len(survivors)
    return survivors, report


def day_quartile(created_utc: int) -> str:
    hour = datetime.fromtimestamp(created_utc, tz=timezone.utc).hour
    return QUARTILES[hour // 6]


def derive_controls(
    post: PostRecord,
    experienced_authors: set[str],
    covid_bounds: tuple[int, int] = (DEFAULT_COVID_START, DEFAULT_COVID_END),
) -> ControlFeatures:
    start, end = covid_bounds
    if start > end:
        raise ValueError("covid bounds must be ordered")
    ts = post.created_utc
    period = "Pre" if ts < start else ("During" if ts < end else "Post")
    weekday = datetime.fromtimestamp(ts, tz=timezone.utc).weekday()
    return ControlFeatures(
        is_weekend=int(weekday >= 5),
        covid_period=period,
        is_experienced_user=int(post.author in experienced_authors),
        day_quartile=day_quartile(ts),
        tag=post.tag,
    )


def experienced_user_set(posts: list[PostRecord], top_fraction: float = 0.05) -> tuple[set[str], int]:
    """Authors in roughly the top `top_fraction` by post count, ties included.

    Picks the smallest post count c such that authors with >= c posts fit
    within ceil(top_fraction * distinct_authors); everyone at or above c is
    in (so the set can undershoot the cap, or exceed the raw fraction). If
    no count fits the cap (one giant tie), the top tie group is taken whole.
    """
    if not posts:
        raise ValueError("no posts")
    counts: dict[str, int] = {}
    for post in posts:
        counts[post.author] = counts.get(post.author, 0) + 1
    cap = math.ceil(round(top_fraction * len(counts), 9))
    unique_counts = sorted(set(counts.values()))
    tally = {c: 0 for c in unique_counts}
    for value in counts.values():
        tally[value] += 1
    at_least = 0
    threshold = unique_counts[-1]
    for c in reversed(unique_counts):
        if at_least + tally[c] > cap:
            break
        at_least += tally[c]
        threshold = c
    if at_least == 0:
        threshold = unique_counts[-1]
        log.warning("top tie group alone exceeds the %.0f%% cap; keeping it whole", 100 * top_fraction)
    authors = {a for a, c in counts.items() if c >= threshold}
    return authors, threshold


def resonance_threshold(comment_counts, quantile: float = 0.99) -> int:
    """Smallest comment count still inside the top (1 - quantile) of posts.

    With m = ceil((1 - quantile) * n), this is the m-th largest count;
    everything at or above it counts as resonant, boundary ties included.
    """
    counts = np.asarray(comment_counts, dtype=np.int64)
    n = counts.shape[0]
    if n == 0:
        raise ValueError("no comment counts")
    m = math.ceil(round((1.0 - quantile) * n, 9))
    m = min(max(m, 1), n)
    return int(np.partition(counts, n - m)[n - m])


def build_labels(posts: list[PostRecord], resonant_quantile: float = 0.99, seed: int = 0) -> Labels:
    """Engagement and resonance labels plus the balanced resonance subset.

    Non-resonant posts are drawn uniformly from posts with <= 1 comment to
    match the resonant count.
    """
    if not posts:
        raise ValueError("no posts")
    threshold = resonance_threshold([p.num_comments for p in posts], resonant_quantile)

    resonant_ids = [p.id for p in posts if p.num_comments >= threshold]
    candidates = sorted(p.id for p in posts if p.num_comments <= 1 and p.num_comments < threshold)
    if len(candidates) < len(resonant_ids):
        raise NotEnoughNonResonant(
            f"{len(candidates)} non-resonant candidates for {len(resonant_ids)} resonant posts"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(candidates), size=len(resonant_ids), replace=False)
    sampled = {candidates[i] for i in picked}

    resonant_set = set(resonant_ids)
    by_id: dict[str, LabelSet] = {}
    for post in posts:
        if post.id in resonant_set:
            resonance = 1
        elif post.id in sampled:
            resonance = 0
        else:
            resonance = None
        by_id[post.id] = LabelSet(engagement=int(post.num_comments >= 1), resonance=resonance)
    balanced = sorted(resonant_set | sampled)
    return Labels(
        by_id=by_id,
        resonance_threshold=threshold,
        resonant_count=len(resonant_ids),
        balanced_ids=balanced,
    )
