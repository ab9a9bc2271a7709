"""Bundled synthetic fixture: food database plus a post corpus with a
planted nutrition-to-engagement effect.

Comment probability is logistic in the source item's true calorie density
plus weekday and author-tenure effects, so control-only models stay
mid-range while nutrition features add real signal. The corpus also plants
preprocessing fodder: deleted/empty titles, emoji, and near-in-time
duplicate posts.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

ADJECTIVES = [
    "grilled", "roasted", "spicy", "creamy", "golden", "rustic", "smoky", "zesty",
    "garden", "classic", "double", "crispy", "sweet", "savory", "tangy", "herbed",
    "stuffed", "glazed", "toasted", "chilled", "hearty", "summer", "winter", "midnight",
]
NOUNS = [
    "pizza", "burger", "ramen", "salad", "tacos", "curry", "pasta", "pancakes",
    "brownies", "soup", "steak", "sushi", "burrito", "cookies", "muffins", "waffles",
    "omelette", "risotto", "lasagna", "dumplings", "sandwich", "noodles", "chili",
    "stew", "casserole", "pie", "cheesecake", "smoothie", "granola", "falafel",
    "paella", "gnocchi", "quiche", "bagel", "donuts", "kebab", "chowder", "frittata",
]
FORMS = [
    "bowl", "platter", "special", "bites", "melt", "skillet", "wrap", "stack",
    "plate", "feast", "supreme", "deluxe",
]
FILLERS = ["tonight", "for dinner", "for lunch", "today", "at home", "for breakfast"]
FLAIRS = ["Homemade", "homemade", "I ate", "i ate", "Pro/Chef", "pro/chef", None]
FLAIR_P = [0.40, 0.35, 0.10, 0.09, 0.01, 0.005, 0.045]

T_START = 1483228800  # 2017-01-01 UTC
T_END = 1672444800  # 2022-12-31 UTC

KCAL_MID = (717.0 + 32.0) / 2.0
KCAL_HALFSPAN = (717.0 - 32.0) / 2.0


def generate_food_db(n_foods: int, rng: np.random.Generator) -> list[dict]:
    noun_base = {noun: float(rng.uniform(60, 640)) for noun in NOUNS}
    adj_shift = {adj: float(rng.uniform(-90, 90)) for adj in ADJECTIVES}
    names = [f"{a} {n}" for a in ADJECTIVES for n in NOUNS]
    names += [f"{a} {n} {f}" for a in ADJECTIVES for n in NOUNS for f in FORMS]
    picked = rng.choice(len(names), size=min(n_foods, len(names)), replace=False)
    rows = []
    for rank, idx in enumerate(sorted(picked)):
        parts = names[idx].split()
        adj, noun = parts[0], parts[1]
        kcal = noun_base[noun] + adj_shift[adj] + float(rng.normal(0, 25))
        kcal = float(np.clip(kcal, 5.0, 880.0))
        protein = float(np.clip(abs(rng.normal(12, 8)), 0.0, 60.0))
        carb = float(np.clip(abs(rng.normal(kcal * 0.08, 10)), 0.0, 95.0))
        fat = float(np.clip(abs(rng.normal(kcal * 0.05, 6)), 0.0, 90.0))
        rows.append(
            {
                "id": f"F{rank:05d}",
                "description": names[idx],
                "kcal": round(kcal, 1),
                "protein_g": round(protein, 1),
                "carb_g": round(carb, 1),
                "fat_g": round(fat, 1),
                "source": ["FoundationFoods", "SRLegacy", "FNDDS"][rank % 3],
            }
        )
    return rows


def _title_for(description: str, rng: np.random.Generator) -> str:
    roll = rng.random()
    if roll < 0.55:
        title = description
    elif roll < 0.85:
        title = f"{description} {FILLERS[int(rng.integers(len(FILLERS)))]}"
    elif roll < 0.95:
        title = f"my {description}"
    else:
        title = f"{description} \U0001f35c!!"
    if rng.random() < 0.2:
        title = title.title()
    return title


def generate_posts(db_rows: list[dict], n_posts: int, rng: np.random.Generator) -> list[dict]:
    n_authors = max(40, n_posts // 6)
    author_weights = 1.0 / np.arange(1, n_authors + 1) ** 1.1
    author_weights /= author_weights.sum()
    n_heavy = math.ceil(0.05 * n_authors)

    kcal = np.array([row["kcal"] for row in db_rows])
    posts = []
    serial = 0

    def next_id():
        nonlocal serial
        serial += 1
        return f"p{serial:07d}"

    for _ in range(n_posts):
        author_rank = int(rng.choice(n_authors, p=author_weights))
        author = f"user{author_rank:05d}"
        heavy = author_rank < n_heavy
        ts = int(rng.integers(T_START, T_END))
        weekday = ((ts // 86400) + 4) % 7 < 5  # epoch day 0 was a Thursday

        roll = rng.random()
        if roll < 0.015:
            title = "[deleted]"
        elif roll < 0.02:
            title = "[removed]"
        elif roll < 0.025:
            title = "   "
        elif roll < 0.027:
            title = "\U0001f35c\U0001f355"
        else:
            item = int(rng.integers(len(db_rows)))
            title = _title_for(db_rows[item]["description"], rng)

        item_kcal = kcal[item] if roll >= 0.027 else float(rng.uniform(100, 400))
        kcal_norm = float(np.clip((item_kcal - KCAL_MID) / KCAL_HALFSPAN, -1.2, 1.2))
        z = -0.55 + 2.4 * kcal_norm + 0.7 * weekday + 1.1 * heavy
        engaged = rng.random() < 1.0 / (1.0 + math.exp(-z))
        if engaged:
            mu = 0.3 + 1.2 * kcal_norm + 0.6 * heavy
            num_comments = 1 + int(rng.lognormal(mean=mu, sigma=1.0))
        else:
            num_comments = 0
        score = max(0, int(round(num_comments * math.exp(rng.normal(1.0, 0.6)) + rng.normal(0, 2))))

        flair = FLAIRS[int(rng.choice(len(FLAIRS), p=FLAIR_P))]
        author_final = "[deleted]" if rng.random() < 0.005 else author
        post = {
            "id": next_id(),
            "author": author_final,
            "title": title,
            "created_utc": ts,
            "num_comments": num_comments,
            "score": score,
        }
        if flair is not None:
            post["link_flair_text"] = flair
        posts.append(post)

        dup_roll = rng.random()
        if dup_roll < 0.01:  # inside the 5-minute window: preprocessing drops it
            dup = dict(post, id=next_id(), created_utc=ts + int(rng.integers(30, 250)))
            posts.append(dup)
        elif dup_roll < 0.015:  # beyond the window: survives as a repost
            dup = dict(post, id=next_id(), created_utc=ts + int(rng.integers(400, 3600)))
            posts.append(dup)
    return posts


def write_synthetic_corpus(out_dir, n_posts: int = 5000, n_foods: int = 1200, seed: int = 0):
    """Write food_db.csv and posts.jsonl under `out_dir`; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    db_rows = generate_food_db(n_foods, rng)
    posts = generate_posts(db_rows, n_posts, rng)

    db_path = os.path.join(out_dir, "food_db.csv")
    with open(db_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,description,kcal,protein_g,carb_g,fat_g,source\n")
        for row in db_rows:
            fh.write(
                f"{row['id']},{row['description']},{row['kcal']},{row['protein_g']},"
                f"{row['carb_g']},{row['fat_g']},{row['source']}\n"
            )
    posts_path = os.path.join(out_dir, "posts.jsonl")
    with open(posts_path, "w", encoding="utf-8") as fh:
        for post in posts:
            fh.write(json.dumps(post, sort_keys=True) + "\n")
    return db_path, posts_path
