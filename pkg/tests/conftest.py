import csv
import json

import numpy as np
import pytest

from nutripipe.corpus import PostRecord
from nutripipe.food_db import FoodDatabase, FoodItem


@pytest.fixture
def make_db():
    def build(rows):
        items = [
            FoodItem(
                id=r[0], description=r[1], kcal=float(r[2]),
                protein_g=float(r[3]), carb_g=float(r[4]), fat_g=float(r[5]),
            )
            for r in rows
        ]
        return FoodDatabase(items=items)

    return build


@pytest.fixture
def write_db_csv(tmp_path):
    def build(rows, header="id,description,kcal,protein_g,carb_g,fat_g,source"):
        path = tmp_path / "db.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(header + "\n")
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow(row)
        return path

    return build


@pytest.fixture
def write_posts_jsonl(tmp_path):
    def build(posts, name="posts.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as fh:
            for post in posts:
                fh.write(post if isinstance(post, str) else json.dumps(post))
                fh.write("\n")
        return path

    return build


@pytest.fixture
def make_post():
    def build(pid, title="pizza", author="alice", created=1_600_000_000, comments=0, score=0, tag="Homemade"):
        from nutripipe.corpus import clean_title

        return PostRecord(
            id=pid, author=author, title_raw=title, title_clean=clean_title(title),
            created_utc=created, num_comments=comments, score=score, tag=tag,
        )

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
