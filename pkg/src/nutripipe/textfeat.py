"""Text-derived features and the explorative statistics.

Covers descriptor/category keyword flags, chi-square discriminator mining
over title words, and the rank statistics (Mann-Whitney U, Spearman).
Keyword matching is word-boundary (token equality), never raw substring,
so "rich" does not fire on "ostrich".
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ._special import chi2_sf_1df, normal_sf, t_two_sided_p
from .errors import DegenerateTable, ZeroVariance

DESCRIPTOR_GROUPS = {
    "preparation": ["grilled", "fried", "baked", "boiled", "steamed"],
    "taste": ["savory", "sweet", "spicy", "rich", "salty"],
    "texture": ["creamy", "crispy", "tender", "juicy", "crunchy"],
}

CATEGORY_KEYWORDS = {
    "MainDish": ["pasta", "casserole", "roast", "chicken", "stirfry"],
    "Dessert": ["cake", "custard", "pudding", "cookie", "pancake", "waffle", "muffin", "biscuit"],
    "FastFood": ["pizza", "burger", "burrito"],
    "Healthy": ["soup", "salad"],
    "PlantBased": ["vegan", "vegetarian", "veggie"],
    "Pastry": ["bread", "croissant"],
}

DESCRIPTOR_TERMS = [t for group in DESCRIPTOR_GROUPS.values() for t in group]
CATEGORY_NAMES = list(CATEGORY_KEYWORDS)
N_TEXT_FLAGS = len(DESCRIPTOR_TERMS) + len(CATEGORY_NAMES)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_ES_STEMS = ("s", "x", "z", "o", "ch", "sh")


def load_stopwords() -> frozenset[str]:
    text = resources.files("nutripipe").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(w for w in text.split() if w)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def lemmatize(word: str) -> str:
    """Fixed suffix-stripping rules: plural -ies/-es/-s, then gerund -ing."""
    if word.endswith("ies") and len(word) >= 5:
        word = word[:-3] + "y"
    elif word.endswith("es") and len(word) >= 4 and word[:-2].endswith(_ES_STEMS):
        word = word[:-2]
    elif word.endswith("s") and not word.endswith("ss") and len(word) >= 4:
        word = word[:-1]
    if word.endswith("ing") and len(word) - 3 >= 3:
        word = word[:-3]
    return word


def title_lemmas(title_clean: str, stopwords: frozenset[str]) -> set[str]:
    return {lemmatize(t) for t in tokenize(title_clean) if t not in stopwords}


def match_descriptors(title_clean: str, lexicon=None) -> np.ndarray:
    """21 binary flags: the 15 descriptor terms then the 6 category names."""
    descriptors = DESCRIPTOR_TERMS if lexicon is None else lexicon[0]
    categories = CATEGORY_KEYWORDS if lexicon is None else lexicon[1]
    tokens = set(tokenize(title_clean))
    flags = [int(term in tokens) for term in descriptors]
    for name in categories:
        flags.append(int(any(kw in tokens for kw in categories[name])))
    return np.array(flags, dtype=np.int64)


def text_flag_names() -> list[str]:
    return [f"desc_{t}" for t in DESCRIPTOR_TERMS] + [f"cat_{c}" for c in CATEGORY_NAMES]


@dataclass
class StatResult:
    statistic: float
    p_value: float
    method: str


@dataclass
class WordStat:
    word: str
    chi2: float
    freq: float


@dataclass
class DiscriminatorSet:
    positive_words: list[WordStat] = field(default_factory=list)
    negative_words: list[WordStat] = field(default_factory=list)
    frequency_cutoff: float = 0.01
    significance_alpha: float = 0.05

    def to_json(self) -> str:
        def enc(words):
            return [{"word": w.word, "chi2": w.chi2, "freq": w.freq} for w in words]

        return json.dumps(
            {
                "positive": enc(self.positive_words),
                "negative": enc(self.negative_words),
                "cutoff": self.frequency_cutoff,
                "alpha": self.significance_alpha,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscriminatorSet":
        obj = json.loads(text)

        def dec(rows):
            return [WordStat(r["word"], r["chi2"], r["freq"]) for r in rows]

        return cls(
            positive_words=dec(obj["positive"]),
            negative_words=dec(obj["negative"]),
            frequency_cutoff=obj["cutoff"],
            significance_alpha=obj["alpha"],
        )


def chi_square_2x2(a: int, b: int, c: int, d: int) -> StatResult:
    """Chi-square for a 2x2 contingency table, no continuity correction."""
    if min(a, b, c, d) < 0:
        raise ValueError("counts must be non-negative")
    row1, row2, col1, col2 = a + b, c + d, a + c, b + d
    if min(row1, row2, col1, col2) == 0:
        raise DegenerateTable(f"zero marginal in table ({a},{b},{c},{d})")
    n = a + b + c + d
    stat = n * (a * d - b * c) ** 2 / (row1 * row2 * col1 * col2)
    return StatResult(statistic=float(stat), p_value=chi2_sf_1df(float(stat)), method="ChiSquare")


def mine_discriminators(
    titles_pos,
    titles_neg,
    cutoff: float = 0.01,
    alpha: float = 0.05,
    stopwords: frozenset[str] | None = None,
    lemmatizer=None,
) -> DiscriminatorSet:
    """Words whose usage differs significantly between the two title groups.

    Takes the union of each group's 100 most common words (document
    frequency, ties lexicographic), tests each with a 2x2 chi-square on
    containment vs group, keeps p < alpha, assigns each word to the group
    with the higher relative frequency, and finally drops words occurring
    in less than `cutoff` of all posts.
    """
    if not titles_pos or not titles_neg:
        raise ValueError("both groups must be non-empty")
    stop = load_stopwords() if stopwords is None else stopwords
    lemma = lemmatize if lemmatizer is None else lemmatizer

    def doc_freq(titles):
        freq: dict[str, int] = {}
        for title in titles:
            words = {lemma(t) for t in tokenize(title) if t not in stop}
            for w in words:
                if w:
                    freq[w] = freq.get(w, 0) + 1
        return freq

    freq_pos = doc_freq(titles_pos)
    freq_neg = doc_freq(titles_neg)
    top_pos = sorted(freq_pos, key=lambda w: (-freq_pos[w], w))[:100]
    top_neg = sorted(freq_neg, key=lambda w: (-freq_neg[w], w))[:100]
    candidates = sorted(set(top_pos) | set(top_neg))

    n_pos, n_neg = len(titles_pos), len(titles_neg)
    total = n_pos + n_neg
    positive, negative = [], []
    for word in candidates:
        a = freq_pos.get(word, 0)
        c = freq_neg.get(word, 0)
        if (a + c) / total < cutoff:
            continue
        try:
            result = chi_square_2x2(a, n_pos - a, c, n_neg - c)
        except DegenerateTable:
            continue
        if result.p_value >= alpha:
            continue
        stat = WordStat(word=word, chi2=result.statistic, freq=(a + c) / total)
        if a / n_pos > c / n_neg:
            positive.append(stat)
        else:
            negative.append(stat)

    key = lambda w: (-w.freq, w.word)
    return DiscriminatorSet(
        positive_words=sorted(positive, key=key),
        negative_words=sorted(negative, key=key),
        frequency_cutoff=cutoff,
        significance_alpha=alpha,
    )


def discriminator_flags(
    title_clean: str,
    dset: DiscriminatorSet,
    stopwords: frozenset[str] | None = None,
) -> tuple[int, int]:
    """(has_positive_discriminator, has_negative_discriminator) for a title."""
    stop = load_stopwords() if stopwords is None else stopwords
    lemmas = title_lemmas(title_clean, stop)
    has_pos = int(any(w.word in lemmas for w in dset.positive_words))
    has_neg = int(any(w.word in lemmas for w in dset.negative_words))
    return has_pos, has_neg


def midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


EXACT_MW_LIMIT = 12


def mann_whitney_u(x, y) -> StatResult:
    """Two-sided Mann-Whitney U with midrank ties.

    The statistic is U for the first sample. p is by full enumeration over
    group assignments (dynamic program over doubled midranks) when
    n1 + n2 <= 12; otherwise the normal approximation with tie and
    continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples must be non-empty")
    combined = np.concatenate([x, y])
    ranks = midranks(combined)
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0
    mu = n1 * n2 / 2.0

    if n1 + n2 <= EXACT_MW_LIMIT:
        p = _exact_mw_p(ranks, n1, u1, mu)
    else:
        n = n1 + n2
        _, tie_counts = np.unique(combined, return_counts=True)
        tie_term = float(((tie_counts**3 - tie_counts).sum())) / (n * (n - 1))
        var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
        if var <= 0.0:
            p = 1.0
        else:
            diff = u1 - mu
            cc = 0.5 * np.sign(diff)
            z = (diff - cc) / math.sqrt(var)
            p = min(1.0, 2.0 * normal_sf(abs(z)))
    return StatResult(statistic=float(u1), p_value=float(p), method="MannWhitneyU")


def _exact_mw_p(ranks: np.ndarray, n1: int, u_obs: float, mu: float) -> float:
    # Count size-n1 subsets by rank sum; doubled midranks keep sums integral.
    doubled = [int(round(2 * r)) for r in ranks]
    counts: list[dict[int, int]] = [dict() for _ in range(n1 + 1)]
    counts[0][0] = 1
    for r2 in doubled:
        for size in range(min(n1, len(doubled)) - 1, -1, -1):
            if not counts[size]:
                continue
            target = counts[size + 1]
            for s, c in counts[size].items():
                target[s + r2] = target.get(s + r2, 0) + c
    total = 0
    extreme = 0
    margin = abs(u_obs - mu) - 1e-12
    for s2, c in counts[n1].items():
        u = s2 / 2.0 - n1 * (n1 + 1) / 2.0
        total += c
        if abs(u - mu) >= margin:
            extreme += c
    return extreme / total


def spearman_rho(x, y) -> StatResult:
    """Spearman rank correlation: Pearson correlation of midranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("samples must be paired and of length >= 2")
    rx = midranks(x)
    ry = midranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("constant sample has no rank correlation")
    if np.array_equal(rx, ry):  # keep the perfect cases exact
        rho = 1.0
    elif np.array_equal(rx, len(x) + 1.0 - ry):
        rho = -1.0
    else:
        rho = float((dx * dy).sum() / (sx * sy))
        rho = max(-1.0, min(1.0, rho))
    n = len(x)
    if abs(rho) == 1.0 or n < 3:
        p = 0.0 if abs(rho) == 1.0 else 1.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = t_two_sided_p(t, n - 2)
    return StatResult(statistic=rho, p_value=float(p), method="Spearman")
