import numpy as np
import pytest

from nutripipe.errors import DegenerateTable
from nutripipe.textfeat import (
    CATEGORY_NAMES,
    DESCRIPTOR_TERMS,
    DiscriminatorSet,
    chi_square_2x2,
    discriminator_flags,
    lemmatize,
    load_stopwords,
    match_descriptors,
    mine_discriminators,
    text_flag_names,
    tokenize,
)


def flags_by_name(title):
    return dict(zip(text_flag_names(), match_descriptors(title)))


class TestLexicon:
    def test_exact_table_contents(self):
        assert DESCRIPTOR_TERMS == [
            "grilled", "fried", "baked", "boiled", "steamed",
            "savory", "sweet", "spicy", "rich", "salty",
            "creamy", "crispy", "tender", "juicy", "crunchy",
        ]
        assert CATEGORY_NAMES == ["MainDish", "Dessert", "FastFood", "Healthy", "PlantBased", "Pastry"]

    def test_stopword_list_is_pinned(self):
        stop = load_stopwords()
        assert len(stop) == 127
        assert {"the", "and", "my"} <= stop


class TestDescriptors:
    def test_chicken_salad_fires_two_categories(self):
        flags = flags_by_name("chicken salad")
        assert flags["cat_MainDish"] == 1 and flags["cat_Healthy"] == 1

    def test_grilled_cheese(self):
        flags = flags_by_name("grilled cheese")
        assert flags["desc_grilled"] == 1
        assert all(flags[f"desc_{t}"] == 0 for t in ["savory", "sweet", "spicy", "rich", "salty"])

    def test_word_boundaries_enforced(self):
        assert flags_by_name("buttered toast")["desc_grilled"] == 0
        assert flags_by_name("ostrich burger")["desc_rich"] == 0
        assert flags_by_name("rich ostrich")["desc_rich"] == 1

    def test_case_insensitive(self):
        assert flags_by_name("GRILLED Pizza")["desc_grilled"] == 1
        assert flags_by_name("GRILLED Pizza")["cat_FastFood"] == 1

    def test_vector_shape_and_order(self):
        flags = match_descriptors("vegan bread pudding")
        assert flags.shape == (21,)
        by_name = dict(zip(text_flag_names(), flags))
        assert by_name["cat_PlantBased"] == 1
        assert by_name["cat_Pastry"] == 1
        assert by_name["cat_Dessert"] == 1


class TestChiSquare:
    def test_hand_computed_value(self):
        result = chi_square_2x2(30, 70, 10, 90)
        assert result.statistic == pytest.approx(12.5, abs=1e-9)
        assert result.method == "ChiSquare"

    def test_identical_distributions_zero(self):
        result = chi_square_2x2(20, 80, 10, 40)
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_degenerate_table(self):
        with pytest.raises(DegenerateTable):
            chi_square_2x2(0, 0, 5, 5)

    def test_row_and_column_swap_invariance(self, rng):
        for _ in range(100):
            a, b, c, d = (int(x) for x in rng.integers(1, 60, size=4))
            base = chi_square_2x2(a, b, c, d).statistic
            assert chi_square_2x2(c, d, a, b).statistic == pytest.approx(base, rel=1e-12)
            assert chi_square_2x2(b, a, d, c).statistic == pytest.approx(base, rel=1e-12)

    def test_p_value_matches_scipy(self, rng):
        scipy_stats = pytest.importorskip("scipy.stats")
        for _ in range(50):
            a, b, c, d = (int(x) for x in rng.integers(1, 80, size=4))
            result = chi_square_2x2(a, b, c, d)
            assert result.p_value == pytest.approx(scipy_stats.chi2.sf(result.statistic, 1), abs=1e-10)


class TestLemmatizer:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("potatoes", "potato"),
            ("cakes", "cake"),
            ("berries", "berry"),
            ("dishes", "dish"),
            ("glasses", "glass"),
            ("pies", "pie"),
            ("grilling", "grill"),
            ("frying", "fry"),
            ("icing", "icing"),
            ("eggs", "egg"),
            ("was", "was"),
            ("cross", "cross"),
            ("servings", "serv"),
        ],
    )
    def test_rules(self, word, expected):
        assert lemmatize(word) == expected


class TestMining:
    def test_maximal_separation_retained(self):
        pos = [f"cheese and filler {i}" for i in range(30)]
        neg = [f"plain filler {i}" for i in range(30)]
        dset = mine_discriminators(pos, neg, cutoff=0.01, alpha=0.05)
        assert "cheese" in [w.word for w in dset.positive_words]
        assert all(w.word != "cheese" for w in dset.negative_words)

    def test_identical_corpora_yield_empty_set(self):
        titles = [f"tomato soup {i}" for i in range(25)]
        dset = mine_discriminators(titles, list(titles))
        assert dset.positive_words == [] and dset.negative_words == []

    def test_planted_word_matches_closed_form(self):
        # pizza in 40% of 200 positive and 10% of 200 negative titles
        pos = [("pizza slice " if i < 80 else "noodle bowl ") + f"v{i}" for i in range(200)]
        neg = [("pizza slice " if i < 20 else "noodle bowl ") + f"v{i}" for i in range(200)]
        dset = mine_discriminators(pos, neg, cutoff=0.05, alpha=0.05)
        words = {w.word: w for w in dset.positive_words}
        assert "pizza" in words
        expected = chi_square_2x2(80, 120, 20, 180).statistic
        assert words["pizza"].chi2 == pytest.approx(expected, rel=1e-12)
        assert words["pizza"].freq == pytest.approx(100 / 400)

    def test_cutoff_removes_rare_words(self):
        pos = ["unicorn tart"] + [f"noodle bowl {i}" for i in range(199)]
        neg = [f"noodle bowl {i}" for i in range(200)]
        dset = mine_discriminators(pos, neg, cutoff=0.01, alpha=0.05)
        assert all(w.word != "unicorn" for w in dset.positive_words)

    def test_deterministic_output(self):
        pos = [f"cheese pizza {i % 7}" for i in range(50)]
        neg = [f"potato rice {i % 5}" for i in range(50)]
        assert mine_discriminators(pos, neg).to_json() == mine_discriminators(pos, neg).to_json()

    def test_json_round_trip(self):
        pos = [f"cheese pizza {i}" for i in range(50)]
        neg = [f"potato rice {i}" for i in range(50)]
        dset = mine_discriminators(pos, neg)
        again = DiscriminatorSet.from_json(dset.to_json())
        assert again == dset


class TestDiscriminatorFlags:
    def build_set(self):
        return DiscriminatorSet(
            positive_words=[type("W", (), {"word": "cheese"})()],
            negative_words=[type("W", (), {"word": "potato"})()],
        )

    def test_positive_hit(self):
        dset = mine_discriminators(
            [f"cheese plate {i}" for i in range(20)], [f"rice bowl {i}" for i in range(20)]
        )
        assert discriminator_flags("extra cheese pie", dset) == (1, 0)
        assert discriminator_flags("plain toast", dset) == (0, 0)

    def test_lemmatized_match(self):
        dset = mine_discriminators(
            [f"cheese plate {i}" for i in range(20)], [f"potato bowl {i}" for i in range(20)]
        )
        assert [w.word for w in dset.negative_words if w.word == "potato"]
        assert discriminator_flags("potatoes", dset) == (0, 1)


def test_tokenize_splits_on_non_word():
    assert tokenize("Mac & cheese (vegan), w/ fries!") == ["mac", "cheese", "vegan", "w", "fries"]
