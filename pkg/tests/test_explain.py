import csv
import itertools
import math

import numpy as np
import pytest

from nutripipe.errors import EmptyBackground, HeterogeneousMask, TooManyFeatures
from nutripipe.explain import (
    Explanation,
    export_beeswarm,
    export_waterfall,
    global_importance,
    shapley_exact,
    shapley_sampled,
)
from nutripipe.model import GbtModelConfig, TrainedModel, Tree, predict_margin, train_gbt

CFG = GbtModelConfig(n_estimators=1, max_depth=2, learning_rate=1.0)


def stump(feature, threshold, left, right):
    return Tree(
        feature=np.array([feature, -1, -1], dtype=np.int64),
        threshold=np.array([threshold, 0.0, 0.0]),
        left=np.array([1, -1, -1], dtype=np.int64),
        right=np.array([2, -1, -1], dtype=np.int64),
        value=np.array([0.0, left, right]),
    )


def constant_model(d, base=0.3):
    return TrainedModel(trees=[], base_margin=base, config=CFG, feature_names=[f"x{i}" for i in range(d)])


def oracle_shapley(model, x, background, d):
    """Independent coalition-enumeration oracle over feature index sets."""
    def value(subset):
        hybrid = background.copy()
        for j in subset:
            hybrid[:, j] = x[j]
        return float(np.mean(predict_margin(model, hybrid)))

    phi = np.zeros(d)
    players = list(range(d))
    for i in players:
        others = [j for j in players if j != i]
        for size in range(d):
            for subset in itertools.combinations(others, size):
                w = math.factorial(size) * math.factorial(d - size - 1) / math.factorial(d)
                phi[i] += w * (value(subset + (i,)) - value(subset))
    return phi


class TestExact:
    def test_constant_model_all_zero(self, rng):
        model = constant_model(4, base=0.9)
        background = rng.normal(size=(6, 4))
        exp = shapley_exact(model, rng.normal(size=4), background)
        assert np.array_equal(exp.phi, np.zeros(4))
        assert exp.base_value == 0.9

    def test_additive_model_decomposes(self, rng):
        # two stumps on different features: phi_i = f_i(x_i) - E_b[f_i]
        model = TrainedModel(
            trees=[stump(0, 0.0, -1.0, 2.0), stump(1, 0.5, 0.5, -0.25)],
            base_margin=0.0, config=CFG, feature_names=["a", "b"],
        )
        background = rng.normal(size=(12, 2))
        x = np.array([0.7, 0.1])
        exp = shapley_exact(model, x, background)

        def f0(v):
            return np.where(v < 0.0, -1.0, 2.0)

        def f1(v):
            return np.where(v < 0.5, 0.5, -0.25)

        assert exp.phi[0] == pytest.approx(float(f0(x[0]) - f0(background[:, 0]).mean()), abs=1e-9)
        assert exp.phi[1] == pytest.approx(float(f1(x[1]) - f1(background[:, 1]).mean()), abs=1e-9)

    def test_local_accuracy(self, rng):
        X = rng.normal(size=(150, 5))
        y = (X[:, 0] + X[:, 3] > 0).astype(float)
        model = train_gbt(X, y, GbtModelConfig(n_estimators=10, max_depth=3, learning_rate=0.3))
        background = X[:20]
        for row in range(5):
            exp = shapley_exact(model, X[row], background)
            assert exp.base_value + exp.phi.sum() == pytest.approx(exp.prediction_margin, abs=1e-6)

    def test_matches_enumeration_oracle_depth2_three_features(self, rng):
        tree = Tree(
            feature=np.array([0, 2, -1, -1, -1, 1, -1], dtype=np.int64)[:5],
            threshold=np.array([0.5, 0.5, 0.0, 0.0, 0.0]),
            left=np.array([1, 2, -1, -1, -1], dtype=np.int64),
            right=np.array([4, 3, -1, -1, -1], dtype=np.int64),
            value=np.array([0.0, 0.0, 1.0, -2.0, 3.0]),
        )
        model = TrainedModel(trees=[tree], base_margin=0.1, config=CFG, feature_names=["a", "b", "c"])
        background = rng.integers(0, 2, size=(4, 3)).astype(float)
        x = np.array([0.0, 1.0, 1.0])
        exp = shapley_exact(model, x, background)
        assert np.allclose(exp.phi, oracle_shapley(model, x, background, 3), atol=1e-9)

    def test_dummy_feature_exactly_zero(self, rng):
        model = TrainedModel(
            trees=[stump(0, 0.0, -1.0, 1.0)], base_margin=0.0, config=CFG,
            feature_names=["used", "dummy"],
        )
        background = rng.normal(size=(8, 2))
        exp = shapley_exact(model, np.array([1.0, 5.0]), background)
        assert exp.phi[1] == 0.0

    def test_symmetric_duplicated_features_equal_phi(self):
        # identical split structure on two features that are bit-identical
        # columns in both x and background
        model = TrainedModel(
            trees=[stump(0, 0.5, -1.0, 1.0), stump(1, 0.5, -1.0, 1.0)],
            base_margin=0.0, config=CFG, feature_names=["a", "b"],
        )
        background = np.array([[0.0, 0.0], [1.0, 1.0], [0.2, 0.2]])
        exp = shapley_exact(model, np.array([0.9, 0.9]), background)
        assert abs(exp.phi[0] - exp.phi[1]) < 1e-9

    def test_too_many_features(self, rng):
        model = constant_model(16)
        with pytest.raises(TooManyFeatures):
            shapley_exact(model, np.zeros(16), rng.normal(size=(3, 16)))

    def test_empty_background(self):
        model = constant_model(3)
        with pytest.raises(EmptyBackground):
            shapley_exact(model, np.zeros(3), np.zeros((0, 3)))


class TestSampled:
    def test_constant_model_zero_phi_zero_variance(self, rng):
        model = constant_model(5, base=-0.2)
        exp = shapley_sampled(model, rng.normal(size=5), rng.normal(size=(6, 5)), n_permutations=50, seed=0)
        assert np.array_equal(exp.phi, np.zeros(5))
        assert np.array_equal(exp.standard_errors, np.zeros(5))

    def test_within_four_se_of_exact(self, rng):
        X = rng.normal(size=(200, 6))
        y = (X[:, 0] - X[:, 4] > 0).astype(float)
        model = train_gbt(X, y, GbtModelConfig(n_estimators=8, max_depth=3, learning_rate=0.3))
        background = X[:16]
        hits = total = 0
        for row in range(4):
            exact = shapley_exact(model, X[row], background)
            sampled = shapley_sampled(model, X[row], background, n_permutations=800, seed=row)
            se = np.maximum(sampled.standard_errors, 1e-12)
            hits += int(np.sum(np.abs(sampled.phi - exact.phi) <= 4 * se))
            total += 6
        assert hits / total >= 0.99

    def test_deterministic_given_seed(self, rng):
        X = rng.normal(size=(80, 4))
        y = (X[:, 1] > 0).astype(float)
        model = train_gbt(X, y, GbtModelConfig(n_estimators=5, max_depth=2, learning_rate=0.3))
        a = shapley_sampled(model, X[0], X[:10], n_permutations=100, seed=5)
        b = shapley_sampled(model, X[0], X[:10], n_permutations=100, seed=5)
        assert np.array_equal(a.phi, b.phi)

    def test_more_permutations_reduce_mean_se(self, rng):
        X = rng.normal(size=(120, 5))
        y = (X[:, 0] + X[:, 2] > 0).astype(float)
        model = train_gbt(X, y, GbtModelConfig(n_estimators=6, max_depth=3, learning_rate=0.3))
        background = X[:12]
        small = [
            shapley_sampled(model, X[i], background, n_permutations=100, seed=i).standard_errors.mean()
            for i in range(10)
        ]
        large = [
            shapley_sampled(model, X[i], background, n_permutations=200, seed=100 + i).standard_errors.mean()
            for i in range(10)
        ]
        assert np.mean(large) <= np.mean(small)


class TestGlobalImportance:
    def make_exp(self, phi, names=None):
        phi = np.asarray(phi, dtype=float)
        names = names or [f"x{i}" for i in range(len(phi))]
        return Explanation(
            base_value=0.0, phi=phi, prediction_margin=float(phi.sum()),
            feature_values=np.zeros(len(phi)), feature_names=names,
        )

    def test_single_explanation_absolute_values(self):
        imp = global_importance([self.make_exp([0.5, -2.0, 1.0])])
        assert imp.feature_names == ["x1", "x2", "x0"]
        assert np.allclose(imp.values, [2.0, 1.0, 0.5])

    def test_plus_minus_a_averages_to_a(self):
        imp = global_importance([self.make_exp([0.8, 0.1]), self.make_exp([-0.8, 0.1])])
        assert imp.values[0] == pytest.approx(0.8)

    def test_mean_matches_hand_average(self, rng):
        explanations = [self.make_exp(rng.normal(size=6)) for _ in range(100)]
        imp = global_importance(explanations)
        stacked = np.stack([np.abs(e.phi) for e in explanations])
        expected = {f"x{i}": stacked[:, i].mean() for i in range(6)}
        for name, value in zip(imp.feature_names, imp.values):
            assert value == pytest.approx(expected[name], abs=1e-12)

    def test_lexicographic_tie_break(self):
        imp = global_importance([self.make_exp([1.0, 1.0], names=["zeta", "alpha"])])
        assert imp.feature_names == ["alpha", "zeta"]

    def test_heterogeneous_masks_rejected(self):
        a = self.make_exp([1.0, 2.0], names=["a", "b"])
        b = self.make_exp([1.0, 2.0], names=["a", "c"])
        with pytest.raises(HeterogeneousMask):
            global_importance([a, b])


class TestExports:
    def test_beeswarm_rows_and_ordering(self, tmp_path):
        maker = TestGlobalImportance()
        explanations = [maker.make_exp([0.1, 3.0, -0.5]), maker.make_exp([0.2, -1.0, 0.4])]
        path = tmp_path / "bees.csv"
        rows = export_beeswarm(explanations, path, instance_ids=["b", "a"])
        assert len(rows) == 6
        assert [r[0] for r in rows[:2]] == ["x1", "x1"]  # most important feature first
        assert [r[1] for r in rows[:2]] == ["a", "b"]  # then instance id
        with open(path, newline="") as fh:
            read_back = list(csv.DictReader(fh))
        for row, orig in zip(read_back, rows):
            assert float(row["phi"]) == orig[2]

    def test_waterfall_cumulative_ends_at_margin(self, rng):
        X = rng.normal(size=(100, 4))
        y = (X[:, 0] > 0).astype(float)
        model = train_gbt(X, y, GbtModelConfig(n_estimators=5, max_depth=2, learning_rate=0.3))
        exp = shapley_exact(model, X[0], X[:10])
        rows = export_waterfall(exp)
        assert rows[0][0] == "baseline" and rows[0][3] == exp.base_value
        assert rows[-1][3] == pytest.approx(exp.prediction_margin, abs=1e-6)
        magnitudes = [abs(r[2]) for r in rows[1:]]
        assert magnitudes == sorted(magnitudes, reverse=True)

    def test_waterfall_all_zero_phi_single_row(self):
        exp = Explanation(
            base_value=0.4, phi=np.zeros(3), prediction_margin=0.4,
            feature_values=np.zeros(3), feature_names=["a", "b", "c"],
        )
        rows = export_waterfall(exp)
        assert rows == [("baseline", "", "", 0.4)]
