import numpy as np
import pytest

from sessioncast import tuning as T
from sessioncast.tuning import CvPlan, Family, HyperGrid

DT = {"max_depth": 4, "min_samples_split": 2, "min_samples_leaf": 1, "criterion": "squared_error"}


def _data(seed=0, n=80, p=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = 2 * X[:, 0] + np.sin(2 * X[:, 1]) + 0.2 * rng.normal(size=n)
    return X, y


class TestFolds:
    def test_contiguous_sizes(self):
        plan = CvPlan.contiguous(12, 5)
        assert plan.bounds == ((0, 3), (3, 6), (6, 8), (8, 10), (10, 12))

    def test_folds_partition_rows(self):
        plan = CvPlan.contiguous(23, 5)
        held = np.concatenate([va for _, va in plan.folds()])
        assert np.array_equal(held, np.arange(23))
        for tr, va in plan.folds():
            assert np.intersect1d(tr, va).size == 0 and tr.size + va.size == 23

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            CvPlan.contiguous(4, 5)
        with pytest.raises(ValueError):
            CvPlan.contiguous(10, 1)


class TestR2:
    def test_hand_values(self):
        assert T.r2_score([1, 2, 3], [2, 2, 2]) == 0.0
        assert T.r2_score([1, 2, 3], [1, 2, 3]) == 1.0
        assert T.r2_score([0, 0, 2], [1, 1, 1]) == pytest.approx(1 - 3 / (8 / 3))

    def test_constant_target_scores_zero(self):
        assert T.r2_score([5, 5, 5], [1, 2, 3]) == 0.0

    def test_constant_fold_in_cv(self):
        X = np.arange(10.0)[:, None]
        y = np.r_[np.ones(2), np.arange(8.0)]
        # the first fold holds a constant target and contributes 0
        plan = CvPlan.contiguous(10, 5)
        model_scores = []
        for tr, va in plan.folds():
            m = T.fit_family(Family.LINEAR, {}, X[tr], y[tr])
            model_scores.append(T.r2_score(y[va], m.predict(X[va])))
        assert model_scores[0] == 0.0
        assert T.cv_score(Family.LINEAR, {}, X, y, plan) == pytest.approx(np.mean(model_scores))


class TestGrids:
    def test_table_sizes(self):
        assert len(T.full_grid(Family.SVR)) == 4 * 4 * 2 * 4
        assert len(T.full_grid(Family.TREE)) == 19 * 18 * 4 * 3
        assert len(T.full_grid(Family.FOREST)) == 7 * 5 * 5 * 5
        assert len(T.full_grid(Family.BOOSTED)) == 5 * 3 * 4 * 3 * 3 * 4
        assert len(T.full_grid(Family.LINEAR)) == 1

    def test_fast_profile_takes_first_two(self):
        g = T.grid_for(Family.BOOSTED, T.GridProfile.FAST)
        assert g.to_dict()["n_rounds"] == [25, 50]
        assert len(g) == 2 ** 6

    def test_enumeration_order(self):
        g = HyperGrid(Family.TREE, (("max_depth", (1, 2)), ("criterion", ("a", "b"))))
        assert g.points() == [{"max_depth": 1, "criterion": "a"}, {"max_depth": 1, "criterion": "b"},
                              {"max_depth": 2, "criterion": "a"}, {"max_depth": 2, "criterion": "b"}]


class TestSharedScoring:
    @pytest.mark.parametrize("family", [Family.SVR, Family.TREE, Family.FOREST, Family.BOOSTED])
    def test_grid_scores_equal_independent_cv(self, family):
        X, y = _data(1, n=60, p=3)
        plan = CvPlan.contiguous(60, 5)
        grid = T.grid_for(family, T.GridProfile.FAST)
        points = grid.points()
        if family is Family.FOREST:
            points = [p for p in points if p["n_trees"] == 50] + points[:2]
        got = T.grid_scores(family, points, X, y, plan)
        want = [T.cv_score(family, p, X, y, plan) for p in points]
        assert np.array_equal(got, np.array(want))

    def test_tree_varied_depths(self):
        X, y = _data(2, n=70)
        plan = CvPlan.contiguous(70, 5)
        points = [dict(DT, max_depth=d, min_samples_split=s) for d in (1, 2, 5, 9) for s in (2, 7, 15)]
        got = T.grid_scores(Family.TREE, points, X, y, plan)
        want = [T.cv_score(Family.TREE, p, X, y, plan) for p in points]
        assert np.array_equal(got, np.array(want))


class TestGridSearch:
    def test_two_point_oracle(self):
        X, y = _data(3)
        plan = CvPlan.contiguous(len(y), 5)
        grid = HyperGrid(Family.TREE, (("max_depth", (1, 4)), ("min_samples_split", (2,)),
                                       ("min_samples_leaf", (1,)), ("criterion", ("squared_error",))))
        res = T.grid_search(Family.TREE, grid, X, y, plan)
        s1 = T.cv_score(Family.TREE, dict(DT, max_depth=1), X, y, plan)
        s4 = T.cv_score(Family.TREE, dict(DT, max_depth=4), X, y, plan)
        assert res.params["max_depth"] == (1 if s1 >= s4 else 4)
        assert res.score == max(s1, s4)
        assert res.n_candidates == 2

    def test_tie_keeps_first(self):
        X = np.repeat(np.arange(5.0), 4)[:, None]
        y = (X[:, 0] > 2).astype(float)
        grid = HyperGrid(Family.TREE, (("max_depth", (3, 1)), ("min_samples_split", (2,)),
                                       ("min_samples_leaf", (1,)), ("criterion", ("squared_error",))))
        res = T.grid_search(Family.TREE, grid, X, y, CvPlan.contiguous(20, 5))
        assert res.params["max_depth"] == 3

    def test_singleton_grid(self):
        X, y = _data(4)
        grid = T.grid_for(Family.TREE).first()
        res = T.grid_search(Family.TREE, grid, X, y, CvPlan.contiguous(len(y)))
        assert res.n_candidates == 1
        assert res.params == {"max_depth": 1, "min_samples_split": 2, "min_samples_leaf": 1,
                              "criterion": "squared_error"}

    def test_linear_on_linear_data(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(100, 3))
        y = 1.5 + X @ np.array([2.0, -1.0, 0.5])
        assert T.cv_score(Family.LINEAR, {}, X, y, CvPlan.contiguous(100)) >= 0.999

    def test_plan_mismatch(self):
        X, y = _data()
        with pytest.raises(ValueError):
            T.cv_score(Family.LINEAR, {}, X, y, CvPlan.contiguous(len(y) - 1))


def _scripted(table):
    names = "abcd"

    def score_fn(mask):
        return table.get("".join(n for n, m in zip(names, mask) if m), 0.0)
    return score_fn


class TestSfbs:
    def test_scripted_float(self):
        table = {"abcd": 0.5, "bcd": 0.6, "acd": 0.5, "abd": 0.5, "abc": 0.5,
                 "cd": 0.65, "bd": 0.55, "bc": 0.55, "d": 0.7, "c": 0.6, "ad": 0.8, "a": 0.75}
        res = T.sfbs(Family.LINEAR, {}, None, None, None, np.ones(4, bool), score_fn=_scripted(table))
        assert [(s.action, s.feature) for s in res.steps] == [
            ("start", -1), ("exclude", 0), ("exclude", 1), ("exclude", 2), ("include", 0)]
        assert res.accepted_scores() == [0.5, 0.6, 0.65, 0.7, 0.8]
        assert res.mask.tolist() == [True, False, False, True]
        assert res.score == 0.8 and res.full_score == 0.5

    def test_equal_score_drop_is_accepted(self):
        table = {"abcd": 0.5, "bcd": 0.5}
        res = T.sfbs(Family.LINEAR, {}, None, None, None, np.ones(4, bool), score_fn=_scripted(table))
        assert res.mask.tolist() == [False, True, True, True]

    def test_nothing_improves(self):
        res = T.sfbs(Family.LINEAR, {}, None, None, None, np.ones(4, bool),
                     score_fn=_scripted({"abcd": 1.0}))
        assert res.mask.all() and len(res.steps) == 1

    def test_disallowed_never_selected(self):
        X, y = _data(6, p=5)
        allowed = np.array([True, True, False, True, False])
        res = T.sfbs(Family.LINEAR, {}, X, y, CvPlan.contiguous(len(y)), allowed)
        assert not (res.mask & ~allowed).any()

    def test_needs_two_features(self):
        with pytest.raises(ValueError):
            T.sfbs(Family.LINEAR, {}, None, None, None, np.array([True, False]), score_fn=lambda m: 0.0)

    def test_planted_noise(self):
        dropped = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(200, 6))
            y = 3 * X[:, 0] - 2 * X[:, 1] + 0.3 * rng.normal(size=200)
            res = T.sfbs(Family.TREE, DT, X, y, CvPlan.contiguous(200), np.ones(6, bool))
            assert res.mask[0] and res.mask[1]
            assert res.score >= res.full_score
            dropped.append(int((~res.mask[2:]).sum()))
        assert np.mean(dropped) >= 2

    def test_trajectory_monotone(self):
        X, y = _data(7, p=6)
        res = T.sfbs(Family.TREE, DT, X, y, CvPlan.contiguous(len(y)), np.ones(6, bool))
        scores = res.accepted_scores()
        assert all(b >= a for a, b in zip(scores, scores[1:]))
        assert res.score == scores[-1]


class TestTuneAndSelect:
    def test_three_stages(self):
        X, y = _data(8, n=60, p=4)
        plan = CvPlan.contiguous(60)
        grid = T.grid_for(Family.TREE, T.GridProfile.FAST)
        allowed = np.ones(4, bool)
        res = T.tune_and_select(Family.TREE, X, y, plan, allowed, grid)
        s1 = T.grid_search(Family.TREE, grid, X, y, plan)
        sel = T.sfbs(Family.TREE, s1.params, X, y, plan, allowed)
        s3 = T.grid_search(Family.TREE, grid, X[:, sel.mask], y, plan)
        assert res.stage1 == s1
        assert np.array_equal(res.mask, sel.mask)
        assert res.params == s3.params and res.score == s3.score

    def test_reduced(self):
        X, y = _data(9, n=30)
        allowed = np.array([True, False, True, True])
        res = T.tune_and_select(Family.BOOSTED, X, y, CvPlan.contiguous(30), allowed,
                                T.grid_for(Family.BOOSTED), reduced=True)
        assert res.reduced and res.selection is None
        assert np.array_equal(res.mask, allowed)
        assert res.params["n_rounds"] == 25 and res.params["min_split_loss"] == 0.0

    def test_to_dict_names(self):
        X, y = _data(10, n=40, p=3)
        res = T.tune_and_select(Family.LINEAR, X, y, CvPlan.contiguous(40), np.ones(3, bool))
        d = res.to_dict(["x", "y", "z"])
        assert set(d["selected"]) <= {"x", "y", "z"}
        assert d["sfbs"]["steps"][0]["action"] == "start"
