import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spatialcv.evaluation import (
    RunResult,
    TargetRange,
    cross_validate,
    ideal_rmse_distribution,
    ideal_rmse_values,
    landscape_estimates,
    param_signature,
    rmse,
    success_rate,
)
from spatialcv.forest import ForestConfig, fit_forest
from spatialcv.landscape import GridSpec, simulate_landscape
from spatialcv.resampling import Fold, resubstitution, vfold
from spatialcv.rng import derived_seed

FAST = ForestConfig(n_trees=10)


class TestRmse:
    def test_perfect(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_worked_example(self):
        assert rmse([1, 2, 3], [2, 2, 2]) == pytest.approx(math.sqrt(2 / 3))
        assert rmse([1, 2, 3], [2, 2, 2]) == pytest.approx(0.8165, abs=1e-4)

    @given(hnp.arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e3, 1e3)), st.floats(-1e3, 1e3))
    def test_constant_offset(self, y, c):
        assert rmse(y, y + c) == pytest.approx(abs(c), rel=1e-9, abs=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            rmse([], [])
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])


class TestTargetRange:
    def test_percentiles_and_moments(self):
        values = np.arange(101, dtype=float)
        t = TargetRange.from_values(values)
        assert (t.p05, t.p95) == (5.0, 95.0)
        assert t.mean == 50.0 and t.sd == pytest.approx(values.std(ddof=1))
        assert t.source_values == 101

    def test_own_interval_holds_ninety_percent(self):
        values = np.random.default_rng(0).normal(size=380)
        t = TargetRange.from_values(values)
        assert t.contains(values).mean() == pytest.approx(0.90, abs=0.01)


def results(values, landscape_ids=None):
    landscape_ids = landscape_ids if landscape_ids is not None else range(len(values))
    return [RunResult("vfold", {"v": 5}, i, 0, v) for i, v in zip(landscape_ids, values)]


class TestSuccessRate:
    target = TargetRange(0.6, 0.8, 0.7, 0.05, 100)

    def test_all_inside(self):
        assert success_rate(results([0.6, 0.7, 0.8]), self.target) == 1.0

    def test_all_below(self):
        assert success_rate(results([0.1, 0.2]), self.target) == 0.0

    def test_landscape_estimate_is_mean_of_folds(self):
        rs = [RunResult("vfold", {"v": 2}, 0, f, v) for f, v in enumerate([0.5, 0.9])]
        assert landscape_estimates(rs) == {("vfold", "v=2", 0): pytest.approx(0.7)}
        assert success_rate(rs, self.target) == 1.0


class TestSignature:
    def test_canonical_order_and_format(self):
        params = {"buffer": 0.15, "cluster_function": "kmeans", "v": 10, "radius": None}
        assert param_signature(params) == "v=10;cluster_function=kmeans;buffer=0.15"
        assert param_signature({"block_size": 1 / 9}) == "block_size=0.111111"
        assert param_signature({}) == ""


@pytest.fixture(scope="module")
def landscapes():
    return [simulate_landscape(GridSpec(12), s) for s in (1, 2, 3)]


class TestIdeal:
    def test_two_landscapes_give_two_values(self, landscapes):
        target, values = ideal_rmse_distribution(landscapes[:2], FAST)
        assert values.shape == (2,)
        assert target.source_values == 2

    def test_matrix_layout(self, landscapes):
        m = ideal_rmse_values(landscapes, FAST)
        assert np.isnan(np.diag(m)).all()
        assert np.isfinite(m[~np.eye(3, dtype=bool)]).all()

    def test_duplicate_landscape_equals_resubstitution(self, landscapes):
        L = landscapes[0]
        m = ideal_rmse_values([L, L], FAST)
        forest = fit_forest(L.features(), L.y, FAST.with_seed(derived_seed(FAST.seed, "ideal", 0)))
        assert m[0, 1] == rmse(L.y, forest.predict(L.features()))

    def test_needs_two(self, landscapes):
        with pytest.raises(ValueError):
            ideal_rmse_values(landscapes[:1], FAST)


class TestCrossValidate:
    def test_resubstitution_uses_everything(self, landscapes):
        L = landscapes[0]
        (r,) = cross_validate(L, resubstitution(L.n), FAST)
        assert r.method == "resubstitution"
        assert r.n_assessment == r.n_analysis == L.n

    def test_vfold_results(self, landscapes):
        L = landscapes[1]
        rs = cross_validate(L, vfold(L.n, 4, 0), FAST, landscape_id=7)
        assert [r.fold_id for r in rs] == [0, 1, 2, 3]
        assert all(r.landscape_id == 7 and r.params == {"v": 4} for r in rs)
        assert sum(r.n_assessment for r in rs) == L.n
        assert all(r.n_analysis == L.n - r.n_assessment for r in rs)

    def test_fold_seed_is_schedule_independent(self, landscapes):
        L = landscapes[2]
        plan = vfold(L.n, 4, 0)
        full = cross_validate(L, plan, FAST)
        pairs = [(2, plan.folds[2]), (0, plan.folds[0])]
        partial = cross_validate(L, pairs, FAST, method="vfold", params={"v": 4})
        assert partial[0].rmse == full[2].rmse and partial[1].rmse == full[0].rmse

    def test_empty_analysis_is_an_error(self, landscapes):
        L = landscapes[0]
        fold = Fold(np.arange(L.n), np.array([], dtype=np.int64))
        with pytest.raises(ValueError):
            cross_validate(L, [(0, fold)], FAST, method="vfold")

    def test_iterable_needs_method(self, landscapes):
        with pytest.raises(ValueError):
            cross_validate(landscapes[0], [], FAST)
