import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, reject, settings
from hypothesis import strategies as st

from conftest import brute_force_buffered, grid_coords
from spatialcv.errors import ParameterError
from spatialcv.resampling import (
    Fold,
    Method,
    ResamplingPlan,
    apply_exclusion_buffer,
    block_cv,
    block_ids,
    block_layout,
    buffered_mask,
    buffered_vfold,
    cluster_cv,
    iter_disc_folds,
    read_plan_csv,
    resubstitution,
    vfold,
    write_plan_csv,
)

DISTANCES = st.sampled_from([0.0, 0.03, 0.06, 0.1, 0.15, 0.24])


def check_fold_roles(fold: Fold, n: int):
    """Assessment, analysis and buffered sets are disjoint and cover 0..n-1."""
    parts = [fold.assessment, fold.analysis, fold.buffered_out]
    joined = np.concatenate(parts)
    assert len(joined) == n
    assert np.array_equal(np.sort(joined), np.arange(n))
    assert fold.assessment.size > 0 and fold.analysis.size > 0


def check_partition(plan: ResamplingPlan):
    held = np.concatenate([f.assessment for f in plan.folds])
    assert np.array_equal(np.sort(held), np.arange(plan.n))


@st.composite
def random_plans(draw):
    try:
        return _random_plan(draw)
    except ParameterError:
        # buffer swallowed the whole analysis set; such plans do not exist
        reject()


def _random_plan(draw):
    side = draw(st.integers(4, 12))
    coords = grid_coords(side)
    n = side * side
    seed = draw(st.integers(0, 2**32))
    method = draw(st.sampled_from(["vfold", "blocked", "blocked_v", "clustered"]))
    if method == "vfold":
        return vfold(n, draw(st.integers(2, n)), seed), coords
    buffer = draw(st.sampled_from([0.0, 0.05, 0.1]))
    if method == "blocked":
        bs = draw(st.sampled_from([1 / 4, 1 / 9, 1 / 16, 1 / 2]))
        return block_cv(coords, bs, None, "continuous", buffer, seed), coords
    if method == "blocked_v":
        bs = draw(st.sampled_from([1 / 9, 1 / 16, 1 / 25]))
        k = math.prod(block_layout(bs))
        v = draw(st.integers(2, min(k, side * side)))
        bm = draw(st.sampled_from(["random", "continuous", "snake"]))
        return block_cv(coords, bs, v, bm, buffer, seed), coords
    v = draw(st.integers(2, min(8, n)))
    fn = draw(st.sampled_from(["kmeans", "hierarchical"]))
    return cluster_cv(coords, v, fn, buffer, seed), coords


class TestPartitionProperties:
    @settings(max_examples=1000)
    @given(random_plans())
    def test_randomized_plans_partition_and_stay_disjoint(self, drawn):
        plan, coords = drawn
        check_partition(plan)
        for fold in plan.folds:
            check_fold_roles(fold, plan.n)
            # buffered points are exactly those within the buffer of the assessment set
            buffer = plan.params.get("buffer", 0.0)
            assert np.array_equal(fold.buffered_out, brute_force_buffered(coords, fold.assessment, buffer))

    @settings(max_examples=200)
    @given(st.integers(2, 20), st.integers(0, 2**32), DISTANCES, st.data())
    def test_buffer_matches_brute_force_oracle(self, side, seed, buffer, data):
        coords = grid_coords(side)
        n = side * side
        rng = np.random.default_rng(seed)
        k = data.draw(st.integers(1, max(1, n // 4)))
        assessment = np.sort(rng.choice(n, size=k, replace=False))
        expected = brute_force_buffered(coords, assessment, buffer)
        mask = buffered_mask(coords, assessment, buffer)
        assert np.array_equal(np.flatnonzero(mask), expected)
        fold = Fold.holdout(n, assessment)
        if expected.size + k < n:
            out = apply_exclusion_buffer(fold, coords, buffer)
            assert np.array_equal(out.buffered_out, expected)
            assert np.array_equal(out.assessment, fold.assessment)
            check_fold_roles(out, n)

    @settings(max_examples=60)
    @given(st.integers(3, 10), DISTANCES, DISTANCES)
    def test_disc_folds_match_brute_force(self, side, radius, buffer):
        coords = grid_coords(side)
        n = side * side
        try:
            folds = list(iter_disc_folds(coords, radius, buffer))
        except ParameterError:
            return
        assert len(folds) == n
        for center, fold in folds:
            d = np.hypot(*(coords - coords[center]).T)
            assert np.array_equal(fold.assessment, np.flatnonzero(d <= radius + 1e-9))
            assert np.array_equal(fold.buffered_out, brute_force_buffered(coords, fold.assessment, buffer))
            check_fold_roles(fold, n)

    @settings(max_examples=50)
    @given(st.integers(3, 10), st.integers(0, 99), DISTANCES)
    def test_lodo_assessment_grows_with_radius(self, side, center, buffer):
        coords = grid_coords(side)
        center = center % (side * side)
        radii = [0.0, 0.03, 0.06, 0.12, 0.24]
        sets = []
        for r in radii:
            fold = next(iter_disc_folds(coords, r, 0.0, [center]))[1]
            sets.append(set(fold.assessment.tolist()))
        assert all(a <= b for a, b in zip(sets, sets[1:]))

    @settings(max_examples=50)
    @given(st.integers(3, 12), st.integers(0, 2**32))
    def test_analysis_shrinks_as_buffer_grows(self, side, seed):
        coords = grid_coords(side)
        n = side * side
        assessment = np.random.default_rng(seed).choice(n, size=max(1, n // 10), replace=False)
        sizes = [n - buffered_mask(coords, assessment, b).sum() for b in np.linspace(0, 1.5, 16)]
        assert all(a >= b for a, b in zip(sizes, sizes[1:]))

    @settings(max_examples=30)
    @given(st.integers(2, 9))
    def test_blo3_without_buffer_is_leave_one_out(self, side):
        coords = grid_coords(side)
        n = side * side
        disc = buffered_vfold(coords, 0.0, 0.0)
        loo = vfold(n, n, seed=side)
        by_assessment = {int(f.assessment[0]): f for f in loo.folds}
        assert len(disc) == len(loo) == n
        for fold in disc.folds:
            other = by_assessment[int(fold.assessment[0])]
            assert fold.same_as(other)
            assert fold.buffered_out.size == 0


class TestVFold:
    def test_balanced_partition(self):
        plan = vfold(10, 5, seed=1)
        assert len(plan) == 5
        assert all(f.assessment.size == 2 for f in plan.folds)
        check_partition(plan)

    def test_leave_one_out(self):
        plan = vfold(7, 7, seed=0)
        assert sorted(int(f.assessment[0]) for f in plan.folds) == list(range(7))
        assert all(f.assessment.size == 1 and f.analysis.size == 6 for f in plan.folds)

    @pytest.mark.parametrize("v", [2, 5, 10, 20])
    def test_sweep_grid_on_full_landscape(self, v):
        plan = vfold(2500, v, seed=3)
        sizes = [f.assessment.size for f in plan.folds]
        assert len(plan) == v and sum(sizes) == 2500 and max(sizes) - min(sizes) <= 1

    @pytest.mark.parametrize("v", [1, 0, 11])
    def test_invalid_v(self, v):
        with pytest.raises(ParameterError):
            vfold(10, v)

    def test_seeded(self):
        assert vfold(50, 5, 9).same_as(vfold(50, 5, 9))
        assert not vfold(50, 5, 9).same_as(vfold(50, 5, 10))


class TestResubstitution:
    def test_single_flagged_fold(self):
        plan = resubstitution(5)
        assert plan.is_resubstitution and len(plan) == 1
        assert np.array_equal(plan.folds[0].assessment, np.arange(5))


class TestBlocks:
    def test_quadrants(self):
        coords = grid_coords(50)
        plan = block_cv(coords, 1 / 4, None, "continuous")
        assert len(plan) == 4
        for fold in plan.folds:
            assert fold.assessment.size == 625
            xy = coords[fold.assessment]
            # every quadrant is a 25 x 25 square of cells on one side of both midlines
            assert len(np.unique(np.sign(xy[:, 0] - 0.5))) == 1
            assert len(np.unique(np.sign(xy[:, 1] - 0.5))) == 1
            assert len(np.unique(xy[:, 0])) == len(np.unique(xy[:, 1])) == 25

    def test_halves_split_left_right(self):
        coords = grid_coords(50)
        plan = block_cv(coords, 1 / 2, None, "continuous")
        assert len(plan) == 2
        left = coords[plan.folds[0].assessment]
        assert plan.folds[0].assessment.size == 1250
        assert (left[:, 0] < 0.5).all()

    def test_hundred_blocks(self):
        ids, rows, cols = block_ids(grid_coords(50), 1 / 100)
        assert (rows, cols) == (10, 10)
        assert np.array_equal(np.bincount(ids), np.full(100, 25))

    @pytest.mark.parametrize("bs", [1 / 3, 0.3, 0.0, 2.0])
    def test_rejects_unsupported_sizes(self, bs):
        with pytest.raises(ParameterError):
            block_layout(bs)

    def test_continuous_dealing_gives_whole_columns(self):
        coords = grid_coords(40)
        plan = block_cv(coords, 1 / 16, 4, "continuous")
        ids, rows, cols = block_ids(coords, 1 / 16)
        for fold in plan.folds:
            blocks = np.unique(ids[fold.assessment])
            block_cols = np.unique(blocks % cols)
            assert len(block_cols) == 1
            assert sorted(blocks.tolist()) == sorted((np.arange(rows) * cols + block_cols[0]).tolist())

    def test_snake_differs_from_continuous(self):
        coords = grid_coords(40)
        ids, _, _ = block_ids(coords, 1 / 16)
        snake = block_cv(coords, 1 / 16, 4, "snake")
        first = np.unique(ids[snake.folds[0].assessment]).tolist()
        # snake order 0,1,2,3,7,6,5,4,... deals blocks 0, 7, 8, 15 to fold 0
        assert first == [0, 7, 8, 15]

    def test_random_blocking_is_seeded(self):
        coords = grid_coords(20)
        a = block_cv(coords, 1 / 16, 4, "random", seed=3)
        assert a.same_as(block_cv(coords, 1 / 16, 4, "random", seed=3))
        check_partition(a)

    def test_too_many_folds(self):
        with pytest.raises(ParameterError):
            block_cv(grid_coords(10), 1 / 4, 5)


class TestBuffers:
    def test_zero_buffer_leaves_fold_unchanged(self):
        coords = grid_coords(10)
        fold = Fold.holdout(100, [3, 4, 5])
        assert apply_exclusion_buffer(fold, coords, 0.0).same_as(fold)

    def test_eight_neighbours_buffered(self):
        coords = grid_coords(50)
        center = 25 * 50 + 25
        fold = apply_exclusion_buffer(Fold.holdout(2500, [center]), coords, 0.03)
        assert fold.buffered_out.size == 8
        assert fold.analysis.size == 2500 - 9

    def test_nine_point_disc(self):
        coords = grid_coords(50)
        center = 25 * 50 + 25
        _, fold = next(iter_disc_folds(coords, 0.03, 0.0, [center]))
        assert fold.assessment.size == 9

    def test_buffer_beyond_diameter_fails(self):
        coords = grid_coords(10)
        with pytest.raises(ParameterError, match="fold 2"):
            apply_exclusion_buffer(Fold.holdout(100, [0]), coords, math.sqrt(2), label="fold 2")

    def test_disc_error_names_first_observation(self):
        coords = grid_coords(6)
        with pytest.raises(ParameterError, match="observation 0"):
            buffered_vfold(coords, 0.0, 1.4)

    def test_negative_buffer(self):
        with pytest.raises(ParameterError):
            apply_exclusion_buffer(Fold.holdout(4, [0]), grid_coords(2), -0.1)


class TestClusters:
    def test_clusters_of_one_match_blo3(self):
        coords = grid_coords(6)
        n = 36
        clustered = cluster_cv(coords, n, "kmeans", 0.2, seed=0)
        disc = buffered_vfold(coords, 0.0, 0.2)
        by_assessment = {int(f.assessment[0]): f for f in disc.folds}
        assert len(clustered) == n
        for fold in clustered.folds:
            assert fold.same_as(by_assessment[int(fold.assessment[0])])

    @pytest.mark.parametrize("fn", ["kmeans", "hierarchical"])
    def test_sizes_and_partition(self, fn):
        plan = cluster_cv(grid_coords(20), 5, fn, 0.0, seed=2)
        assert len(plan) == 5
        check_partition(plan)

    def test_invalid_v(self):
        with pytest.raises(ParameterError):
            cluster_cv(grid_coords(3), 10)


class TestDeterminism:
    def _build_all(self, coords):
        return [
            vfold(len(coords), 10, 5),
            block_cv(coords, 1 / 9, 3, "random", 0.1, 5),
            cluster_cv(coords, 5, "kmeans", 0.1, 5),
            cluster_cv(coords, 5, "hierarchical", 0.1, 5),
            buffered_vfold(coords, 0.06, 0.06),
        ]

    def test_identical_across_thread_counts(self):
        coords = grid_coords(15)
        serial = [self._build_all(coords) for _ in range(2)]
        with ThreadPoolExecutor(8) as pool:
            threaded = list(pool.map(lambda _: self._build_all(coords), range(8)))
        reference = serial[0]
        for plans in serial[1:] + threaded:
            assert all(a.same_as(b) for a, b in zip(reference, plans))


class TestPlanCsv:
    @pytest.mark.parametrize(
        "make",
        [
            lambda c: vfold(len(c), 4, 1),
            lambda c: block_cv(c, 1 / 4, None, "continuous", 0.1),
            lambda c: buffered_vfold(c, 0.1, 0.1),
            lambda c: resubstitution(len(c)),
        ],
    )
    def test_round_trip(self, tmp_path, make):
        coords = grid_coords(8)
        plan = make(coords)
        path = tmp_path / "plan.csv"
        write_plan_csv(plan, path)
        with open(path) as fh:
            assert fh.readline().strip() == "fold_id,cell_id,role"
        back = read_plan_csv(path)
        assert back.same_as(plan)
        assert back.method is plan.method
        assert back.params == plan.params

    def test_without_sidecar(self, tmp_path):
        plan = vfold(12, 3, 0)
        path = tmp_path / "plan.csv"
        write_plan_csv(plan, path)
        path.with_suffix(".json").unlink()
        back = read_plan_csv(path)
        assert back.same_as(plan) and back.method is Method.VFOLD
