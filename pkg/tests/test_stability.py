import json
import math

import numpy as np
import pytest

from ensfem.ensemble import TimeGrid
from ensfem.fem import build_space, constant_field
from ensfem.mesh import uniform_triangulation
from ensfem.stability import (SamplingGrid, check_condition, estimate_bounds,
                              partition_ensemble)


@pytest.fixture
def grid():
    space = build_space(uniform_triangulation(8, 8), 1)
    return SamplingGrid.from_space(space, TimeGrid(t_final=1.0, steps=10))


@pytest.fixture
def static_grid():
    space = build_space(uniform_triangulation(8, 8), 1)
    return SamplingGrid.from_space(space)


def const(c):
    return constant_field(c)


class TestEstimateBounds:
    def test_single_member(self, grid):
        report = estimate_bounds([const(0.7)], grid)
        assert report.theta == pytest.approx(0.7)
        assert report.theta_plus == 0.0
        assert report.theta_minus == 0.0
        assert report.satisfied

    def test_single_member_nonpositive_not_satisfied(self, grid):
        assert not estimate_bounds([const(-1.0)], grid).satisfied

    def test_two_constants_margin_zero(self, grid):
        report = estimate_bounds([const(1.0), const(3.0)], grid)
        assert report.theta == pytest.approx(1.0)
        assert report.theta_plus == pytest.approx(1.0)
        assert report.theta_minus == pytest.approx(1.0)
        assert report.margin == pytest.approx(0.0)
        assert not report.satisfied

    def test_perturbed_family_bounds(self):
        # fine sampling to approach the closed-form extrema
        space = build_space(uniform_triangulation(32, 32), 2)
        grid = SamplingGrid.from_space(space, TimeGrid(t_final=1.0, steps=80))
        eps = (0.6207, 0.1841, 0.2691)
        coeffs = [lambda x, y, t, c=1.0 + e:
                  1.0 + c * math.sin(t) * np.sin(np.asarray(x) * np.asarray(y))
                  for e in eps]
        report = estimate_bounds(coeffs, grid)
        mean_eps = sum(eps) / 3.0
        closed_form = max(abs(e - mean_eps) for e in eps) * math.sin(1.0) ** 2
        assert report.theta == pytest.approx(1.0, abs=1e-12)
        assert report.theta_plus == pytest.approx(closed_form, rel=0.03)
        assert report.satisfied
        assert report.margin == pytest.approx(1.0 - closed_form, rel=0.02)

    def test_nonfinite_coefficient_rejected(self, grid):
        bad = lambda x, y, t: np.full(np.shape(x), np.nan)
        with pytest.raises(ValueError, match="member 0"):
            estimate_bounds([bad], grid)

    def test_determinism(self, grid):
        coeffs = [const(1.0), lambda x, y, t: 1.0 + 0.5 * np.asarray(y)]
        assert estimate_bounds(coeffs, grid) == estimate_bounds(coeffs, grid)

    def test_json_schema(self, grid):
        report = estimate_bounds([const(2.0)], grid)
        record = json.loads(json.dumps(report.to_json_dict()))
        assert set(record) == {"theta", "theta_plus", "theta_minus", "satisfied", "margin"}


class TestCheckCondition:
    def test_cases(self, grid):
        assert check_condition(estimate_bounds([const(0.7)], grid))
        assert not check_condition(estimate_bounds([const(1.0), const(3.0)], grid))
        assert check_condition(estimate_bounds([const(2.0), const(2.5)], grid))


class TestPartition:
    def test_stable_ensemble_single_group(self, static_grid):
        groups = partition_ensemble([const(2.0), const(2.1), const(2.2)], static_grid)
        assert groups == [[0, 1, 2]]

    def test_far_constants_split_into_singletons(self, static_grid):
        groups = partition_ensemble([const(1.0), const(3.0)], static_grid)
        assert groups == [[0], [1]]

    def test_two_cluster_constants(self, static_grid):
        coeffs = [const(1.0), const(1.1), const(3.0), const(3.1)]
        groups = partition_ensemble(coeffs, static_grid)
        assert groups == [[0, 1], [2, 3]]
        # brute force: the returned grouping must satisfy the condition per group,
        # and must match an exhaustive search over all partitions of minimum size
        def satisfied(group):
            return estimate_bounds([coeffs[i] for i in group], static_grid).satisfied
        assert all(satisfied(g) for g in groups)
        best = min((p for p in _partitions(list(range(4))) if all(map(satisfied, p))),
                   key=len)
        assert len(best) == len(groups)

    def test_noncoercive_member_rejected(self, static_grid):
        with pytest.raises(ValueError, match="member 1"):
            partition_ensemble([const(1.0), const(-0.5)], static_grid)

    def test_singleton_guarantee(self, static_grid):
        rng = np.random.default_rng(11)
        coeffs = [const(c) for c in rng.uniform(0.1, 10.0, size=6)]
        for groups in (partition_ensemble(coeffs, static_grid),):
            for g in groups:
                assert estimate_bounds([coeffs[i] for i in g], static_grid).satisfied
        assert sorted(i for g in groups for i in g) == list(range(6))

    def test_deviant_member_raises_theta_plus(self, static_grid):
        base = [const(1.0), const(1.2)]
        before = estimate_bounds(base, static_grid).theta_plus
        after = estimate_bounds(base + [const(2.0)], static_grid).theta_plus
        assert after > before


def _partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in _partitions(rest):
        for k in range(len(sub)):
            yield sub[:k] + [[first] + sub[k]] + sub[k + 1:]
        yield [[first]] + sub
