"""Coercivity and deviation bounds gating the shared-matrix scheme.

The scheme is stable when the coercivity floor `theta` of the coefficients
exceeds `theta_plus`, the largest sup-norm deviation of any member from the
group mean. Both are continuum quantities; here they are estimated on exactly
the points the solver sees: the assembly quadrature points of the mesh crossed
with the time grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ensemble import TimeGrid
from .fem import FeSpace, Field


@dataclass(frozen=True)
class SamplingGrid:
    """Spatial sample points and time levels for coefficient bound estimates."""

    x: np.ndarray
    y: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        if self.x.size == 0 or self.times.size == 0:
            raise ValueError("sampling grid must be nonempty")

    @classmethod
    def from_space(cls, space: FeSpace, grid: TimeGrid | None = None) -> "SamplingGrid":
        """Assembly quadrature points of the space, crossed with the time levels.

        With grid=None the coefficients are treated as time-invariant and
        sampled at t=0 only.
        """
        tab = space.tabulation(space.assembly_rule)
        times = np.array([0.0]) if grid is None else grid.times()
        return cls(x=tab.xq.ravel(), y=tab.yq.ravel(), times=times)

    def describe(self) -> str:
        return f"{self.x.size} spatial points x {self.times.size} time levels"


@dataclass(frozen=True)
class StabilityReport:
    theta: float
    theta_plus: float
    theta_minus: float
    satisfied: bool
    margin: float
    coercivity_members: float
    coercivity_mean: float
    sampling: str

    def to_json_dict(self) -> dict:
        return {"theta": self.theta, "theta_plus": self.theta_plus,
                "theta_minus": self.theta_minus, "satisfied": self.satisfied,
                "margin": self.margin}


def _coefficient_values(coeffs: Sequence[Field], x, y, t: float) -> np.ndarray:
    rows = []
    for j, a in enumerate(coeffs):
        vals = np.broadcast_to(np.asarray(a(x, y, float(t)), dtype=float), x.shape)
        if not np.isfinite(vals).all():
            raise ValueError(f"coefficient of member {j} evaluated non-finite at t={t}")
        rows.append(vals)
    return np.stack(rows)


def estimate_bounds(coeffs: Sequence[Field], grid: SamplingGrid) -> StabilityReport:
    """Sampled coercivity floor and deviation band for a group of coefficients.

    theta is the smaller of the members' floor and the mean's floor;
    theta_minus is measured over positive times only, since deviations may
    vanish identically at t=0.
    """
    if len(coeffs) < 1:
        raise ValueError("need at least one coefficient")
    coercivity_members = np.inf
    coercivity_mean = np.inf
    theta_plus = 0.0
    theta_minus = np.inf
    for t in grid.times:
        vals = _coefficient_values(coeffs, grid.x, grid.y, t)
        mean = vals.mean(axis=0)
        coercivity_members = min(coercivity_members, float(vals.min()))
        coercivity_mean = min(coercivity_mean, float(mean.min()))
        dev = np.abs(vals - mean).max(axis=1)  # sup over x, per member
        theta_plus = max(theta_plus, float(dev.max()))
        if t > 0.0:
            theta_minus = min(theta_minus, float(dev.min()))
    if not np.isfinite(theta_minus):
        theta_minus = 0.0
    theta = min(coercivity_members, coercivity_mean)
    margin = theta - theta_plus
    return StabilityReport(theta=theta, theta_plus=theta_plus, theta_minus=theta_minus,
                           satisfied=margin > 0.0, margin=margin,
                           coercivity_members=coercivity_members,
                           coercivity_mean=coercivity_mean, sampling=grid.describe())


def check_condition(report: StabilityReport) -> bool:
    """True iff the coercivity floor strictly exceeds the deviation bound."""
    return report.margin > 0.0


def partition_ensemble(coeffs: Sequence[Field], grid: SamplingGrid) -> list[list[int]]:
    """Greedy split of the group into subgroups that each pass the stability check.

    Members are swept in order of their mean signed deviation from the global
    average; a new group opens whenever adding the next member would break the
    condition within the current group. Singletons always pass, so the sweep
    terminates, provided every coefficient is individually coercive.
    """
    j_count = len(coeffs)
    scores = np.zeros(j_count)
    for t in grid.times:
        vals = _coefficient_values(coeffs, grid.x, grid.y, t)
        for j in range(j_count):
            if vals[j].min() <= 0.0:
                raise ValueError(
                    f"member {j} has a non-positive coefficient; cannot be grouped")
        scores += (vals - vals.mean(axis=0)).mean(axis=1)
    order = np.argsort(scores, kind="stable")

    groups: list[list[int]] = []
    current: list[int] = []
    for j in order:
        trial = current + [int(j)]
        if estimate_bounds([coeffs[i] for i in trial], grid).satisfied:
            current = trial
        else:
            if current:
                groups.append(sorted(current))
            current = [int(j)]
    if current:
        groups.append(sorted(current))
    return sorted(groups, key=lambda g: g[0])
