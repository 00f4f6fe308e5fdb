"""Random diffusion fields, seeded sampling, and the ensemble Monte Carlo driver.

Sampling uses the counter-based Philox generator with one substream per
(seed, replica, sample index): drawing sample j never consumes state from any
other sample, so the first J draws of a stream are always a prefix of the
first J0 draws. That prefix property is what makes benchmark-vs-smaller-J
comparisons in `mc_rate_study` well defined.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import defaults, fem
from .ensemble import (EnsembleMember, EnsembleProblem, EnsembleState, SolveStats,
                       TimeGrid, ensemble_solve)
from .fem import FeSpace, Field, build_space, integrate
from .mesh import BoundaryTag, uniform_triangulation
from .stability import SamplingGrid, StabilityReport, estimate_bounds, partition_ensemble

SQRT3 = math.sqrt(3.0)


class StabilityError(RuntimeError):
    """A sampled ensemble failed the stability gate and partitioning was off."""

    def __init__(self, report: StabilityReport):
        super().__init__(f"stability condition violated: margin {report.margin:.6g}")
        self.report = report


@dataclass(frozen=True)
class RandomFieldSpec:
    """Truncated random expansion of a diffusion field varying in the vertical direction."""

    a0: float = defaults.RANDOM_FIELD["a0"]
    sigma: float = defaults.RANDOM_FIELD["sigma"]
    corr_length: float = defaults.RANDOM_FIELD["corr_length"]
    n_modes: int = defaults.RANDOM_FIELD["n_modes"]

    def __post_init__(self):
        if self.corr_length <= 0:
            raise ValueError("correlation length must be positive")

    @property
    def dimension(self) -> int:
        return 2 * self.n_modes + 1


def kl_eigenvalues(spec: RandomFieldSpec) -> np.ndarray:
    """Mode weights lambda_0..lambda_{n_modes} of the truncated expansion."""
    lc = spec.corr_length
    i = np.arange(1, spec.n_modes + 1)
    lam = np.concatenate([[math.sqrt(math.pi * lc) / 2.0],
                          math.sqrt(math.pi) * lc * np.exp(-((i * math.pi * lc) ** 2) / 4.0)])
    return lam


@dataclass(frozen=True)
class SampleDraw:
    """One sampled coefficient vector with its stream provenance."""

    y: np.ndarray  # (2*n_modes + 1,), entries in [-sqrt(3), sqrt(3)]
    index: int
    replica: int
    seed: int

    def __post_init__(self):
        self.y.setflags(write=False)


def sample_coefficient(spec: RandomFieldSpec, draw: SampleDraw) -> Field:
    """Realized diffusion coefficient; depends on y only (constant in x and t)."""
    yvec = np.asarray(draw.y, dtype=float)
    if yvec.shape != (spec.dimension,):
        raise ValueError(f"draw has {yvec.shape[0]} entries, expected {spec.dimension}")
    lam = kl_eigenvalues(spec)
    s = spec.sigma * np.sqrt(lam)
    nf = spec.n_modes

    def coeff(x, y, t):
        acc = spec.a0 + s[0] * yvec[0] + np.zeros(np.shape(y))
        for i in range(1, nf + 1):
            acc = acc + s[i] * (yvec[i] * np.cos(i * math.pi * np.asarray(y))
                                + yvec[nf + i] * np.sin(i * math.pi * np.asarray(y)))
        return acc

    return coeff


def _substream(seed: int, replica: int, index: int) -> np.random.Generator:
    key = np.random.SeedSequence(entropy=int(seed),
                                 spawn_key=(int(replica),)).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key).jumped(int(index)))


def draw_samples(seed: int, count: int, n_modes: int, replica: int = 0) -> list[SampleDraw]:
    """Deterministic i.i.d. draws, uniform on [-sqrt(3), sqrt(3)] per entry."""
    if count < 1:
        raise ValueError("need at least one sample")
    dim = 2 * n_modes + 1
    return [SampleDraw(y=_substream(seed, replica, j).uniform(-SQRT3, SQRT3, dim),
                       index=j, replica=replica, seed=seed)
            for j in range(count)]


def left_edge_drive(x, y, t):
    """Dirichlet profile y*(1-y) on the left edge, zero on the other sides."""
    x = np.asarray(x)
    y = np.asarray(y)
    return np.where(x <= 1e-12, y * (1.0 - y), 0.0)


@dataclass(frozen=True)
class EmcConfig:
    """Sampled-ensemble run configuration on the unit square."""

    spec: RandomFieldSpec = field(default_factory=RandomFieldSpec)
    samples: int = defaults.EMC["samples"]
    seed: int = defaults.EMC["seed"]
    replica: int = 0
    nx: int = defaults.EMC["nx"]
    dt: float = defaults.EMC["dt"]
    t_final: float = defaults.EMC["t_final"]
    degree: int = defaults.EMC["degree"]
    g: Field = left_edge_drive
    f: Field = fem.zero_field
    u0: Field = fem.zero_field
    partition: bool = False

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("sample count must be at least 1")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"dt={self.dt} does not divide t_final={self.t_final}")

    def time_grid(self) -> TimeGrid:
        return TimeGrid(t_final=self.t_final, steps=int(round(self.t_final / self.dt)))


@dataclass
class EmcResult:
    """Summary of one sampled-ensemble run."""

    mean_field: np.ndarray
    std_field: np.ndarray
    std_degenerate: bool
    qoi_samples: np.ndarray
    stability: StabilityReport
    stats: SolveStats
    space: FeSpace
    config: EmcConfig
    groups: list[list[int]]

    def qoi_histogram(self) -> dict:
        counts, edges = np.histogram(self.qoi_samples,
                                     bins=max(1, math.ceil(math.sqrt(len(self.qoi_samples)))))
        return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}

    def to_json_dict(self) -> dict:
        # wall time is deliberately excluded: the record must be byte-identical
        # across reruns of the same seeded configuration
        cfg = self.config
        return {
            "defaults_version": defaults.DEFAULTS_VERSION,
            "seed": cfg.seed,
            "replica": cfg.replica,
            "samples": cfg.samples,
            "mesh": {"nx": cfg.nx, "ny": cfg.nx, "degree": cfg.degree,
                     "dof_count": int(self.space.dof_count)},
            "dt": cfg.dt,
            "t_final": cfg.t_final,
            "groups": self.groups,
            "mean_field": [float(v) for v in self.mean_field],
            "std_field": [float(v) for v in self.std_field],
            "std_degenerate": self.std_degenerate,
            "qoi_samples": [float(v) for v in self.qoi_samples],
            "qoi_histogram": self.qoi_histogram(),
            "stability": self.stability.to_json_dict(),
            "stats": {"factorizations": self.stats.factorizations,
                      "block_solves": self.stats.block_solves},
        }


def build_emc_members(config: EmcConfig) -> tuple[list[EnsembleMember], list[SampleDraw]]:
    """Sampled members sharing the configured source, boundary, and initial data."""
    draws = draw_samples(config.seed, config.samples, config.spec.n_modes, config.replica)
    members = [EnsembleMember(a=sample_coefficient(config.spec, d), f=config.f,
                              g=config.g, u0=config.u0, time_invariant=True)
               for d in draws]
    return members, draws


def qoi_integral(space: FeSpace, u: np.ndarray) -> float | np.ndarray:
    """Spatial integral of the FE function; columns of a block map to an array."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        return integrate(space, u)
    return np.array([integrate(space, u[:, j]) for j in range(u.shape[1])])


def gate_and_group(config: EmcConfig, members: Sequence[EnsembleMember],
                   space: FeSpace) -> tuple[StabilityReport, list[list[int]]]:
    """Stability gate for a sampled ensemble; groups it when partitioning is on.

    Large ensembles realize the tails of the sample distribution, so the joint
    condition routinely fails at a few hundred samples even though every single
    field stays coercive; partitioning is then the supported way to proceed.
    """
    sampling = SamplingGrid.from_space(space)  # coefficients are time-invariant
    report = estimate_bounds([m.a for m in members], sampling)
    if report.satisfied:
        return report, [list(range(len(members)))]
    if config.partition:
        return report, partition_ensemble([m.a for m in members], sampling)
    raise StabilityError(report)


def solve_sampled_groups(config: EmcConfig, members: Sequence[EnsembleMember],
                         space: FeSpace, groups: Sequence[Sequence[int]],
                         observer=None) -> tuple[np.ndarray, SolveStats]:
    """Advance each group by the shared-matrix scheme; returns the final block."""
    grid = config.time_grid()
    final = np.empty((space.dof_count, len(members)))
    factorizations = 0
    block_solves = 0
    wall = 0.0
    for group in groups:
        problem = EnsembleProblem(members=[members[j] for j in group], space=space,
                                  grid=grid, dirichlet_tags=tuple(BoundaryTag))
        trajectory, stats = ensemble_solve(problem, observer=observer,
                                           keep_trajectory=False)
        final[:, list(group)] = trajectory[-1].u
        factorizations += stats.factorizations
        block_solves += stats.block_solves
        wall += stats.wall_time
    return final, SolveStats(factorizations, block_solves, wall)


def run_emc(config: EmcConfig, observer=None) -> EmcResult:
    """Sample the coefficients, gate on stability, and advance all samples together.

    With `partition` enabled a failing gate splits the ensemble into stable
    subgroups, each advanced by its own shared-matrix run; otherwise the run
    refuses with a StabilityError carrying the report.
    """
    members, _ = build_emc_members(config)
    mesh = uniform_triangulation(config.nx, config.nx)
    space = build_space(mesh, config.degree)
    report, groups = gate_and_group(config, members, space)
    final, run_stats = solve_sampled_groups(config, members, space, groups,
                                            observer=observer)
    mean = final.mean(axis=1)
    degenerate = config.samples < 2
    std = np.zeros_like(mean) if degenerate else final.std(axis=1, ddof=1)
    qoi = qoi_integral(space, final)
    return EmcResult(mean_field=mean, std_field=std, std_degenerate=degenerate,
                     qoi_samples=np.asarray(qoi), stability=report,
                     stats=run_stats, space=space, config=config, groups=groups)


def log_log_fit(j_values: Sequence[float], errors: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and prefactor of E ~ c * J^slope."""
    slope, intercept = np.polyfit(np.log(np.asarray(j_values, float)),
                                  np.log(np.asarray(errors, float)), 1)
    return float(slope), float(np.exp(intercept))


@dataclass
class RateStudyResult:
    j_values: list[int]
    e_l2: list[float]
    e_h1: list[float]
    slope_l2: float
    slope_h1: float
    fit_c_l2: float

    def csv_lines(self) -> list[str]:
        lines = ["J,E_L2,E_H1"]
        for j, el2, eh1 in zip(self.j_values, self.e_l2, self.e_h1):
            lines.append(f"{j},{el2:.6e},{eh1:.6e}")
        return lines

    def footer_dict(self) -> dict:
        return {"slope_L2": self.slope_l2, "slope_H1": self.slope_h1,
                "fit_c_L2": self.fit_c_l2}


def _mean_trajectory(config: EmcConfig) -> np.ndarray:
    """Sample-averaged DOF field at every time level, shape (N+1, ndof).

    Column sums are accumulated across group runs, so the average is over the
    whole ensemble even when the stability gate forced a partition.
    """
    grid = config.time_grid()
    sums: list[np.ndarray | None] = [None]

    def record(state: EnsembleState) -> None:
        if sums[0] is None:
            sums[0] = np.zeros((grid.steps + 1, state.u.shape[0]))
        sums[0][state.n] += state.u.sum(axis=1)

    run_emc(config, observer=record)
    return sums[0] / config.samples


def mc_rate_study(config: EmcConfig, j_list: Sequence[int] | None = None,
                  j_benchmark: int | None = None,
                  replicas: int | None = None) -> RateStudyResult:
    """Sampling-error decay against a large-J benchmark sharing each stream's prefix.

    For every replica, the benchmark run and each smaller-J run reuse the first
    J draws of that replica's stream. The reported figures are the max-in-time
    RMS-over-replicas L2 distance and the time-accumulated H1 analog, plus
    log-log regression slopes.
    """
    j_list = list(j_list if j_list is not None else defaults.RATE_STUDY["j_list"])
    j0 = int(j_benchmark if j_benchmark is not None else defaults.RATE_STUDY["j_benchmark"])
    m_replicas = int(replicas if replicas is not None else defaults.RATE_STUDY["replicas"])
    if not j_list or min(j_list) < 1 or m_replicas < 1:
        raise ValueError("j_list and replicas must be positive")
    if max(j_list) >= j0:
        raise ValueError(f"benchmark sample count {j0} must exceed every J in {j_list}")

    mesh = uniform_triangulation(config.nx, config.nx)
    space = build_space(mesh, config.degree)
    mass = fem.assemble_mass(space)
    stiff = fem.assemble_stiffness(space, fem.constant_field(1.0), 0.0)
    dt = config.time_grid().dt

    sq_l2 = np.zeros((len(j_list), config.time_grid().steps + 1))
    sq_h1 = np.zeros(len(j_list))
    for m in range(m_replicas):
        bench = _mean_trajectory(replace(config, samples=j0, replica=m))
        for k, j in enumerate(j_list):
            diff = bench - _mean_trajectory(replace(config, samples=j, replica=m))
            sq_l2[k] += np.einsum("ni,ni->n", diff, (mass @ diff.T).T)
            sq_h1[k] += np.einsum("ni,ni->", diff[1:], (stiff @ diff[1:].T).T)

    e_l2 = [float(np.sqrt((sq_l2[k][1:] / m_replicas).max())) for k in range(len(j_list))]
    e_h1 = [float(np.sqrt(dt * sq_h1[k] / m_replicas)) for k in range(len(j_list))]
    slope_l2, c_l2 = log_log_fit(j_list, e_l2)
    slope_h1, _ = log_log_fit(j_list, e_h1)
    return RateStudyResult(j_values=list(j_list), e_l2=e_l2, e_h1=e_h1,
                           slope_l2=slope_l2, slope_h1=slope_h1, fit_c_l2=c_l2)
