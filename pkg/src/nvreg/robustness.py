"""Fidelity landscapes over static detuning and amplitude bias.

A landscape is either brute-forced (one propagation per pixel) or estimated
from a handful of random samples through a Gaussian-process surrogate.  The
robust objective is the Gaussian-weighted mean of the landscape.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

from .dynamics import DEFAULT_SLICES, SampledField, model_for
from .hamiltonian import Disturbance, SystemParams
from .optimizers import (
    BudgetExhausted,
    OptimizationResult,
    OptimizerConfig,
    PulseShape,
    _run_trials,
    _workers,
    nelder_mead,
    pm_shape,
    pm_simplex,
)
from .pulses import OMEGA_MAX, sample

TWO_PI = 2.0 * math.pi
# Default detuning half-range: 2*pi x 100 kHz in rad/us.
DELTA_HALF_RANGE = TWO_PI * 0.1
KAPPA_RANGE = (-0.5, 0.5)
NOISE_FLOOR = 1e-6


class IllConditioned(ValueError):
    """Sample locations are duplicated or degenerate for a 2-D surrogate."""


@dataclass(frozen=True, eq=False)
class Grid:
    delta_axis: np.ndarray
    kappa_axis: np.ndarray

    def __post_init__(self):
        for name in ("delta_axis", "kappa_axis"):
            ax = np.asarray(getattr(self, name), float)
            if ax.ndim != 1 or len(ax) == 0:
                raise ValueError(f"{name} must be a non-empty 1-D array")
            if len(ax) > 1 and np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name} must be strictly increasing")

    @property
    def shape(self):
        return len(self.delta_axis), len(self.kappa_axis)

    def points(self) -> np.ndarray:
        d, k = np.meshgrid(self.delta_axis, self.kappa_axis, indexing="ij")
        return np.column_stack([d.ravel(), k.ravel()])

    def bounds(self):
        return (
            (float(self.delta_axis[0]), float(self.delta_axis[-1])),
            (float(self.kappa_axis[0]), float(self.kappa_axis[-1])),
        )


def default_grid(n_delta=50, n_kappa=50, delta_half_range=DELTA_HALF_RANGE, kappa_range=KAPPA_RANGE) -> Grid:
    return Grid(
        np.linspace(-delta_half_range, delta_half_range, n_delta),
        np.linspace(kappa_range[0], kappa_range[1], n_kappa),
    )


@dataclass(frozen=True, eq=False)
class WeightModel:
    sigma_delta: float
    sigma_kappa: float

    def __post_init__(self):
        if not (self.sigma_delta > 0 and self.sigma_kappa > 0):
            raise ValueError("weight standard deviations must be positive")

    @classmethod
    def default(cls, grid: Grid | None = None) -> "WeightModel":
        grid = grid or default_grid()
        (d0, d1), _ = grid.bounds()
        return cls(0.25 * 0.5 * (d1 - d0), 0.15)


@dataclass(eq=False)
class RobustnessMap:
    delta_axis: np.ndarray
    kappa_axis: np.ndarray
    values: np.ndarray
    provenance: str
    samples: list = field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return Grid(self.delta_axis, self.kappa_axis)

    def area_above(self, level: float) -> float:
        """Fraction of pixels with fidelity >= ``level``."""
        return float(np.mean(self.values >= level))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["# provenance", self.provenance])
            w.writerow(["delta_radus"] + [repr(float(v)) for v in self.delta_axis])
            w.writerow(["kappa"] + [repr(float(v)) for v in self.kappa_axis])
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])
            if self.samples:
                w.writerow([])
                w.writerow(["sample_delta_radus", "sample_kappa", "sample_fidelity"])
                for (d, k), f in self.samples:
                    w.writerow([repr(float(d)), repr(float(k)), repr(float(f))])

    @classmethod
    def from_csv(cls, path) -> "RobustnessMap":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        provenance = rows[0][1]
        delta = np.array([float(v) for v in rows[1][1:]])
        kappa = np.array([float(v) for v in rows[2][1:]])
        values = np.array([[float(v) for v in r] for r in rows[3 : 3 + len(delta)]])
        samples = []
        for r in rows[3 + len(delta) + 2 :]:
            if r:
                samples.append(((float(r[0]), float(r[1])), float(r[2])))
        return cls(delta, kappa, values, provenance, samples)


def _field_for(shape_or_field, T, n_samples):
    if isinstance(shape_or_field, SampledField):
        return shape_or_field
    return sample(shape_or_field, T, n_samples)


def _eval_points(field: SampledField, points, params: SystemParams):
    model = model_for(params)
    return [model.fidelity(field, Disturbance(float(d), float(k))) for d, k in points]


def evaluate_points(field: SampledField, points, params: SystemParams | None = None, workers: int = 1) -> np.ndarray:
    """Fidelity at each ``(delta, kappa)`` pair."""
    params = params or SystemParams()
    points = np.asarray(points, float).reshape(-1, 2)
    if workers > 1 and len(points) > 1:
        chunks = np.array_split(points, workers)
        parts = _run_trials(_eval_points, [(field, c, params) for c in chunks if len(c)], workers)
        return np.concatenate([np.asarray(p) for p in parts])
    return np.asarray(_eval_points(field, points, params))


def landscape_brute(shape, grid: Grid | None = None, params: SystemParams | None = None, T: float | None = None,
                    n_samples: int = DEFAULT_SLICES + 1, workers: int = 1) -> RobustnessMap:
    """Fidelity on every grid pixel by full propagation."""
    grid = grid or default_grid()
    field = _field_for(shape, T, n_samples)
    values = evaluate_points(field, grid.points(), params, workers).reshape(grid.shape)
    return RobustnessMap(np.asarray(grid.delta_axis, float), np.asarray(grid.kappa_axis, float), values, "brute")


class Surrogate:
    """Gaussian-process regressor on inputs rescaled to the unit box."""

    def __init__(self, gp, lo, span):
        self.gp = gp
        self.lo = lo
        self.span = span

    def predict(self, points) -> np.ndarray:
        x = (np.asarray(points, float).reshape(-1, 2) - self.lo) / self.span
        return self.gp.predict(x)


def surrogate_fit(samples, box=None, seed: int = 0, n_restarts: int = 3) -> Surrogate:
    """Fit a squared-exponential GP to ``[((delta, kappa), f), ...]``.

    Hyperparameters (per-axis length scales and signal variance) maximize the
    marginal likelihood; the white-noise level is pinned at ``1e-6``.
    ``box`` is ``((dlo, dhi), (klo, khi))`` for input normalization and
    defaults to the samples' bounding box.
    """
    if len(samples) < 4:
        raise IllConditioned("need at least four samples")
    X = np.array([loc for loc, _ in samples], dtype=float)
    y = np.array([f for _, f in samples], dtype=float)
    if box is None:
        box = ((X[:, 0].min(), X[:, 0].max()), (X[:, 1].min(), X[:, 1].max()))
    lo = np.array([box[0][0], box[1][0]], float)
    span = np.array([box[0][1] - box[0][0], box[1][1] - box[1][0]], float)
    if np.any(span <= 0):
        raise IllConditioned("sample box has zero extent")
    Xn = (X - lo) / span
    diff = Xn[:, None, :] - Xn[None, :, :]
    dist = np.sqrt((diff**2).sum(-1)) + np.eye(len(Xn))
    if dist.min() < 1e-9:
        raise IllConditioned("duplicate sample locations")
    centred = Xn - Xn.mean(0)
    if np.linalg.matrix_rank(centred, tol=1e-9) < 2:
        raise IllConditioned("sample locations are collinear")

    kernel = ConstantKernel(1.0, (1e-4, 1e4)) * RBF([0.3, 0.3], (1e-3, 1e2)) + WhiteKernel(
        NOISE_FLOOR, "fixed"
    )
    gp = GaussianProcessRegressor(kernel, normalize_y=True, n_restarts_optimizer=n_restarts, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(Xn, y)
    return Surrogate(gp, lo, span)


def sample_locations(rng: np.random.Generator, n: int, box) -> np.ndarray:
    (d0, d1), (k0, k1) = box
    return np.column_stack([rng.uniform(d0, d1, n), rng.uniform(k0, k1, n)])


def landscape_estimate(shape, grid: Grid | None = None, n_samples: int = 16, seed: int = 0,
                       params: SystemParams | None = None, T: float | None = None, box=None,
                       locations=None, n_field_samples: int = DEFAULT_SLICES + 1) -> RobustnessMap:
    """Surrogate landscape from ``n_samples`` random propagations.

    ``locations`` overrides the random draw (then ``n_samples`` is ignored).
    """
    if n_samples < 4 and locations is None:
        raise ValueError("need at least four samples")
    grid = grid or default_grid()
    box = box or grid.bounds()
    field = _field_for(shape, T, n_field_samples)
    if locations is None:
        locations = sample_locations(np.random.default_rng(seed), n_samples, box)
    locations = np.asarray(locations, float)
    f = evaluate_points(field, locations, params)
    samples = [((float(d), float(k)), float(v)) for (d, k), v in zip(locations, f)]
    model = surrogate_fit(samples, box, seed)
    values = np.clip(model.predict(grid.points()), 0.0, 1.0).reshape(grid.shape)
    return RobustnessMap(np.asarray(grid.delta_axis, float), np.asarray(grid.kappa_axis, float), values,
                         "estimated", samples)


def grid_weights(weights: WeightModel, grid: Grid) -> np.ndarray:
    """Normalized product weights ``N p(delta_k) p(kappa_j)`` on the grid.

    Computed in log space so very narrow weights collapse onto the pixel
    nearest the origin instead of underflowing.
    """
    ld = -0.5 * (np.asarray(grid.delta_axis) / weights.sigma_delta) ** 2 - math.log(
        math.sqrt(2 * math.pi) * weights.sigma_delta
    )
    lk = -0.5 * (np.asarray(grid.kappa_axis) / weights.sigma_kappa) ** 2 - math.log(
        math.sqrt(2 * math.pi) * weights.sigma_kappa
    )
    logw = ld[:, None] + lk[None, :]
    w = np.exp(logw - logw.max())
    return w / w.sum()


def average_fidelity(map_or_values, weights: WeightModel | None = None, grid: Grid | None = None) -> float:
    """Gaussian-weighted, normalized mean fidelity over the grid."""
    if isinstance(map_or_values, RobustnessMap):
        grid = grid or map_or_values.grid
        values = map_or_values.values
    else:
        values = np.asarray(map_or_values, float)
        grid = grid or default_grid(*values.shape)
    weights = weights or WeightModel.default(grid)
    return float(np.sum(grid_weights(weights, grid) * values))


def stratified_locations(rng: np.random.Generator, n: int, box) -> np.ndarray:
    """One uniform draw per cell of a ``k x k`` partition of ``box``
    (``n = k*k``); falls back to plain uniform draws otherwise."""
    k = math.isqrt(n)
    if k * k != n:
        return sample_locations(rng, n, box)
    (d0, d1), (k0, k1) = box
    i, j = np.divmod(np.arange(n), k)
    u = (i + rng.uniform(size=n)) / k
    v = (j + rng.uniform(size=n)) / k
    return np.column_stack([d0 + u * (d1 - d0), k0 + v * (k1 - k0)])


@dataclass
class RobustConfig(OptimizerConfig):
    n_trials: int = 1
    max_evals: int = 1600
    surrogate_samples: int = 16
    simplex_scale: float = 0.5
    # evaluations per simplex round; each round restarts around the incumbent
    round_evals: int = 300
    stratified: bool = True
    # "round": one location draw shared by every candidate of a simplex round
    # (common random numbers); "candidate": a fresh draw for each call
    resample: str = "round"


def _robust_objective(model, T, grid, box, weights, config: RobustConfig, counter):
    gw = grid_weights(weights, grid)
    pts = grid.points()
    draw = stratified_locations if config.stratified else sample_locations

    def objective(x):
        field = sample(pm_shape(x, config.omega_max), T, config.n_samples)
        call = counter[1] if config.resample == "candidate" else 0
        rng = np.random.default_rng([config.seed, counter[0], call])
        counter[1] += 1
        loc = draw(rng, config.surrogate_samples, box)
        f = [model.fidelity(field, Disturbance(float(d), float(k))) for d, k in loc]
        try:
            sur = surrogate_fit(list(zip(map(tuple, loc), f)), box, seed=config.seed)
        except IllConditioned:
            return 0.0
        est = np.clip(sur.predict(pts), 0.0, 1.0).reshape(grid.shape)
        return float(np.sum(gw * est))

    return objective


def _around(x0, T, config, rng):
    ref = np.tile([config.omega_max, 4 * math.pi**2 / T, 2 * math.pi / T], len(x0) // 3)
    scale = config.simplex_scale * np.maximum(np.abs(x0), ref)
    return np.vstack([x0, x0 + np.diag(scale * rng.choice([-1.0, 1.0], len(x0)))])


def bpm_optimize(T: float, params: SystemParams | None = None, weights: WeightModel | None = None,
                 config: RobustConfig | None = None, grid: Grid | None = None, initial_shape=None,
                 box=None) -> tuple[OptimizationResult, RobustnessMap]:
    """Robust PM search: maximize the surrogate-estimated weighted fidelity.

    Each candidate gets fresh seeded sample locations, so the objective is
    noisy.  The simplex is therefore rebuilt around the incumbent every
    ``round_evals`` calls; the restart re-scores the incumbent with new
    samples instead of trusting a lucky draw.  With ``initial_shape`` (a PM
    shape) the first simplex surrounds it, otherwise vertices are random.

    ``best_fidelity`` of the result is the nominal fidelity of the returned
    shape; the surrogate objective of each round is kept in ``trials``.  The
    returned map is recomputed by brute force.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    params = params or SystemParams()
    config = config or RobustConfig()
    grid = grid or default_grid()
    weights = weights or WeightModel.default(grid)
    box = box or grid.bounds()
    model = model_for(params)
    if config.resample not in ("round", "candidate"):
        raise ValueError(f"unknown resample mode {config.resample!r}")
    counter = [0, 0]  # (round, call) indices feeding the location seed
    objective = _robust_objective(model, T, grid, box, weights, config, counter)

    rng = np.random.default_rng([config.seed, 10**6])
    if initial_shape is not None:
        simplex = _around(np.asarray(initial_shape.variant.coeffs, float).ravel(), T, config, rng)
    else:
        simplex = pm_simplex(rng, T, config.n_harmonics, config.omega_max)

    trace, rounds, x, exhausted = [], [], None, False
    while len(trace) < config.max_evals:
        budget = min(config.round_evals, config.max_evals - len(trace))
        if budget < len(simplex) + 1:
            break
        if config.resample == "round":
            counter[1] = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BudgetExhausted)
            res = nelder_mead(objective, simplex, config.ftol, budget)
        counter[0] += 1
        offset = len(trace)
        trace.extend((offset + i, v) for i, v in res.trace)
        rounds.append({"round": len(rounds), "objective": res.value, "n_evaluations": res.n_evaluations})
        x = res.x
        exhausted = res.budget_exhausted
        simplex = _around(x, T, config, rng)

    shape = pm_shape(x, config.omega_max)
    field = sample(shape, T, config.n_samples)
    result = OptimizationResult(
        method="bpm",
        T=T,
        best_shape=shape,
        best_fidelity=model.fidelity(field),
        n_evaluations=len(trace),
        trace=trace,
        seed=config.seed,
        n_samples=config.n_samples,
        trials=rounds,
        budget_exhausted=exhausted,
    )
    brute = landscape_brute(field, grid, params, workers=_workers(config))
    return result, brute
