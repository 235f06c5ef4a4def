"""Fidelity maximization over the pulse parameterizations.

Every optimizer returns an :class:`OptimizationResult` whose
``best_fidelity`` is reproduced exactly by :func:`evaluate_shape` on the
returned shape.  Multi-start trials draw from independent streams
``default_rng([seed, trial])`` so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .dynamics import DEFAULT_SLICES, SampledField, model_for
from .hamiltonian import NOMINAL, Disturbance, SystemParams
from .pulses import (
    N_HARMONICS,
    OMEGA_MAX,
    CrabPulse,
    GaussianPulse,
    PiecewiseConstant,
    PmPulse,
    PulseShape,
    envelope,
    sample,
)

FTOL = 1e-4
STIRAP_OMEGA0 = 0.9 * math.pi
GRAPE_SLICES = 100


class BudgetExhausted(RuntimeWarning):
    """Nelder-Mead stopped on its evaluation budget, not on tolerance."""


@dataclass
class OptimizerConfig:
    n_trials: int = 20
    max_evals: int = 4000
    ftol: float = FTOL
    n_samples: int = DEFAULT_SLICES + 1
    n_harmonics: int = N_HARMONICS
    omega_max: float = OMEGA_MAX
    grape_slices: int = GRAPE_SLICES
    grape_max_iter: int = 400
    stirap_omega0: float = STIRAP_OMEGA0
    seed: int = 0
    workers: int = 1

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class OptimizationResult:
    method: str
    T: float
    best_shape: PulseShape
    best_fidelity: float
    n_evaluations: int
    trace: list
    seed: int
    n_samples: int = DEFAULT_SLICES + 1
    trials: list = field(default_factory=list)
    budget_exhausted: bool = False

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "T_us": self.T,
            "best_fidelity": self.best_fidelity,
            "n_evaluations": self.n_evaluations,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "budget_exhausted": self.budget_exhausted,
            "best_shape": self.best_shape.to_dict(),
            "trials": self.trials,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "OptimizationResult":
        with open(path) as fh:
            d = json.load(fh)
        return cls(
            method=d["method"],
            T=d["T_us"],
            best_shape=PulseShape.from_dict(d["best_shape"]),
            best_fidelity=d["best_fidelity"],
            n_evaluations=d["n_evaluations"],
            trace=[],
            seed=d["seed"],
            n_samples=d["n_samples"],
            trials=d.get("trials", []),
            budget_exhausted=d.get("budget_exhausted", False),
        )

    def trace_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval_index", "objective"])
            w.writerows((i, repr(float(v))) for i, v in self.trace)


def evaluate_shape(shape, T, params=None, n_samples=DEFAULT_SLICES + 1, dist: Disturbance = NOMINAL) -> float:
    """Fidelity of ``shape`` after sampling and clipping."""
    model = model_for(params or SystemParams())
    return model.fidelity(sample(shape, T, n_samples), dist)


# -- Nelder-Mead ------------------------------------------------------------


@dataclass
class SimplexResult:
    x: np.ndarray
    value: float
    n_evaluations: int
    trace: list
    budget_exhausted: bool


def nelder_mead(objective, initial_vertexes, ftol: float = FTOL, max_evals: int = 4000) -> SimplexResult:
    """Maximize ``objective`` with the downhill simplex method.

    Stops when the spread of objective values over the simplex drops below
    ``ftol`` or after ``max_evals`` calls.  Every call is recorded in
    ``trace`` as ``(index, value)``.
    """
    simplex = np.asarray(initial_vertexes, dtype=float)
    trace = []
    best = [-np.inf, None]

    def negated(x):
        v = float(objective(x))
        trace.append((len(trace), v))
        if v > best[0]:
            best[0], best[1] = v, np.array(x, dtype=float)
        return -v

    res = scipy.optimize.minimize(
        negated,
        simplex[0],
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "fatol": ftol,
            "xatol": np.inf,
            "maxfev": max_evals,
            "maxiter": 10 * max_evals,
        },
    )
    exhausted = res.status in (1, 2)
    if exhausted:
        warnings.warn(f"simplex stopped after {len(trace)} evaluations", BudgetExhausted, stacklevel=2)
    return SimplexResult(best[1], best[0], len(trace), trace, exhausted)


# -- helpers ----------------------------------------------------------------


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def _run_trials(fn, args_list, workers: int):
    if workers and workers > 1 and len(args_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, *zip(*args_list)))
    return [fn(*a) for a in args_list]


def _merge(method, T, trial_results, seed, n_samples) -> OptimizationResult:
    # highest fidelity wins, lowest trial index breaks ties
    best = max(trial_results, key=lambda r: (r["fidelity"], -r["trial"]))
    trace = []
    for r in sorted(trial_results, key=lambda r: r["trial"]):
        offset = len(trace)
        trace.extend((offset + i, v) for i, v in r["trace"])
    return OptimizationResult(
        method=method,
        T=T,
        best_shape=PulseShape.from_dict(best["shape"]),
        best_fidelity=best["fidelity"],
        n_evaluations=sum(r["n_evaluations"] for r in trial_results),
        trace=trace,
        seed=seed,
        n_samples=n_samples,
        trials=[{k: r[k] for k in ("trial", "fidelity", "n_evaluations", "budget_exhausted")} for r in trial_results],
        budget_exhausted=any(r["budget_exhausted"] for r in trial_results),
    )


def _workers(config: OptimizerConfig) -> int:
    return config.workers if config.workers else (os.cpu_count() or 1)


# -- STIRAP -----------------------------------------------------------------


def fixed_stirap_shape(T, omega0=STIRAP_OMEGA0) -> PulseShape:
    """Textbook STIRAP timing: ``sigma = T/8``, ``t_d = sqrt(2) sigma``."""
    sigma = T / 8.0
    return PulseShape(GaussianPulse(omega0, sigma, math.sqrt(2.0) * sigma))


def _stirap_trial(T, params, config: OptimizerConfig, trial):
    model = model_for(params)
    n = config.n_samples

    def objective(x):
        sigma, td = x
        if sigma <= 0:
            return 0.0
        shape = PulseShape(GaussianPulse(config.stirap_omega0, sigma, td), config.omega_max)
        return model.fidelity(sample(shape, T, n))

    rng = _trial_rng(config.seed, trial)
    if trial == 0:
        base = np.array([T / 8.0, math.sqrt(2.0) * T / 8.0])
    else:
        base = np.array([rng.uniform(T / 16, T / 3), rng.uniform(0.0, T / 2)])
    simplex = np.vstack([base, base + [0.25 * base[0], 0.0], base + [0.0, 0.25 * max(base[1], T / 8)]])
    res = nelder_mead(objective, simplex, config.ftol, config.max_evals)
    shape = PulseShape(GaussianPulse(config.stirap_omega0, float(res.x[0]), float(res.x[1])), config.omega_max)
    return {
        "trial": trial,
        "fidelity": res.value,
        "shape": shape.to_dict(),
        "n_evaluations": res.n_evaluations,
        "trace": res.trace,
        "budget_exhausted": res.budget_exhausted,
    }


def optimize_stirap(T: float, params: SystemParams | None = None, config: OptimizerConfig | None = None,
                    n_starts: int = 3) -> OptimizationResult:
    """Direct search over Gaussian width and delay at fixed peak amplitude."""
    if T <= 0:
        raise ValueError("T must be positive")
    params = params or SystemParams()
    config = config or OptimizerConfig()
    args = [(T, params, config, k) for k in range(n_starts)]
    results = _run_trials(_stirap_trial, args, _workers(config))
    return _merge("stirap", T, results, config.seed, config.n_samples)


# -- GRAPE ------------------------------------------------------------------


def grape_initial(T: float, mode: str, rng: np.random.Generator, n_slices: int = GRAPE_SLICES,
                  omega_max: float = OMEGA_MAX) -> PiecewiseConstant:
    """Random initial slices: ``inverse_lambda`` (scaled boundary envelope)
    or ``gaussian`` (STIRAP pair with random width)."""
    t = (np.arange(n_slices) + 0.5) * T / n_slices
    if mode == "inverse_lambda":
        omega0 = rng.uniform(0.5 * math.pi, 0.9 * math.pi)
        u = omega0 * envelope(t, T)
        up, us = u, u.copy()
    elif mode == "gaussian":
        sigma = rng.uniform(0.3, 3.0)
        up, us = GaussianPulse(0.9 * math.pi, sigma, math.sqrt(2.0) * sigma).evaluate(t, T)
    else:
        raise ValueError(f"unknown GRAPE initialization {mode!r}")
    return PiecewiseConstant(np.clip(up, -omega_max, omega_max), np.clip(us, -omega_max, omega_max))


def grape_gradient(shape, T: float, dist: Disturbance = NOMINAL, params: SystemParams | None = None,
                   omega_max: float = OMEGA_MAX):
    """``dF/du`` for every pump then Stokes slice (length ``2N``)."""
    v = shape.variant if isinstance(shape, PulseShape) else shape
    if v.n_slices < 2:
        raise ValueError("need at least two slices")
    model = model_for(params or SystemParams())
    nsub = _grape_substeps(model, T, v.n_slices, omega_max, dist)
    _, gp, gs = model.fidelity_gradient(T, v.up, v.us, dist, nsub=nsub)
    return np.concatenate([gp, gs])


def _grape_substeps(model, T, n_slices, omega_max, dist=NOMINAL):
    bound = np.array([omega_max])
    return model.substeps(T / n_slices, bound, bound, dist)


def grape_ascent(model, T, up, us, omega_max=OMEGA_MAX, ftol=FTOL, max_iter=400, nsub=None, window=10):
    """Projected gradient ascent with adaptive step length.

    Each sweep tries ``u + eps * grad`` (clipped); a non-improving step halves
    ``eps`` and is retried, an accepted one grows it.  Stops once the last
    ``window`` accepted sweeps together gained less than ``ftol``.
    """
    if nsub is None:
        nsub = _grape_substeps(model, T, len(up), omega_max)
    up = np.clip(np.asarray(up, float), -omega_max, omega_max)
    us = np.clip(np.asarray(us, float), -omega_max, omega_max)
    F, gp, gs = model.fidelity_gradient(T, up, us, nsub=nsub)
    trace = [(0, F)]
    history = [F]
    g0 = math.sqrt(float(gp @ gp + gs @ gs))
    eps = 0.1 * omega_max / max(g0, 1e-300)
    for _ in range(max_iter):
        accepted = False
        for _ in range(40):
            cp = np.clip(up + eps * gp, -omega_max, omega_max)
            cs = np.clip(us + eps * gs, -omega_max, omega_max)
            Fn, gpn, gsn = model.fidelity_gradient(T, cp, cs, nsub=nsub)
            trace.append((len(trace), Fn))
            if Fn > F:
                accepted = True
                break
            eps *= 0.5
        if not accepted:
            break
        up, us, F, gp, gs = cp, cs, Fn, gpn, gsn
        history.append(F)
        eps *= 2.0
        if len(history) > window and F - history[-1 - window] < ftol:
            break
    return up, us, F, trace


def _grape_trial(T, params, mode, config: OptimizerConfig, trial):
    model = model_for(params)
    rng = _trial_rng(config.seed, trial)
    init = grape_initial(T, mode, rng, config.grape_slices, config.omega_max)
    up, us, F, trace = grape_ascent(model, T, init.up, init.us, config.omega_max, config.ftol, config.grape_max_iter)
    shape = PulseShape(PiecewiseConstant(up, us), config.omega_max)
    # report through the standard evaluation path so results re-simulate exactly
    F = model.fidelity(sample(shape, T))
    return {
        "trial": trial,
        "fidelity": F,
        "shape": shape.to_dict(),
        "n_evaluations": len(trace),
        "trace": trace,
        "budget_exhausted": False,
    }


def optimize_grape(T: float, params: SystemParams | None = None, init_mode: str = "gaussian",
                   config: OptimizerConfig | None = None) -> OptimizationResult:
    if T <= 0:
        raise ValueError("T must be positive")
    params = params or SystemParams()
    config = config or OptimizerConfig()
    args = [(T, params, init_mode, config, k) for k in range(config.n_trials)]
    results = _run_trials(_grape_trial, args, _workers(config))
    tag = "grape_g" if init_mode == "gaussian" else "grape_inv_lambda"
    out = _merge(tag, T, results, config.seed, config.grape_slices)
    return out


# -- CRAB / PM --------------------------------------------------------------


def _direct_objective(model, T, make_shape, n_samples, dist=NOMINAL):
    def objective(x):
        return model.fidelity(sample(make_shape(x), T, n_samples), dist)

    return objective


def crab_shape(x, r, omega_max=OMEGA_MAX) -> PulseShape:
    return PulseShape(CrabPulse(np.asarray(x, float).reshape(-1, 4), np.asarray(r, float)), omega_max)


def pm_shape(x, omega_max=OMEGA_MAX) -> PulseShape:
    return PulseShape(PmPulse(np.asarray(x, float).reshape(-1, 3)), omega_max)


def crab_simplex(rng, nc, omega_max=OMEGA_MAX):
    return rng.uniform(-omega_max, omega_max, size=(4 * nc + 1, 4 * nc))


def pm_simplex(rng, T, nc, omega_max=OMEGA_MAX):
    """Vertices with ``a`` in ``[-Omax, Omax]``, ``v`` in ``[2pi/T, 2pi Nc/T]``
    and ``b`` in ``[0, 2pi v]``."""
    m = 3 * nc + 1
    a = rng.uniform(-omega_max, omega_max, size=(m, nc))
    v = rng.uniform(2 * math.pi / T, 2 * math.pi * nc / T, size=(m, nc))
    b = rng.uniform(0.0, 1.0, size=(m, nc)) * 2 * math.pi * v
    return np.stack([a, b, v], axis=2).reshape(m, 3 * nc)


def _crab_trial(T, params, config: OptimizerConfig, trial):
    model = model_for(params)
    rng = _trial_rng(config.seed, trial)
    nc = config.n_harmonics
    r = rng.uniform(-0.5, 0.5, size=nc)
    objective = _direct_objective(model, T, lambda x: crab_shape(x, r, config.omega_max), config.n_samples)
    res = nelder_mead(objective, crab_simplex(rng, nc, config.omega_max), config.ftol, config.max_evals)
    return {
        "trial": trial,
        "fidelity": res.value,
        "shape": crab_shape(res.x, r, config.omega_max).to_dict(),
        "n_evaluations": res.n_evaluations,
        "trace": res.trace,
        "budget_exhausted": res.budget_exhausted,
    }


def optimize_crab(T: float, params: SystemParams | None = None, config: OptimizerConfig | None = None) -> OptimizationResult:
    if T <= 0:
        raise ValueError("T must be positive")
    params = params or SystemParams()
    config = config or OptimizerConfig()
    args = [(T, params, config, k) for k in range(config.n_trials)]
    return _merge("crab", T, _run_trials(_crab_trial, args, _workers(config)), config.seed, config.n_samples)


def _pm_trial(T, params, config: OptimizerConfig, trial):
    model = model_for(params)
    rng = _trial_rng(config.seed, trial)
    nc = config.n_harmonics
    objective = _direct_objective(model, T, lambda x: pm_shape(x, config.omega_max), config.n_samples)
    res = nelder_mead(objective, pm_simplex(rng, T, nc, config.omega_max), config.ftol, config.max_evals)
    return {
        "trial": trial,
        "fidelity": res.value,
        "shape": pm_shape(res.x, config.omega_max).to_dict(),
        "n_evaluations": res.n_evaluations,
        "trace": res.trace,
        "budget_exhausted": res.budget_exhausted,
    }


def optimize_pm(T: float, params: SystemParams | None = None, config: OptimizerConfig | None = None) -> OptimizationResult:
    if T <= 0:
        raise ValueError("T must be positive")
    params = params or SystemParams()
    config = config or OptimizerConfig()
    args = [(T, params, config, k) for k in range(config.n_trials)]
    return _merge("pm", T, _run_trials(_pm_trial, args, _workers(config)), config.seed, config.n_samples)


METHODS = {
    "stirap": lambda T, params, config: optimize_stirap(T, params, config),
    "grape_g": lambda T, params, config: optimize_grape(T, params, "gaussian", config),
    "grape_inv_lambda": lambda T, params, config: optimize_grape(T, params, "inverse_lambda", config),
    "crab": optimize_crab,
    "pm": optimize_pm,
}
