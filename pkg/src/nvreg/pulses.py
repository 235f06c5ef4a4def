"""Pulse parameterizations and their sampling onto a time grid.

Amplitudes are angular frequencies in rad/us.  ``OMEGA_MAX = pi`` rad/us is
the amplitude bound used throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DEFAULT_SLICES, SampledField

OMEGA_MAX = math.pi
BOUNDARY_POWER = 30
N_HARMONICS = 3


def envelope(t, T: float, p: int = BOUNDARY_POWER):
    """Reciprocal boundary function ``1/lambda(t) = 1 - ((t - h)/h)**p``, ``h = T/2``.

    Exactly zero at ``t = 0`` and ``t = T`` for even ``p``.
    """
    h = 0.5 * T
    return 1.0 - ((np.asarray(t, dtype=float) - h) / h) ** p


def boundary_factor(t, T: float, p: int = BOUNDARY_POWER):
    """``lambda(t) = h^p / (h^p - (t - h)^p)``; infinite at the endpoints."""
    if p % 2:
        raise ValueError("boundary exponent must be even")
    env = envelope(t, T, p)
    with np.errstate(divide="ignore"):
        return 1.0 / env


@dataclass(frozen=True, eq=False)
class GaussianPulse:
    """Counter-intuitive Gaussian pair centred on ``T/2``: the Stokes pulse
    peaks at ``T/2 - delay/2``, the pump at ``T/2 + delay/2``."""

    omega0: float
    sigma: float
    delay: float
    kind = "gaussian"

    def evaluate(self, t, T):
        c = 0.5 * T
        p = self.omega0 * np.exp(-((t - c - 0.5 * self.delay) ** 2) / (2 * self.sigma**2))
        s = self.omega0 * np.exp(-((t - c + 0.5 * self.delay) ** 2) / (2 * self.sigma**2))
        return p, s

    def params(self):
        return {"omega0": self.omega0, "sigma": self.sigma, "delay": self.delay}


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """Per-slice amplitudes ``u_p[j], u_s[j]`` of width ``T/N``."""

    up: np.ndarray
    us: np.ndarray
    kind = "piecewise"

    def __post_init__(self):
        if len(self.up) != len(self.us):
            raise ValueError("pump and Stokes slice counts differ")

    @property
    def n_slices(self) -> int:
        return len(self.up)

    def params(self):
        return {"up": list(map(float, self.up)), "us": list(map(float, self.us))}


@dataclass(frozen=True, eq=False)
class CrabPulse:
    """Truncated Fourier series with randomized frequencies.

    ``coeffs`` is ``(Nc, 4)`` holding ``[A, B, C, D]``; the frequencies are
    ``2 pi n (1 + r_n) / T`` with ``r_n`` frozen per trial.
    """

    coeffs: np.ndarray
    r: np.ndarray
    p: int = BOUNDARY_POWER
    kind = "crab"

    def frequencies(self, T):
        n = np.arange(1, len(self.r) + 1)
        return 2 * np.pi * n * (1.0 + np.asarray(self.r)) / T

    def evaluate(self, t, T):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1, 4)
        w = self.frequencies(T)
        ph = np.outer(t, w)
        sin, cos = np.sin(ph), np.cos(ph)
        env = envelope(t, T, self.p)
        p = env * (sin @ c[:, 0] + cos @ c[:, 1])
        s = env * (sin @ c[:, 2] + cos @ c[:, 3])
        return p, s

    def params(self):
        return {"coeffs": np.asarray(self.coeffs).tolist(), "r": list(map(float, self.r)), "p": self.p}


@dataclass(frozen=True, eq=False)
class PmPulse:
    """Phase-modulated sum; ``coeffs`` is ``(Nc, 3)`` holding ``[a, b, v]``.

    Pump uses ``cos((b/v) cos(v t))``, Stokes ``cos((b/v) sin(v t))``, both
    weighted by ``a`` and the boundary envelope.
    """

    coeffs: np.ndarray
    p: int = BOUNDARY_POWER
    kind = "pm"

    def evaluate(self, t, T):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1, 3)
        a, b, v = c[:, 0], c[:, 1], c[:, 2]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            depth = b / v
        # v = 0 (or v so small that b/v overflows) switches the modulation off
        depth = np.where(np.isfinite(depth), depth, 0.0)
        vt = np.outer(t, v)
        env = envelope(t, T, self.p)
        p = env * (np.cos(depth * np.cos(vt)) @ a)
        s = env * (np.cos(depth * np.sin(vt)) @ a)
        return p, s

    def params(self):
        return {"coeffs": np.asarray(self.coeffs).tolist(), "p": self.p}


@dataclass(frozen=True, eq=False)
class PulseShape:
    """A parameterization together with its amplitude bound."""

    variant: object
    omega_max: float = OMEGA_MAX

    @property
    def kind(self) -> str:
        return self.variant.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "omega_max": self.omega_max, **self.variant.params()}

    @classmethod
    def from_dict(cls, d: dict) -> "PulseShape":
        d = dict(d)
        kind = d.pop("kind")
        omega_max = d.pop("omega_max", OMEGA_MAX)
        if kind == "gaussian":
            v = GaussianPulse(**d)
        elif kind == "piecewise":
            v = PiecewiseConstant(np.array(d["up"], float), np.array(d["us"], float))
        elif kind == "crab":
            v = CrabPulse(np.array(d["coeffs"], float), np.array(d["r"], float), d.get("p", BOUNDARY_POWER))
        elif kind == "pm":
            v = PmPulse(np.array(d["coeffs"], float), d.get("p", BOUNDARY_POWER))
        else:
            raise ValueError(f"unknown pulse kind {kind!r}")
        return cls(v, omega_max)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def time_grid(T: float, n_samples: int) -> np.ndarray:
    """``n_samples`` uniform points including both endpoints."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    n = n_samples - 1
    t = np.arange(n_samples) * T / n
    t[-1] = T  # k*T/n can miss T by an ulp; the envelope needs it exact
    return t


def clip_amplitude(field: SampledField, omega_max: float = OMEGA_MAX) -> tuple[SampledField, int]:
    """Limit every sample to ``[-omega_max, omega_max]``; also return the clip count."""
    p = np.asarray(field.omega_p, float)
    s = np.asarray(field.omega_s, float)
    n = int(np.count_nonzero(np.abs(p) > omega_max) + np.count_nonzero(np.abs(s) > omega_max))
    if n == 0:
        return field, 0
    return SampledField(field.times, np.clip(p, -omega_max, omega_max), np.clip(s, -omega_max, omega_max)), n


def sample(shape, T: float, n_samples: int = DEFAULT_SLICES + 1) -> SampledField:
    """Evaluate ``shape`` on the uniform grid and clip to its amplitude bound.

    Piecewise-constant shapes keep their own slices; ``n_samples`` is ignored
    for them.
    """
    if not isinstance(shape, PulseShape):
        shape = PulseShape(shape)
    v = shape.variant
    if isinstance(v, PiecewiseConstant):
        field = SampledField.from_slices(T, v.up, v.us)
    else:
        t = time_grid(T, n_samples)
        p, s = v.evaluate(t, T)
        field = SampledField(t, p, s)
    return clip_amplitude(field, shape.omega_max)[0]
