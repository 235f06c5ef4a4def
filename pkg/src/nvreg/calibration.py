"""Linear instrument calibrations and measured-trace rescaling."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import SampledField

# Reference calibration slopes with their one-sigma uncertainties.
# Rabi frequency per AWG volt (MHz/V), oscilloscope volts per AWG volt,
# and oscilloscope volts per GHz of carrier frequency.
REFERENCE_SLOPES = {
    "rabi_per_volt": (40.4, 1.2),
    "osc_per_awg": (0.016, 0.003),
    "volt_per_frequency": (-0.0092, 0.0028),
}


class DegenerateX(ValueError):
    """All abscissae coincide; the slope is undefined."""


class FlatTrace(ValueError):
    """Measured trace has no excursion above its first sample."""


@dataclass(frozen=True)
class CalibrationFit:
    a: float
    b: float
    residual_rms: float
    n_points: int

    def predict(self, x):
        return self.a * np.asarray(x, float) + self.b

    def invert(self, y):
        """x for a given y; requires a nonzero slope."""
        if self.a == 0:
            raise ZeroDivisionError("flat calibration cannot be inverted")
        return (np.asarray(y, float) - self.b) / self.a


@dataclass
class MeasuredTrace:
    times: np.ndarray
    voltages: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.voltages = np.asarray(self.voltages, float)
        if self.times.ndim != 1 or self.times.shape != self.voltages.shape:
            raise ValueError("times and voltages must be 1-D and equal length")
        if len(self.times) == 0:
            raise ValueError("empty trace")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in self.metadata.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["time_us", "volts"])
            for t, v in zip(self.times, self.voltages):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "MeasuredTrace":
        """Two-column CSV; ``# key=value`` lines become metadata and a
        non-numeric first row is treated as a header."""
        meta, t, v = {}, [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                if row[0].lstrip().startswith("#"):
                    key, _, val = ",".join(row).lstrip("# ").partition("=")
                    if key:
                        meta[key.strip()] = val.strip()
                    continue
                try:
                    t.append(float(row[0]))
                    v.append(float(row[1]))
                except ValueError:
                    if t:
                        raise
        return cls(np.array(t), np.array(v), meta)


def linear_fit(x, y) -> CalibrationFit:
    """Least-squares line ``y = a x + b``."""
    x = np.asarray(x, float).ravel()
    y = np.asarray(y, float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if len(x) < 2 or np.ptp(x) == 0:
        raise DegenerateX("need at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    a = float(dx @ (y - ym) / (dx @ dx))
    b = float(ym - a * xm)
    resid = y - (a * x + b)
    return CalibrationFit(a, b, float(np.sqrt(np.mean(resid**2))), len(x))


def fit_both_directions(x, y) -> dict:
    """Regress y on x and x on y; the second is reported re-expressed as y(x)."""
    fwd = linear_fit(x, y)
    rev = linear_fit(y, x)
    out = {"y_on_x": asdict(fwd), "x_on_y": asdict(rev)}
    if rev.a != 0:
        out["x_on_y_as_y_of_x"] = {"a": 1.0 / rev.a, "b": -rev.b / rev.a}
    return out


def _sim_trace(sim, channel: str = "pump"):
    """(times, values) of one channel of a SampledField or a pair of arrays."""
    if isinstance(sim, SampledField):
        amp = sim.omega_p if channel == "pump" else sim.omega_s
        if len(amp) == len(sim.times):
            return np.asarray(sim.times, float), np.asarray(amp, float)
        mids = 0.5 * (sim.times[1:] + sim.times[:-1])
        return mids, np.asarray(amp, float)
    t, v = sim
    return np.asarray(t, float), np.asarray(v, float)


def excursion(values) -> float:
    values = np.asarray(values, float)
    return float(np.max(np.abs(values)) - abs(values[0]))


def rescale_trace(real: MeasuredTrace, sim, channel: str = "pump"):
    """Map a measured trace onto the simulated amplitude scale.

    The real trace is shifted so it starts at zero, scaled by
    ``d_sim / d_real``, linearly interpolated onto the simulation times and
    finally offset by the first simulated sample (zero for enveloped
    shapes).  ``d`` is the peak magnitude minus the magnitude of the first
    sample, taken after the shift for the real trace.

    Returns ``(times, values, scale)``.
    """
    t_sim, u_sim = _sim_trace(sim, channel)
    if len(u_sim) == 0:
        raise ValueError("empty simulated trace")
    shifted = real.voltages - real.voltages[0]
    d_real = excursion(shifted)
    if d_real <= 0:
        raise FlatTrace("measured trace never leaves its first value")
    scale = excursion(u_sim) / d_real
    values = np.interp(t_sim, real.times, shifted * scale) + u_sim[0]
    return t_sim, values, scale


def shape_discrepancy(a, b) -> float:
    """RMS of ``b - a`` divided by the peak magnitude of ``a``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError("traces must share a grid")
    peak = np.max(np.abs(a))
    rms = np.sqrt(np.mean((b - a) ** 2))
    if peak == 0:
        return 0.0 if rms == 0 else float("inf")
    return float(rms / peak)


def compare_trace(real: MeasuredTrace, sim, channel: str = "pump") -> dict:
    t, values, scale = rescale_trace(real, sim, channel)
    _, u_sim = _sim_trace(sim, channel)
    return {
        "channel": channel,
        "scale_factor": scale,
        "d_sim": excursion(u_sim),
        "d_real": excursion(real.voltages - real.voltages[0]),
        "discrepancy": shape_discrepancy(u_sim, values),
        "n_points": len(t),
        "metadata": real.metadata,
    }


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
