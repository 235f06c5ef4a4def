import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nvreg.calibration import (
    CalibrationFit,
    DegenerateX,
    FlatTrace,
    MeasuredTrace,
    compare_trace,
    excursion,
    fit_both_directions,
    linear_fit,
    rescale_trace,
    shape_discrepancy,
    write_report,
)
from nvreg.dynamics import SampledField
from nvreg.optimizers import fixed_stirap_shape
from nvreg.pulses import sample


def test_exact_on_noiseless_line():
    x = np.linspace(0, 2, 9)
    fit = linear_fit(x, 3.5 * x - 0.25)
    assert fit.a == pytest.approx(3.5, rel=1e-14)
    assert fit.b == pytest.approx(-0.25, rel=1e-13)
    assert fit.residual_rms < 1e-14 and fit.n_points == 9


def test_flat_and_degenerate():
    fit = linear_fit([1, 2, 3], [4, 4, 4])
    assert fit.a == 0 and fit.b == 4
    with pytest.raises(DegenerateX):
        linear_fit([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateX):
        linear_fit([1], [1])
    with pytest.raises(ZeroDivisionError):
        fit.invert(3.0)


def test_predict_invert():
    fit = CalibrationFit(2.0, 1.0, 0.0, 2)
    assert fit.invert(fit.predict(0.7)) == pytest.approx(0.7)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3), x=arrays(float, 8, elements=st.floats(-10, 10), unique=True))
def test_affine_recovery(a, b, x):
    fit = linear_fit(x, a * x + b)
    scale = max(1.0, abs(a), abs(b))
    assert fit.a == pytest.approx(a, abs=1e-8 * scale)
    assert fit.b == pytest.approx(b, abs=1e-8 * scale)


def test_both_directions():
    x = np.linspace(0, 1, 20)
    rep = fit_both_directions(x, 2 * x + 1)
    assert rep["y_on_x"]["a"] == pytest.approx(2)
    assert rep["x_on_y"]["a"] == pytest.approx(0.5)
    assert rep["x_on_y_as_y_of_x"]["b"] == pytest.approx(1)


def _sim():
    return sample(fixed_stirap_shape(4.0), 4.0, 401)


@settings(max_examples=50, deadline=None)
@given(gain=st.floats(1e-3, 1e3), offset=st.floats(-10, 10))
def test_rescale_affine_invariance(gain, offset):
    sim = _sim()
    real = MeasuredTrace(sim.times, gain * sim.omega_p + offset)
    _, values, _ = rescale_trace(real, sim)
    assert np.allclose(values, sim.omega_p, rtol=0, atol=1e-9 * np.max(sim.omega_p))


def test_rescale_resamples_onto_sim_grid():
    sim = _sim()
    t = np.linspace(0, 4, 4001)
    real = MeasuredTrace(t, 0.02 * np.interp(t, sim.times, sim.omega_s) - 0.3)
    times, values, scale = rescale_trace(real, sim, "stokes")
    assert np.array_equal(times, sim.times)
    assert np.allclose(values, sim.omega_s, atol=1e-12)
    assert scale == pytest.approx(50.0)


def test_rescale_flat_raises():
    with pytest.raises(FlatTrace):
        rescale_trace(MeasuredTrace(np.arange(5.0), np.full(5, 2.0)), _sim())


def test_trace_validation():
    with pytest.raises(ValueError):
        MeasuredTrace([0, 1, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        MeasuredTrace([], [])


def test_excursion():
    assert excursion([0.5, -2.0, 1.0]) == 1.5


def test_discrepancy_cases():
    a = np.sin(np.linspace(0, 3, 50))
    assert shape_discrepancy(a, a) == 0
    eps = 0.01
    assert shape_discrepancy(a, a + eps) == pytest.approx(eps / np.max(np.abs(a)))
    with pytest.raises(ValueError):
        shape_discrepancy(a, a[:-1])


def test_discrepancy_white_noise_monte_carlo():
    # E[rms] ~ sigma for many samples; the mean over seeds matches sigma / peak
    a = np.sin(np.linspace(0, 3, 2000)) * 2.0
    sigma = 0.05
    vals = [shape_discrepancy(a, a + np.random.default_rng(s).normal(0, sigma, a.size)) for s in range(100)]
    assert np.mean(vals) == pytest.approx(sigma / 2.0, rel=0.1)


def test_trace_csv_and_report(tmp_path):
    sim = _sim()
    tr = MeasuredTrace(sim.times, 0.1 * sim.omega_p + 0.02, {"channel": "pump", "gain": "0.1"})
    tr.to_csv(tmp_path / "t.csv")
    back = MeasuredTrace.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.voltages, tr.voltages)
    assert back.metadata == {"channel": "pump", "gain": "0.1"}
    rep = compare_trace(back, sim)
    assert rep["discrepancy"] < 1e-9
    write_report(tmp_path / "r.json", rep)
    assert json.loads((tmp_path / "r.json").read_text())["scale_factor"] == pytest.approx(10.0)


def test_piecewise_sim_uses_slice_midpoints():
    sim = SampledField.from_slices(2.0, np.array([0.0, 1.0, 2.0, 1.0]), np.zeros(4))
    real = MeasuredTrace(np.linspace(0, 2, 9), np.linspace(0, 2, 9))
    t, v, _ = rescale_trace(real, sim)
    assert np.allclose(t, [0.25, 0.75, 1.25, 1.75])
