import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvreg.hamiltonian import (
    FLIP_FLOP,
    IZ1,
    IZ2,
    NOMINAL,
    SINGLET,
    TWO_PI,
    DegenerateField,
    Disturbance,
    LabelingAmbiguity,
    SystemParams,
    analytic_coefficients,
    analytic_state,
    build_rwa_generator,
    build_static_blocks,
    cubic_residual,
    cubic_residual_scale,
    diagonalize,
    drive_operator,
    static_hamiltonian,
    transition_elements,
)

fields_g = st.floats(1.0, 100.0)


def test_defaults_are_table_values_in_rad_per_us(params):
    assert params.D == pytest.approx(TWO_PI * 2870)
    assert params.gamma_e == pytest.approx(TWO_PI * 2.8)
    assert params.gamma_c == pytest.approx(TWO_PI * 1.7e-3)
    assert params.d12 == pytest.approx(TWO_PI * 4e-3)
    assert (params.Azz1, params.Azz2) == pytest.approx((TWO_PI * 12.45, TWO_PI * 2.28))
    assert (params.Bx, params.Bz) == (100.0, 5.0)
    assert (params.T2e, params.T2n1, params.T2n2) == (7.0, 500.0, 700.0)


@pytest.mark.parametrize("bad", [{"T2e": 0.0}, {"T2n1": -1.0}, {"Bx": math.inf}, {"d12": math.nan}])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        SystemParams(**bad)


def test_config_round_trip(tmp_path, params):
    path = tmp_path / "sys.json"
    params.save(path)
    cfg = json.loads(path.read_text())
    assert set(cfg) >= {"D", "gamma_e", "gamma_c", "d12", "Azz1", "Azz2", "Bx", "Bz", "T2e_us", "T2n1_us", "T2n2_us"}
    assert cfg["Azz1"] == pytest.approx(12.45)
    back = SystemParams.load(path)
    for k in ("D", "gamma_e", "gamma_c", "d12", "Azz1", "Azz2", "Bx", "Bz", "T2e", "T2n1", "T2n2"):
        assert getattr(back, k) == pytest.approx(getattr(params, k), rel=1e-15)


def test_bare_value_switch():
    cfg = {"d12": 4e-3, "Azz1": 12.45, "Azz2": 2.28}
    a = SystemParams.from_config(cfg)
    b = SystemParams.from_config(cfg, bare_values_carry_2pi=True)
    assert a.Azz1 == pytest.approx(TWO_PI * b.Azz1)
    assert b.d12 == 4e-3
    with pytest.raises(KeyError):
        SystemParams.from_config({"nonsense": 1})


def test_zero_field_singlet_eigenvalue():
    p = SystemParams(Bx=0.0, Bz=0.0)
    h0, _ = build_static_blocks(p)
    # singlet: flip-flop gives -1, -4 IzIz gives +1; d12/2 * (-1 + 1) = 0
    assert np.allclose(h0 @ SINGLET, 0.0)
    off = h0 - np.diag(np.diag(h0))
    assert np.allclose(off, 0.5 * p.d12 * FLIP_FLOP)
    assert np.allclose(np.diag(h0), 0.5 * p.d12 * np.diag(-4 * IZ1 @ IZ2))


def test_ms1_block_diagonal(params):
    _, h1 = build_static_blocks(params)
    base = params.D + params.gamma_e * params.Bz
    a1, a2 = params.Azz1, params.Azz2
    assert np.array_equal(h1, np.diag(np.diag(h1)))
    assert np.allclose(np.diag(h1), base + np.array([a1 + a2, a1 - a2, -a1 + a2, -a1 - a2]) / 2)


def test_static_hamiltonian_hermitian(params):
    H = static_hamiltonian(params)
    assert np.max(np.abs(H - H.conj().T)) == 0.0


def test_eigensystem_invariants(eigsys, params):
    U = eigsys.states
    assert np.max(np.abs(U.conj().T @ U - np.eye(8))) < 1e-12
    H = static_hamiltonian(params)
    assert np.allclose(H @ U, U * eigsys.energies, atol=1e-9 * np.max(np.abs(eigsys.energies)))
    ms0 = np.max(np.abs(eigsys.energies[:4]))
    assert abs(eigsys.energy(2)) <= 1e-10 * ms0
    chi = eigsys.chi
    for i, j in ((1, 4), (4, 1), (1, 7), (7, 1)):
        assert chi[i, j] == 0
    assert np.array_equal(chi, chi.conj().T)
    assert np.all(chi[:4, :4] == 0) and np.all(chi[4:, 4:] == 0)
    assert abs(chi[5, 1]) > 0.1 and abs(chi[6, 1]) > 0.1


def test_labels_at_defaults(eigsys):
    E = eigsys.energies
    assert abs(E[2]) < abs(E[0]) and abs(E[2]) < abs(E[3])
    assert E[0] < E[3]
    assert np.all(np.diff(E[4:]) > 0)


def test_cubic_vanishes_at_eigenvalues(eigsys, params):
    for j in (1, 3, 4):
        E = eigsys.energy(j)
        assert abs(cubic_residual(E, params)) < 1e-8 * cubic_residual_scale(E, params)


def test_cubic_at_zero(params):
    d, g = params.d12, params.gamma_c
    expected = -2 * d**3 - 4 * params.Bx**2 * d * g**2 + 8 * params.Bz**2 * d * g**2
    assert cubic_residual(0.0, params) == pytest.approx(expected, rel=1e-14)


def test_cubic_zero_field_factorization():
    # with Bx = Bz = 0 the cubic is x^3 - 3 d^2 x - 2 d^3 = (x - 2d)(x + d)^2, x = 2E
    p = SystemParams(Bx=0.0, Bz=0.0)
    d = p.d12
    for E in (d, -d / 2):
        assert abs(cubic_residual(E, p)) < 1e-12 * d**3


@pytest.mark.parametrize("j", [1, 3, 4])
def test_analytic_states_parallel(eigsys, params, j):
    v = analytic_state(j, params)
    cos = abs(np.vdot(v, eigsys.state(j)[:4]))
    assert cos > 1 - 1e-10


def test_analytic_guards(params):
    with pytest.raises(DegenerateField):
        analytic_coefficients(1, params.replace(Bx=0.0))
    with pytest.raises(ValueError):
        analytic_coefficients(2, params)


def test_degenerate_field_raises_ambiguity():
    with pytest.raises(LabelingAmbiguity):
        diagonalize(SystemParams(Bx=0.0, Bz=0.0, d12=0.0))


@settings(max_examples=40, deadline=None)
@given(bx=fields_g, bz=fields_g)
def test_labeling_stable_over_field_grid(bx, bz):
    p = SystemParams(Bx=bx, Bz=bz)
    es = diagonalize(p)
    E = es.energies
    assert abs(E[1]) <= 1e-10 * np.max(np.abs(E[:4]))
    assert abs(E[2] / E[0]) < 1 and abs(E[2] / E[3]) < 1
    for j in (1, 3, 4):
        assert abs(cubic_residual(E[j - 1], p)) < 1e-8 * cubic_residual_scale(E[j - 1], p)
    assert es.chi[1, 4] == 0 and es.chi[1, 7] == 0


def test_transition_elements_definition(eigsys):
    V = drive_operator()
    U = eigsys.states
    assert np.allclose(transition_elements(eigsys), U.conj().T @ V @ U)


def test_rwa_nominal_structure(eigsys):
    H = build_rwa_generator(eigsys, 1.3, 0.7)
    chi = eigsys.chi
    E = eigsys.energies
    for k in range(4, 8):
        assert H[k, 0] == pytest.approx(0.65 * chi[k, 0])
        assert H[k, 1] == pytest.approx(0.35 * chi[k, 1])
    assert H[4, 1] == 0 and H[7, 1] == 0
    assert np.allclose(np.diag(H).real, [0, 0, E[2], E[3], E[4] - E[5], 0, E[6] - E[5], E[7] - E[5]])
    assert np.array_equal(H, H.conj().T)
    assert np.array_equal(H, build_rwa_generator(eigsys, 1.3, 0.7, Disturbance(0.0, 0.0)))


def test_rwa_drive_off_diagonal(eigsys):
    d = 0.37
    H = build_rwa_generator(eigsys, 0.0, 0.0, Disturbance(d, 0.2))
    E = eigsys.energies
    assert np.allclose(H, np.diag([0, 0, E[2], E[3], E[4] - E[5] - d, -d, E[6] - E[5] - d, E[7] - E[5] - d]))


def test_kappa_one_doubles_drive(eigsys):
    a = build_rwa_generator(eigsys, 1.0, 2.0, NOMINAL)
    b = build_rwa_generator(eigsys, 1.0, 2.0, Disturbance(0.0, 1.0))
    off = ~np.eye(8, dtype=bool)
    assert np.allclose(b[off], 2 * a[off])


def test_kappa_bounds():
    Disturbance(0.0, -1.0)
    with pytest.raises(ValueError):
        Disturbance(0.0, -1.5)


@settings(max_examples=20, deadline=None)
@given(shift=st.floats(-1e3, 1e3))
def test_identity_shift_insensitivity(params, shift):
    base = diagonalize(params)
    moved = diagonalize(params.replace(D=params.D + shift))
    assert np.allclose(moved.energies[4:], base.energies[4:] + shift, rtol=0, atol=1e-9 * params.D)
    a = build_rwa_generator(base, 0.4, 0.9, Disturbance(0.1, 0.1))
    b = build_rwa_generator(moved, 0.4, 0.9, Disturbance(0.1, 0.1))
    assert np.allclose(a, b, atol=1e-9)
