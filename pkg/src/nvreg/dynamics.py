"""Open-system propagation under sampled control fields.

The state is an 8x8 density matrix in the product basis.  Pure dephasing of
the electron (S_z) and of each nucleus (I_z) is diagonal there, so the
dissipator acts elementwise: ``d rho_ab/dt = -Gamma_ab rho_ab``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg

from . import _backend
from .hamiltonian import (
    IZ1,
    IZ2,
    NOMINAL,
    Disturbance,
    EigenSystem,
    SystemParams,
    diagonalize,
    rwa_operators,
    to_product_basis,
)

log = logging.getLogger(__name__)

DEFAULT_SLICES = 1000
# RK4 substeps are sized so that (step * spectral spread) <= STEP_PHASE.
STEP_PHASE = 0.25

SZ_DIAG = np.array([0.0] * 4 + [1.0] * 4)
IZ1_DIAG = np.tile(np.diag(IZ1), 2)
IZ2_DIAG = np.tile(np.diag(IZ2), 2)


class StepUnstable(RuntimeError):
    """Trace or positivity drifted beyond tolerance; the time step is too coarse."""


@dataclass(frozen=True, eq=False)
class SampledField:
    """Control amplitudes (rad/us) on a uniform grid ``times`` over ``[0, T]``.

    With ``len(omega_p) == len(times)`` the amplitudes are point samples at
    the grid points and each slice uses the mean of its two end samples.
    With ``len(omega_p) == len(times) - 1`` they are per-slice values.
    """

    times: np.ndarray
    omega_p: np.ndarray
    omega_s: np.ndarray

    def __post_init__(self):
        if len(self.omega_p) != len(self.omega_s):
            raise ValueError("omega_p and omega_s must have equal length")
        if len(self.omega_p) not in (len(self.times), len(self.times) - 1):
            raise ValueError("amplitudes must match the grid points or the slices")
        if len(self.times) < 2:
            raise ValueError("need at least one slice")

    @classmethod
    def from_slices(cls, T: float, omega_p, omega_s) -> "SampledField":
        omega_p = np.asarray(omega_p, dtype=float)
        times = np.arange(len(omega_p) + 1) * T / len(omega_p)
        return cls(times, omega_p, np.asarray(omega_s, dtype=float))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_slices(self) -> int:
        return len(self.times) - 1

    @property
    def is_piecewise(self) -> bool:
        return len(self.omega_p) == self.n_slices

    @property
    def dt(self) -> float:
        return self.T / self.n_slices

    def slice_amplitudes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.is_piecewise:
            return np.asarray(self.omega_p, float), np.asarray(self.omega_s, float)
        p = np.asarray(self.omega_p, float)
        s = np.asarray(self.omega_s, float)
        return 0.5 * (p[1:] + p[:-1]), 0.5 * (s[1:] + s[:-1])

    def max_amplitude(self) -> float:
        return float(max(np.max(np.abs(self.omega_p)), np.max(np.abs(self.omega_s))))

    def to_csv(self, path) -> None:
        layout = "slices" if self.is_piecewise else "points"
        t = self.times[:-1] if self.is_piecewise else self.times
        with open(path, "w", newline="") as fh:
            fh.write(f"# layout={layout} T_us={self.T!r}\n")
            w = csv.writer(fh)
            w.writerow(["time_us", "omega_p_radus", "omega_s_radus"])
            for row in zip(t, self.omega_p, self.omega_s):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "SampledField":
        lines = Path(path).read_text().splitlines()
        meta = {}
        if lines and lines[0].startswith("#"):
            meta = dict(item.split("=", 1) for item in lines[0][1:].split())
            lines = lines[1:]
        rows = list(csv.DictReader(lines))
        t = np.array([float(r["time_us"]) for r in rows])
        p = np.array([float(r["omega_p_radus"]) for r in rows])
        s = np.array([float(r["omega_s_radus"]) for r in rows])
        if meta.get("layout") == "slices":
            return cls.from_slices(float(meta["T_us"]), p, s)
        return cls(t, p, s)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    populations: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def trace(self) -> np.ndarray:
        return np.trace(self.states, axis1=1, axis2=2).real

    @property
    def purity(self) -> np.ndarray:
        return np.einsum("kab,kba->k", self.states, self.states).real

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_us"] + [f"pop_{i}" for i in range(1, 9)] + ["trace", "purity"])
            for t, pops, tr, pu in zip(self.times, self.populations, self.trace, self.purity):
                w.writerow([repr(float(t))] + [repr(float(p)) for p in pops] + [repr(float(tr)), repr(float(pu))])


def dephasing_matrix(params: SystemParams) -> np.ndarray:
    """Elementwise decay rates ``Gamma_ab`` of the dephasing dissipator."""
    re, r1, r2 = params.dephasing_rates
    G = np.zeros((8, 8))
    for rate, z in ((re, SZ_DIAG), (r1, IZ1_DIAG), (r2, IZ2_DIAG)):
        G += rate * (z[:, None] - z[None, :]) ** 2
    return G


def lindblad_rhs(rho: np.ndarray, H: np.ndarray, params: SystemParams) -> np.ndarray:
    """``-i[H, rho] + L_S(rho) + L_I(rho)`` written with explicit operators."""
    re, r1, r2 = params.dephasing_rates
    out = -1j * (H @ rho - rho @ H)
    for rate, z in ((re, SZ_DIAG), (r1, IZ1_DIAG), (r2, IZ2_DIAG)):
        Z = np.diag(z)
        out = out + rate * (2 * Z @ rho @ Z - Z @ Z @ rho - rho @ Z @ Z)
    return out


def liouvillian(H: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """64x64 generator acting on row-major ``rho.ravel()``."""
    n = H.shape[0]
    eye = np.eye(n)
    return -1j * (np.kron(H, eye) - np.kron(eye, H.T)) - np.diag(gamma.ravel())


def check_density(rho: np.ndarray, herm_tol=1e-10, trace_tol=1e-9, pos_tol=1e-8) -> None:
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > trace_tol:
        raise ValueError("density matrix trace differs from 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -pos_tol:
        raise ValueError("density matrix is not positive semidefinite")


class Model:
    """Cached operators for one parameter set and one transfer task.

    ``initial``/``target`` are eigenstate labels; ``reference`` is the ms=1
    level the rotating frame is pinned to.  The default is the
    psi_1 -> psi_2 initialization step via psi_6.
    """

    def __init__(self, params: SystemParams | None = None, initial: int = 1, target: int = 2,
                 reference: int = 6, step_phase: float = STEP_PHASE, min_substeps: int = 1):
        self.params = params or SystemParams()
        self.eigsys: EigenSystem = diagonalize(self.params)
        self.initial = initial
        self.target = target
        self.reference = reference
        self.step_phase = step_phase
        self.min_substeps = min_substeps
        self.gamma = dephasing_matrix(self.params)
        self._ops = {}

    @property
    def labels(self) -> dict:
        return dict(initial=self.initial, target=self.target, reference=self.reference)

    def operators(self, dist: Disturbance = NOMINAL):
        """Product-basis ``(H0, Hp, Hs)`` of the RWA generator."""
        key = (dist.delta, dist.kappa)
        ops = self._ops.get(key)
        if ops is None:
            eig = rwa_operators(self.eigsys, dist, **self.labels)
            ops = tuple(np.ascontiguousarray(to_product_basis(self.eigsys, M)) for M in eig)
            if len(self._ops) > 4096:
                self._ops.clear()
            self._ops[key] = ops
        return ops

    def initial_state(self) -> np.ndarray:
        return np.ascontiguousarray(self.eigsys.projector(self.initial))

    def target_projector(self) -> np.ndarray:
        return np.ascontiguousarray(self.eigsys.projector(self.target))

    def substeps(self, dt: float, up, us, dist: Disturbance = NOMINAL) -> int:
        H0, Hp, Hs = self.operators(dist)
        w = np.linalg.eigvalsh(H0)
        amp_p = float(np.max(np.abs(up))) if len(up) else 0.0
        amp_s = float(np.max(np.abs(us))) if len(us) else 0.0
        spread = (w[-1] - w[0]) + 2.0 * (amp_p * np.linalg.norm(Hp, 2) + amp_s * np.linalg.norm(Hs, 2))
        return max(self.min_substeps, int(math.ceil(dt * spread / self.step_phase)))

    def evolve(self, field: SampledField, dist: Disturbance = NOMINAL, store=False,
               method="rk4", rho0=None, nsub=None):
        """Raw propagation; returns the final state or all slice-boundary states."""
        up, us = field.slice_amplitudes()
        up = np.ascontiguousarray(up, dtype=float)
        us = np.ascontiguousarray(us, dtype=float)
        rho0 = self.initial_state() if rho0 is None else np.ascontiguousarray(rho0, dtype=complex)
        H0, Hp, Hs = self.operators(dist)
        dt = field.dt
        if method == "rk4":
            if nsub is None:
                nsub = self.substeps(dt, up, us, dist)
            return _backend.kernels.evolve(rho0, H0, Hp, Hs, self.gamma, up, us, dt, int(nsub), store)
        if method == "expm":
            vec = rho0.ravel()
            out = [rho0] if store else None
            for a, b in zip(up, us):
                vec = scipy.linalg.expm(liouvillian(H0 + a * Hp + b * Hs, self.gamma) * dt) @ vec
                if store:
                    out.append(vec.reshape(8, 8))
            return np.array(out) if store else vec.reshape(8, 8)
        raise ValueError(f"unknown method {method!r}")

    def fidelity(self, field: SampledField, dist: Disturbance = NOMINAL, **kw) -> float:
        rho = self.evolve(field, dist, **kw)
        psi = self.eigsys.state(self.target)
        return float((psi.conj() @ rho @ psi).real)

    def fidelity_gradient(self, T: float, up, us, dist: Disturbance = NOMINAL, nsub=None):
        """``(F, dF/dup, dF/dus)`` for per-slice amplitudes on ``[0, T]``."""
        up = np.ascontiguousarray(up, dtype=float)
        us = np.ascontiguousarray(us, dtype=float)
        dt = T / len(up)
        H0, Hp, Hs = self.operators(dist)
        if nsub is None:
            nsub = self.substeps(dt, up, us, dist)
        return _backend.kernels.fidelity_gradient(
            self.initial_state(), self.target_projector(), H0, Hp, Hs, self.gamma, up, us, dt, int(nsub)
        )

    def populations(self, states: np.ndarray) -> np.ndarray:
        U = self.eigsys.states
        return np.einsum("ai,kab,bi->ki", U.conj(), states, U).real

    def trajectory(self, field: SampledField, dist: Disturbance = NOMINAL, method="rk4",
                   rho0=None, nsub=None) -> Trajectory:
        states = self.evolve(field, dist, store=True, method=method, rho0=rho0, nsub=nsub)
        start_trace = np.trace(states[0]).real
        drift = np.max(np.abs(np.trace(states, axis1=1, axis2=2).real - start_trace))
        if drift > 1e-6:
            raise StepUnstable(f"trace drifted by {drift:.3g}")
        final = states[-1]
        sym = 0.5 * (final + final.conj().T)
        adjust = float(np.max(np.abs(sym - final)))
        if adjust:
            log.debug("final-state Hermitian symmetrization adjusted by %.3g", adjust)
        min_eig = float(np.min(np.linalg.eigvalsh(sym)))
        if min_eig < -1e-8:
            raise StepUnstable(f"state lost positivity (min eigenvalue {min_eig:.3g})")
        states = states.copy()
        states[-1] = sym
        return Trajectory(np.asarray(field.times, float), states, self.populations(states))


@lru_cache(maxsize=16)
def model_for(params: SystemParams, initial: int = 1, target: int = 2, reference: int = 6) -> Model:
    return Model(params, initial, target, reference)


def propagate(field: SampledField, dist: Disturbance | None = None, params: SystemParams | None = None,
              initial=None, method: str = "rk4") -> Trajectory:
    """Integrate the master equation across ``field``.

    ``initial`` is a density matrix, an eigenstate label, or ``None`` for
    psi_1.
    """
    model = model_for(params or SystemParams())
    rho0 = None
    if isinstance(initial, (int, np.integer)):
        rho0 = model.eigsys.projector(int(initial))
    elif initial is not None:
        rho0 = np.asarray(initial, dtype=complex)
        check_density(rho0)
    return model.trajectory(field, dist or NOMINAL, method=method, rho0=rho0)


def fidelity(rho: np.ndarray, target_index: int, eigsys: EigenSystem | None = None) -> float:
    """Population ``<psi_target| rho |psi_target>``."""
    if not 1 <= target_index <= 8:
        raise ValueError("target index must be in 1..8")
    eigsys = eigsys or model_for(SystemParams()).eigsys
    psi = eigsys.state(target_index)
    val = psi.conj() @ rho @ psi
    if abs(val.imag) > 1e-10:
        raise ValueError(f"non-real population {val}")
    return float(val.real)
