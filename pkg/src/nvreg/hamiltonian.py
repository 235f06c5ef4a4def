"""Static block Hamiltonian of the NV electron plus two 13C nuclear spins.

Conventions
-----------
- Frequencies are angular, in rad/us; times in us; fields in gauss.
- Product basis ordering is ``electron (ms=0, ms=1) x nucleus 1 x nucleus 2``
  with nuclear states ordered ``up, down``, i.e. the nuclear sub-basis is
  ``{uu, ud, du, dd}``.
- Eigenstates carry 1-based labels ``1..8`` at the public API, matching the
  usual psi_1..psi_8 naming; arrays are 0-based internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

# Nuclear spin-1/2 operators on the {up, down} basis.
_SZ = np.diag([0.5, -0.5])
_SX = np.array([[0.0, 0.5], [0.5, 0.0]])
_SPLUS = np.array([[0.0, 1.0], [0.0, 0.0]])
_SMINUS = _SPLUS.T
_I2 = np.eye(2)

IZ1 = np.kron(_SZ, _I2)
IZ2 = np.kron(_I2, _SZ)
IX1 = np.kron(_SX, _I2)
IX2 = np.kron(_I2, _SX)
FLIP_FLOP = np.kron(_SPLUS, _SMINUS) + np.kron(_SMINUS, _SPLUS)

# Singlet and symmetric triplet basis of the ms=0 block.
_R2 = 1.0 / math.sqrt(2.0)
SINGLET = np.array([0.0, _R2, -_R2, 0.0])
_TRIPLET_BASIS = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, _R2, 0.0],
        [0.0, _R2, 0.0],
        [0.0, 0.0, 1.0],
    ]
)

MS0 = slice(0, 4)
MS1 = slice(4, 8)


class LabelingAmbiguity(ValueError):
    """Two ms=0 eigenvalues coincide so the state labels cannot be assigned."""


class DegenerateField(ValueError):
    """The analytic eigenvector formulas divide by ``Bx``."""


# Config keys and the unit the config file stores them in.  Frequencies are
# written as cyclic MHz (or MHz/G) and converted to rad/us on load.
CONFIG_SCHEMA = {
    "D": ("D", "MHz"),
    "gamma_e": ("gamma_e", "MHz/G"),
    "gamma_c": ("gamma_c", "MHz/G"),
    "d12": ("d12", "MHz"),
    "Azz1": ("Azz1", "MHz"),
    "Azz2": ("Azz2", "MHz"),
    "Bx": ("Bx", "G"),
    "Bz": ("Bz", "G"),
    "T2e_us": ("T2e", "us"),
    "T2n1_us": ("T2n1", "us"),
    "T2n2_us": ("T2n2", "us"),
}
_FREQUENCY_KEYS = ("D", "gamma_e", "gamma_c", "d12", "Azz1", "Azz2")
# Table entries printed without an explicit 2*pi.
_BARE_KEYS = ("d12", "Azz1", "Azz2")


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the register.

    All frequency-like fields are angular frequencies in rad/us.  The defaults
    are the tabulated values at the ``Bx = 100 G, Bz = 5 G`` operating point,
    with every tabulated frequency multiplied by 2*pi.
    """

    D: float = TWO_PI * 2870.0
    gamma_e: float = TWO_PI * 2.8
    gamma_c: float = TWO_PI * 1.7e-3
    d12: float = TWO_PI * 4e-3
    Azz1: float = TWO_PI * 12.45
    Azz2: float = TWO_PI * 2.28
    Bx: float = 100.0
    Bz: float = 5.0
    T2e: float = 7.0
    T2n1: float = 500.0
    T2n2: float = 700.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"{f.name} must be finite, got {value}")
        for name in ("T2e", "T2n1", "T2n2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def replace(self, **changes) -> "SystemParams":
        return SystemParams(**{**asdict(self), **changes})

    @property
    def dephasing_rates(self) -> tuple[float, float, float]:
        return 1.0 / self.T2e, 1.0 / self.T2n1, 1.0 / self.T2n2

    def to_config(self) -> dict:
        """Cyclic-unit dictionary keyed like the parameter table."""
        out = {}
        for key, (attr, _unit) in CONFIG_SCHEMA.items():
            value = getattr(self, attr)
            if attr in _FREQUENCY_KEYS:
                value = value / TWO_PI
            out[key] = value
        out["units"] = {key: unit for key, (_, unit) in CONFIG_SCHEMA.items()}
        return out

    @classmethod
    def from_config(cls, config: dict, bare_values_carry_2pi: bool = False) -> "SystemParams":
        """Inverse of :meth:`to_config`.

        Missing keys fall back to the defaults.  With
        ``bare_values_carry_2pi=True`` the entries tabulated without an
        explicit 2*pi (d12, Azz1, Azz2) are read as angular frequencies
        already, instead of cyclic ones.
        """
        config = dict(config)
        bare = config.pop("bare_values_carry_2pi", bare_values_carry_2pi)
        config.pop("units", None)
        unknown = set(config) - set(CONFIG_SCHEMA)
        if unknown:
            raise KeyError(f"unknown parameter keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in config.items():
            attr = CONFIG_SCHEMA[key][0]
            value = float(value)
            if attr in _FREQUENCY_KEYS and not (bare and attr in _BARE_KEYS):
                value *= TWO_PI
            kwargs[attr] = value
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_config(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SystemParams":
        return cls.from_config(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Disturbance:
    """Static control error: carrier detuning ``delta`` (rad/us) and relative
    amplitude bias ``kappa``.  ``kappa = -1`` switches the drive off."""

    delta: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delta) and math.isfinite(self.kappa)):
            raise ValueError("disturbance must be finite")
        if self.kappa < -1.0:
            raise ValueError(f"kappa must be >= -1, got {self.kappa}")


NOMINAL = Disturbance()


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigen-decomposition of the static Hamiltonian with conventional state labels.

    ``states[:, i]`` is psi_{i+1} in the product basis; ``chi[i, j]`` is
    <psi_{i+1}| sqrt(2) S_x |psi_{j+1}>.
    """

    energies: np.ndarray
    states: np.ndarray
    chi: np.ndarray
    labeling: str
    params: SystemParams = field(repr=False)

    def energy(self, label: int) -> float:
        return float(self.energies[label - 1])

    def state(self, label: int) -> np.ndarray:
        return self.states[:, label - 1]

    def projector(self, label: int) -> np.ndarray:
        psi = self.state(label)
        return np.outer(psi, psi.conj())


def build_static_blocks(params: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Return the ms=0 and ms=1 nuclear blocks (4x4 each)."""
    g = params.gamma_c
    h0 = (
        g * params.Bz * (IZ1 + IZ2)
        + g * params.Bx * (IX1 + IX2)
        + 0.5 * params.d12 * (FLIP_FLOP - 4.0 * IZ1 @ IZ2)
    )
    h1 = (params.D + params.gamma_e * params.Bz) * np.eye(4) + params.Azz1 * IZ1 + params.Azz2 * IZ2
    return h0, h1


def static_hamiltonian(params: SystemParams) -> np.ndarray:
    h0, h1 = build_static_blocks(params)
    H = np.zeros((8, 8))
    H[MS0, MS0] = h0
    H[MS1, MS1] = h1
    return H


def drive_operator() -> np.ndarray:
    """sqrt(2) S_x on the {ms=0, ms=1} pair, identity on the nuclei."""
    V = np.zeros((8, 8))
    V[MS0, MS1] = np.eye(4)
    V[MS1, MS0] = np.eye(4)
    return V


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    k = np.argmax(np.abs(vec))
    phase = vec[k] / abs(vec[k])
    return vec / phase


def diagonalize(params: SystemParams, rtol: float = 1e-9) -> EigenSystem:
    """Eigenpairs with the labeling psi_2 = singlet (E = 0), psi_3 the
    near-zero triplet-sector state, psi_1/psi_4 the remaining ms=0 states in
    ascending order and psi_5..psi_8 the ms=1 states in ascending order.

    The singlet decouples exactly from the rest of the ms=0 block, so the
    block is diagonalized in the singlet/triplet basis; this makes the
    selection-rule zeros of ``chi`` exact rather than round-off small.
    """
    h0, h1 = build_static_blocks(params)

    e_singlet = float(SINGLET @ h0 @ SINGLET)
    h_trip = _TRIPLET_BASIS.T @ h0 @ _TRIPLET_BASIS
    w, v = np.linalg.eigh(h_trip)
    scale = max(np.max(np.abs(w)), abs(e_singlet), np.finfo(float).tiny)
    if np.min(np.diff(w)) <= rtol * scale:
        raise LabelingAmbiguity(f"degenerate triplet-sector eigenvalues {w}")
    # near-zero triplet-sector state becomes psi_3
    k3 = int(np.argmin(np.abs(w - e_singlet)))
    if abs(abs(w[k3] - e_singlet)) <= rtol * scale:
        raise LabelingAmbiguity(
            f"near-zero eigenvalue {w[k3]} coincides with the singlet {e_singlet}"
        )
    others = [k for k in range(3) if k != k3]
    order = [others[0], None, k3, others[1]]

    energies = np.zeros(8)
    states = np.zeros((8, 8), dtype=complex)
    for col, k in enumerate(order):
        if k is None:
            energies[col] = e_singlet
            states[MS0, col] = SINGLET
        else:
            energies[col] = w[k]
            states[MS0, col] = _fix_phase(_TRIPLET_BASIS @ v[:, k])

    # ms=1 block is diagonal in the product basis
    diag1 = np.diag(h1)
    if np.max(np.abs(h1 - np.diag(diag1))) > 0:
        raise ValueError("ms=1 block is expected to be diagonal")
    order1 = np.argsort(diag1, kind="stable")
    if np.min(np.diff(diag1[order1])) <= rtol * np.max(np.abs(diag1)):
        raise LabelingAmbiguity(f"degenerate ms=1 eigenvalues {diag1}")
    for col, k in enumerate(order1, start=4):
        energies[col] = diag1[k]
        states[4 + k, col] = 1.0

    chi = transition_elements(states)
    if abs(chi[5, 1]) == 0 or abs(chi[6, 1]) == 0:
        raise LabelingAmbiguity("psi_6/psi_7 do not couple to psi_2; labels inconsistent")
    return EigenSystem(
        energies=energies,
        states=states,
        chi=chi,
        labeling="ms0: psi2=singlet, psi3=near-zero, psi1/psi4 ascending; ms1: ascending",
        params=params,
    )


def transition_elements(states: np.ndarray) -> np.ndarray:
    """``chi[i, j] = <psi_i| V |psi_j>`` with ``V = sqrt(2) S_x``."""
    if isinstance(states, EigenSystem):
        states = states.states
    return states.conj().T @ drive_operator() @ states


def cubic_residual(E: float, params: SystemParams) -> float:
    """Characteristic cubic of the triplet sector of the ms=0 block.

    The closed form is written for twice the eigenvalue of the spin-1/2
    block, so it is evaluated at ``x = 2 E``.  It vanishes at ``E1, E3, E4``.
    """
    d, g = params.d12, params.gamma_c
    bx2, bz2 = params.Bx**2, params.Bz**2
    x = 2.0 * E
    return (
        -2.0 * d**3
        - 4.0 * bx2 * d * g**2
        + 8.0 * bz2 * d * g**2
        - (3.0 * d**2 + 4.0 * bx2 * g**2 + 4.0 * bz2 * g**2) * x
        + x**3
    )


def cubic_residual_scale(E: float, params: SystemParams) -> float:
    """Sum of the magnitudes of the cubic's terms; normalizes the residual."""
    d, g = params.d12, params.gamma_c
    bx2, bz2 = params.Bx**2, params.Bz**2
    x = 2.0 * abs(E)
    return (
        2.0 * abs(d) ** 3
        + 4.0 * bx2 * abs(d) * g**2
        + 8.0 * bz2 * abs(d) * g**2
        + (3.0 * d**2 + 4.0 * bx2 * g**2 + 4.0 * bz2 * g**2) * x
        + x**3
    )


def analytic_coefficients(j: int, params: SystemParams, E: float | None = None):
    """Closed-form ``(alpha_j, beta_j)`` for ``j`` in ``{1, 3, 4}``.

    ``E`` defaults to the numerically diagonalized eigenvalue.
    """
    if j not in (1, 3, 4):
        raise ValueError("analytic coefficients exist for j = 1, 3, 4 only")
    if params.Bx == 0:
        raise DegenerateField("Bx = 0: the closed-form eigenvectors are singular")
    if E is None:
        E = diagonalize(params).energy(j)
    d, g, bx, bz = params.d12, params.gamma_c, params.Bx, params.Bz
    common = -d - 2.0 * E - 2.0 * bz * g
    alpha = (2.0 * d - 2.0 * E) * common / (2.0 * bx**2 * g**2)
    beta = common / (2.0 * bx * g)
    return alpha, beta


def analytic_state(j: int, params: SystemParams, E: float | None = None) -> np.ndarray:
    """Normalized ms=0 eigenvector built from the closed-form coefficients.

    Unnormalized form on ``{uu, ud, du, dd}``: ``(alpha - 1, -beta, -beta, 1)``.
    """
    alpha, beta = analytic_coefficients(j, params, E)
    vec = np.array([alpha - 1.0, -beta, -beta, 1.0])
    return vec / np.linalg.norm(vec)


def rwa_operators(
    eigsys: EigenSystem,
    dist: Disturbance = NOMINAL,
    initial: int = 1,
    target: int = 2,
    reference: int = 6,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split the RWA generator (eigenbasis) as ``H0 + Op * Hp + Os * Hs``.

    The pump couples ``initial`` to the ms=1 manifold, the Stokes field
    couples ``target``; the rotating frame puts ``initial`` and ``target`` at
    zero and the ms=1 manifold at ``E_reference + delta``.  The amplitude
    bias enters as the ``(1 + kappa)/2`` prefactor of both drive operators.
    """
    E = eigsys.energies
    chi = eigsys.chi
    i0, t0, r0 = initial - 1, target - 1, reference - 1
    if not (0 <= i0 < 4 and 0 <= t0 < 4 and 4 <= r0 < 8) or i0 == t0:
        raise ValueError("initial/target must be distinct ms=0 labels, reference an ms=1 label")

    diag = np.zeros(8)
    for i in range(4):
        if i not in (i0, t0):
            diag[i] = E[i]
    for i in range(4, 8):
        diag[i] = E[i] - E[r0] - dist.delta
    H0 = np.diag(diag).astype(complex)

    amp = 0.5 * (1.0 + dist.kappa)
    Hp = np.zeros((8, 8), dtype=complex)
    Hs = np.zeros((8, 8), dtype=complex)
    for k in range(4, 8):
        Hp[k, i0] = amp * chi[k, i0]
        Hs[k, t0] = amp * chi[k, t0]
    Hp = Hp + Hp.conj().T
    Hs = Hs + Hs.conj().T
    return H0, Hp, Hs


def build_rwa_generator(
    eigsys: EigenSystem,
    omega_p: float,
    omega_s: float,
    dist: Disturbance = NOMINAL,
    **labels,
) -> np.ndarray:
    """RWA interaction-frame Hamiltonian in the eigenbasis for fixed amplitudes."""
    H0, Hp, Hs = rwa_operators(eigsys, dist, **labels)
    return H0 + omega_p * Hp + omega_s * Hs


def to_product_basis(eigsys: EigenSystem, M: np.ndarray) -> np.ndarray:
    """Map an eigenbasis operator ``sum M_ij |psi_i><psi_j|`` to the product basis."""
    U = eigsys.states
    return U @ M @ U.conj().T
