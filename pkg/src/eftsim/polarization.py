"""Jones-calculus primitives for single-photon polarization.

Basis order is (H, V) everywhere. Waveplate angles are fast-axis orientations
in radians measured from horizontal; global phases are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

ALGEBRA_TOL = 1e-12
DECOMPOSITION_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


class PauliOp(str, Enum):
    """Error operators of the channel model. ``XZ`` is the product X @ Z."""

    I = "I"
    X = "X"
    Z = "Z"
    XZ = "XZ"

    @property
    def matrix(self) -> np.ndarray:
        return _PAULI_MATRICES[self]


_PAULI_MATRICES = {
    PauliOp.I: I2,
    PauliOp.X: X,
    PauliOp.Z: Z,
    PauliOp.XZ: X @ Z,
}


class PlateKind(str, Enum):
    HWP = "HWP"
    QWP = "QWP"


@dataclass(frozen=True)
class WaveplateSetting:
    kind: PlateKind
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "kind", PlateKind(self.kind))
        object.__setattr__(self, "angle", normalize_angle(self.angle))


def normalize_angle(angle: float) -> float:
    """Fold a fast-axis angle into [0, pi); plates are pi-periodic."""
    a = math.fmod(float(angle), math.pi) + 0.0
    if a < 0:
        a += math.pi
    if a >= math.pi:  # fmod rounding at the boundary
        a = 0.0
    return a


@dataclass(frozen=True, eq=False)
class PolarizationState:
    """Density operator of one photon's polarization."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (2, 2):
            raise ValueError(f"expected a 2x2 density matrix, got shape {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > ALGEBRA_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1) > ALGEBRA_TOL:
            raise ValueError(f"density matrix trace is {np.trace(rho).real}, not 1")
        if np.min(np.linalg.eigvalsh(rho)) < -ALGEBRA_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_ket(cls, ket) -> "PolarizationState":
        v = np.asarray(ket, dtype=complex).reshape(2)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def named(cls, name: str) -> "PolarizationState":
        return cls.from_ket(named_ket(name))

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))

    def is_pure(self, tol: float = 1e-9) -> bool:
        return abs(self.purity - 1.0) <= tol

    def ket(self) -> np.ndarray:
        """State vector of a pure state (phase fixed so the first nonzero entry is real)."""
        if not self.is_pure():
            raise ValueError("state is mixed; use pure_components()")
        return self.pure_components()[0][1]

    def pure_components(self) -> list[tuple[float, np.ndarray]]:
        """Eigen-ensemble ``[(weight, ket), ...]`` with zero-weight members dropped."""
        w, v = np.linalg.eigh(self.rho)
        out = []
        for weight, vec in sorted(zip(w, v.T), key=lambda p: -p[0]):
            if weight <= ALGEBRA_TOL:
                continue
            k = int(np.argmax(np.abs(vec) > 1e-12))
            vec = vec * np.exp(-1j * np.angle(vec[k]))
            out.append((float(weight), vec))
        return out

    def __eq__(self, other):
        if not isinstance(other, PolarizationState):
            return NotImplemented
        return bool(np.allclose(self.rho, other.rho, atol=ALGEBRA_TOL))

    def __repr__(self):
        return f"PolarizationState(rho={np.round(self.rho, 6).tolist()})"


_NAMED_KETS = {
    "H": (1, 0),
    "V": (0, 1),
    "plus": (1 / math.sqrt(2), 1 / math.sqrt(2)),
    "minus": (1 / math.sqrt(2), -1 / math.sqrt(2)),
    "R": (1 / math.sqrt(2), 1j / math.sqrt(2)),
    "L": (1 / math.sqrt(2), -1j / math.sqrt(2)),
}
NAMED_STATES = tuple(_NAMED_KETS)


def named_ket(name: str) -> np.ndarray:
    try:
        return np.array(_NAMED_KETS[name], dtype=complex)
    except KeyError:
        raise ValueError(f"unknown state {name!r}; choose from {NAMED_STATES}") from None


def orthogonal_ket(ket) -> np.ndarray:
    a, b = np.asarray(ket, dtype=complex)
    return np.array([-b.conjugate(), a.conjugate()])


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def waveplate_matrix(setting: WaveplateSetting) -> np.ndarray:
    """Jones matrix of a half- or quarter-wave plate, global phase dropped."""
    theta = setting.angle
    if setting.kind is PlateKind.HWP:
        c, s = math.cos(2 * theta), math.sin(2 * theta)
        return np.array([[c, s], [s, -c]], dtype=complex)
    return rotation(theta) @ np.diag([1, 1j]) @ rotation(-theta)


def hwp(angle: float) -> np.ndarray:
    return waveplate_matrix(WaveplateSetting(PlateKind.HWP, angle))


def qwp(angle: float) -> np.ndarray:
    return waveplate_matrix(WaveplateSetting(PlateKind.QWP, angle))


def is_unitary(u, tol: float = ALGEBRA_TOL) -> bool:
    u = np.asarray(u)
    return u.shape == (2, 2) and np.max(np.abs(u @ u.conj().T - I2)) <= tol


def phase_distance(a, b) -> float:
    """Operator-norm distance between two matrices after optimal global phase."""
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    overlap = np.trace(b.conj().T @ a)
    phase = overlap / abs(overlap) if abs(overlap) > 1e-15 else 1.0
    return float(np.linalg.norm(a - phase * b, 2))


def apply_unitary(state: PolarizationState, u) -> PolarizationState:
    u = np.asarray(u, dtype=complex)
    return PolarizationState(_hermitize(u @ state.rho @ u.conj().T))


def apply_pauli_channel(state: PolarizationState, ch) -> PolarizationState:
    """Incoherent Pauli mixture; ``ch`` is a PauliChannel or a 4-vector of probabilities."""
    p = np.asarray(getattr(ch, "p", ch), dtype=float)
    if p.shape != (4,) or np.any(p < -ALGEBRA_TOL) or abs(p.sum() - 1) > ALGEBRA_TOL:
        raise ValueError(f"Pauli probabilities must be 4 nonnegative numbers summing to 1, got {p}")
    rho = sum(pk * op.matrix @ state.rho @ op.matrix.conj().T for pk, op in zip(p, PauliOp))
    return PolarizationState(_hermitize(rho))


def _hermitize(rho: np.ndarray) -> np.ndarray:
    rho = (rho + rho.conj().T) / 2
    return rho / np.trace(rho).real


def _zyz_angles(m: np.ndarray) -> tuple[float, float, float]:
    # m in SU(2): [[e^{-i(a+g)/2} cos(b/2), -e^{-i(a-g)/2} sin(b/2)],
    #              [e^{ i(a-g)/2} sin(b/2),  e^{ i(a+g)/2} cos(b/2)]]
    beta = 2 * math.atan2(abs(m[1, 0]), abs(m[1, 1]))
    s = 2 * np.angle(m[1, 1]) if abs(m[1, 1]) > 1e-14 else 0.0
    d = 2 * np.angle(m[1, 0]) if abs(m[1, 0]) > 1e-14 else 0.0
    return float((s + d) / 2), beta, float((s - d) / 2)


# Cyclic axis relabelling x -> y -> z -> x, turning a YXY product into ZYZ.
_CYCLE = 0.5 * (I2 - 1j * (X + Y + Z))


def decompose_su2_to_qhq(u) -> tuple[float, float, float]:
    """Find plate angles with ``qwp(a) @ hwp(b) @ qwp(c) == u`` up to global phase.

    The product of the three plates equals Ry(2a) Rx(-(4b - 2a - 2c)) Ry(-2c)
    in qubit notation (H as |0>), so the angles follow from a Y-X-Y Euler
    decomposition of ``u``.

    Returns
    -------
    (qwp1, hwp, qwp2) : tuple of float
        Angles in [0, pi). ``qwp1`` is the plate nearest the output.
    """
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u, 1e-9):
        raise ValueError("input is not unitary")
    su = u / np.sqrt(u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0])
    alpha, beta, gamma = _zyz_angles(_CYCLE @ su @ _CYCLE.conj().T)
    a = alpha / 2
    c = -gamma / 2
    b = (alpha - beta - gamma) / 4
    return normalize_angle(a), normalize_angle(b), normalize_angle(c)


def qhq_matrix(qwp1: float, hwp_angle: float, qwp2: float) -> np.ndarray:
    return qwp(qwp1) @ hwp(hwp_angle) @ qwp(qwp2)


def fidelity(state: PolarizationState, target: PolarizationState) -> float:
    """Uhlmann fidelity (squared convention); reduces to <psi|rho|psi> for a pure target."""
    r, s = state.rho, target.rho
    # closed-form 2x2 determinants; the LU-based det turns subnormal entries into nan
    det_r = max((r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0]).real, 0.0)
    det_s = max((s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]).real, 0.0)
    f = np.trace(r @ s).real + 2 * math.sqrt(det_r * det_s)
    return float(min(max(f, 0.0), 1.0))


def trace_distance(a: PolarizationState, b: PolarizationState) -> float:
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(a.rho - b.rho))))


def analyzer_ket(basis_angle: float = 0.0, circular: bool = False) -> np.ndarray:
    if circular:
        return named_ket("R")
    return np.array([math.cos(basis_angle), math.sin(basis_angle)], dtype=complex)


def measure_projector(state: PolarizationState, basis_angle: float = 0.0, circular: bool = False) -> float:
    """Probability of passing a linear analyzer at ``basis_angle`` (or an |R> analyzer)."""
    v = analyzer_ket(basis_angle, circular)
    p = np.real(v.conj() @ state.rho @ v)
    return float(min(max(p, 0.0), 1.0))


def haar_unitary(rng: np.random.Generator) -> np.ndarray:
    from scipy.stats import unitary_group

    return unitary_group.rvs(2, random_state=rng)
