"""Noisy-channel models: Pauli mixtures, the waveplate noise simulator (NS),
the polarization controller (PC) and drifting birefringent fiber."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .polarization import (
    ALGEBRA_TOL,
    PauliOp,
    decompose_su2_to_qhq,
    haar_unitary,
    hwp,
    is_unitary,
    qwp,
)

# Calibration knobs for the differential H/V phase drift, rad/sqrt(s).
SHORT_FIBER_DRIFT = 0.01
LONG_FIBER_DRIFT = 0.1
_LONG_FIBER_THRESHOLD_M = 100.0


@dataclass(frozen=True)
class PauliChannel:
    """Incoherent mixture of I, X, Z and XZ with probabilities ``p``."""

    p: tuple[float, float, float, float]

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if len(p) != 4:
            raise ValueError("a Pauli channel needs four probabilities")
        if any(x < -ALGEBRA_TOL or x > 1 + ALGEBRA_TOL for x in p):
            raise ValueError(f"probabilities must lie in [0, 1], got {p}")
        if abs(sum(p) - 1) > ALGEBRA_TOL:
            raise ValueError(f"probabilities must sum to 1, got {sum(p)!r}")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_amplitudes(cls, e0, e1, e2, e3) -> "PauliChannel":
        """Channel for the error operator e0 I + e1 X + e2 Z + e3 XZ, read as p_i = e_i**2."""
        return cls((e0 * e0, e1 * e1, e2 * e2, e3 * e3))

    @classmethod
    def pure(cls, op: PauliOp | str) -> "PauliChannel":
        p = [0.0] * 4
        p[list(PauliOp).index(PauliOp(op))] = 1.0
        return cls(tuple(p))

    def components(self) -> list[tuple[float, np.ndarray]]:
        """``(probability, matrix)`` pairs with nonzero weight."""
        return [(pk, op.matrix) for pk, op in zip(self.p, PauliOp) if pk > 0]

    @property
    def survival(self) -> float:
        """Weight of the errors that keep both time bins in the central peak."""
        return self.p[0] + self.p[2]


@dataclass(frozen=True)
class NoiseSimulatorSetting:
    theta: float
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")


def ns_unitary(setting: NoiseSimulatorSetting) -> np.ndarray:
    """QWP(90 deg) . HWP(+-theta) . QWP(90 deg); equals cos2t I -+ i sin2t X up to phase."""
    q = qwp(math.pi / 2)
    return q @ hwp(setting.sign * setting.theta) @ q


def bfe_probability(theta: float) -> float:
    return math.sin(2 * theta) ** 2


def theta_for_bfe(p: float) -> float:
    """Inverse of :func:`bfe_probability` on [0, pi/4]."""
    if not 0 <= p <= 1:
        raise ValueError("bit-flip probability must be in [0, 1]")
    return 0.5 * math.asin(math.sqrt(p))


def ns_as_pauli_channel(theta: float) -> PauliChannel:
    c = math.cos(2 * theta) ** 2
    return PauliChannel((c, 1 - c, 0.0, 0.0))


def ns_components(theta: float) -> list[tuple[float, np.ndarray]]:
    """Equal-weight mixture over the two HWP orientations +theta and -theta."""
    return [(0.5, ns_unitary(NoiseSimulatorSetting(theta, s))) for s in (1, -1)]


def pc_compensation(static_unitary) -> tuple[float, float, float]:
    """Polarization-controller plate angles undoing ``static_unitary``."""
    u = np.asarray(static_unitary, dtype=complex)
    return decompose_su2_to_qhq(u.conj().T)


class DriftKind(str, Enum):
    RANDOM_WALK = "random_walk"
    ORNSTEIN_UHLENBECK = "ornstein_uhlenbeck"


@dataclass
class DriftProcess:
    """Differential H/V phase drift of a fiber.

    ``value`` is the current phase; it only matters for the Ornstein-Uhlenbeck
    kind, whose increments depend on it.
    """

    kind: DriftKind = DriftKind.RANDOM_WALK
    step_sigma: float = 0.0
    reversion_rate: float = 0.0
    value: float = 0.0

    def __post_init__(self):
        self.kind = DriftKind(self.kind)
        if self.step_sigma < 0:
            raise ValueError("step_sigma must be nonnegative")
        if self.kind is DriftKind.ORNSTEIN_UHLENBECK and self.reversion_rate <= 0:
            raise ValueError("Ornstein-Uhlenbeck drift needs a positive reversion_rate")

    @property
    def stationary_variance(self) -> float:
        if self.kind is DriftKind.RANDOM_WALK:
            return math.inf
        return self.step_sigma**2 / (2 * self.reversion_rate)


def sample_drift(process: DriftProcess, dt: float, rng: np.random.Generator) -> float:
    """Draw one phase increment over ``dt`` seconds and advance ``process``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if process.step_sigma == 0:
        return 0.0
    if process.kind is DriftKind.RANDOM_WALK:
        inc = process.step_sigma * math.sqrt(dt) * rng.standard_normal()
    else:
        # exact discretisation of d(phi) = -k phi dt + sigma dW
        decay = math.exp(-process.reversion_rate * dt)
        sd = math.sqrt(process.stationary_variance * (1 - decay * decay))
        new = process.value * decay + sd * rng.standard_normal()
        inc = new - process.value
    process.value += inc
    return inc


def default_drift(length_m: float) -> DriftProcess:
    sigma = LONG_FIBER_DRIFT if length_m > _LONG_FIBER_THRESHOLD_M else SHORT_FIBER_DRIFT
    return DriftProcess(DriftKind.RANDOM_WALK, sigma)


@dataclass
class FiberChannel:
    length: float
    static_unitary: np.ndarray
    drift: DriftProcess = field(default_factory=DriftProcess)

    def __post_init__(self):
        self.static_unitary = np.asarray(self.static_unitary, dtype=complex)
        if not is_unitary(self.static_unitary):
            raise ValueError("fiber static_unitary must be unitary")
        if self.length < 0:
            raise ValueError("fiber length must be nonnegative")

    @classmethod
    def random(cls, length: float, rng: np.random.Generator, drift: DriftProcess | None = None) -> "FiberChannel":
        u = haar_unitary(rng)
        # re-unitarise so the 1e-12 invariant holds after float noise
        q, r = np.linalg.qr(u)
        u = q @ np.diag(np.diag(r) / np.abs(np.diag(r)))
        return cls(length, u, drift if drift is not None else default_drift(length))

    def phase_unitary(self, phase: float) -> np.ndarray:
        """Jones matrix of the drift alone: a differential phase on V."""
        return np.diag([1.0, np.exp(1j * phase)])
