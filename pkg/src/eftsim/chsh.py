"""Polarization-entangled SPDC pairs, correlation functions and the CHSH test.

Two-qubit basis order is (HH, HV, VH, VV); Alice is the first factor. Bob's
photon is the one sent through the time-bin link.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polarization import ALGEBRA_TOL, analyzer_ket
from .timebin import DEFAULT_DELAY, DEFAULT_WINDOW, CoherenceModel, central_peak_map, channel_components

CANONICAL_ANGLES = (0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)  # (a, a', b, b')
TSIRELSON = 2 * math.sqrt(2)


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise ValueError(f"expected a 4x4 density matrix, got shape {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > ALGEBRA_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1) > ALGEBRA_TOL:
            raise ValueError("density matrix must have unit trace")
        if np.min(np.linalg.eigvalsh(rho)) < -ALGEBRA_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_ket(cls, ket) -> "TwoQubitState":
        v = np.asarray(ket, dtype=complex).reshape(4)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))


def bell_phi_plus() -> TwoQubitState:
    return TwoQubitState.from_ket([1, 0, 0, 1])


@dataclass(frozen=True)
class SpdcSource:
    pair_rate: float = 22_000.0
    v_hv: float = 0.981
    v_diag: float = 0.926

    def __post_init__(self):
        if self.pair_rate < 0:
            raise ValueError("pair_rate must be nonnegative")
        if not (0 <= self.v_hv <= 1 and 0 <= self.v_diag <= 1):
            raise ValueError("visibilities must lie in [0, 1]")


def source_state(src: SpdcSource) -> TwoQubitState:
    """|Phi+> with H/V populations mixed down to ``v_hv`` and coherences scaled to ``v_diag``."""
    if src.v_diag > (1 + src.v_hv) / 2 + ALGEBRA_TOL:
        raise ValueError(f"visibilities v_hv={src.v_hv}, v_diag={src.v_diag} give a non-physical state " "(need v_diag <= (1 + v_hv) / 2)")
    same = (1 + src.v_hv) / 4
    diff = (1 - src.v_hv) / 4
    rho = np.diag([same, diff, diff, same]).astype(complex)
    rho[0, 3] = rho[3, 0] = src.v_diag / 2
    return TwoQubitState(rho)


def analyzer_observable(theta: float) -> np.ndarray:
    """P(theta) - P(theta + 90 deg)."""
    p = analyzer_ket(theta)
    q = analyzer_ket(theta + math.pi / 2)
    return np.outer(p, p.conj()) - np.outer(q, q.conj())


def correlation_E(rho: TwoQubitState, theta_a: float, theta_b: float) -> float:
    op = np.kron(analyzer_observable(theta_a), analyzer_observable(theta_b))
    return float(np.real(np.trace(rho.rho @ op)))


def chsh_S(rho: TwoQubitState, theta_a: float, theta_a2: float, theta_b: float, theta_b2: float) -> float:
    return abs(
        correlation_E(rho, theta_a, theta_b)
        - correlation_E(rho, theta_a, theta_b2)
        + correlation_E(rho, theta_a2, theta_b)
        + correlation_E(rho, theta_a2, theta_b2)
    )


def setting_pairs(theta_a, theta_a2, theta_b, theta_b2) -> list[tuple[float, float, int]]:
    """The four (a, b) settings entering S with their signs."""
    return [(theta_a, theta_b, 1), (theta_a, theta_b2, -1), (theta_a2, theta_b, 1), (theta_a2, theta_b2, 1)]


@dataclass(frozen=True)
class CountQuad:
    """Coincidences at (a, b), (a+90, b+90), (a, b+90), (a+90, b)."""

    n_pp: int
    n_mm: int
    n_pm: int
    n_mp: int
    theta_a: float = 0.0
    theta_b: float = 0.0

    def __post_init__(self):
        if min(self.n_pp, self.n_mm, self.n_pm, self.n_mp) < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.n_pp + self.n_mm + self.n_pm + self.n_mp

    @property
    def correlation(self) -> float:
        if self.total == 0:
            raise ValueError("correlation undefined for an all-zero count quad")
        return (self.n_pp + self.n_mm - self.n_pm - self.n_mp) / self.total

    @property
    def sigma(self) -> float:
        """First-order Poisson error of :attr:`correlation`."""
        n = self.total
        e = self.correlation
        return math.sqrt((self.n_pp + self.n_mm) * (1 - e) ** 2 + (self.n_pm + self.n_mp) * (1 + e) ** 2) / n

    def scaled(self, factor: int) -> "CountQuad":
        return CountQuad(self.n_pp * factor, self.n_mm * factor, self.n_pm * factor, self.n_mp * factor, self.theta_a, self.theta_b)

    def as_dict(self) -> dict:
        return {"n_pp": self.n_pp, "n_mm": self.n_mm, "n_pm": self.n_pm, "n_mp": self.n_mp}


@dataclass(frozen=True)
class ChshResult:
    s_value: float
    sigma_s: float
    e_values: tuple[float, ...] = ()
    e_sigmas: tuple[float, ...] = ()
    quads: tuple[CountQuad, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.sigma_s < 0:
            raise ValueError("sigma_s must be nonnegative")

    @property
    def violation_sigmas(self) -> float:
        return (self.s_value - 2) / self.sigma_s if self.sigma_s > 0 else math.inf


def joint_probabilities(rho: TwoQubitState, theta_a: float, theta_b: float) -> np.ndarray:
    """Probabilities of the four outcomes (++, --, +-, -+) of a two-output analyzer pair."""
    out = []
    for da, db in ((0, 0), (1, 1), (0, 1), (1, 0)):
        pa = analyzer_ket(theta_a + da * math.pi / 2)
        pb = analyzer_ket(theta_b + db * math.pi / 2)
        v = np.kron(pa, pb)
        out.append(np.real(v.conj() @ rho.rho @ v))
    p = np.clip(np.array(out), 0, None)
    return p / p.sum()


def sample_counts(
    rho: TwoQubitState,
    theta_a: float,
    theta_b: float,
    pairs: int,
    accidental_rate: float,
    rng: np.random.Generator,
) -> CountQuad:
    """Multinomial split of ``pairs`` detected pairs plus a flat accidental floor.

    ``accidental_rate`` is the expected number of accidental coincidences per
    detected pair, spread evenly over the four outcomes.
    """
    if pairs <= 0:
        raise ValueError("pairs must be positive")
    if accidental_rate < 0:
        raise ValueError("accidental_rate must be nonnegative")
    counts = rng.multinomial(int(pairs), joint_probabilities(rho, theta_a, theta_b))
    if accidental_rate > 0:
        counts = counts + rng.poisson(accidental_rate * pairs / 4, size=4)
    return CountQuad(*(int(c) for c in counts), theta_a=theta_a, theta_b=theta_b)


def s_with_errorbars(quads) -> ChshResult:
    """S and its Poisson error from the four quads, ordered as :func:`setting_pairs`."""
    quads = tuple(quads)
    if len(quads) != 4:
        raise ValueError("need exactly four count quads")
    for q in quads:
        if q.total == 0:
            raise ValueError("an all-zero count quad leaves E undefined")
    signs = (1, -1, 1, 1)
    es = tuple(q.correlation for q in quads)
    sig = tuple(q.sigma for q in quads)
    s = abs(sum(sg * e for sg, e in zip(signs, es)))
    return ChshResult(s, math.sqrt(sum(x * x for x in sig)), es, sig, quads)


def measure_chsh(rho: TwoQubitState, angles, pairs: int, accidental_rate: float, rng: np.random.Generator) -> ChshResult:
    quads = [sample_counts(rho, a, b, pairs, accidental_rate, rng) for a, b, _ in setting_pairs(*angles)]
    return s_with_errorbars(quads)


def exposure_for_sigma(rho: TwoQubitState, angles, target_sigma: float) -> int:
    """Detected pairs per setting for which the expected sigma_S equals ``target_sigma``."""
    var = sum(1 - correlation_E(rho, a, b) ** 2 for a, b, _ in setting_pairs(*angles))
    return max(1, int(math.ceil(var / target_sigma**2)))


def _bob(op: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(2), op)


def distribute_entanglement(
    rho: TwoQubitState,
    channel=None,
    eft: bool = True,
    *,
    T: float = DEFAULT_DELAY,
    T_prime: float | None = None,
    drift: float = 0.0,
    static_phase_offset: float = 0.0,
    coherence: CoherenceModel | None = None,
    window: float = DEFAULT_WINDOW,
) -> tuple[TwoQubitState, float]:
    """Send Bob's photon through the channel, with or without the time-bin link.

    With ``eft`` the central-peak map (see :func:`central_peak_map`) acts on
    Bob's factor and the returned efficiency is its post-selection
    probability; without it the raw channel mixture acts and nothing is lost.
    """
    if eft:
        if window >= T:
            raise ValueError("window must be shorter than the bin spacing")
        kraus = central_peak_map(channel, T=T, T_prime=T_prime, drift=drift, static_phase_offset=static_phase_offset, coherence=coherence)
        # Bob's H/V coherences sit where the Bob indices of row and column differ
        bob_offdiag = (np.arange(4)[:, None] % 2) != (np.arange(4)[None, :] % 2)
        out = np.zeros((4, 4), dtype=complex)
        for w, k, g in kraus:
            r = _bob(k) @ rho.rho @ _bob(k).conj().T
            r[bob_offdiag] *= g
            out += w * r
    else:
        out = sum(w * _bob(u) @ rho.rho @ _bob(u).conj().T for w, u in channel_components(channel))
    eff = float(np.trace(out).real)
    if eff <= 1e-300:
        raise ValueError("no pairs survive post-selection")
    out = out / eff
    return TwoQubitState((out + out.conj().T) / 2), min(eff, 1.0)
