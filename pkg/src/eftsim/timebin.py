"""Polarization-to-time-bin encoding through two unbalanced Mach-Zehnder
interferometers (UMZIs), arrival-time histograms and central-peak post-selection.

Times are seconds relative to the flight time ``dt`` of the photon. The first
UMZI delays V by ``T``; the second delays H by ``T'``. Every path delay ``tau``
contributes a phase ``k c tau``; only phases relative to the earliest term are
kept.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .polarization import PauliOp, PolarizationState

C_LIGHT = 299_792_458.0
DEFAULT_DELAY = 2.5e-9
DEFAULT_WINDOW = 2e-9
SLOT_LABELS = ("dt", "dt+T", "dt+2T")
CENTRAL = SLOT_LABELS[1]

# Terms further apart than this many coherence lengths never interfere.
_CLUSTER_LENGTHS = 10.0
_NEGLIGIBLE = 1e-30


@dataclass(frozen=True)
class CoherenceModel:
    """Spectral properties of the state-carrier photon.

    ``mode_match`` is the spatial/temporal overlap of the two interfering
    time bins; it scales every cross term on top of the envelope.
    """

    center_wavelength: float = 810e-9
    filter_bandwidth: float = 4e-9
    speed: float = C_LIGHT
    mode_match: float = 1.0

    def __post_init__(self):
        if self.center_wavelength <= 0 or self.filter_bandwidth <= 0 or self.speed <= 0:
            raise ValueError("wavelength, bandwidth and speed must be positive")
        if not 0 <= self.mode_match <= 1:
            raise ValueError("mode_match must lie in [0, 1]")

    @property
    def coherence_length(self) -> float:
        return self.center_wavelength**2 / self.filter_bandwidth

    @property
    def wave_vector(self) -> float:
        return 2 * math.pi / self.center_wavelength

    @property
    def coherence_time(self) -> float:
        return self.coherence_length / self.speed

    def delay_phase(self, tau: float) -> float:
        """``k c tau`` folded into [0, 2 pi) without losing precision for ns delays."""
        cycles = self.speed * tau / self.center_wavelength
        return 2 * math.pi * (cycles - math.floor(cycles))


class Term(NamedTuple):
    pol: str  # "H" or "V"
    time: float
    amplitude: complex


@dataclass(frozen=True)
class TimeBinState:
    terms: tuple[Term, ...]
    delay: float
    coherence: CoherenceModel = field(default_factory=CoherenceModel)
    decoded: bool = False

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a time-bin state needs at least one term")
        for t in self.terms:
            if t.pol not in ("H", "V"):
                raise ValueError(f"bad polarization label {t.pol!r}")
            if t.time < 0:
                raise ValueError("bin times must be nonnegative")
        if self.norm > 1 + 1e-12:
            raise ValueError(f"state norm {self.norm} exceeds 1")

    @property
    def norm(self) -> float:
        return float(sum(abs(t.amplitude) ** 2 for t in self.terms))

    @property
    def loss(self) -> float:
        return max(0.0, 1.0 - self.norm)

    def amplitude(self, pol: str, time: float, tol: float = 1e-15) -> complex:
        return sum((t.amplitude for t in self.terms if t.pol == pol and abs(t.time - time) <= tol), 0j)


def _pure_ket(psi) -> np.ndarray:
    if isinstance(psi, PolarizationState):
        return psi.ket()
    v = np.asarray(psi, dtype=complex).reshape(2)
    n = np.linalg.norm(v)
    if abs(n - 1) > 1e-12:
        raise ValueError("input ket must be normalized")
    return v


def _clean(terms) -> tuple[Term, ...]:
    return tuple(t for t in terms if abs(t.amplitude) ** 2 > _NEGLIGIBLE)


def encode_umzi1(psi, T: float = DEFAULT_DELAY, coherence: CoherenceModel | None = None) -> TimeBinState:
    """H goes through the short arm (bin 0), V through the long arm (bin ``T``)."""
    if T <= 0:
        raise ValueError("UMZI delay T must be positive")
    a, b = _pure_ket(psi)
    terms = _clean([Term("H", 0.0, complex(a)), Term("V", T, complex(b))])
    return TimeBinState(terms, T, coherence or CoherenceModel())


def _as_matrix(u) -> np.ndarray:
    if isinstance(u, (PauliOp, str)):
        return PauliOp(u).matrix
    return np.asarray(u, dtype=complex)


def apply_channel_to_timebins(state: TimeBinState, u) -> TimeBinState:
    """Apply the same polarization operator to every time bin."""
    m = _as_matrix(u)
    by_time: dict[float, np.ndarray] = {}
    for t in state.terms:
        vec = by_time.setdefault(t.time, np.zeros(2, dtype=complex))
        vec[0 if t.pol == "H" else 1] += t.amplitude
    terms = []
    for time in sorted(by_time):
        h, v = m @ by_time[time]
        terms += [Term("H", time, complex(h)), Term("V", time, complex(v))]
    return TimeBinState(_clean(terms), state.delay, state.coherence, state.decoded)


def decode_umzi2(
    state: TimeBinState,
    T_prime: float = DEFAULT_DELAY,
    drift: float = 0.0,
    static_phase_offset: float = 0.0,
) -> TimeBinState:
    """Delay H by ``T_prime + drift`` and attach the path phases.

    The central-peak relative phase (late term against early term) comes out as
    ``k c (T - T' - drift) + static_phase_offset`` and the side-peak one as
    ``k c (T + T' + drift) + static_phase_offset``. The static offset is
    applied to the term that left the encoder in the late bin.
    """
    if T_prime <= 0:
        raise ValueError("UMZI delay T' must be positive")
    if state.decoded:
        raise ValueError("state has already passed the decoding interferometer")
    model = state.coherence
    shift = T_prime + drift
    staged = []
    for t in state.terms:
        amp = t.amplitude
        if t.time >= state.delay / 2:
            amp *= np.exp(1j * static_phase_offset)
        time = t.time + shift if t.pol == "H" else t.time
        if time < 0:
            raise ValueError("drift pushes a term before the flight-time origin")
        staged.append((t.pol, time, amp))
    ref = model.delay_phase(min(s[1] for s in staged))
    terms = [Term(p, time, complex(amp * np.exp(1j * (model.delay_phase(time) - ref)))) for p, time, amp in staged]
    return TimeBinState(_clean(terms), state.delay, model, decoded=True)


def coherence_factor(tau: float, model: CoherenceModel) -> float:
    """First-order coherence between two copies of the photon offset by ``tau``."""
    x = model.speed * tau / model.coherence_length
    return math.exp(-x * x)


@dataclass
class ArrivalHistogram:
    """Three arrival slots around ``flight_time``; weights are unnormalized
    density matrices whose traces sum to 1."""

    weights: dict[str, np.ndarray]
    times: dict[str, float]
    delay: float
    flight_time: float = 0.0
    transmission: float = 1.0

    def probability(self, label: str) -> float:
        w = self.weights.get(label)
        return 0.0 if w is None else float(np.trace(w).real)

    def conditional_state(self, label: str) -> PolarizationState | None:
        p = self.probability(label)
        if p <= _NEGLIGIBLE:
            return None
        rho = self.weights[label] / p
        return PolarizationState((rho + rho.conj().T) / 2)

    @property
    def bins(self) -> dict[str, tuple[float, PolarizationState]]:
        return {lab: (self.probability(lab), self.conditional_state(lab)) for lab in SLOT_LABELS if self.probability(lab) > _NEGLIGIBLE}

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.probability(lab) for lab in SLOT_LABELS])

    def arrival_time(self, label: str) -> float:
        return self.flight_time + self.times.get(label, SLOT_LABELS.index(label) * self.delay)

    @classmethod
    def mix(cls, parts: Sequence[tuple[float, "ArrivalHistogram"]]) -> "ArrivalHistogram":
        """Convex combination of histograms sharing the same delay."""
        total = sum(w for w, _ in parts)
        if total <= 0:
            raise ValueError("mixture weights must have positive sum")
        delay = parts[0][1].delay
        weights: dict[str, np.ndarray] = {}
        times: dict[str, float] = {}
        for w, h in parts:
            if h.delay != delay:
                raise ValueError("cannot mix histograms with different delays")
            for lab, rho in h.weights.items():
                weights[lab] = weights.get(lab, 0) + (w / total) * rho
                times.setdefault(lab, h.times[lab])
        trans = sum(w * h.transmission for w, h in parts) / total
        return cls(weights, times, delay, parts[0][1].flight_time, trans)


def _cluster(terms: list[Term], gap: float) -> list[list[Term]]:
    clusters: list[list[Term]] = []
    for t in sorted(terms, key=lambda t: t.time):
        if clusters and t.time - clusters[-1][-1].time <= gap:
            clusters[-1].append(t)
        else:
            clusters.append([t])
    return clusters


def arrival_histogram(state: TimeBinState, model: CoherenceModel | None = None, flight_time: float = 0.0) -> ArrivalHistogram:
    """Group terms by arrival time into the three slots.

    Terms within a few coherence times of each other add coherently, with
    cross terms scaled by ``mode_match * coherence_factor``; separated groups
    add as an incoherent mixture.
    """
    model = model or state.coherence
    if not state.terms:
        raise ValueError("empty state")
    norm = state.norm
    if norm <= _NEGLIGIBLE:
        raise ValueError("state carries no amplitude")
    weights: dict[str, np.ndarray] = {}
    times: dict[str, float] = {}
    for group in _cluster(list(state.terms), _CLUSTER_LENGTHS * model.coherence_time):
        rho = np.zeros((2, 2), dtype=complex)
        for j in group:
            vj = np.array([j.amplitude, 0] if j.pol == "H" else [0, j.amplitude])
            for k in group:
                vk = np.array([k.amplitude, 0] if k.pol == "H" else [0, k.amplitude])
                g = 1.0 if j is k else model.mode_match * coherence_factor(j.time - k.time, model)
                rho += g * np.outer(vj, vk.conj())
        p = np.trace(rho).real
        if p <= _NEGLIGIBLE:
            continue
        t_mean = sum(abs(t.amplitude) ** 2 * t.time for t in group) / sum(abs(t.amplitude) ** 2 for t in group)
        slot = min(max(int(round(t_mean / state.delay)), 0), len(SLOT_LABELS) - 1)
        label = SLOT_LABELS[slot]
        weights[label] = weights.get(label, 0) + rho / norm
        times.setdefault(label, t_mean)
    return ArrivalHistogram(weights, times, state.delay, flight_time, norm)


def post_select(hist: ArrivalHistogram, window: float = DEFAULT_WINDOW) -> tuple[PolarizationState | None, float]:
    """Keep events whose arrival lies within ``window`` centred on ``dt + T``.

    Returns the conditional polarization state (``None`` if nothing survives)
    and the transmission efficiency.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if window >= hist.delay:
        raise ValueError(f"window {window:g} s must be shorter than the bin spacing {hist.delay:g} s")
    centre = hist.flight_time + hist.delay
    rho = np.zeros((2, 2), dtype=complex)
    for lab, w in hist.weights.items():
        if abs(hist.arrival_time(lab) - centre) <= window / 2:
            rho = rho + w
    p = float(np.trace(rho).real)
    eff = p * hist.transmission
    if p <= _NEGLIGIBLE:
        return None, 0.0
    rho = rho / p
    return PolarizationState((rho + rho.conj().T) / 2), eff


def interference_envelope(delta_scan, mode_match: float, model: CoherenceModel) -> list[tuple[float, float]]:
    """Fringe visibility against interferometer mismatch ``T - T'`` (seconds)."""
    if not 0 <= mode_match <= 1:
        raise ValueError("mode_match must lie in [0, 1]")
    return [(float(d), mode_match * coherence_factor(float(d), model)) for d in delta_scan]


def channel_components(channel) -> list[tuple[float, np.ndarray]]:
    if channel is None:
        return [(1.0, np.eye(2, dtype=complex))]
    if hasattr(channel, "components"):
        return channel.components()
    if isinstance(channel, (list, tuple)) and channel and isinstance(channel[0], tuple):
        return [(float(p), _as_matrix(u)) for p, u in channel]
    return [(1.0, _as_matrix(channel))]


def transmit(
    psi,
    channel=None,
    *,
    T: float = DEFAULT_DELAY,
    T_prime: float | None = None,
    drift: float = 0.0,
    static_phase_offset: float = 0.0,
    coherence: CoherenceModel | None = None,
) -> ArrivalHistogram:
    """Encode, pass through a channel mixture, decode and histogram.

    ``psi`` may be mixed (its eigen-ensemble is propagated) and ``channel`` may
    be a PauliChannel, a single operator, or ``[(prob, operator), ...]``.
    """
    coherence = coherence or CoherenceModel()
    if not isinstance(psi, PolarizationState):
        psi = PolarizationState.from_ket(psi)
    parts = []
    for w_state, ket in psi.pure_components():
        for w_ch, u in channel_components(channel):
            s = encode_umzi1(ket, T, coherence)
            s = apply_channel_to_timebins(s, u)
            s = decode_umzi2(s, T if T_prime is None else T_prime, drift, static_phase_offset)
            parts.append((w_state * w_ch, arrival_histogram(s)))
    return ArrivalHistogram.mix(parts)


def central_peak_map(
    channel=None,
    *,
    T: float = DEFAULT_DELAY,
    T_prime: float | None = None,
    drift: float = 0.0,
    static_phase_offset: float = 0.0,
    coherence: CoherenceModel | None = None,
) -> list[tuple[float, np.ndarray, float]]:
    """Linear map taking an input polarization to the central-peak output.

    Each channel component yields ``(prob, K, g)``: the unnormalized central
    output is ``K rho K^dagger`` with its H/V coherence multiplied by ``g``.
    ``K`` is built column by column by pushing |H> and |V> through the UMZIs.
    """
    coherence = coherence or CoherenceModel()
    out = []
    for w, u in channel_components(channel):
        k = np.zeros((2, 2), dtype=complex)
        times = {}
        for col, ket in enumerate(np.eye(2, dtype=complex)):
            s = encode_umzi1(ket, T, coherence)
            s = apply_channel_to_timebins(s, u)
            # decode H and V inputs with a common phase reference
            s = _decode_absolute(s, T if T_prime is None else T_prime, drift, static_phase_offset)
            for t in s.terms:
                if abs(t.time - T) < T / 2:
                    row = 0 if t.pol == "H" else 1
                    k[row, col] += t.amplitude
                    times.setdefault(t.pol, t.time)
        g = 1.0
        if "H" in times and "V" in times:
            g = coherence.mode_match * coherence_factor(times["V"] - times["H"], coherence)
        out.append((w, k, g))
    return out


def _decode_absolute(state: TimeBinState, T_prime, drift, offset) -> TimeBinState:
    # Same as decode_umzi2 but with the flight-time origin as phase reference.
    model = state.coherence
    terms = []
    for t in state.terms:
        amp = t.amplitude * (np.exp(1j * offset) if t.time >= state.delay / 2 else 1)
        time = t.time + T_prime + drift if t.pol == "H" else t.time
        terms.append(Term(t.pol, time, complex(amp * np.exp(1j * model.delay_phase(time)))))
    return TimeBinState(_clean(terms), state.delay, model, decoded=True)


def apply_central_map(rho, kraus: list[tuple[float, np.ndarray, float]]) -> np.ndarray:
    """Unnormalized central-peak output for a single-qubit density matrix."""
    out = np.zeros((2, 2), dtype=complex)
    for w, k, g in kraus:
        r = k @ rho @ k.conj().T
        r[0, 1] *= g
        r[1, 0] *= g
        out += w * r
    return out

