"""Reference-frame correction: a |+> probe laser reads the interferometer phase
and a proportional controller holds it at 0 (or at pi, which undoes a static
phase-flip error on the signal).

Phases here are *signal* phases at 810 nm. The 633 nm probe accumulates
``phase_scale`` times more phase over the same path difference.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .channels import DriftProcess, sample_drift
from .polarization import PolarizationState, apply_unitary, named_ket, orthogonal_ket
from .timebin import CoherenceModel, channel_components, post_select, transmit

PROBE_WAVELENGTH = 633e-9
SIGNAL_WAVELENGTH = 810e-9


def wrap_phase(phi):
    """Map onto [-pi, pi)."""
    return (np.asarray(phi) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class ProbeSignal:
    i_plus: float
    i_minus: float

    def __post_init__(self):
        if not (0 <= self.i_plus <= 1 and 0 <= self.i_minus <= 1):
            raise ValueError("probe intensities must lie in [0, 1]")
        if abs(self.i_plus + self.i_minus - 1) > 1e-9:
            raise ValueError("probe intensities must sum to 1")


@dataclass(frozen=True)
class Controller:
    gain: float = 0.8
    dither_amplitude: float = 0.2
    update_interval: float = 1.0
    actuator_limit: float = 0.5
    lock_target: float = 0.0
    probe_visibility: float = 0.992
    phase_scale: float = SIGNAL_WAVELENGTH / PROBE_WAVELENGTH

    def __post_init__(self):
        if self.gain <= 0 or self.dither_amplitude <= 0 or self.actuator_limit <= 0:
            raise ValueError("gain, dither_amplitude and actuator_limit must be positive")
        if self.update_interval <= 0:
            raise ValueError("update_interval must be positive")
        if not (math.isclose(self.lock_target, 0.0, abs_tol=1e-12) or math.isclose(self.lock_target, math.pi, abs_tol=1e-12)):
            raise ValueError("lock_target must be 0 or pi")
        if not 0 < self.probe_visibility <= 1:
            raise ValueError("probe_visibility must lie in (0, 1]")
        if not 0 < self.phase_scale * self.dither_amplitude < math.pi / 2:
            raise ValueError("dither must stay within a quarter fringe of the probe")


def probe_measure(phi: float, visibility: float, shot_noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> ProbeSignal:
    """Normalized |+>/|-> analyzer intensities at probe phase ``phi``."""
    if not 0 <= visibility <= 1:
        raise ValueError("visibility must lie in [0, 1]")
    i_plus = (1 + visibility * math.cos(phi)) / 2
    if shot_noise_sigma > 0:
        if rng is None:
            raise ValueError("a generator is required for noisy probes")
        i_plus += shot_noise_sigma * rng.standard_normal()
    i_plus = min(max(i_plus, 0.0), 1.0)
    return ProbeSignal(i_plus, 1.0 - i_plus)


def estimate_phase_error(ctrl: Controller, probe_plus: ProbeSignal, probe_minus: ProbeSignal) -> float:
    """Signed signal-phase error from probes taken at phase +dither and -dither.

    The sum and difference of the two readings give the cosine and sine of
    the probe phase, so the estimate is exact (noise-free) while the probe
    error stays within half a fringe.
    """
    a = ctrl.phase_scale * ctrl.dither_amplitude
    v = ctrl.probe_visibility
    sin_p = (probe_minus.i_plus - probe_plus.i_plus) / (v * math.sin(a))
    cos_p = (probe_plus.i_plus + probe_minus.i_plus - 1) / (v * math.cos(a))
    probe_phase = math.atan2(sin_p, cos_p)
    err = float(wrap_phase(probe_phase - ctrl.phase_scale * ctrl.lock_target))
    return err / ctrl.phase_scale


def control_step(ctrl: Controller, estimate: float) -> float:
    """Actuator move for one update: proportional, clamped."""
    return -min(max(ctrl.gain * estimate, -ctrl.actuator_limit), ctrl.actuator_limit)


@dataclass
class LockTrace:
    times: np.ndarray
    phase_error: np.ndarray
    error_rate: np.ndarray
    phase: np.ndarray

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return list(zip(self.times.tolist(), self.phase_error.tolist(), self.error_rate.tolist()))

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.error_rate))

    def trend(self) -> tuple[float, float]:
        """Fitted change of error rate over the whole trace, and the trace's spread."""
        slope = np.polyfit(self.times, self.error_rate, 1)[0]
        return float(slope * (self.times[-1] - self.times[0])), float(np.std(self.error_rate))

    def is_stationary(self) -> bool:
        change, spread = self.trend()
        return abs(change) <= spread

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "phase_error_rad", "error_rate"])
            for t, e, r in self.samples:
                w.writerow([repr(t), repr(e), repr(r)])


def run_lock(
    drift: DriftProcess,
    ctrl: Controller,
    duration: float,
    protocol_sampler: Callable[[np.ndarray], np.ndarray] | None,
    rng: np.random.Generator,
    *,
    feedback: bool = True,
    initial_phase: float | None = None,
    shot_noise_sigma: float = 0.0,
    probe_visibility: float | None = None,
) -> LockTrace:
    """Closed-loop phase lock over ``duration`` seconds.

    Drift and probe noise come from two child streams of ``rng``, so the
    drift realization is identical with the loop open or closed.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    dt = ctrl.update_interval
    if dt >= duration:
        raise ValueError("update_interval must be shorter than duration")
    drift_rng, probe_rng = rng.spawn(2)
    process = replace(drift)
    v_true = ctrl.probe_visibility if probe_visibility is None else probe_visibility
    s, d = ctrl.phase_scale, ctrl.dither_amplitude
    phi = ctrl.lock_target if initial_phase is None else float(initial_phase)

    n = int(round(duration / dt))
    phases = np.empty(n)
    for i in range(n):
        phi += sample_drift(process, dt, drift_rng)
        if feedback:
            p_plus = probe_measure(s * (phi + d), v_true, shot_noise_sigma, probe_rng)
            p_minus = probe_measure(s * (phi - d), v_true, shot_noise_sigma, probe_rng)
            phi += control_step(ctrl, estimate_phase_error(ctrl, p_plus, p_minus))
        phases[i] = phi
    times = dt * np.arange(1, n + 1)
    errors = np.full(n, np.nan) if protocol_sampler is None else np.asarray(protocol_sampler(phases), dtype=float)
    return LockTrace(times, wrap_phase(phases - ctrl.lock_target), errors, phases)


def phase_fidelity(rho: np.ndarray, ket: np.ndarray):
    """``phi -> <psi| D rho D^dagger |psi>`` with D = diag(1, e^{i phi}), vectorized over phi."""
    a, b = ket
    const = abs(a) ** 2 * rho[0, 0].real + abs(b) ** 2 * rho[1, 1].real
    cross = np.conj(b) * a * rho[1, 0]

    def f(phi):
        return const + 2 * np.real(cross * np.exp(1j * np.asarray(phi)))

    return f


def eft_error_sampler(
    input_state: str | np.ndarray = "plus",
    channel=None,
    *,
    prep_infidelity: float = 0.0,
    accidental_fraction: float = 0.0,
    coherence: CoherenceModel | None = None,
    T: float = 2.5e-9,
    window: float = 2e-9,
) -> Callable[[np.ndarray], np.ndarray]:
    """Post-selected error rate as a function of the central-peak phase.

    The conditional state is computed once through the time-bin pipeline at
    zero phase; the phase then enters as diag(1, e^{i phi}) on the late bin.
    """
    ket, prepared = _prepared(input_state, prep_infidelity)
    hist = transmit(prepared, channel, T=T, coherence=coherence)
    state, eff = post_select(hist, window)
    if state is None:
        return lambda phi: np.full(np.shape(phi), 0.5 if accidental_fraction > 0 else np.nan)
    fid = phase_fidelity(state.rho, ket)

    def error(phi):
        signal_err = 1 - fid(phi)
        return (eff * signal_err + 0.5 * accidental_fraction) / (eff + accidental_fraction)

    return error


def raw_error_sampler(input_state: str | np.ndarray = "plus", channel=None, *, prep_infidelity: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """Error rate without time-bin encoding; the drift phase acts directly on V."""
    ket, prepared = _prepared(input_state, prep_infidelity)
    rho = sum(w * apply_unitary(prepared, u).rho for w, u in channel_components(channel))
    fid = phase_fidelity(rho, ket)
    return lambda phi: 1 - fid(phi)


def _prepared(input_state, prep_infidelity: float) -> tuple[np.ndarray, PolarizationState]:
    if not 0 <= prep_infidelity <= 1:
        raise ValueError("prep_infidelity must lie in [0, 1]")
    ket = named_ket(input_state) if isinstance(input_state, str) else np.asarray(input_state, dtype=complex)
    perp = orthogonal_ket(ket)
    rho = (1 - prep_infidelity) * np.outer(ket, ket.conj()) + prep_infidelity * np.outer(perp, perp.conj())
    return ket, PolarizationState(rho)
