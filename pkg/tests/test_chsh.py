import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eftsim.channels import ns_components
from eftsim.chsh import (
    CANONICAL_ANGLES,
    TSIRELSON,
    CountQuad,
    SpdcSource,
    TwoQubitState,
    bell_phi_plus,
    chsh_S,
    correlation_E,
    distribute_entanglement,
    exposure_for_sigma,
    joint_probabilities,
    measure_chsh,
    s_with_errorbars,
    sample_counts,
    source_state,
)
from eftsim.polarization import PauliOp

HH = TwoQubitState.from_ket([1, 0, 0, 0])


def _analyzer(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def _visibility(rho, theta):
    # coincidence visibility with both analyzers at theta vs Bob's turned by 90 degrees
    a, b = _analyzer(theta), _analyzer(theta + math.pi / 2)
    same = np.real(np.kron(a, a) @ rho.rho @ np.kron(a, a))
    cross = np.real(np.kron(a, b) @ rho.rho @ np.kron(a, b))
    return (same - cross) / (same + cross)


def random_two_qubit(rng):
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    r = g @ g.conj().T
    return TwoQubitState(r / np.trace(r))


def test_state_validation():
    with pytest.raises(ValueError):
        TwoQubitState(np.eye(4))
    with pytest.raises(ValueError):
        TwoQubitState(np.eye(3) / 3)


def test_source_examples():
    assert np.allclose(source_state(SpdcSource(v_hv=1, v_diag=1)).rho, bell_phi_plus().rho)
    assert np.allclose(source_state(SpdcSource(v_hv=1, v_diag=0)).rho, np.diag([0.5, 0, 0, 0.5]))
    r = source_state(SpdcSource(v_hv=0.981, v_diag=0.926))
    assert _visibility(r, 0.0) == pytest.approx(0.981, abs=1e-9)
    assert _visibility(r, math.pi / 4) == pytest.approx(0.926, abs=1e-9)


def test_source_rejects_non_physical():
    with pytest.raises(ValueError):
        source_state(SpdcSource(v_hv=0.0, v_diag=0.9))
    with pytest.raises(ValueError):
        SpdcSource(v_hv=1.2)


def test_correlation_examples():
    assert correlation_E(bell_phi_plus(), 0, 0) == pytest.approx(1.0)
    assert correlation_E(bell_phi_plus(), 0, math.pi / 8) == pytest.approx(math.sqrt(2) / 2)
    for a, b in [(0.1, 0.7), (1.0, 2.5), (0.3, 0.3)]:
        assert correlation_E(HH, a, b) == pytest.approx(math.cos(2 * a) * math.cos(2 * b))


def test_chsh_examples():
    assert chsh_S(bell_phi_plus(), *CANONICAL_ANGLES) == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    assert chsh_S(HH, *CANONICAL_ANGLES) == pytest.approx(math.sqrt(2), abs=1e-12)
    s = chsh_S(source_state(SpdcSource()), *CANONICAL_ANGLES)
    # for this state E(a, b) = (v_hv cos2a cos2b + v_diag sin2a sin2b) so S = sqrt(2) (v_hv + v_diag)
    assert s == pytest.approx(math.sqrt(2) * (0.981 + 0.926), abs=1e-12)
    assert 2.6 <= s <= 2.8


def test_tsirelson_over_random_states():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r = random_two_qubit(rng)
        angles = rng.uniform(0, math.pi, 4)
        assert abs(correlation_E(r, *angles[:2])) <= 1 + 1e-12
        assert chsh_S(r, *angles) <= TSIRELSON + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(-math.pi, math.pi))
def test_chsh_rotation_invariant_for_bell(phi):
    # for Phi+ and linear analyzers E = cos 2(a - b), so a common rotation changes nothing
    shifted = [a + phi for a in CANONICAL_ANGLES]
    assert chsh_S(bell_phi_plus(), *shifted) == pytest.approx(TSIRELSON, abs=1e-12)


def test_sample_counts_examples():
    rng = np.random.default_rng(1)
    q = sample_counts(bell_phi_plus(), 0, 0, 10_000, 0.0, rng)
    assert q.n_pm == 0 and q.n_mp == 0
    r = source_state(SpdcSource())
    n = 1_000_000
    q = sample_counts(r, 0.3, 1.1, n, 0.0, rng)
    p = joint_probabilities(r, 0.3, 1.1)
    for c, pk in zip((q.n_pp, q.n_mm, q.n_pm, q.n_mp), p):
        assert abs(c - n * pk) <= 5 * math.sqrt(n * pk * (1 - pk))


def test_accidentals_shrink_correlation():
    r = bell_phi_plus()
    clean = sample_counts(r, 0, 0, 100_000, 0.0, np.random.default_rng(2)).correlation
    noisy = sample_counts(r, 0, 0, 100_000, 0.5, np.random.default_rng(2)).correlation
    assert abs(noisy) < abs(clean)


def test_sample_counts_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_counts(HH, 0, 0, 0, 0.0, rng)
    with pytest.raises(ValueError):
        sample_counts(HH, 0, 0, 10, -0.1, rng)


def test_empirical_E_converges():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = random_two_qubit(rng)
        a, b = rng.uniform(0, math.pi, 2)
        q = sample_counts(r, a, b, 100_000, 0.0, rng)
        assert abs(q.correlation - correlation_E(r, a, b)) <= 5 * q.sigma


def test_s_with_errorbars_consistency():
    r = source_state(SpdcSource())
    res = measure_chsh(r, CANONICAL_ANGLES, 1_000_000, 0.0, np.random.default_rng(4))
    assert abs(res.s_value - chsh_S(r, *CANONICAL_ANGLES)) <= 3 * res.sigma_s


def test_sigma_halves_when_counts_quadruple():
    r = source_state(SpdcSource())
    res = measure_chsh(r, CANONICAL_ANGLES, 5_000, 0.0, np.random.default_rng(5))
    scaled = s_with_errorbars([q.scaled(4) for q in res.quads])
    assert scaled.sigma_s == pytest.approx(res.sigma_s / 2, rel=0.10)
    assert scaled.s_value == pytest.approx(res.s_value)


def test_sigma_e_oracle():
    # first-order propagation for E = (a - b) / (a + b) with a = n_pp + n_mm, b = n_pm + n_mp
    q = CountQuad(400, 380, 60, 40)
    a, b = 780, 100
    n = a + b
    sigma = math.sqrt((2 * b / n**2) ** 2 * a + (2 * a / n**2) ** 2 * b)
    assert q.sigma == pytest.approx(sigma, rel=1e-12)


def test_rejects_all_zero_quad():
    good = CountQuad(10, 10, 1, 1)
    with pytest.raises(ValueError):
        s_with_errorbars([good, good, good, CountQuad(0, 0, 0, 0)])


def test_measured_visibility_exposure_violation():
    r = source_state(SpdcSource())
    pairs = exposure_for_sigma(r, CANONICAL_ANGLES, 0.05)
    res = measure_chsh(r, CANONICAL_ANGLES, pairs, 0.0, np.random.default_rng(6))
    assert res.sigma_s == pytest.approx(0.05, rel=0.1)
    assert 10 <= res.violation_sigmas <= 18


def test_distribute_identity():
    r = source_state(SpdcSource())
    out, eff = distribute_entanglement(r, None, True)
    assert eff == pytest.approx(1.0)
    assert np.max(np.abs(out.rho - r.rho)) <= 1e-12
    out, eff = distribute_entanglement(r, None, False)
    assert np.max(np.abs(out.rho - r.rho)) <= 1e-12 and eff == pytest.approx(1.0)


def test_distribute_ns_22p5():
    r = source_state(SpdcSource())
    out, eff = distribute_entanglement(r, ns_components(math.pi / 8), True)
    assert eff == pytest.approx(0.5)
    assert np.max(np.abs(out.rho - r.rho)) <= 1e-12


def test_distribute_without_eft_is_raw_channel():
    out, eff = distribute_entanglement(bell_phi_plus(), PauliOp.X, False)
    assert eff == pytest.approx(1.0)
    assert np.allclose(out.rho, TwoQubitState.from_ket([0, 1, 1, 0]).rho)


def test_random_phase_without_eft_destroys_violation():
    # averaging Bob's phase uniformly leaves S = sqrt(2) v_hv < 2
    r = source_state(SpdcSource())
    s = np.mean([chsh_S(distribute_entanglement(r, np.diag([1, np.exp(1j * p)]), False)[0], *CANONICAL_ANGLES) for p in np.linspace(0, 2 * math.pi, 64, endpoint=False)])
    assert s < 2
