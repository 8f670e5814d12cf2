import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brwsource import entanglement_metrics as em
from brwsource.errors import FitError, StateValidationError

SY = np.array([[0, -1j], [1j, 0]])
YY = np.kron(SY, SY)


def wootters_eig(rho):
    """Textbook route: square roots of the eigenvalues of rho (YY) rho* (YY)."""
    r = rho @ YY @ rho.conj() @ YY
    lam = np.sort(np.sqrt(np.clip(np.linalg.eigvals(r).real, 0, None)))[::-1]
    return max(0.0, lam[0] - lam[1] - lam[2] - lam[3])


def pure_concurrence(psi):
    return abs(psi @ YY @ psi)


def x_state_concurrence(rho):
    r = rho
    return 2 * max(0.0, abs(r[1, 2]) - np.sqrt(r[0, 0].real * r[3, 3].real),
                   abs(r[0, 3]) - np.sqrt(r[1, 1].real * r[2, 2].real))


def test_bell_and_product():
    assert em.concurrence(em.bell_state()) == pytest.approx(1.0, abs=1e-12)
    assert em.concurrence(em.phi_plus()) == pytest.approx(1.0, abs=1e-12)
    prod = np.outer(em.ket("HV"), em.ket("HV"))
    assert em.concurrence(prod) == 0.0
    assert em.concurrence(np.eye(4) / 4) == 0.0


def test_werner():
    assert em.concurrence(em.werner(0.9)) == pytest.approx(0.85, abs=1e-12)
    # separable below p = 1/3
    assert em.concurrence(em.werner(0.3)) == 0.0


def test_werner_monotone_in_mixing():
    ps = np.linspace(0, 1, 201)
    c = np.array([em.concurrence(em.werner(p, em.bell_state())) for p in ps])
    assert np.all(np.diff(c) >= -1e-12)
    assert np.allclose(c, np.maximum(0, (3 * ps - 1) / 2), atol=1e-9)


def test_against_eigenvalue_oracle_on_random_states():
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(1000):
        rho = em.random_state(rng, rank=1 + k % 4)
        worst = max(worst, abs(em.concurrence(rho) - wootters_eig(rho)))
    assert worst < 1e-6


def test_pure_states_against_closed_form():
    rng = np.random.default_rng(2)
    for _ in range(200):
        psi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        psi /= np.linalg.norm(psi)
        assert em.concurrence(np.outer(psi, psi.conj())) == pytest.approx(pure_concurrence(psi), abs=1e-7)


def test_block_states_against_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(200):
        rho = em.random_block_state(rng)
        assert em.concurrence(rho) == pytest.approx(2 * abs(rho[1, 2]), abs=1e-10)
        assert em.concurrence(rho) == pytest.approx(x_state_concurrence(rho), abs=1e-10)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_local_unitary_invariance(seed):
    rng = np.random.default_rng(seed)
    rho = em.random_state(rng)
    u = em.random_local_unitary(rng)
    rot = u @ rho @ u.conj().T
    assert em.concurrence(rot) == pytest.approx(em.concurrence(rho), abs=1e-8)
    assert em.chsh_max(rot) == pytest.approx(em.chsh_max(rho), abs=1e-8)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_bounds(seed):
    rng = np.random.default_rng(seed)
    rho = em.random_state(rng)
    c = em.concurrence(rho)
    assert 0.0 <= c <= 1.0
    f = em.fidelity_to_bell(rho)
    assert 0.0 <= f <= 1.0
    # a state with Bell fidelity above 1/2 is entangled
    if f > 0.5 + 1e-9:
        assert c > 0


def test_fidelity_examples():
    assert em.fidelity_to_bell(em.bell_state(np.pi)) == pytest.approx(1.0, abs=1e-12)
    assert em.fidelity_to_bell(em.bell_state(np.pi), optimize_phase=False) == pytest.approx(0.0, abs=1e-12)
    assert em.fidelity_to_bell(np.eye(4) / 4) == pytest.approx(0.25, abs=1e-12)
    rho = np.zeros((4, 4), complex)
    rho[1, 1] = rho[2, 2] = 0.5
    rho[1, 2] = 0.49 * np.exp(0.7j)
    rho[2, 1] = np.conj(rho[1, 2])
    assert em.fidelity_to_bell(rho) == pytest.approx(0.99, abs=1e-12)


def test_phase_optimum_matches_brute_force():
    rng = np.random.default_rng(4)
    phis = np.linspace(0, 2 * np.pi, 20001)
    for _ in range(20):
        rho = em.random_state(rng)
        brute = max(em.fidelity_to_bell(rho, optimize_phase=False, phi=p) for p in phis[::100])
        assert em.fidelity_to_bell(rho) >= brute - 1e-12
        assert em.fidelity_to_bell(rho) - brute < 1e-3


def test_uhlmann_fidelity():
    rng = np.random.default_rng(5)
    rho = em.random_state(rng)
    assert em.state_fidelity(rho, rho) == pytest.approx(1.0, abs=1e-9)
    b = em.bell_state()
    assert em.state_fidelity(b, rho) == pytest.approx(np.trace(b @ rho).real, abs=1e-9)
    assert em.trace_distance(b, b) == pytest.approx(0.0, abs=1e-12)


def test_chsh():
    assert em.chsh_max(em.bell_state()) == pytest.approx(2 * np.sqrt(2), abs=1e-12)
    assert em.chsh_max(np.eye(4) / 4) == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(6)
    for _ in range(200):
        rho = em.random_block_state(rng)
        if em.concurrence(rho) > 1 / np.sqrt(2):
            assert em.chsh_max(rho) > 2


def test_chsh_block_closed_form():
    # X state on the HV/VH block: S = 2 sqrt(1 + C^2)
    rng = np.random.default_rng(7)
    for _ in range(50):
        rho = em.random_block_state(rng)
        c = em.concurrence(rho)
        assert em.chsh_max(rho) == pytest.approx(2 * np.sqrt(1 + c**2), abs=1e-9)


ANGLES = np.arange(0, 180, 10.0)


def curve(v, peak=350.0, theta0=20.0, angles=ANGLES):
    off = peak * (1 - v) / (1 + v)
    amp = peak - off
    return off + amp * np.cos(np.deg2rad(angles - theta0)) ** 2


def test_visibility_noiseless():
    fit = em.visibility_fit(ANGLES, curve(1.0))
    assert fit.visibility == pytest.approx(1.0, abs=1e-9)
    assert fit.phase == pytest.approx(20.0, abs=1e-6)
    fit = em.visibility_fit(ANGLES, curve(0.8))
    assert fit.visibility == pytest.approx(0.8, abs=1e-9)


def test_visibility_with_poisson_noise():
    rng = np.random.default_rng(8)
    angles = np.arange(16) * 180 / 16
    mu = curve(0.9, angles=angles)
    fits = np.array([em.visibility_fit(angles, rng.poisson(mu)).visibility for _ in range(100)])
    assert abs(fits.mean() - 0.9) <= 0.03
    assert fits.std() < 0.03


def test_visibility_constant_curve():
    assert em.visibility_fit(ANGLES, np.full(ANGLES.size, 40.0)).visibility == pytest.approx(0.0, abs=1e-12)


def test_visibility_offset_constrained():
    # noise pushing the linear fit below zero still yields V <= 1 and offset >= 0
    counts = curve(1.0, peak=5.0)
    counts[8:11] = 0
    counts[0] += 2
    fit = em.visibility_fit(ANGLES, counts)
    assert fit.offset >= 0 and 0 <= fit.visibility <= 1


@pytest.mark.parametrize("angles,counts", [
    ([0, 45, 90], [1, 2, 3]),
    ([0, 180, 45, 225], [1, 2, 3, 4]),
    ([0, 45, 90, 135], [1, -2, 3, 4]),
    ([0, 45, 90], [1, 2]),
])
def test_visibility_fit_errors(angles, counts):
    with pytest.raises(FitError):
        em.visibility_fit(angles, counts)


def test_clamping_counts_and_logs(caplog):
    rho = em.bell_state()
    w, v = np.linalg.eigh(rho)
    w[0] = -5e-10
    w[-1] += 5e-10
    bent = (v * w) @ v.conj().T
    em.clamp_counter.reset()
    with caplog.at_level(logging.DEBUG, logger="brwsource.entanglement_metrics"):
        clean = em.validate_state(bent)
    assert em.clamp_counter.count == 1
    assert "clamped" in caplog.text
    assert np.linalg.eigvalsh(clean).min() >= 0
    assert np.trace(clean).real == pytest.approx(1.0)


@pytest.mark.parametrize("bad", [
    np.eye(3) / 3,
    np.diag([1.0, 0, 0, 0]) + 1e-6 * np.eye(4, k=1),  # not Hermitian
    np.eye(4) / 2,
    np.diag([1.1, 0, 0, -0.1]),
    np.full((4, 4), np.nan),
])
def test_validation_errors(bad):
    with pytest.raises(StateValidationError):
        em.concurrence(bad)
