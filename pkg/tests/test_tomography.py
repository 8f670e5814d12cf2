import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brwsource import entanglement_metrics as em
from brwsource import tomography as tm
from brwsource.errors import BRWError

BELL = em.bell_state()


def bell_budget():
    return tm.flux_for_peak(BELL)


@pytest.mark.parametrize("setting", tm.SETTINGS)
def test_projector_algebra(setting):
    p = tm.projector(setting)
    assert np.allclose(p, p.conj().T)
    assert np.allclose(p @ p, p)
    assert np.trace(p).real == pytest.approx(1.0)
    for arm in setting:
        a = tm.arm_projector(arm)
        assert np.trace(a).real == pytest.approx(1.0) and np.allclose(a @ a, a)


def test_settings_informationally_complete():
    vecs = np.array([tm.projector(s).reshape(-1) for s in tm.SETTINGS])
    gram = vecs.conj() @ vecs.T
    assert np.linalg.matrix_rank(gram) == 16
    assert len(set(tm.SETTINGS)) == 16


def test_arm_states():
    d = tm.arm_projector("D")
    r = tm.arm_projector("R")
    assert np.allclose(d, 0.5 * np.array([[1, 1], [1, 1]]))
    assert np.allclose(r, 0.5 * np.array([[1, -1j], [1j, 1]]))


def test_bell_budget_expectations():
    flux = bell_budget()
    assert flux == pytest.approx(700.0)
    mu, acc = tm.expected_counts(BELL, [tm.projector(s) for s in tm.SETTINGS], flux,
                                 tm.DEFAULT_EFFICIENCIES, tm.DEFAULT_TIME_S, tm.DEFAULT_CAR)
    assert mu.max() == pytest.approx(350.0 + 7.0)
    assert acc == pytest.approx(7.0)
    born = tm.born_probabilities(BELL, [tm.projector(s) for s in tm.SETTINGS])
    hv = tm.SETTINGS.index("HV")
    assert mu[hv] == pytest.approx(350.0 * born[hv] / born.max() + 7.0)


def test_orthogonal_setting_sees_accidentals_only():
    prod = np.outer(em.ket("HV"), em.ket("HV"))
    d = tm.simulate_dataset(prod, 500.0, noiseless=True)
    hh = d.settings.index("HH")
    assert d.coincidences[hh] == pytest.approx(d.accidentals[hh])
    assert d.accidentals[hh] > 0


def test_large_count_limit_recovers_born_probabilities():
    rho = em.random_state(np.random.default_rng(11))
    projs = [tm.projector(s) for s in tm.SETTINGS]
    flux = 500.0
    d = tm.simulate_dataset(rho, flux, time_s=1000 * tm.DEFAULT_TIME_S, car_target=None, seed=3)
    scale = flux * np.prod(tm.DEFAULT_EFFICIENCIES) * d.time_s[0]
    mu = scale * tm.born_probabilities(rho, projs)
    assert np.all(np.abs(d.coincidences - mu) <= 3 * np.sqrt(mu))


def test_simulation_is_seeded():
    a = tm.simulate_dataset(BELL, 700.0, seed=5)
    b = tm.simulate_dataset(BELL, 700.0, seed=5)
    c = tm.simulate_dataset(BELL, 700.0, seed=6)
    assert np.array_equal(a.coincidences, b.coincidences)
    assert not np.array_equal(a.coincidences, c.coincidences)


@pytest.mark.parametrize("kw", [
    {"flux": 0.0},
    {"flux": 700.0, "efficiencies": (0.0, 0.2)},
    {"flux": 700.0, "efficiencies": (0.2, 1.5)},
    {"flux": 700.0, "time_s": -1.0},
    {"flux": 700.0, "car_target": 0.0},
])
def test_nonphysical_budget(kw):
    with pytest.raises(ValueError):
        tm.simulate_dataset(BELL, **kw)


def test_dataset_validation():
    with pytest.raises(ValueError):
        tm.TomographyDataset(tm.SETTINGS, 20.0, -np.ones(16), 0.0)
    with pytest.raises(ValueError):
        tm.TomographyDataset(tm.SETTINGS, 0.0, np.ones(16), 0.0)
    with pytest.raises(ValueError):
        tm.TomographyDataset(tm.SETTINGS, 20.0, np.ones(15), 0.0)


def test_dataset_json_round_trip():
    d = tm.simulate_dataset(BELL, 700.0, seed=1)
    payload = json.loads(d.to_json())
    assert set(payload) >= {"settings", "time_s", "coincidences", "accidentals"}
    assert payload["settings"][0] == "HH" and len(payload["settings"]) == 16
    back = tm.TomographyDataset.from_json(d.to_json())
    assert back.settings == d.settings
    assert np.array_equal(back.coincidences, d.coincidences)
    assert np.array_equal(back.accidentals, d.accidentals)
    assert np.array_equal(back.time_s, d.time_s)


def test_result_json():
    r = tm.reconstruct_mle(tm.simulate_dataset(BELL, 700.0, seed=1))
    out = json.loads(r.to_json())
    rho = np.array(out["rho_real"]) + 1j * np.array(out["rho_imag"])
    assert np.allclose(rho, r.rho, atol=1e-12)
    assert out["mode"] == "raw"


def test_parameter_round_trip():
    p = np.random.default_rng(0).standard_normal(16)
    assert np.allclose(tm.params_from_t(tm.t_from_params(p)), p)
    t = tm.t_from_params(p)
    assert np.allclose(np.triu(t, 1), 0)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_parameterisation_always_physical(seed):
    rho = tm.rho_from_params(np.random.default_rng(seed).standard_normal(16))
    assert np.allclose(rho, rho.conj().T)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        g[j] = (f(x + e) - f(x - e)) / (2 * e[j])
    return g


def test_gradient_against_finite_differences(rng):
    projs = np.array([tm.projector(s) for s in tm.SETTINGS])
    counts = tm.simulate_dataset(em.random_state(rng), 700.0, seed=2).coincidences
    for _ in range(20):
        x = rng.standard_normal(16) * 3
        ana = tm.log_likelihood_grad(x, counts, projs)
        num = central_difference(lambda p: tm.log_likelihood(p, counts, projs), x)
        assert np.linalg.norm(ana - num) / np.linalg.norm(num) < 1e-5


def test_noiseless_reconstruction(rng):
    for rank in (1, 2, 4):
        rho = em.random_state(rng, rank=rank)
        d = tm.simulate_dataset(rho, 700.0, car_target=None, noiseless=True)
        r = tm.reconstruct_mle(d)
        assert em.state_fidelity(r.rho, rho) > 0.999


def test_reconstruction_invariants_and_ascent():
    r = tm.reconstruct_mle(tm.simulate_dataset(BELL, 700.0, seed=4))
    assert np.allclose(r.rho, r.rho.conj().T)
    assert np.trace(r.rho).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(r.rho).min() >= 0
    h = np.array(r.ll_history)
    assert h.size > 2
    assert np.all(np.diff(h) >= -1e-9 * np.abs(h[:-1]))
    assert r.log_likelihood == pytest.approx(h[-1])
    assert r.converged and r.grad_norm < tm.GRAD_TOL


def test_non_convergence_is_flagged():
    r = tm.reconstruct_mle(tm.simulate_dataset(BELL, 700.0, seed=4), max_iter=2)
    assert not r.converged
    assert r.iterations <= 2
    assert np.trace(r.rho).real == pytest.approx(1.0)


def test_incomplete_settings_rejected():
    d = tm.simulate_dataset(BELL, 700.0, seed=0)
    short = tm.TomographyDataset(d.settings[:12], 20.0, d.coincidences[:12], d.accidentals[:12])
    with pytest.raises(ValueError):
        tm.reconstruct_mle(short)


def test_empty_dataset_rejected():
    d = tm.simulate_dataset(BELL, 700.0, seed=0).with_counts(np.zeros(16))
    with pytest.raises(BRWError):
        tm.reconstruct_mle(d)


def test_net_mode_removes_accidental_floor():
    raw, net = [], []
    for seed in range(10):
        d = tm.simulate_dataset(BELL, 700.0, seed=seed)
        raw.append(tm.reconstruct_mle(d).concurrence)
        net.append(tm.reconstruct_mle(d, subtract_accidentals=True).concurrence)
    assert np.mean(net) > np.mean(raw)


def test_maximally_mixed_stays_separable():
    mix = np.eye(4) / 4
    flux = tm.flux_for_peak(mix)
    cs = [tm.reconstruct_mle(tm.simulate_dataset(mix, flux, seed=s)).concurrence for s in range(100)]
    assert max(cs) < 0.1


def test_error_shrinks_with_budget():
    rho = 0.9 * BELL + 0.1 * np.eye(4) / 4
    flux = tm.flux_for_peak(rho)
    means = []
    for scale in (1, 10, 100):
        dist = [em.trace_distance(tm.reconstruct_mle(tm.simulate_dataset(rho, scale * flux, seed=s)).rho, rho)
                for s in range(20)]
        means.append(np.mean(dist))
    assert means[0] > means[1] > means[2]


def test_monte_carlo_deterministic_and_thread_independent():
    d = tm.simulate_dataset(BELL, 700.0, seed=0)
    r = tm.reconstruct_mle(d)
    a = tm.monte_carlo_errors(r.rho, d, trials=12, seed=9, threads=1)
    b = tm.monte_carlo_errors(r.rho, d, trials=12, seed=9, threads=3)
    assert a == b
    assert a.concurrence_std >= 0 and a.fidelity_std >= 0
    with pytest.raises(ValueError):
        tm.monte_carlo_errors(r.rho, d, trials=5)


def test_monte_carlo_noiseless_dataset():
    d = tm.simulate_dataset(BELL, 700.0, noiseless=True)
    r = tm.reconstruct_mle(d)
    e = tm.monte_carlo_errors(r.rho, d, trials=20, seed=0)
    assert e.concurrence_std < 0.05 and e.fidelity_std < 0.05


def test_monte_carlo_scaling_with_budget():
    rho = 0.97 * BELL + 0.03 * np.eye(4) / 4
    flux = tm.flux_for_peak(rho)
    stds = []
    for scale in (1, 10):
        d = tm.simulate_dataset(rho, scale * flux, seed=0)
        r = tm.reconstruct_mle(d, subtract_accidentals=True)
        stds.append(tm.monte_carlo_errors(r.rho, d, trials=100, seed=0, subtract_accidentals=True).concurrence_std)
    assert stds[0] / stds[1] == pytest.approx(np.sqrt(10), rel=0.3)


@pytest.mark.xfail(strict=True, reason="observed-count resampling at 350 peak counts gives a "
                   "concurrence spread of about 0.05-0.065; see notes on the error-bar window")
def test_monte_carlo_error_bar_at_default_budget():
    d = tm.simulate_dataset(BELL, bell_budget(), seed=0)
    r = tm.reconstruct_mle(d, subtract_accidentals=True)
    e = tm.monte_carlo_errors(r.rho, d, trials=100, seed=0, subtract_accidentals=True)
    assert 0.005 <= e.concurrence_std <= 0.05


def test_interference_bell_noiseless():
    for basis in ("H", "D"):
        sw = tm.simulate_interference(BELL, basis, 700.0, noiseless=True)
        fit = em.visibility_fit(sw.angles_deg, sw.counts)
        assert fit.visibility == pytest.approx(1.0, abs=1e-9)
    assert tuple(sw.angles_deg) == tm.SWEEP_DEG


def test_interference_near_pair_orders_bases(near_state):
    rho = near_state.rho
    flux = tm.flux_for_peak(rho)
    acc = tm.simulate_dataset(rho, flux, noiseless=True).accidentals[0]
    vis = {b: em.visibility_fit(tm.SWEEP_DEG,
                                tm.simulate_interference(rho, b, flux, accidentals=acc, noiseless=True).counts).visibility
           for b in ("H", "D")}
    assert vis["H"] > vis["D"]
    assert vis["H"] >= 0.9


def test_interference_errors():
    with pytest.raises(ValueError):
        tm.simulate_interference(BELL, "R", 700.0)
    with pytest.raises(ValueError):
        tm.simulate_interference(BELL, "H", -1.0)
