import math

import numpy as np
import pytest

from omitlab.constants import KAPPA_T, OMEGA_M
from omitlab.errors import DomainError, SeedingError
from omitlab.fit import (
    PARAMS,
    SpectrumData,
    fit_joint,
    fit_spectrum,
    initial_guess,
    levenberg_marquardt,
    model_beat,
    monte_carlo,
    replica_rng,
)

GAMMA_HIGH = OMEGA_M / 122_000
GAMMA_LOW = OMEGA_M / 24_000


def truth(g_ratio=9.4e-3, gamma_m=GAMMA_HIGH, **kw):
    p = dict(g=g_ratio * OMEGA_M, kappa_t=KAPPA_T, gamma_m=gamma_m, scale=1.0, phase=0.0, omega_m=OMEGA_M)
    p.update(kw)
    return p


def gamma_eff(p):
    return p["gamma_m"] * (1 + p["g"] ** 2 / (2 * p["kappa_t"] * p["gamma_m"]))


def grid_for(p, widths, n=200):
    return OMEGA_M + np.linspace(-widths, widths, n) * gamma_eff(p)


def clean_data(p, widths=3, n=200, with_phase=False):
    x = grid_for(p, widths, n)
    beat = model_beat(p, x)
    return SpectrumData(x, np.abs(beat), np.angle(beat) if with_phase else None)


def perturbed(p, factor=1.1, names=("g", "gamma_m", "scale")):
    return {k: (v * factor if k in names else v) for k, v in p.items()}


def test_noiseless_recovery():
    p = truth(phase=0.3, scale=2.5)
    data = clean_data(p, widths=30, n=300, with_phase=True)
    free = ("g", "kappa_t", "gamma_m", "scale", "phase")
    res = fit_spectrum(data, perturbed(p, 1.15, ("g", "kappa_t", "gamma_m", "scale")), free)
    assert res.converged
    for name in free:
        assert res.params[name] == pytest.approx(p[name], rel=1e-6)


def test_sign_of_coupling_not_identifiable():
    p = truth()
    data = clean_data(p)
    res = fit_spectrum(data, {**perturbed(p), "g": -1.1 * p["g"]}, ("g", "gamma_m", "scale"))
    assert res.g_abs == res.params["g"] > 0
    assert res.g_abs == pytest.approx(p["g"], rel=1e-6)


def test_objective_decreases_monotonically():
    p = truth()
    rng = np.random.default_rng(3)
    x = grid_for(p, 3)
    y = np.abs(model_beat(p, x)) * (1 + 0.01 * rng.standard_normal(x.size))
    res = fit_spectrum(SpectrumData(x, y), perturbed(p, 1.3), ("g", "gamma_m", "scale"))
    hist = np.array(res.cost_history)
    assert hist.size >= 2
    assert np.all(np.diff(hist) < 0)


def test_amplitude_rescaling_leaves_physics_unchanged():
    # C = 10 keeps gamma_m identifiable; at C = 142 its uncertainty exceeds its value
    p = truth(gamma_m=GAMMA_LOW)
    p["g"] = math.sqrt(10 * 2 * KAPPA_T * GAMMA_LOW)
    rng = np.random.default_rng(11)
    x = grid_for(p, 3)
    y = np.abs(model_beat(p, x)) * (1 + 0.01 * rng.standard_normal(x.size))
    free = ("g", "gamma_m", "scale")
    a = fit_spectrum(SpectrumData(x, y), perturbed(p), free)
    b = fit_spectrum(SpectrumData(x, 7.3 * y), {**perturbed(p), "scale": 7.3 * 1.1}, free)
    assert b.params["g"] == pytest.approx(a.params["g"], rel=1e-8)
    assert b.params["gamma_m"] == pytest.approx(a.params["gamma_m"], rel=1e-8)
    assert b.params["scale"] == pytest.approx(7.3 * a.params["scale"], rel=1e-8)


def test_noisy_recovery_small_batch():
    p = truth()
    results = monte_carlo(p, grid_for(p, 3), 20, noise=0.01, seed=5)
    errors = np.array([abs(r.g_abs / p["g"] - 1) for r in results])
    assert all(r.converged for r in results)
    assert np.percentile(errors, 90) < 0.02


def test_phase_data_tighten_coupling_estimate():
    p = truth()
    x = grid_for(p, 3)
    free = ("g", "gamma_m", "scale", "phase")
    amp_only = monte_carlo(p, x, 30, seed=2, free=("g", "gamma_m", "scale"))
    joint = monte_carlo(p, x, 30, seed=2, free=free, with_phase=True)
    var_amp = np.var([r.g_abs for r in amp_only])
    var_joint = np.var([r.g_abs for r in joint])
    assert var_joint < var_amp


def test_monte_carlo_reproducible_across_workers():
    p = truth()
    x = grid_for(p, 3, n=60)
    a = monte_carlo(p, x, 4, seed=9)
    b = monte_carlo(p, x, 4, seed=9, workers=4)
    assert [r.params for r in a] == [r.params for r in b]


def test_replica_streams_independent():
    a = replica_rng(1, 0).standard_normal(4)
    assert np.array_equal(a, replica_rng(1, 0).standard_normal(4))
    assert not np.array_equal(a, replica_rng(1, 1).standard_normal(4))
    assert not np.array_equal(a, replica_rng(2, 0).standard_normal(4))


def test_joint_fit_recovers_coupling_ratios():
    ratios = np.array([1.0, 1.4, 3.1, 4.2])
    base = 1.0e-2
    datasets, guesses, truths = [], [], []
    for r in ratios:
        p = truth(base * r, GAMMA_LOW)
        x = OMEGA_M + np.linspace(-20e3, 20e3, 201) * 2 * math.pi
        datasets.append(SpectrumData(x, np.abs(model_beat(p, x))))
        guesses.append(perturbed(p, 1.2, ("g", "kappa_t", "gamma_m")))
        truths.append(p)
    results = fit_joint(datasets, guesses, free=("g", "kappa_t", "gamma_m"))
    g = np.array([r.g_abs for r in results])
    assert np.allclose(g / g[0], ratios, rtol=0.05)
    # shared values come back identical for every dataset
    assert len({r.params["kappa_t"] for r in results}) == 1
    assert results[0].params["gamma_m"] == pytest.approx(GAMMA_LOW, rel=1e-4)


def test_joint_fit_needs_one_guess_per_set():
    p = truth()
    with pytest.raises(DomainError):
        fit_joint([clean_data(p)] * 2, [p])


# --- seeding ---


def test_seed_close_for_strong_dip():
    p = truth(gamma_m=GAMMA_LOW)
    p["g"] = math.sqrt(100 * 2 * KAPPA_T * GAMMA_LOW)  # C = 100
    x = grid_for(p, 25, n=801)
    guess = initial_guess(SpectrumData(x, np.abs(model_beat(p, x))), gamma_m=GAMMA_LOW)
    assert guess["branch"] == "dip"
    for name in ("g", "kappa_t", "omega_m", "scale"):
        assert guess[name] == pytest.approx(p[name], rel=0.3)


def test_flat_spectrum_refused():
    x = OMEGA_M + np.linspace(-1e4, 1e4, 101)
    with pytest.raises(SeedingError):
        initial_guess(SpectrumData(x, np.ones(x.size)))


def test_amplification_peak_picks_gain_branch():
    p = truth(1e-3, GAMMA_LOW, omega_m=OMEGA_M)
    x = -OMEGA_M + np.linspace(-20, 20, 401) * GAMMA_LOW
    beat = np.abs(model_beat(p, x))
    guess = initial_guess(SpectrumData(x, beat), gamma_m=GAMMA_LOW, kappa_t=KAPPA_T)
    assert guess["branch"] == "gain"
    assert guess["g"] == pytest.approx(p["g"], rel=0.3)


# --- argument checking and failure reporting ---


def test_too_few_points_for_free_parameters():
    p = truth()
    with pytest.raises(DomainError):
        fit_spectrum(clean_data(p, n=8), p, ("g", "gamma_m", "scale"))


@pytest.mark.parametrize("free", [(), ("g", "chirp")])
def test_free_mask_validated(free):
    p = truth()
    with pytest.raises(DomainError):
        fit_spectrum(clean_data(p), p, free)


def test_incomplete_guess_rejected():
    p = truth()
    del p["kappa_t"]
    with pytest.raises(DomainError):
        fit_spectrum(clean_data(truth()), p)


@pytest.mark.parametrize("field, value", [("modulus", [1.0, np.nan, 1.0]), ("detuning", [3.0, 2.0, 1.0])])
def test_bad_spectrum_rejected(field, value):
    kwargs = dict(detuning=[1.0, 2.0, 3.0], modulus=[1.0, 1.0, 1.0])
    kwargs[field] = value
    with pytest.raises(DomainError):
        SpectrumData(**kwargs)


def test_iteration_cap_reports_not_converged():
    res = levenberg_marquardt(lambda x: np.array([x[0] - 1.0, 10 * (x[1] - x[0] ** 2)]), np.array([-1.2, 1.0]), max_iter=2)
    assert not res.converged and res.iterations == 2
    full = levenberg_marquardt(lambda x: np.array([x[0] - 1.0, 10 * (x[1] - x[0] ** 2)]), np.array([-1.2, 1.0]))
    assert full.converged and np.allclose(full.x, [1.0, 1.0], atol=1e-6)


def test_singular_curvature_drops_uncertainties():
    # without phase data the phase offset has no effect on the residuals
    p = truth()
    res = fit_spectrum(clean_data(p), perturbed(p), ("g", "gamma_m", "scale", "phase"))
    assert res.uncertainties is None


def test_uncertainties_reported_for_well_posed_fit():
    p = truth()
    rng = np.random.default_rng(4)
    x = grid_for(p, 3)
    clean = np.abs(model_beat(p, x))
    data = SpectrumData(x, clean * (1 + 0.01 * rng.standard_normal(x.size)), sigma=0.01 * clean)
    res = fit_spectrum(data, perturbed(p), ("g", "gamma_m", "scale"))
    assert set(res.uncertainties) == {"g", "gamma_m", "scale"}
    assert 0 < res.uncertainties["g"] < 0.02 * p["g"]
    assert res.reduced_chi2 == pytest.approx(1.0, abs=0.3)


def test_parameter_names():
    assert set(PARAMS) == {"g", "kappa_t", "gamma_m", "scale", "phase", "omega_m"}
