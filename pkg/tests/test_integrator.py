from dataclasses import replace

import numpy as np
import pytest

from gspde.initial import initial_condition
from gspde.integrator import (
    IntegratorConfig,
    StabilityError,
    drift,
    energy_residual,
    integrate_coupled,
    integrate_path,
    step_em,
)
from gspde.monitors import LadderSpec, uh_series
from gspde.noise import NoiseModel, WienerIncrement, apply_noise
from gspde.spectral import (
    convolve_direct,
    divergence_residual,
    galerkin_project,
    leray_project,
    make_field,
    random_field,
    resize,
    stokes_term,
    zero_field,
)

NO_NOISE = NoiseModel("additive", (0.0,) * 4)


def _cfg(u0, **kw):
    base = dict(dim=u0.dim, cutoff=u0.cutoff, dt=1e-3, t_end=0.05, nu=0.1, noise=NO_NOISE, initial_field=u0)
    base.update(kw)
    return IntegratorConfig(**base)


def test_drift_examples():
    assert drift(zero_field(2, 3), 0.1, 3).is_zero
    shear = make_field(2, 3, [((1, 0), (0, 1))])
    np.testing.assert_array_equal(drift(shear, 0.1, 3).coeffs, stokes_term(shear, 0.1).coeffs)
    u = make_field(2, 2, [((1, 0), (0, 1)), ((0, 1), (1, 0)), ((1, 1), (1, -1))])
    by_hand = stokes_term(u, 0.3) - leray_project(galerkin_project(resize(convolve_direct(u, u), 2), 2))
    np.testing.assert_allclose(drift(u, 0.3, 2).coeffs, by_hand.coeffs, atol=1e-15)


def test_step_examples():
    zero = zero_field(2, 4)
    assert step_em(zero, _cfg(zero), None).is_zero
    shear = make_field(2, 4, [((1, 0), (0, 1))])
    out = step_em(shear, _cfg(shear, dt=0.01, nu=0.1), None)
    np.testing.assert_allclose(out[(1, 0)], [0, 1 - 0.001], rtol=1e-15)
    add = NoiseModel.power_law("additive", 6, c0=0.5)
    dw = WienerIncrement(1e-3, np.arange(1, 7) * 0.01)
    got = step_em(zero, _cfg(zero, noise=add), dw)
    expected = zero
    for i in range(1, 7):
        expected = expected + apply_noise(add, zero, i) * dw.values[i - 1]
    np.testing.assert_allclose(got.coeffs, expected.coeffs, atol=1e-16)
    with pytest.raises(ValueError):
        step_em(zero, _cfg(zero, noise=add), WienerIncrement(0.5, np.zeros(6)))


def test_stability_guard():
    u0 = zero_field(2, 32)
    with pytest.raises(StabilityError, match="exponential"):
        _cfg(u0, dt=0.02, nu=0.5)
    cfg = _cfg(u0, dt=0.02, nu=0.5, scheme="exponential")
    assert cfg.stability_number > 1
    with pytest.raises(ValueError):
        _cfg(u0, dt=0.1, t_end=0.05)


def test_zero_trajectory_and_determinism():
    zero = zero_field(2, 4)
    rec = integrate_path(_cfg(zero))
    assert np.all(rec.norm_series == 0) and not rec.diverged
    assert len(rec.times) == rec.norm_series.shape[0] == 51
    u0 = initial_condition("analytic", 2, 8, seed=1)
    noise = NoiseModel.power_law("linear_multiplicative", 8, c0=0.2)
    a = integrate_path(_cfg(u0, noise=noise, seed=11))
    b = integrate_path(_cfg(u0, noise=noise, seed=11))
    c = integrate_path(_cfg(u0, noise=noise, seed=12))
    assert a.norm_series.tobytes() == b.norm_series.tobytes()
    assert a.norm_series.tobytes() != c.norm_series.tobytes()


def test_dissipation_dominated_norms_decrease():
    u0 = initial_condition("analytic", 2, 8, amplitude=0.5, seed=2)
    rec = integrate_path(_cfg(u0, nu=1.0, t_end=0.2))
    assert np.all(np.diff(rec.norm_series, axis=0) < 0)


def test_exponential_scheme_exact_for_stokes():
    shear = make_field(2, 4, [((2, 1), (1, -2))])
    cfg = _cfg(shear, scheme="exponential", nonlinear=False, dt=0.01, t_end=0.5)
    rec = integrate_path(cfg)
    np.testing.assert_allclose(rec.norm_series[:, 0], 10 * np.exp(-2 * 0.1 * 5 * rec.times), rtol=1e-12)


def test_coupled_levels():
    u0 = initial_condition("analytic", 2, 16, seed=3)
    noise = NoiseModel.power_law("linear_multiplicative", 8, c0=0.2)
    cfg = _cfg(u0, noise=noise, seed=5, t_end=0.1)
    r1, r2 = integrate_coupled([8, 8], cfg)
    assert r1.norm_series.tobytes() == r2.norm_series.tobytes()
    assert np.all(r2.diff_series[8] == 0)
    single = integrate_path(replace(cfg, cutoff=8))
    assert integrate_coupled([8], cfg)[0].norm_series.tobytes() == single.norm_series.tobytes()
    recs = integrate_coupled([4, 8, 16], cfg)
    assert all(np.array_equal(recs[0].increments, r.increments) for r in recs)
    lad = LadderSpec(2)
    d = []
    for a, b in ((0, 2), (1, 2)):
        diff = replace(recs[b], norm_series=recs[b].diff_series[recs[a].level])
        d.append(uh_series(diff, lad)[-1])
    assert d[1] < d[0]
    with pytest.raises(ValueError):
        integrate_coupled([8, 4], cfg)


def test_states_divergence_free_and_supported():
    u0 = initial_condition("power_law", 2, 12, decay=2.0, seed=4)
    noise = NoiseModel.power_law("additive", 16, c0=0.5)
    cfg = _cfg(u0, noise=noise, t_end=0.02, snapshot_every=1)
    (rec,) = integrate_coupled([6], cfg)
    for f in rec.fields:
        assert f.cutoff == 6
        assert divergence_residual(f) <= 1e-10


def test_energy_residual_examples():
    zero = zero_field(2, 3)
    rec = integrate_path(_cfg(zero, snapshot_every=1, t_end=0.01))
    assert np.all(energy_residual(rec, _cfg(zero)) == 0)
    shear = make_field(2, 3, [((1, 0), (0, 1))])
    cfg = _cfg(shear, dt=0.01, t_end=0.05, snapshot_every=1)
    rec = integrate_path(cfg)
    norms = rec.norm_series[:-1, 0]
    np.testing.assert_allclose(energy_residual(rec, cfg), 0.1**2 * 0.01**2 * norms, rtol=1e-9)
    with pytest.raises(ValueError):
        energy_residual(integrate_path(_cfg(shear)), cfg)


def test_divergence_is_marked_not_raised():
    u0 = random_field(2, 8, np.random.default_rng(0), energy=1e8)
    rec = integrate_path(_cfg(u0, nu=0.01, dt=0.01, t_end=1.0))
    assert rec.diverged
    i = rec.diverged_step
    assert np.all(np.isfinite(rec.norm_series[:i])) and np.all(np.isinf(rec.norm_series[i:]))
    assert rec.diverged_time() == pytest.approx(rec.times[i])
