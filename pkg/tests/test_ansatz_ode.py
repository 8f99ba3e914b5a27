import math

import numpy as np
import pytest

from timescaling.ansatz_ode import (
    InsufficientWindow,
    OutOfDomain,
    UModel,
    closed_form_cube_root,
    closed_form_high_temp,
    integrate_beta,
    predict_intermediate_scaling,
)
from timescaling.thermo import ThermoConfig, fit_expansion_coeffs, thermo_curve


def test_linear_matches_exponential_closed_form():
    n, c = 128, 1.0
    tau_max = 5 * n / c
    run = integrate_beta(UModel.linear(), 0.1, 0.5, c, n, tau_max)
    beta, loss = closed_form_high_temp(0.1, 0.5, c, n, run.tau_grid[-1])
    assert run.tau_grid[-1] == pytest.approx(tau_max)
    assert abs(run.beta_of_tau[-1] / beta - 1) < 1e-6
    assert abs((0.5 - run.beta_of_tau[-1]) / (0.5 - beta) - 1) < 1e-6


def test_series_matches_cube_root():
    m = UModel.series(2.59, 2.7)
    run = integrate_beta(m, 6.0, 1e15, 1.0, 128, 1e6, step=1.0, record_every=1000)
    ref = closed_form_cube_root(6.0, 2.7, 1.0, 128, run.tau_grid)
    assert np.max(np.abs(run.beta_of_tau / ref - 1)) < 1e-6


def test_zero_rate_is_constant():
    run = integrate_beta(UModel.linear(), 0.2, 0.5, 0.0, 128, 10.0, step=0.5)
    assert np.all(run.beta_of_tau == 0.2)


def test_closed_form_examples():
    b, loss = closed_form_high_temp(0.1, 0.5, 1.0, 128, 0.0)
    assert b == pytest.approx(0.1, abs=1e-15) and loss == pytest.approx(0.5 * 0.4 ** 2)
    b, loss = closed_form_high_temp(0.1, 0.5, 1.0, 128, 1e6)
    assert b == pytest.approx(0.5) and loss == pytest.approx(0.0)
    b, _ = closed_form_high_temp(0.0, 0.5, 1.0, 128, 128.0)
    assert 0.5 - b == pytest.approx(0.5 * math.exp(-1), abs=1e-12)
    assert 0.5 - b == pytest.approx(0.1839, abs=1e-4)


def test_series_floor_enforced():
    m = UModel.series(2.59, 2.7)
    with pytest.raises(OutOfDomain):
        integrate_beta(m, 5.0, 100.0, 1.0, 128, 10.0)
    with pytest.raises(OutOfDomain):
        m.U(1.0)
    with pytest.raises(ValueError):
        integrate_beta(m, -1.0, 100.0, 1.0, 128, 10.0)
    with pytest.raises(ValueError):
        integrate_beta(m, 6.0, 100.0, 1.0, 128, 0.0)


def test_step_halving_convergence():
    for model, b0, bs, T in ((UModel.linear(), 0.0, 0.5, 640.0),
                             (UModel.series(2.59, 2.7), 6.0, 1e9, 1e5)):
        a = integrate_beta(model, b0, bs, 1.0, 128, T, step=T / 2000).beta_of_tau[-1]
        b = integrate_beta(model, b0, bs, 1.0, 128, T, step=T / 4000).beta_of_tau[-1]
        assert abs(a / b - 1) < 1e-8


def test_monotone_and_never_exceeds_target():
    run = integrate_beta(UModel.linear(), 0.0, 0.5, 1.0, 128, 1e5, step=1.0)
    assert np.all(np.diff(run.beta_of_tau) >= 0)
    assert run.beta_of_tau.max() <= 0.5
    # early halt once within 1e-9 of the target
    assert run.tau_grid[-1] < 1e5


def test_series_intermediate_exponents():
    m = UModel.series(2.59, 2.7)
    run = integrate_beta(m, 5.2, 1e9, 1.0, 128, 1e9, step=1e3, record_every=10)
    pred = predict_intermediate_scaling(run)
    assert math.log10(pred.tau_window[1] / pred.tau_window[0]) >= 4
    assert abs(pred.beta_exponent - 1 / 3) <= 0.005
    assert abs(pred.loss_exponent + 1 / 3) <= 0.005


def test_window_near_target_rejected():
    m = UModel.series(2.59, 2.7)
    run = integrate_beta(m, 5.5, 6.0, 1.0, 128, 1e4)
    with pytest.raises(InsufficientWindow):
        predict_intermediate_scaling(run)


@pytest.fixture(scope="module")
def tabulated577():
    grid = np.concatenate([np.linspace(0, 20, 201)[:-1], np.geomspace(20, 577.35, 120)])
    curve = thermo_curve(577.35, 128, ThermoConfig(n=128, num_energy_sets=4, batch_per_set=1024), grid)
    return UModel.tabulated(curve)


def test_tabulated_loss_exponent(tabulated577):
    run = integrate_beta(tabulated577, 0.0, 577.35, 1.0, 128, 1e9, step=2e3, record_every=5)
    pred = predict_intermediate_scaling(run)
    assert -0.38 <= pred.loss_exponent <= -0.28


@pytest.mark.xfail(strict=True, reason=(
    "Monte-Carlo U(beta) - U(beta*) decays like beta^-2.23 on this window, so a single-c2 "
    "series drifts about 6.5% from the tabulated trajectory by beta* / 10"))
def test_tabulated_agrees_with_series(tabulated577):
    fit = fit_expansion_coeffs(tabulated577.curve, (8.0, 577.35))
    m = UModel.series(fit.c0, fit.c2)
    b0 = 3 * fit.c0
    kw = dict(step=100.0, record_every=10)
    tab = integrate_beta(tabulated577, b0, 577.35, 1.0, 128, 2e6, **kw)
    ser = integrate_beta(m, b0, 577.35, 1.0, 128, 2e6, **kw)
    sel = tab.beta_of_tau <= 577.35 / 10
    assert np.max(np.abs(tab.beta_of_tau[sel] / ser.beta_of_tau[sel] - 1)) < 0.02


def test_tabulated_forbids_extrapolation(tabulated577):
    with pytest.raises(OutOfDomain):
        tabulated577.U(600.0)


def test_ode_csv(tmp_path):
    run = integrate_beta(UModel.linear(), 0.0, 0.5, 1.0, 128, 10.0, step=1.0)
    lines = run.to_csv(tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "tau,beta,loss_model"
    assert len(lines) == 12


def test_fit_c_eff_recovers_rate():
    from timescaling.ansatz_ode import fit_c_eff

    true = integrate_beta(UModel.linear(), 0.0, 0.5, 2.5, 128, 400.0, step=0.1, record_every=50)
    c = fit_c_eff(UModel.linear(), 0.0, 0.5, 128, true.tau_grid, true.beta_of_tau)
    assert c == pytest.approx(2.5, rel=1e-3)
