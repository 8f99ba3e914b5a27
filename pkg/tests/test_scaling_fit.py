import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timescaling.scaling_fit import (
    auto_window,
    collapse_score,
    fit_power_law_offset,
    local_slopes,
    loglog_slope,
)


def test_loglog_exact():
    x = np.geomspace(1, 1e3, 20)
    fit = loglog_slope(x, 5 * x ** (-1 / 3))
    assert abs(fit.slope + 1 / 3) < 1e-12
    assert fit.intercept == pytest.approx(np.log(5), abs=1e-12)


def test_loglog_noisy(rng):
    x = np.geomspace(1, 1e3, 50)
    y = 5 * x ** (-1 / 3) * (1 + rng.uniform(-0.01, 0.01, 50))
    assert abs(loglog_slope(x, y).slope + 1 / 3) <= 0.01


def test_loglog_guards():
    x = np.arange(1.0, 7.0)
    y = np.ones(6)
    y[3] = 0.0
    with pytest.raises(ValueError, match="non-positive"):
        loglog_slope(x, y)
    assert loglog_slope(x, np.ones(6), (0, 3 + 1)).slope == pytest.approx(0.0)
    with pytest.raises(ValueError, match=">= 4"):
        loglog_slope(x, np.ones(6), (0, 3))


def test_offset_fit_synthetic(rng):
    t = np.geomspace(1, 1e3, 40)
    loss = (2.0 * t ** (-1 / 3) + 1.69) * (1 + 0.001 * rng.standard_normal(40))
    fit = fit_power_law_offset(t, loss)
    assert abs(fit.alpha_tau - 1 / 3) <= 0.02
    assert abs(fit.offset - 1.69) <= 0.02
    assert fit.offset < loss.min()
    assert fit.rms_residual >= 0 and np.isfinite(fit.stderr)
    assert set(fit.report()) == {"c_tau", "alpha_tau", "offset", "window", "residual", "stderr", "fittable"}


def test_offset_exact_zero_offset_data():
    t = np.geomspace(1, 1e3, 30)
    loss = 3 * t ** -0.5
    fit = fit_power_law_offset(t, loss, bootstrap=0)
    assert fit.offset == pytest.approx(0.0, abs=1e-9)
    assert abs(fit.alpha_tau + loglog_slope(t, loss).slope) < 1e-6


def test_offset_fit_guards():
    t = np.geomspace(1, 10, 7)
    with pytest.raises(ValueError, match=">= 8"):
        fit_power_law_offset(t, t ** -0.3)
    t = np.geomspace(1, 10, 10)
    with pytest.raises(ValueError, match="increasing"):
        fit_power_law_offset(t[::-1], t ** -0.3)
    with pytest.raises(ValueError, match="positive"):
        fit_power_law_offset(t, -(t ** -0.3))


def test_increasing_losses_flagged_unfittable():
    t = np.geomspace(1, 100, 20)
    fit = fit_power_law_offset(t, 1 + 0.1 * np.log(t), bootstrap=0)
    assert not fit.fittable


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 100.0))
def test_reparameterization_changes_only_coefficient(c):
    t = np.geomspace(1, 1e3, 30)
    loss = 2.0 * t ** (-1 / 3) + 0.5
    a = fit_power_law_offset(t, loss, bootstrap=0)
    b = fit_power_law_offset(c * t, loss, bootstrap=0)
    assert abs(a.alpha_tau - b.alpha_tau) < 1e-6
    assert abs(a.offset - b.offset) < 1e-6


def test_bootstrap_stderr_scales_with_points():
    r = np.random.default_rng(7)
    errs = []
    for k in (40, 160):
        t = np.geomspace(1, 1e3, k)
        loss = (2.0 * t ** (-1 / 3)) * (1 + 0.01 * r.standard_normal(k))
        errs.append(fit_power_law_offset(t, loss, bootstrap=200).stderr)
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.3)


def test_local_slopes_and_auto_window():
    x = np.geomspace(1, 1e4, 80)
    y = np.where(x < 100, x ** -1.0, 100 ** (-1 + 1 / 3) * x ** (-1 / 3))
    s = local_slopes(x, y)
    assert s[-1] == pytest.approx(-1 / 3)
    lo, hi = auto_window(x, y)
    assert hi == 80
    assert 95 <= x[lo] <= 130
    lo2, _ = auto_window(x, y, per_decade=8)
    assert 90 <= x[lo2] <= 200


def test_auto_window_skips_leading_zero():
    x = np.concatenate([[0.0], np.geomspace(1, 100, 20)])
    lo, hi = auto_window(x, x + 1.0)
    assert lo >= 1


def test_collapse_examples():
    t = np.geomspace(1, 100, 30)
    y = t ** -0.3
    assert collapse_score([(t, y), (t, y)]) == 0.0
    assert collapse_score([(t, y), (t, 2 * y)]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="overlap"):
        collapse_score([(t, y), (t * 1e3, y)])
    with pytest.raises(ValueError):
        collapse_score([(t, y)])
    with pytest.raises(ValueError):
        collapse_score([(t, y), (t, y)], x_axis="lr")
