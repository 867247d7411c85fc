import numpy as np
import pytest

from pinning_dynamics.errors import InsufficientDataError, InvalidInputError
from pinning_dynamics.experiments.scaling import fit_loglog, load_points, scaling_report
from pinning_dynamics.reporting import write_csv

LENGTHS = [8, 16, 32, 64, 128]


def test_power_law_slope_is_recovered():
    gaps = [3.0 * L ** -2.5 for L in LENGTHS]
    fit = fit_loglog(LENGTHS, gaps, (-2.6, -2.4))
    assert fit.slope == pytest.approx(-2.5)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.passed
    assert "inside" in fit.message


def test_constant_series_fails_the_band():
    fit = fit_loglog(LENGTHS, [0.1] * 5, (-2.6, -2.4))
    assert fit.slope == 0.0
    assert fit.passed is False
    assert "outside [-2.6, -2.4]" in fit.message
    assert fit_loglog(LENGTHS, [0.1] * 5).passed is None


def test_fit_input_errors():
    with pytest.raises(InsufficientDataError):
        fit_loglog(LENGTHS[:4], [1.0] * 4)
    with pytest.raises(InsufficientDataError):
        fit_loglog([8] * 5, [1.0, 2.0, 3.0, 4.0, 5.0])
    with pytest.raises(InvalidInputError):
        fit_loglog(LENGTHS, [1.0, 2.0, 0.0, 4.0, 5.0])
    with pytest.raises(InvalidInputError):
        fit_loglog(LENGTHS, [1.0] * 4)


def test_points_are_filtered_from_result_files(tmp_path):
    path = tmp_path / "gaps.csv"
    rows = [(L, 2.0 * L ** -2.5, "exact") for L in LENGTHS]
    rows += [(L, float(L), "noise") for L in LENGTHS]
    rows += [(256, None, "exact"), (512, np.nan, "exact")]
    write_csv(path, ["L", "gap", "method"], rows, "2026-01-01T00:00:00+00:00", "0" * 40)
    xs, ys = load_points([path], where={"method": "exact"})
    assert xs == [float(L) for L in LENGTHS]
    fit = scaling_report([path], (-2.6, -2.4), where={"method": "exact"})
    assert fit.passed
    with pytest.raises(InvalidInputError):
        load_points([path], y_column="t_rel")
