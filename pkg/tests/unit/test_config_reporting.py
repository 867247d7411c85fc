import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from pinning_dynamics.config import (
    EXPERIMENT_NAMES,
    build_config,
    check_capacity,
    default_c_o,
    default_ell,
    load_experiments,
    zero_cap,
)
from pinning_dynamics.errors import CapacityError
from pinning_dynamics.reporting import Report, envelope, format_cell, plain, read_csv

EXPERIMENTS_FILE = Path(__file__).resolve().parents[2] / "experiments.json"


def test_derived_defaults():
    assert default_ell(3) == 1
    assert default_ell(10 ** 6) == 2
    assert default_c_o(0.5) == pytest.approx(4.0 / math.log(2.0))
    assert math.isinf(default_c_o(1.0))
    assert zero_cap(8, 0.5) == 1
    assert zero_cap(8, None) is None
    assert zero_cap(8, math.inf) is None


def test_capacity_errors_name_their_bound():
    check_capacity("L_max", 12, 12)
    with pytest.raises(CapacityError, match="L_max exceeded: requested 13, bound is 12"):
        check_capacity("L_max", 12, 13)


@pytest.mark.parametrize(
    "settings",
    [
        {"experiment": "qsd", "L": [0]},
        {"experiment": "qsd", "L": []},
        {"experiment": "qsd", "lambda": [-0.5]},
        {"experiment": "qsd", "runs": 0},
        {"experiment": "qsd", "horizon": -1.0},
        {"experiment": "qsd", "colour": "blue"},
        {"experiment": "annealing"},
    ],
)
def test_invalid_configs(settings):
    name = settings.pop("experiment")
    with pytest.raises(ValidationError):
        build_config(name, settings)


def test_overrides_and_aliases():
    config = build_config("qsd", {"lambda": [0.3], "L": [4, 6]}, {"L": [8], "lambda": None})
    assert config.L == [8]
    assert config.lam == [0.3]
    assert config.ell_for(8) == default_ell(8)
    assert config.c_o_for(0.3) == pytest.approx(default_c_o(0.3))


def test_content_hash_ignores_output_settings():
    base = build_config("qsd", {"L": [4]})
    moved = build_config("qsd", {"L": [4]}, {"jobs": 4, "out_dir": "elsewhere", "format": "csv", "timestamp": False})
    assert base.content_hash() == moved.content_hash()
    assert base.content_hash() != build_config("qsd", {"L": [6]}).content_hash()
    assert len(base.content_hash()) == 40
    materialized = base.materialized()
    assert "jobs" not in materialized
    assert materialized["ell_used"] == {"4": default_ell(4)}


def test_shipped_experiment_file_validates():
    experiments = load_experiments(EXPERIMENTS_FILE)
    assert set(experiments) == set(EXPERIMENT_NAMES)
    for name, settings in experiments.items():
        assert build_config(name, settings).experiment == name


def test_plain_values():
    assert plain(np.float64("nan")) == "nan"
    assert plain(-math.inf) == "-inf"
    assert plain(Fraction(1, 2)) == "1/2"
    assert plain({1: np.arange(3)}) == {"1": [0, 1, 2]}
    assert plain(np.bool_(True)) is True


def test_format_cell():
    assert format_cell(None) == ""
    assert format_cell(True) == "true"
    assert format_cell(np.int64(7)) == "7"
    assert format_cell(0.1) == "0.10000000000000001"
    assert float(format_cell(1.0 / 3.0)) == 1.0 / 3.0


def test_report_status_follows_asserted_checks_only():
    report = Report(build_config("qsd", {}))
    report.check("exact", True, 1.0)
    report.within("trend", 5.0, (0.0, 1.0), asserted=False)
    assert report.passed
    assert report.status_code == 200
    report.within("band", 5.0, (0.0, 1.0))
    assert not report.passed
    assert report.status_code == 417
    kinds = [a.to_dict()["kind"] for a in report.assertions]
    assert kinds == ["asserted", "reported", "asserted"]


def test_tables_keep_their_columns():
    report = Report(build_config("qsd", {}))
    report.add_rows("gaps", ["L", "gap"], [(4, 0.1)])
    report.add_rows("gaps", ["L", "gap"], [(6, 0.05)])
    assert report.tables["gaps"][1] == [(4, 0.1), (6, 0.05)]
    with pytest.raises(ValueError):
        report.add_rows("gaps", ["L"], [(8,)])


def test_report_files(tmp_path):
    report = Report(build_config("qsd", {"out_dir": str(tmp_path)}))
    report.add_rows("gaps", ["L", "gap", "note"], [(4, 0.25, None), (6, math.nan, "x")])
    report.results["value"] = Fraction(3, 4)
    written = report.write()
    assert sorted(Path(p).name for p in written) == ["qsd.json", "qsd_gaps.csv"]

    text = (tmp_path / "qsd_gaps.csv").read_text(encoding="utf-8")
    assert sum(line.startswith("# generated_at=") for line in text.splitlines()) == 1
    columns, rows = read_csv(tmp_path / "qsd_gaps.csv")
    assert columns == ["L", "gap", "note"]
    assert rows == [["4", "0.25", ""], ["6", "nan", "x"]]

    payload = json.loads((tmp_path / "qsd.json").read_text(encoding="utf-8"))
    assert payload["results"] == {"value": "3/4"}
    assert payload["config_hash"] == report.config.content_hash()
    assert "generated_at" in payload


def test_reports_without_timestamp_are_reproducible(tmp_path):
    config = build_config("qsd", {"out_dir": str(tmp_path), "timestamp": False})
    contents = []
    for _ in range(2):
        report = Report(config)
        report.add_rows("gaps", ["L", "gap"], [(4, 0.25)])
        report.write()
        contents.append(((tmp_path / "qsd.json").read_bytes(), (tmp_path / "qsd_gaps.csv").read_bytes()))
    assert contents[0] == contents[1]
    assert b"generated_at" not in contents[0][1]


def test_envelope():
    response = envelope(417, {"value": np.float64(0.5)})
    assert response["statusCode"] == 417
    assert json.loads(response["body"]) == {"value": 0.5}
