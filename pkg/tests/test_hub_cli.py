import pathlib

import numpy as np
import pandas as pd
import pytest

from consumers.hub_cli import EXIT_INVALID, EXIT_OK, EXIT_STRUCTURE, main
from mixline.formats import SubmissionKind, parse_submission

DATA = pathlib.Path(__file__).resolve().parents[1].joinpath("data")
MODEL1 = str(DATA.joinpath("example_model1_mixture.csv"))
MODEL2 = str(DATA.joinpath("example_model2_mixture.csv"))
TRUTH = str(DATA.joinpath("example_truth.csv"))
BINS = str(DATA.joinpath("example_bins.csv"))
QUANTILES = str(DATA.joinpath("example_quantiles.csv"))


def read_scores(path: pathlib.Path) -> pd.DataFrame:
    return pd.read_csv(path)


#####################################
# validate
#####################################


def test_validate_ok(capsys):
    assert main(["validate", MODEL1]) == EXIT_OK
    assert "1 forecasts OK" in capsys.readouterr().out


def test_validate_missing_file_is_a_structure_error(tmp_path):
    assert main(["validate", str(tmp_path.joinpath("nope.csv"))]) == EXIT_STRUCTURE


def test_validate_invalid_content(tmp_path, capsys):
    path = tmp_path.joinpath("bad.csv")
    path.write_text(
        "location,target,type,unit,family,param1,param2,weight\nUS,1 wk ahead,dist,cases,Norm,0,-1,1\n",
        encoding="utf-8",
    )
    assert main(["validate", str(path)]) == EXIT_INVALID
    assert "row 2" in capsys.readouterr().err


def test_validate_component_limit(tmp_path):
    assert main(["validate", MODEL1, "--max-components", "1"]) == EXIT_INVALID


#####################################
# score
#####################################


@pytest.mark.parametrize("model, rule, expected, tol", [
    (MODEL1, "logs", 1.547238, 1e-6),
    (MODEL2, "logs", 1.848796, 1e-6),
    (MODEL1, "crps", 0.6348212, 1e-4),
    (MODEL2, "crps", 0.5306083, 1e-4),
])
def test_score_worked_example(tmp_path, model, rule, expected, tol):
    out = tmp_path.joinpath("scores.csv")
    assert main(["score", model, TRUTH, "--rule", rule, "--out", str(out)]) == EXIT_OK
    frame = read_scores(out)
    assert list(frame.columns) == ["location", "target", "unit", "rule", "score"]
    assert frame.loc[0, "score"] == pytest.approx(expected, abs=tol)


def test_score_quantiles_with_wis(tmp_path):
    out = tmp_path.joinpath("scores.csv")
    assert main(["score", QUANTILES, TRUTH, "--rule", "wis", "--out", str(out)]) == EXIT_OK
    assert read_scores(out).loc[0, "score"] > 0


def test_score_rejects_unsupported_rules(tmp_path):
    out = tmp_path.joinpath("scores.csv")
    assert main(["score", QUANTILES, TRUTH, "--rule", "logs", "--out", str(out)]) == EXIT_INVALID
    assert not out.exists()


def test_score_needs_truth_for_every_key(tmp_path):
    truth = tmp_path.joinpath("truth.csv")
    truth.write_text("location,target,unit,value\nCA,1 wk ahead,cases,3\n", encoding="utf-8")
    out = tmp_path.joinpath("scores.csv")
    assert main(["score", MODEL1, str(truth), "--rule", "crps", "--out", str(out)]) == EXIT_INVALID


#####################################
# ensemble
#####################################


def test_ensemble_with_cdf_weights_reproduces_the_worked_example(tmp_path):
    out = tmp_path.joinpath("ensemble.csv")
    weights = tmp_path.joinpath("weights.csv")
    code = main([
        "ensemble", MODEL1, MODEL2, "--weights", "pmp-cdf", "--truth", TRUTH,
        "--out", str(out), "--weights-out", str(weights),
    ])
    assert code == EXIT_OK
    np.testing.assert_allclose(pd.read_csv(weights)["weight"], [0.5286434, 0.4713566], atol=1e-6)

    scores = tmp_path.joinpath("scores.csv")
    assert main(["score", str(out), TRUTH, "--rule", "logs", "--out", str(scores)]) == EXIT_OK
    assert read_scores(scores).loc[0, "score"] == pytest.approx(1.678156, abs=1e-5)
    assert main(["score", str(out), TRUTH, "--rule", "crps", "--out", str(scores)]) == EXIT_OK
    assert read_scores(scores).loc[0, "score"] == pytest.approx(0.5486368, abs=1e-4)


@pytest.mark.parametrize("scheme", ["equal", "pmp", "em", "crps-min"])
def test_ensemble_weight_schemes(tmp_path, scheme):
    out = tmp_path.joinpath("ensemble.csv")
    assert main(["ensemble", MODEL1, MODEL2, "--weights", scheme, "--truth", TRUTH, "--out", str(out)]) == EXIT_OK
    table = parse_submission(out)
    assert table.kind is SubmissionKind.MIXTURE
    assert len(table) == 1


def test_ensemble_explicit_weights(tmp_path):
    out = tmp_path.joinpath("ensemble.csv")
    args = ["ensemble", MODEL1, MODEL2, "--weights", "explicit", "--out", str(out)]
    assert main(args + ["--weight-values", "0.25,0.75"]) == EXIT_OK
    assert main(args + ["--weight-values", "0.5"]) == EXIT_INVALID
    assert main(args) == EXIT_INVALID


def test_ensemble_needs_truth_for_estimated_weights(tmp_path):
    out = tmp_path.joinpath("ensemble.csv")
    assert main(["ensemble", MODEL1, MODEL2, "--weights", "pmp", "--out", str(out)]) == EXIT_INVALID


def test_ensemble_rejects_mixed_kinds(tmp_path):
    out = tmp_path.joinpath("ensemble.csv")
    assert main(["ensemble", MODEL1, QUANTILES, "--out", str(out)]) == EXIT_INVALID


def test_ensemble_of_quantiles_by_median(tmp_path):
    out = tmp_path.joinpath("ensemble.csv")
    assert main(["ensemble", QUANTILES, QUANTILES, "--method", "median", "--out", str(out)]) == EXIT_OK
    assert parse_submission(out) == parse_submission(QUANTILES)


#####################################
# fit and grid
#####################################


def test_fit_writes_mixtures_and_a_report(tmp_path):
    out = tmp_path.joinpath("fitted.csv")
    assert main(["fit", BINS, "--components", "2", "--sweep", "--out", str(out)]) == EXIT_OK
    table = parse_submission(out)
    assert table.kind is SubmissionKind.MIXTURE
    report = pd.read_csv(tmp_path.joinpath("fitted_report.csv"))
    assert sorted(report["components"]) == [1, 2]
    assert set(report["objective"]) == {"kld"}


def test_fit_rejects_mixture_input(tmp_path):
    assert main(["fit", MODEL1, "--out", str(tmp_path.joinpath("fitted.csv"))]) == EXIT_INVALID


def test_grid(tmp_path):
    out = tmp_path.joinpath("grid.csv")
    code = main([
        "grid", MODEL1, "--location", "US", "--target", "1 wk ahead", "--unit", "cases",
        "--points", "50", "--out", str(out),
    ])
    assert code == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["x", "pdf", "cdf"]
    assert len(frame) == 50
    assert np.all(np.diff(frame["cdf"]) >= 0)
    assert np.all(frame["pdf"] >= 0)


def test_grid_unknown_key(tmp_path):
    out = tmp_path.joinpath("grid.csv")
    code = main(["grid", MODEL1, "--location", "CA", "--target", "1 wk ahead", "--unit", "cases", "--out", str(out)])
    assert code == EXIT_INVALID


def test_grid_of_a_standard_normal(tmp_path):
    model = tmp_path.joinpath("normal.csv")
    model.write_text(
        "location,target,type,unit,family,param1,param2,weight\nUS,1 wk ahead,dist,cases,Norm,0,1,1\n",
        encoding="utf-8",
    )
    out = tmp_path.joinpath("grid.csv")
    args = ["grid", str(model), "--location", "US", "--target", "1 wk ahead", "--unit", "cases", "--out", str(out)]
    assert main(args + ["--points", "3"]) == EXIT_OK
    middle = pd.read_csv(out).iloc[1]
    assert middle["x"] == pytest.approx(0.0, abs=1e-9)
    assert middle["cdf"] == pytest.approx(0.5, abs=1e-9)

    assert main(args + ["--points", "400"]) == EXIT_OK
    frame = pd.read_csv(out)
    area = float(np.sum(frame["pdf"].iloc[:-1].to_numpy() * np.diff(frame["x"])))
    assert 0.999 <= area <= 1.001


def test_single_model_equal_ensemble_keeps_the_forecast(tmp_path):
    out = tmp_path.joinpath("ensemble.csv")
    assert main(["ensemble", MODEL1, "--weights", "equal", "--out", str(out)]) == EXIT_OK
    assert parse_submission(out) == parse_submission(MODEL1)
