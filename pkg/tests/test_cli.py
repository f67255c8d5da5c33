import pandas as pd
import pytest
import yaml

from lciclv.cli import MANIFEST_FILE, PREDICTIONS_FILE, TRUTH_FILE, build_parser, main, parse_arg_docs
from lciclv.data_io import RESPONDENTS_FILE, SCENARIOS_FILE
from lciclv.reliability import VALIDITY_FILE
from lciclv.results import ESTIMATES_FILE, FIT_FILE, MODEL_FILE, OPTIONS_FILE, POSTERIOR_FILE, SUMMARY_FILE, TRACE_FILE

from conftest import ICLV_THETA

QUICK_ESTIMATE = ["--draws", "10", "--starts", "1", "--max-iter", "30"]


@pytest.fixture
def simulated(tmp_path, iclv_spec):
    synth = tmp_path / "synth.yaml"
    synth.write_text(yaml.safe_dump({
        "spec": yaml.safe_load(iclv_spec.to_yaml()), "n": 40, "t": 10, "seed": 5, "theta": ICLV_THETA,
        "covariate_law": {"student": {"bernoulli": 0.4}},
    }), encoding="utf-8")
    out = tmp_path / "sim"
    assert main(["simulate", "--synth-config", str(synth), "--out", str(out)]) == 0
    return out


def read_manifest(directory)->dict:
    return yaml.safe_load((directory / MANIFEST_FILE).read_text(encoding="utf-8"))


def test_simulate_writes_the_dataset_and_truth(simulated):
    for name in (RESPONDENTS_FILE, SCENARIOS_FILE, MODEL_FILE, TRUTH_FILE):
        assert (simulated / name).exists()
    truth = pd.read_csv(simulated / TRUTH_FILE)
    assert list(truth.columns) == ["respondent_id", "class", "attitude"]
    assert len(truth) == 40
    manifest = read_manifest(simulated)
    assert manifest["command"] == "simulate"
    assert manifest["exit_status"] == 0


def test_validate(simulated, capsys):
    assert main(["validate", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated)]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_validate_names_the_offending_respondent(simulated, capsys):
    frame = pd.read_csv(simulated / RESPONDENTS_FILE, dtype={"respondent_id": str})
    frame.loc[3, "A1"] = 9
    frame.to_csv(simulated / RESPONDENTS_FILE, index=False)
    assert main(["validate", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated)]) == 1
    output = capsys.readouterr().out
    assert "1 violations" in output
    assert frame.loc[3, "respondent_id"] in output


def test_missing_config_is_an_error(simulated, tmp_path):
    assert main(["validate", "--config", str(tmp_path / "absent.yaml"), "--data-dir", str(simulated)]) == 1


def test_estimate_writes_a_bundle_and_manifest(simulated, tmp_path):
    out = tmp_path / "fit"
    status = main(["estimate", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated),
                   "--out", str(out), "--seed", "3"] + QUICK_ESTIMATE)
    assert status in (0, 2)
    for name in (ESTIMATES_FILE, FIT_FILE, POSTERIOR_FILE, MODEL_FILE, OPTIONS_FILE, SUMMARY_FILE):
        assert (out / name).exists()
    manifest = read_manifest(out)
    assert manifest["exit_status"] == status
    assert manifest["seed"] == 3 and manifest["draws"] == 10
    assert manifest["data_paths"] == [str(simulated)]
    options = yaml.safe_load((out / OPTIONS_FILE).read_text(encoding="utf-8"))
    assert options["draws"] == 10


def test_bundle_is_identical_across_thread_counts(tmp_path, iclv_spec):
    # 150 respondents fill three 64-respondent likelihood chunks
    synth = tmp_path / "synth.yaml"
    synth.write_text(yaml.safe_dump({
        "spec": yaml.safe_load(iclv_spec.to_yaml()), "n": 150, "t": 4, "seed": 8, "theta": ICLV_THETA,
        "covariate_law": {"student": {"bernoulli": 0.4}},
    }), encoding="utf-8")
    data = tmp_path / "sim"
    assert main(["simulate", "--synth-config", str(synth), "--out", str(data)]) == 0
    bundles = []
    for threads in ("1", "4"):
        out = tmp_path / f"threads-{threads}"
        status = main(["--threads", threads, "estimate", "--config", str(data / MODEL_FILE), "--data-dir", str(data),
                       "--out", str(out)] + QUICK_ESTIMATE)
        assert status in (0, 2)
        bundles.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != MANIFEST_FILE})
    assert TRACE_FILE in bundles[0] and ESTIMATES_FILE in bundles[0]
    assert sorted(bundles[0]) == sorted(bundles[1])
    for name, content in bundles[0].items():
        assert content == bundles[1][name], name


def test_predict_and_reliability_from_a_bundle(simulated, tmp_path):
    bundle = tmp_path / "fit"
    main(["estimate", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated), "--out", str(bundle)]
         + QUICK_ESTIMATE)
    assert main(["predict", "--bundle", str(bundle), "--data-dir", str(simulated), "--out", str(tmp_path / "pred")]) == 0
    predictions = pd.read_csv(tmp_path / "pred" / PREDICTIONS_FILE)
    assert len(predictions) == 400
    assert predictions["p_use"].between(0.0, 1.0).all()

    assert main(["reliability", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated),
                 "--out", str(tmp_path / "rel"), "--bundle", str(bundle)]) == 0
    validity = pd.read_csv(tmp_path / "rel" / VALIDITY_FILE)
    assert validity["construct"].tolist() == ["attitude"]


def test_sweep_over_one_class(simulated, tmp_path):
    out = tmp_path / "sweep"
    status = main(["sweep", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated), "--out", str(out),
                   "--max-classes", "1"] + QUICK_ESTIMATE)
    assert status in (0, 2)
    sweep = pd.read_csv(out / "sweep.csv")
    assert sweep["classes"].tolist() == [1]


def test_expand(tmp_path):
    respondents = tmp_path / "stated.csv"
    pd.DataFrame({"respondent_id": ["a", "b"], "wt_threshold": [5, 1], "tt_threshold": [5, 1]}).to_csv(respondents, index=False)
    assert main(["expand", "--respondents", str(respondents), "--out", str(tmp_path / "out")]) == 0
    scenarios = pd.read_csv(tmp_path / "out" / SCENARIOS_FILE, dtype={"respondent_id": str})
    assert len(scenarios) == 20
    assert scenarios.groupby("respondent_id")["chosen"].sum().to_dict() == {"a": 10, "b": 1}


def test_expand_rejects_values_off_the_grid(tmp_path):
    respondents = tmp_path / "stated.csv"
    pd.DataFrame({"respondent_id": ["a"], "wt_threshold": [2.5], "tt_threshold": [1]}).to_csv(respondents, index=False)
    assert main(["expand", "--respondents", str(respondents), "--out", str(tmp_path / "out")]) == 1


def test_parser_reads_flag_help_from_docstrings():
    docs = parse_arg_docs("Does things.\n\nArgs:\n    draws: Halton draws\n        per respondent\n    seed: seed\n")
    assert docs == {"draws": "Halton draws per respondent", "seed": "seed"}
    parser = build_parser()
    args = parser.parse_args(["estimate", "--config", "m.yaml", "--data-dir", "d", "--out", "o", "--prune"])
    assert args.prune is True and args.seed == 0 and args.draws is None


def test_empty_table_is_an_error_with_a_manifest(simulated, tmp_path):
    (simulated / RESPONDENTS_FILE).write_text("", encoding="utf-8")
    out = tmp_path / "fit"
    status = main(["estimate", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated),
                   "--out", str(out)] + QUICK_ESTIMATE)
    assert status == 1
    assert read_manifest(out)["exit_status"] == 1
    assert not (out / ESTIMATES_FILE).exists()


def test_expand_of_a_missing_file(tmp_path):
    out = tmp_path / "out"
    assert main(["expand", "--respondents", str(tmp_path / "absent.csv"), "--out", str(out)]) == 1
    assert read_manifest(out)["exit_status"] == 1


def test_unexpected_failure_still_writes_the_manifest(simulated, tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("disk on fire")
    monkeypatch.setattr("lciclv.cli.write_bundle", broken)
    out = tmp_path / "fit"
    status = main(["estimate", "--config", str(simulated / MODEL_FILE), "--data-dir", str(simulated),
                   "--out", str(out)] + QUICK_ESTIMATE)
    assert status == 1
    assert read_manifest(out)["exit_status"] == 1
