import numpy as np
import pandas as pd
import pytest

from lciclv import (ConfigError, Dataset, DomainError, ModelSpec, ReferentialError, RowValidationError, SchemaError,
                    ScenarioGrid, expand_panel, expand_scenarios, load_dataset_dir, validate)
from lciclv.data_io import RESPONDENTS_FILE, SCENARIOS_FILE, write_dataset

from conftest import iclv_spec_dict


def test_written_dataset_loads_back_unchanged(iclv_spec, iclv_dataset, data_dir):
    loaded = load_dataset_dir(data_dir, iclv_spec)
    assert [r.id for r in loaded.respondents] == [r.id for r in iclv_dataset.respondents]
    assert np.array_equal(loaded.arrays().x, iclv_dataset.arrays().x)
    assert np.array_equal(loaded.arrays().indicators, iclv_dataset.arrays().indicators)
    assert np.array_equal(loaded.arrays().chosen, iclv_dataset.arrays().chosen)
    assert np.array_equal(loaded.arrays().attributes, iclv_dataset.arrays().attributes)
    assert loaded.n_observations == 40 * 10


def test_out_of_range_indicator_is_one_violation(iclv_spec, iclv_dataset):
    first = iclv_dataset.respondents[0]
    bad = first.copy(update={"indicators": [6] + list(first.indicators[1:])})
    dataset = Dataset(respondents=[bad] + iclv_dataset.respondents[1:], meta=iclv_dataset.meta)
    report = validate(dataset, iclv_spec)
    assert len(report) == 1
    assert report.violations[0].respondent_id == first.id
    assert report.violations[0].field == "A1"
    assert validate(iclv_dataset, iclv_spec).is_clean


def test_load_lists_every_offending_row(iclv_spec, data_dir):
    frame = pd.read_csv(data_dir / RESPONDENTS_FILE, dtype={"respondent_id": str})
    frame.loc[[2, 5], "A2"] = 9
    frame.to_csv(data_dir / RESPONDENTS_FILE, index=False)
    with pytest.raises(RowValidationError) as info:
        load_dataset_dir(data_dir, iclv_spec)
    assert [v.respondent_id for v in info.value.violations] == [frame.loc[2, "respondent_id"], frame.loc[5, "respondent_id"]]


def test_choice_outside_the_alternatives(iclv_spec, data_dir):
    scenarios = pd.read_csv(data_dir / SCENARIOS_FILE, dtype={"respondent_id": str})
    scenarios.loc[0, "chosen"] = 2
    scenarios.to_csv(data_dir / SCENARIOS_FILE, index=False)
    with pytest.raises(RowValidationError) as info:
        load_dataset_dir(data_dir, iclv_spec)
    assert "outside 0..1" in str(info.value)


def test_duplicate_ids_are_reported_once(iclv_spec, iclv_dataset):
    dataset = Dataset(respondents=iclv_dataset.respondents + [iclv_dataset.respondents[0]], meta=iclv_dataset.meta)
    report = validate(dataset, iclv_spec)
    assert [v.field for v in report.violations] == ["id"]


def test_missing_column(iclv_spec, data_dir):
    frame = pd.read_csv(data_dir / RESPONDENTS_FILE, dtype={"respondent_id": str})
    frame.drop(columns=["income"]).to_csv(data_dir / RESPONDENTS_FILE, index=False)
    with pytest.raises(SchemaError) as info:
        load_dataset_dir(data_dir, iclv_spec)
    assert info.value.column == "income"


def test_referential_integrity(iclv_spec, data_dir):
    scenarios = pd.read_csv(data_dir / SCENARIOS_FILE, dtype={"respondent_id": str})
    scenarios.loc[0, "respondent_id"] = "nobody"
    scenarios.to_csv(data_dir / SCENARIOS_FILE, index=False)
    with pytest.raises(ReferentialError):
        load_dataset_dir(data_dir, iclv_spec)


def test_respondent_without_scenarios(iclv_spec, data_dir):
    scenarios = pd.read_csv(data_dir / SCENARIOS_FILE, dtype={"respondent_id": str})
    scenarios[scenarios["respondent_id"] != "R00003"].to_csv(data_dir / SCENARIOS_FILE, index=False)
    with pytest.raises(ReferentialError):
        load_dataset_dir(data_dir, iclv_spec)


def test_missing_table_is_a_config_error(iclv_spec, tmp_path):
    with pytest.raises(ConfigError):
        load_dataset_dir(tmp_path, iclv_spec)


@pytest.mark.parametrize("content", [b"", b"respondent_id,income\n\xff\xfe,1\n"])
def test_unreadable_table_is_a_config_error(iclv_spec, data_dir, content):
    (data_dir / RESPONDENTS_FILE).write_bytes(content)
    with pytest.raises(ConfigError) as info:
        load_dataset_dir(data_dir, iclv_spec)
    assert RESPONDENTS_FILE in str(info.value)


def test_missing_indicators_need_the_drop_option(iclv_spec, data_dir):
    frame = pd.read_csv(data_dir / RESPONDENTS_FILE, dtype={"respondent_id": str})
    frame.loc[0, "A3"] = np.nan
    frame.to_csv(data_dir / RESPONDENTS_FILE, index=False)
    with pytest.raises(RowValidationError):
        load_dataset_dir(data_dir, iclv_spec)
    lenient = ModelSpec.from_dict(iclv_spec_dict(drop_missing_indicators=True))
    dataset = load_dataset_dir(data_dir, lenient)
    assert dataset.respondents[0].indicators[2] is None
    assert not dataset.arrays().observed[0, 2]


def test_categorical_levels_are_decoded_and_validated(tmp_path):
    data = iclv_spec_dict()
    data["covariates"] = [{"name": "income"}, {"name": "student"},
                          {"name": "age", "kind": "categorical", "levels": [1, 2, 3]}]
    spec = ModelSpec.from_dict(data)
    respondents = pd.DataFrame({"respondent_id": ["a", "b", "c"], "income": [0.1, 0.2, 0.3], "student": [0, 1, 0],
                                "age": [1, 3, 2], "A1": [1, 2, 3], "A2": [3, 4, 5], "A3": [5, 5, 1]})
    scenarios = pd.DataFrame({"respondent_id": ["a", "b", "c"], "scenario_index": [1, 1, 1],
                              "wt": [1.0, 2.0, 3.0], "tt": [1.0, 1.0, 2.0], "chosen": [1, 0, 1]})
    respondents.to_csv(tmp_path / RESPONDENTS_FILE, index=False)
    scenarios.to_csv(tmp_path / SCENARIOS_FILE, index=False)
    dataset = load_dataset_dir(tmp_path, spec)
    assert dataset.respondents[1].x == [0.2, 1.0, 0.0, 1.0]
    assert dataset.respondents[0].x[2:] == [0.0, 0.0]

    respondents.loc[2, "age"] = 7
    respondents.to_csv(tmp_path / RESPONDENTS_FILE, index=False)
    with pytest.raises(RowValidationError) as info:
        load_dataset_dir(tmp_path, spec)
    assert info.value.violations[0].respondent_id == "c"


class TestScenarioExpansion:

    def test_widest_thresholds_accept_everything(self):
        scenarios = expand_scenarios(4, 4, ScenarioGrid())
        assert len(scenarios) == 10
        assert all(s.chosen == 1 for s in scenarios)

    def test_tightest_thresholds_accept_only_the_best_combo(self):
        scenarios = expand_scenarios(0, 0, ScenarioGrid())
        assert [s.attributes for s in scenarios if s.chosen] == [[1.0, 1.0]]

    def test_mixed_thresholds(self):
        scenarios = expand_scenarios(2, 1, ScenarioGrid())
        accepted = sorted((s.attributes[0], s.attributes[1]) for s in scenarios if s.chosen)
        assert accepted == [(1.0, 1.0), (1.0, 2.0), (2.0, 2.0)]

    def test_threshold_outside_the_grid(self):
        with pytest.raises(DomainError):
            expand_scenarios(5, 0, ScenarioGrid())

    def test_panel_has_ten_rows_per_respondent(self):
        rng = np.random.default_rng(0)
        frame = pd.DataFrame({"respondent_id": [f"r{i}" for i in range(543)],
                              "wt_threshold": rng.integers(1, 6, 543).astype(float),
                              "tt_threshold": rng.integers(1, 6, 543).astype(float)})
        panel = expand_panel(frame, ScenarioGrid(), "wt_threshold", "tt_threshold")
        assert len(panel) == 5430
        assert list(panel.columns) == ["respondent_id", "scenario_index", "wt", "tt", "chosen"]
        assert panel.groupby("respondent_id")["scenario_index"].max().eq(10).all()

    def test_threshold_value_must_be_a_grid_level(self):
        frame = pd.DataFrame({"respondent_id": ["x"], "wt_threshold": [2.5], "tt_threshold": [1.0]})
        with pytest.raises(RowValidationError):
            expand_panel(frame, ScenarioGrid(), "wt_threshold", "tt_threshold")


def test_write_dataset_creates_both_tables(tmp_path, logit_spec, logit_dataset):
    write_dataset(logit_dataset, logit_spec, tmp_path / "out")
    assert (tmp_path / "out" / RESPONDENTS_FILE).exists()
    assert len(pd.read_csv(tmp_path / "out" / SCENARIOS_FILE)) == logit_dataset.n_observations
