import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .common import LogColors, print_log
from .exceptions import ConfigError, DomainError, ReferentialError, RowValidationError, SchemaError
from .model_spec import ModelSpec, ScenarioGrid, dummy_name
from .schema import ChoiceScenario, Dataset, DatasetMeta, Respondent, ValidationReport

RESPONDENTS_FILE = "respondents.csv"
SCENARIOS_FILE = "scenarios.csv"
SCENARIO_INDEX_COLUMN = "scenario_index"
CHOSEN_COLUMN = "chosen"
SCENARIO_ID_COLUMN = "respondent_id"

PathLike = Union[str, Path]


def dataset_meta(spec:ModelSpec)->DatasetMeta:
    return DatasetMeta(
        covariate_names=spec.covariate_names,
        membership_names=list(spec.membership_covariates),
        indicator_names=spec.indicator_names,
        categories=spec.categories,
        attribute_names=list(spec.scenario_attributes),
        alternatives=spec.alternatives,
    )


def read_table(path:PathLike, id_column:str)->pd.DataFrame:
    """Reads one input CSV with the id column as text; unreadable tables raise ConfigError."""
    if not Path(path).exists():
        raise ConfigError(f"Input table not found: {path}")
    try:
        # round_trip keeps write_dataset -> load_dataset bit exact for reals
        return pd.read_csv(path, dtype={id_column: str}, float_precision="round_trip", encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise ConfigError(f"Input table is empty: {path}") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ConfigError(f"Input table {path} is not a readable UTF-8 CSV: {e}") from e
    except OSError as e:
        raise ConfigError(f"Cannot read input table {path}: {e}") from e


def _require_columns(frame:pd.DataFrame, columns:List[str], table:str):
    for column in columns:
        if column not in frame.columns:
            raise SchemaError(column, table)


def _is_missing(value)->bool:
    return value is None or (isinstance(value, float) and np.isnan(value)) or value is pd.NA


def _as_ordinal(value)->Optional[int]:
    if _is_missing(value):
        return None
    number = float(value)
    if not number.is_integer():
        raise ValueError(f"{value} is not an integer category")
    return int(number)


def load_dataset(respondent_table:PathLike, scenario_table:PathLike, spec:ModelSpec)->Dataset:
    """Reads the respondent and scenario CSV tables into a validated Dataset.

    Categorical covariates are dummy coded against their declared reference level.

    Raises:
        SchemaError: a column referenced by `spec` is absent
        RowValidationError: values out of range (every offending row is listed)
        ReferentialError: scenario rows for unknown respondents, or respondents without scenarios
    """
    id_column = spec.respondent_id_column
    respondents = read_table(respondent_table, id_column)
    scenarios = read_table(scenario_table, SCENARIO_ID_COLUMN)

    _require_columns(respondents, [id_column] + [c.name for c in spec.covariates] + spec.indicator_names, "respondent")
    _require_columns(scenarios, [SCENARIO_ID_COLUMN, SCENARIO_INDEX_COLUMN] + list(spec.scenario_attributes) + [CHOSEN_COLUMN], "scenario")

    report = ValidationReport()
    ids = respondents[id_column].tolist()
    known = set(ids)
    unknown = sorted(set(scenarios[SCENARIO_ID_COLUMN]) - known)
    if unknown:
        raise ReferentialError(f"Scenario table references unknown respondent ids: {unknown[:10]}")
    scenario_groups: Dict[str, pd.DataFrame] = {
        key: group.sort_values(SCENARIO_INDEX_COLUMN, kind="mergesort")
        for key, group in scenarios.groupby(SCENARIO_ID_COLUMN, sort=False)
    }
    without = [i for i in ids if i not in scenario_groups]
    if without:
        raise ReferentialError(f"{len(without)} respondents have no scenarios (first: {without[:10]})")

    covariate_names = spec.covariate_names
    membership_index = [covariate_names.index(n) for n in spec.membership_covariates]
    records = []
    for _, row in respondents.iterrows():
        respondent_id = row[id_column]
        x = _encode_covariates(row, spec, respondent_id, report)
        indicators = []
        for ind in spec.indicators:
            try:
                indicators.append(_as_ordinal(row[ind.name]))
            except (TypeError, ValueError) as e:
                report.add(respondent_id, ind.name, str(e))
                indicators.append(None)
        choice_rows = scenario_groups[respondent_id]
        panel = []
        for _, scenario in choice_rows.iterrows():
            attributes = [float(scenario[a]) for a in spec.scenario_attributes]
            try:
                chosen = _as_ordinal(scenario[CHOSEN_COLUMN])
            except (TypeError, ValueError) as e:
                report.add(respondent_id, CHOSEN_COLUMN, str(e))
                chosen = 0
            if chosen is None:
                report.add(respondent_id, CHOSEN_COLUMN, "missing choice")
                chosen = 0
            panel.append(ChoiceScenario(attributes=attributes, chosen=chosen))
        records.append(Respondent(id=respondent_id, x=x, z=[x[i] for i in membership_index],
                                  indicators=indicators, scenarios=panel))

    dataset = Dataset(respondents=records, meta=dataset_meta(spec))
    for violation in validate(dataset, spec).violations:
        report.violations.append(violation)
    if not report.is_clean:
        raise RowValidationError(report.summary(), report.violations)
    print_log(f"Loaded {dataset.N} respondents, {dataset.n_observations} observations", logging.INFO, LogColors.DARK_GRAY)
    return dataset


def _encode_covariates(row:pd.Series, spec:ModelSpec, respondent_id:str, report:ValidationReport)->List[float]:
    values = []
    for cov in spec.covariates:
        raw = row[cov.name]
        if cov.kind == "numeric":
            try:
                value = float(raw)
            except (TypeError, ValueError):
                value = float("nan")
            if not np.isfinite(value):
                report.add(respondent_id, cov.name, f"non-numeric or missing value {raw!r}")
                value = 0.0
            values.append(value)
        else:
            label = None if _is_missing(raw) else _level_label(raw)
            if label not in cov.levels:
                report.add(respondent_id, cov.name, f"unknown level {raw!r}, expected one of {cov.levels}")
            values.extend(1.0 if label == level else 0.0 for level in cov.dummy_levels())
    return values


def _level_label(raw)->str:
    # pandas reads "1" level codes as numbers
    if isinstance(raw, float) and raw.is_integer():
        return str(int(raw))
    return str(raw)


def validate(dataset:Dataset, spec:ModelSpec)->ValidationReport:
    """Lists every invariant violation; an empty report means the dataset conforms to `spec`."""
    report = ValidationReport()
    K, M, H, A, J = spec.K, spec.M, spec.H, len(spec.scenario_attributes), spec.J
    categories = spec.categories
    names = spec.indicator_names
    meta = dataset.meta
    if meta.covariate_names != spec.covariate_names:
        report.add(None, "meta.covariate_names", f"{meta.covariate_names} does not match the model {spec.covariate_names}")
    if meta.indicator_names != names:
        report.add(None, "meta.indicator_names", f"{meta.indicator_names} does not match the model {names}")
    if meta.alternatives != J:
        report.add(None, "meta.alternatives", f"{meta.alternatives} alternatives, the model declares {J}")
    seen = set()
    for r in dataset.respondents:
        if r.id in seen:
            report.add(r.id, "id", "duplicated respondent id")
        seen.add(r.id)
        if len(r.z) != M:
            report.add(r.id, "z", f"length {len(r.z)}, expected {M}")
        if len(r.x) != K:
            report.add(r.id, "x", f"length {len(r.x)}, expected {K}")
        if not all(np.isfinite(r.x)) or not all(np.isfinite(r.z)):
            report.add(r.id, "x", "non-finite covariate value")
        if len(r.indicators) != H:
            report.add(r.id, "indicators", f"length {len(r.indicators)}, expected {H}")
        else:
            for h, value in enumerate(r.indicators):
                if value is None:
                    if not spec.drop_missing_indicators:
                        report.add(r.id, names[h], "missing response (enable drop_missing_indicators to allow it)")
                elif not 1 <= value <= categories[h]:
                    report.add(r.id, names[h], f"value {value} outside 1..{categories[h]}")
        if r.T < 1:
            report.add(r.id, "scenarios", "respondent has no choice scenarios")
        for t, s in enumerate(r.scenarios):
            if len(s.attributes) != A:
                report.add(r.id, f"scenarios[{t}].attributes", f"length {len(s.attributes)}, expected {A}")
            if not 0 <= s.chosen < J:
                report.add(r.id, f"scenarios[{t}].chosen", f"alternative {s.chosen} outside 0..{J - 1}")
    return report


def expand_scenarios(stated_wt_threshold:int, stated_tt_threshold:int, grid:ScenarioGrid)->List[ChoiceScenario]:
    """One scenario per grid combo, coded 1 ("willing") when both attribute levels are within the stated thresholds.

    Thresholds are 0-based level indices into `grid`.
    """
    n_wt, n_tt = len(grid.wt_levels), len(grid.tt_levels)
    if not 0 <= stated_wt_threshold < n_wt:
        raise DomainError(f"waiting-time threshold index {stated_wt_threshold} outside 0..{n_wt - 1}")
    if not 0 <= stated_tt_threshold < n_tt:
        raise DomainError(f"travel-time threshold index {stated_tt_threshold} outside 0..{n_tt - 1}")
    return [
        ChoiceScenario(
            attributes=[grid.wt_levels[wt], grid.tt_levels[tt]],
            chosen=int(wt <= stated_wt_threshold and tt <= stated_tt_threshold),
        )
        for wt, tt in grid.combos
    ]


def _level_index(value, levels:List[float], column:str, respondent_id:str)->int:
    try:
        return [float(l) for l in levels].index(float(value))
    except (TypeError, ValueError):
        raise RowValidationError(f"respondent {respondent_id}: {column} value {value!r} is not one of the grid levels {levels}")


def expand_panel(respondent_frame:pd.DataFrame, grid:ScenarioGrid, wt_column:str, tt_column:str,
                 id_column:str="respondent_id")->pd.DataFrame:
    """Builds the scenario table from each respondent's stated thresholds (given as grid level values)."""
    _require_columns(respondent_frame, [id_column, wt_column, tt_column], "respondent")
    rows = []
    for _, row in respondent_frame.iterrows():
        respondent_id = str(row[id_column])
        wt = _level_index(row[wt_column], grid.wt_levels, wt_column, respondent_id)
        tt = _level_index(row[tt_column], grid.tt_levels, tt_column, respondent_id)
        for index, scenario in enumerate(expand_scenarios(wt, tt, grid), start=1):
            rows.append({
                SCENARIO_ID_COLUMN: respondent_id,
                SCENARIO_INDEX_COLUMN: index,
                grid.wt_name: scenario.attributes[0],
                grid.tt_name: scenario.attributes[1],
                CHOSEN_COLUMN: scenario.chosen,
            })
    return pd.DataFrame(rows, columns=[SCENARIO_ID_COLUMN, SCENARIO_INDEX_COLUMN, grid.wt_name, grid.tt_name, CHOSEN_COLUMN])


def respondent_frame(dataset:Dataset, spec:ModelSpec)->pd.DataFrame:
    """Respondent table in the load schema, with dummies decoded back to level labels."""
    names = spec.covariate_names
    rows = []
    for r in dataset.respondents:
        row = {spec.respondent_id_column: r.id}
        for cov in spec.covariates:
            if cov.kind == "numeric":
                row[cov.name] = r.x[names.index(cov.name)]
            else:
                level = cov.reference
                for candidate in cov.dummy_levels():
                    if r.x[names.index(dummy_name(cov.name, candidate))] == 1.0:
                        level = candidate
                row[cov.name] = level
        for name, value in zip(spec.indicator_names, r.indicators):
            row[name] = value
        rows.append(row)
    frame = pd.DataFrame(rows, columns=[spec.respondent_id_column] + [c.name for c in spec.covariates] + spec.indicator_names)
    for name in spec.indicator_names:
        frame[name] = frame[name].astype("Int64")
    return frame


def scenario_frame(dataset:Dataset, spec:ModelSpec)->pd.DataFrame:
    rows = []
    for r in dataset.respondents:
        for index, s in enumerate(r.scenarios, start=1):
            row = {SCENARIO_ID_COLUMN: r.id, SCENARIO_INDEX_COLUMN: index}
            row.update(zip(spec.scenario_attributes, s.attributes))
            row[CHOSEN_COLUMN] = s.chosen
            rows.append(row)
    return pd.DataFrame(rows, columns=[SCENARIO_ID_COLUMN, SCENARIO_INDEX_COLUMN] + list(spec.scenario_attributes) + [CHOSEN_COLUMN])


def write_dataset(dataset:Dataset, spec:ModelSpec, directory:PathLike):
    """Writes respondents.csv and scenarios.csv so that load_dataset reads back the same numbers."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    respondent_frame(dataset, spec).to_csv(directory / RESPONDENTS_FILE, index=False, encoding="utf-8")
    scenario_frame(dataset, spec).to_csv(directory / SCENARIOS_FILE, index=False, encoding="utf-8")


def load_dataset_dir(directory:PathLike, spec:ModelSpec)->Dataset:
    directory = Path(directory)
    return load_dataset(directory / RESPONDENTS_FILE, directory / SCENARIOS_FILE, spec)
