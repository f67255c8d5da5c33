"""Batch command line: `lciclv <command> [flags]`.

Commands are plain functions registered with @command. The argparse sub-parser of each one is built
from its signature (flag names, types, defaults) and the Args section of its docstring (help texts).
A command returns its exit code: 0 success, 1 error, 2 completed with warnings (non-convergence).
"""
import argparse
import inspect
import logging
import os
import re
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union, get_args, get_origin

import pandas as pd
import yaml

import pydantic
if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel
else:
    from pydantic.v1 import BaseModel

from . import __version__
from .common import GlobalSettings, as_plain_dict, print_log
from .data_io import SCENARIOS_FILE, expand_panel, load_dataset_dir, read_table, validate, write_dataset
from .estimation import class_sweep, estimate, make_draws, predict, prediction_frame, prune_insignificant
from .exceptions import LcIclvError, RowValidationError
from .model_spec import ModelSpec, ScenarioGrid
from .options import EstimationOptions
from .pydantic_helpers import parse_config
from .reliability import reliability_report, write_reliability
from .results import MODEL_FILE, SWEEP_FILE, TRACE_FILE, format_summary, read_bundle, write_bundle
from .synth import SynthConfig, simulate_dataset
from .trace import TraceContext

MANIFEST_FILE = "manifest.yaml"
CLI_SETTINGS = "cli"
PREDICTIONS_FILE = "predictions.csv"
TRUTH_FILE = "truth.csv"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNINGS = 2

COMMANDS: Dict[str, Callable[..., int]] = {}


class RunManifest(BaseModel):
    command: str
    config_path: Optional[str] = None
    data_paths: List[str] = []
    seed: Optional[int] = None
    draws: Optional[int] = None
    output_dir: Optional[str] = None
    tool_version: str = __version__
    started_at: str
    finished_at: Optional[str] = None
    exit_status: Optional[int] = None

    def write(self, directory:Union[str, Path]):
        """Writes manifest.yaml through a temporary file and a rename, so readers never see half a manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        handle, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-", suffix=".yaml")
        with os.fdopen(handle, "w", encoding="utf-8") as f:
            f.write(yaml.safe_dump(as_plain_dict(self.dict()), sort_keys=False))
        os.replace(tmp, directory / MANIFEST_FILE)


def _now()->str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# command registry

def parse_description(docstring:str)->str:
    """First paragraph of a docstring."""
    description = []
    for line in (docstring or "").splitlines():
        line = line.strip()
        if line:
            description.append(line)
        elif description:
            break
    return " ".join(description)


def parse_arg_docs(docstring:str)->Dict[str, str]:
    """`name: text` entries of the docstring's Args section."""
    match = re.search(r"(^|\n)\s*(Args|Arguments)\s*:?\s*\n", docstring or "")
    if not match:
        return {}
    section = docstring[match.end():]
    end = re.search(r"\n\s*([A-Z][a-z]+)\s*:\s*\n", section)
    if end:
        section = section[:end.start()]
    params = {}
    last = None
    for line in section.splitlines():
        found = re.match(r"\s+(?P<name>[a-zA-Z_][a-zA-Z0-9_]*)\s*(\([^)]*\))?\s*:\s*(?P<text>.*)$", line)
        if found:
            last = found.group("name")
            params[last] = found.group("text").strip()
        elif last and line.strip():
            params[last] += " " + line.strip()
    return params


def _plain_type(annotation):
    if get_origin(annotation) is Union:
        args = [a for a in get_args(annotation) if a is not type(None)]
        return args[0] if args else str
    return annotation


def command(func:Callable=None, *, name:str=None):
    """Registers `func` as a sub-command named after it, without the cmd_ prefix."""
    def decorator(func):
        COMMANDS[name or func.__name__.removeprefix("cmd_").replace("_", "-")] = func
        return func
    if func:
        return decorator(func)
    return decorator


def build_parser()->argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lciclv", description="Latent class ICLV estimation by maximum simulated likelihood")
    parser.add_argument("--threads", type=int, default=None,
                        help="respondent-level worker threads (default LCICLV_THREADS or the number of cores)")
    parser.add_argument("--verbose", action="store_true", help="log everything, including optimizer iterations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command_name, func in COMMANDS.items():
        docs = inspect.getdoc(func) or ""
        arg_docs = parse_arg_docs(docs)
        description = parse_description(docs)
        sub_parser = sub.add_parser(command_name, help=description, description=description)
        for param in inspect.signature(func).parameters.values():
            flag = "--" + param.name.replace("_", "-")
            kind = _plain_type(param.annotation)
            help_text = arg_docs.get(param.name)
            required = param.default is inspect.Parameter.empty
            default = None if required else param.default
            if kind is bool:
                sub_parser.add_argument(flag, dest=param.name, action="store_true", default=bool(default), help=help_text)
            else:
                sub_parser.add_argument(flag, dest=param.name, type=kind if kind in (int, float, str) else str,
                                        required=required, default=default, help=help_text)
    return parser


def main(argv:List[str]=None)->int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    threads = args.pop("threads")
    verbose = args.pop("verbose")
    command_name = args.pop("command")
    GlobalSettings.get_current_settings()
    previous_settings = GlobalSettings.settings_type
    GlobalSettings.define_settings(settings_type=CLI_SETTINGS, threads=threads, verbose=verbose or None,
                                   logging_level=logging.DEBUG if verbose else logging.INFO)
    GlobalSettings.switch_settings(CLI_SETTINGS)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s: %(message)s")

    out = args.get("out")
    manifest = RunManifest(
        command=command_name,
        config_path=args.get("config") or args.get("synth_config") or args.get("bundle"),
        data_paths=[p for p in (args.get("data_dir"), args.get("respondents")) if p],
        seed=args.get("seed"), draws=args.get("draws"), output_dir=out, started_at=_now())
    try:
        status = COMMANDS[command_name](**args)
    except LcIclvError as e:
        print_log(str(e), logging.ERROR)
        status = EXIT_ERROR
    except Exception as e:
        logging.getLogger(__name__).debug("unexpected failure", exc_info=True)
        print_log(f"{command_name} failed: {type(e).__name__}: {e}", logging.ERROR)
        status = EXIT_ERROR
    finally:
        GlobalSettings.switch_settings(previous_settings)
    if out:
        manifest.finished_at = _now()
        manifest.exit_status = status
        manifest.write(out)
    return status


# commands

def _options(draws:Optional[int], seed:int, starts:int=None, se_method:str=None, scramble:bool=False,
             max_iter:int=None)->EstimationOptions:
    changes = {"draws": draws, "seed": seed, "scramble": scramble}
    if starts is not None:
        changes["starts"] = starts
    if se_method is not None:
        changes["se_method"] = se_method
    if max_iter is not None:
        changes["max_iter"] = max_iter
    return parse_config(changes, EstimationOptions, source="estimation options")


def _fresh_trace(out:Path)->Path:
    path = out / TRACE_FILE
    if path.exists():
        path.unlink()
    return path


@command
def cmd_validate(config:str, data_dir:str)->int:
    """Checks the respondent and scenario tables against a model spec.

    Args:
        config: model spec YAML
        data_dir: directory holding respondents.csv and scenarios.csv
    """
    spec = ModelSpec.from_yaml(config)
    try:
        dataset = load_dataset_dir(data_dir, spec)
    except RowValidationError as e:
        print(e.message)
        return EXIT_ERROR
    report = validate(dataset, spec)
    print(report.summary())
    return EXIT_OK if report.is_clean else EXIT_ERROR


@command
def cmd_estimate(config:str, data_dir:str, out:str, classes:int=None, draws:int=None, seed:int=0, starts:int=None,
                 se_method:str=None, max_iter:int=None, scramble:bool=False, prune:bool=False)->int:
    """Estimates the model and writes the result bundle.

    Args:
        config: model spec YAML
        data_dir: directory holding respondents.csv and scenarios.csv
        out: result bundle directory
        classes: number of latent classes (overrides the model spec)
        draws: Halton draws per respondent (overrides the model spec)
        seed: seed of the start jitter and of scrambled draws
        starts: number of optimizer starts
        se_method: hessian or bhhh
        max_iter: iteration cap per start
        scramble: randomly permute Halton digits
        prune: drop insignificant observed utility covariates one at a time and refit
    """
    spec = ModelSpec.from_yaml(config)
    if classes:
        spec = spec.with_classes(classes)
    dataset = load_dataset_dir(data_dir, spec)
    options = _options(draws, seed, starts, se_method, scramble, max_iter)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with TraceContext(path=_fresh_trace(out), echo=GlobalSettings.get_current_settings().verbose):
        if prune:
            outcome = prune_insignificant(dataset, spec, options)
            result = outcome.result
            for q, name, t_abs in outcome.dropped:
                print_log(f"dropped {name} from class {q} (|t| = {t_abs:.3f})", logging.INFO)
        else:
            result = estimate(dataset, spec, options)
    write_bundle(result, out)
    print(format_summary(result))
    return EXIT_OK if result.converged else EXIT_WARNINGS


@command
def cmd_sweep(config:str, data_dir:str, out:str, max_classes:int=4, min_classes:int=1, draws:int=None, seed:int=0,
              starts:int=None, se_method:str=None, max_iter:int=None)->int:
    """Estimates 1..max-classes class models, writes sweep.csv and the bundle of the selected one.

    Args:
        config: model spec YAML
        data_dir: directory holding respondents.csv and scenarios.csv
        out: output directory
        max_classes: largest class count tried
        min_classes: smallest class count tried
        draws: Halton draws per respondent (overrides the model spec)
        seed: seed of the start jitter
        starts: number of optimizer starts per class count
        se_method: hessian or bhhh
        max_iter: iteration cap per start
    """
    spec = ModelSpec.from_yaml(config)
    dataset = load_dataset_dir(data_dir, spec)
    options = _options(draws, seed, starts, se_method, False, max_iter)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with TraceContext(path=_fresh_trace(out)):
        sweep = class_sweep(dataset, spec, range(min_classes, max_classes + 1), options)
    print(sweep.table.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    if sweep.selected is None:
        sweep.table.to_csv(out / SWEEP_FILE, index=False)
        print_log("No class count satisfies the minimum class share rule", logging.WARNING)
        return EXIT_WARNINGS
    selected = sweep.results[sweep.selected]
    write_bundle(selected, out, sweep=sweep.table)
    print(f"selected classes: {sweep.selected}")
    converged = all(r.converged for r in sweep.results.values())
    return EXIT_OK if converged else EXIT_WARNINGS


@command
def cmd_simulate(synth_config:str, out:str)->int:
    """Simulates a dataset from known parameters and writes it with its model spec and true classes.

    Args:
        synth_config: synthesis config YAML
        out: output directory (respondents.csv, scenarios.csv, model.yaml, truth.csv)
    """
    config = SynthConfig.from_yaml(synth_config)
    spec = config.model_spec()
    dataset, truth = simulate_dataset(config, return_truth=True)
    out = Path(out)
    write_dataset(dataset, spec, out)
    (out / MODEL_FILE).write_text(spec.to_yaml(), encoding="utf-8")
    frame = pd.DataFrame({"respondent_id": [r.id for r in dataset.respondents], "class": truth.classes})
    for g, name in enumerate(spec.latent_names):
        frame[name] = truth.latents[:, g]
    frame.to_csv(out / TRUTH_FILE, index=False)
    print_log(f"{dataset.N} respondents, {dataset.n_observations} choice observations written to {out}", logging.INFO)
    return EXIT_OK


@command
def cmd_reliability(config:str, data_dir:str, out:str, bundle:str=None, q:int=1)->int:
    """Cronbach's alpha, AVE, CR and the Fornell-Larcker check of every construct.

    Args:
        config: model spec YAML
        data_dir: directory holding respondents.csv and scenarios.csv
        out: output directory (items.csv, validity.csv, correlation.csv)
        bundle: optional result bundle; loadings and construct correlations then come from its estimates
        q: class of the bundle whose measurement model is used
    """
    spec = ModelSpec.from_yaml(config)
    dataset = load_dataset_dir(data_dir, spec)
    theta = read_bundle(bundle).theta if bundle else None
    report = reliability_report(dataset, spec, theta=theta, q=q)
    write_reliability(report, out)
    print(report.validity_frame().to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return EXIT_OK


@command
def cmd_predict(bundle:str, data_dir:str, out:str, weights:str="posterior", draws:int=None)->int:
    """Predicted use probability of every observation at the estimates of a result bundle.

    Args:
        bundle: result bundle directory
        data_dir: directory holding respondents.csv and scenarios.csv
        out: output directory (predictions.csv)
        weights: posterior (class and draw weights given each respondent's data) or prior
        draws: Halton draws per respondent (defaults to the bundle's)
    """
    saved = read_bundle(bundle)
    dataset = load_dataset_dir(data_dir, saved.spec)
    options = saved.options if draws is None else saved.options.with_changes(draws=draws)
    predicted = predict(saved.theta, dataset, saved.spec, make_draws(dataset, saved.spec, options), weights=weights)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    frame = prediction_frame(predicted, dataset)
    frame.to_csv(out / PREDICTIONS_FILE, index=False)
    observed = (frame["chosen"] > 0).mean()
    print(f"mean predicted P(use) {frame['p_use'].mean():.4f}, observed share {observed:.4f}")
    return EXIT_OK


@command
def cmd_expand(respondents:str, out:str, wt_column:str="wt_threshold", tt_column:str="tt_threshold", config:str=None)->int:
    """Builds scenarios.csv from each respondent's stated waiting and travel time thresholds.

    Args:
        respondents: respondent CSV with the threshold columns (grid level values)
        out: output directory (scenarios.csv)
        wt_column: stated waiting time threshold column
        tt_column: stated travel time threshold column
        config: model spec YAML supplying the scenario grid and id column (default grid otherwise)
    """
    spec = ModelSpec.from_yaml(config) if config else None
    grid = spec.scenario_grid if spec else ScenarioGrid()
    id_column = spec.respondent_id_column if spec else "respondent_id"
    frame = read_table(respondents, id_column)
    scenarios = expand_panel(frame, grid, wt_column, tt_column, id_column=id_column)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    scenarios.to_csv(out / SCENARIOS_FILE, index=False)
    print_log(f"{len(scenarios)} scenario rows for {frame.shape[0]} respondents", logging.INFO)
    return EXIT_OK
