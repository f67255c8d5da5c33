from .common import LogColors, GlobalSettings, print_log
from .exceptions import (LcIclvError, ConfigError, SchemaError, RowValidationError, ReferentialError, DrawError,
                         DomainError, CovarianceError, LayoutError, EstimationError, QuadratureError)
from .model_spec import ModelSpec, ScenarioGrid, IdentificationSpec
from .schema import Dataset, Respondent, ChoiceScenario, ValidationReport
from .data_io import load_dataset, load_dataset_dir, validate, expand_scenarios, expand_panel, write_dataset
from .halton import DrawSet, build_draws, halton_point
from .parameters import ParameterLayout, ParameterSet
from .likelihood import LikelihoodEngine, person_likelihood, posterior_membership, total_loglik
from .options import EstimationOptions
from .estimation import estimate, standard_errors, fit_criteria, class_sweep, prune_insignificant, predict, make_draws
from .results import EstimationResult, FitCriteria, write_bundle, read_bundle
from .reliability import cronbach_alpha, construct_reliability, fornell_larcker, reliability_report
from .synth import SynthConfig, simulate_dataset
from .oracle import quadrature_person_likelihood, recovery_experiment
from .trace import TraceContext

__version__="0.1.1"
