# this code example is complete and should run as it is (from the repository root)

from pathlib import Path

from lciclv import EstimationOptions, SynthConfig, TraceContext, estimate, simulate_dataset, write_bundle
from lciclv.results import format_summary

here = Path(__file__).parent
config = SynthConfig.from_yaml(here / "synth.yaml")
spec = config.model_spec()
dataset = simulate_dataset(config)

iterations = []
def on_iteration(record):
    iterations.append(record)

# few draws and starts keep this quick... use the model spec's 500+ draws for real work
options = EstimationOptions(draws=100, starts=2, max_iter=200)

with TraceContext(callback=on_iteration):
    result = estimate(dataset, spec, options)

print(format_summary(result))
print(f"{len(iterations)} optimizer iterations across {options.starts} starts")
write_bundle(result, here / "out" / "synthetic_bundle")
