# chooses the number of latent classes by BIC, discarding solutions with a class below 10% of the sample

from pathlib import Path

from lciclv import EstimationOptions, SynthConfig, class_sweep, simulate_dataset

here = Path(__file__).parent
config = SynthConfig.from_yaml(here / "synth.yaml")
spec = config.model_spec()
dataset = simulate_dataset(config)

sweep = class_sweep(dataset, spec, range(1, 4), EstimationOptions(draws=100, starts=2))
print(sweep.table[["classes", "ll", "bic", "aic", "caic", "hqic", "k", "qualified"]])
print("selected:", sweep.selected)   # 2, the number of classes the data was simulated with
