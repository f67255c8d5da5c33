# compares the simulated class-conditional likelihood with Gauss-Hermite quadrature
# on a one-construct model without random coefficients (a single integration dimension)

import numpy as np

from lciclv import ModelSpec, SynthConfig, build_draws, simulate_dataset
from lciclv.likelihood import class_conditional_sim_loglik
from lciclv.oracle import quadrature_person_loglik

spec = ModelSpec.from_dict({
    "covariates": [{"name": "income"}],
    "indicators": [{"name": "TE1"}, {"name": "TE2"}, {"name": "TE3"}],
    "latent_variables": [{"name": "taxi_environment", "indicators": ["TE1", "TE2", "TE3"],
                          "structural_covariates": ["income"]}],
    "utility_covariates": ["wt", "tt"],
    "latent_in_utility": ["taxi_environment"],
})
config = SynthConfig.for_spec(spec, n=20, seed=3, theta={
    "choice[1].asc": 2.0, "choice[1].beta[wt]": -0.6, "choice[1].beta[tt]": -0.4,
    "choice[1].gamma[taxi_environment]": -0.7, "structural[1].lambda[taxi_environment~income]": 0.5,
    "measurement[1].loading[TE2]": 1.4,
})
dataset = simulate_dataset(config)
theta = config.true_parameters(spec)
draws = build_draws(dataset.N, 2000, spec.draw_dims)

gaps = []
for n, respondent in enumerate(dataset.respondents):
    simulated = class_conditional_sim_loglik(respondent, 1, theta, draws.for_respondent(n))
    quadrature = quadrature_person_loglik(respondent, 1, theta, nodes=50)
    gaps.append(abs(simulated - quadrature))
    print(f"{respondent.id}: simulated {simulated:.6f} quadrature {quadrature:.6f}")
print(f"largest |difference| {max(gaps):.2e}, share within 0.01: {np.mean(np.array(gaps) <= 0.01):.2f}")
