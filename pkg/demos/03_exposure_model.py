"""Fit the logistic exposure model on confounder vectors and read off propensities.

Community members see many more items under a positive shift; with the
confounder vectors as input the exposure model should pick that up.
"""
import numpy as np

from denc.embed import embed_graph
from denc.exposure import exposure_marginal, fit_exposure
from denc.synth import ConfounderLevel, SynthConfig, synthesize
from denc.trainer import TrainConfig

syn = synthesize(SynthConfig(m=300, n=400, edge_prob=0.05, seed=3), ConfounderLevel(0.35))
cfg = TrainConfig(seed=3)
Z = embed_graph(syn.graph, cfg.walk_config()).vectors

model = fit_exposure(syn.dataset, Z, omega=cfg.omega, seed=3)
prop = model.propensities(Z)
mem = syn.membership
print(f"exposure loss by epoch: {np.round(model.history[:5], 4).tolist()} ... {model.history[-1]:.4f}")
# unobserved cells are subsampled and down-weighted by omega, so the levels are
# not the true rates (0.85 and 0.5); the ordering is what the weights need
print(f"mean propensity, members {prop[mem].mean():.3f}, others {prop[~mem].mean():.3f}")
# isolated users all share the intercept
iso = np.all(Z == 0, axis=1)
print(f"{iso.sum()} isolated users share propensity {np.unique(np.round(prop[iso], 12))}")

p1, pq = exposure_marginal(model, Z[np.flatnonzero(mem)[0]])
print(f"marginal for one member: exposed {p1:.3f}, not exposed {pq:.3f}")
print(f"rating prior |O|/(mn) = {model.rating_prior:.4f}")
