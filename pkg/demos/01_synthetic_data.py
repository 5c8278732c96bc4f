"""Generate a confounded dataset and look at what the confounder does to it.

Members of the latent community are linked to each other in the social graph,
see items more (or less) often than everyone else, and rate them with a
shifted offset. Everything downstream tries to undo that.
"""
import numpy as np

from denc.data import dataset_stats
from denc.synth import ConfounderLevel, SynthConfig, synthesize

cfg = SynthConfig(m=300, n=400, membership_fraction=0.5, edge_prob=0.05, seed=7)

for delta in (-0.35, 0.0, 0.35):
    syn = synthesize(cfg, ConfounderLevel(delta))
    counts = syn.dataset.interaction_counts()
    mem = syn.membership
    print(f"delta={delta:+.2f}  observed={len(syn.dataset):6d}  "
          f"mean count members={counts[mem].mean():6.1f}  others={counts[~mem].mean():6.1f}  "
          f"mean truth members={syn.full_truth[mem].mean():.3f}  others={syn.full_truth[~mem].mean():.3f}")

syn = synthesize(cfg, ConfounderLevel(0.35))
print()
print(dataset_stats(syn.dataset, syn.graph).to_json())

# the observed ratings are a biased sample of the full table
obs_mean = syn.dataset.ratings.mean()
print(f"\nmean observed rating {obs_mean:.3f} vs mean of the full table {syn.full_truth.mean():.3f}")
deg = syn.graph.degrees()
inside = all(syn.membership[a] and syn.membership[b] for a, b in syn.graph.edges)
print(f"graph: {len(syn.graph.edges)} edges, {np.sum(deg == 0)} isolated users, "
      f"every edge inside the community: {inside}")
