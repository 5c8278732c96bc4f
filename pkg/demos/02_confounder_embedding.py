"""Social confounder vectors from biased random walks and skip-gram training.

Two dense cliques joined by a single bridge: users in the same clique should
end up pointing the same way, users across the bridge should not.
"""
import numpy as np

from denc.data import SocialGraph
from denc.embed import WalkConfig, cosine_similarity, embed_graph, generate_walks, transition_probs

size = 20
edges = {(a, b) for a in range(size) for b in range(a + 1, size)}
edges |= {(a + size, b + size) for a, b in edges}
edges.add((size - 1, size))
g = SocialGraph(2 * size + 3, frozenset(edges))   # three users with no friends at all

adj = g.adjacency()
# a low q pushes walks outward, a high p discourages stepping straight back
print("step probabilities from the bridge node, coming from its clique:")
for p, q in ((1.0, 1.0), (4.0, 0.25)):
    probs = transition_probs(adj, size - 2, size - 1, p, q)
    print(f"  p={p} q={q}: across the bridge {probs[size]:.3f}, back {probs[size - 2]:.3f}")

cfg = WalkConfig(seed=0)
walks = generate_walks(g, cfg)
print(f"\n{len(walks)} walks of length {cfg.walk_length}, first one starts {walks[0][:8]}")

table = embed_graph(g, cfg)
S = cosine_similarity(table.vectors[:2 * size])
off = ~np.eye(size, dtype=bool)
intra = np.concatenate([S[:size, :size][off], S[size:, size:][off]]).mean()
inter = S[:size, size:].mean()
print(f"mean cosine inside a clique {intra:.3f}, across cliques {inter:.3f}")
print(f"isolated users flagged: {np.flatnonzero(table.isolated).tolist()}, "
      f"their vectors are zero: {bool(np.all(table.vectors[table.isolated] == 0))}")
print(f"final skip-gram loss {table.loss:.4f}")
