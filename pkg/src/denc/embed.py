"""Social confounder vectors from second-order random walks and skip-gram.

Walks follow the return/in-out biased scheme; the neighbourhood likelihood is
optimised with negative sampling instead of the full softmax, which is kept
only as an exact evaluation routine for small graphs.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from numba import njit

from denc._rng import stream
from denc.data import SocialGraph


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    p: float = 1.0
    q: float = 1.0
    negatives: int = 5
    dim: int = 45
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        for name in ("walks_per_node", "walk_length", "window", "negatives", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    isolated: np.ndarray
    # mean SGNS loss on a sample of training pairs after fitting
    loss: float = float("nan")

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def zeros(cls, m, dim):
        return cls(np.zeros((m, dim)), np.ones(m, dtype=bool))


def transition_probs(adj: Sequence[Sequence[int]], prev: Optional[int], curr: int,
                     p: float, q: float, adj_sets: Optional[List[set]] = None) -> Dict[int, float]:
    """Next-step distribution of the biased walk sitting at ``curr`` having come from ``prev``.

    ``adj`` holds sorted neighbour lists (see :meth:`SocialGraph.adjacency`).
    """
    nbrs = adj[curr]
    if not nbrs:
        raise ValueError(f"node {curr} has no neighbours")
    if prev is None:
        w = np.ones(len(nbrs))
    else:
        prev_nbrs = adj_sets[prev] if adj_sets is not None else set(adj[prev])
        w = np.array([1.0 / p if x == prev else (1.0 if x in prev_nbrs else 1.0 / q)
                      for x in nbrs])
    w /= w.sum()
    return dict(zip(nbrs, w.tolist()))


def _walk(adj, adj_sets, source, length, p, q, rng):
    walk = [source]
    uniform = p == 1.0 and q == 1.0
    while len(walk) < length:
        curr = walk[-1]
        nbrs = adj[curr]
        if not nbrs:
            break
        if uniform or len(walk) == 1:
            walk.append(nbrs[int(rng.integers(len(nbrs)))])
            continue
        prev = walk[-2]
        prev_nbrs = adj_sets[prev]
        w = np.array([1.0 / p if x == prev else (1.0 if x in prev_nbrs else 1.0 / q)
                      for x in nbrs])
        cdf = np.cumsum(w)
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        walk.append(nbrs[min(k, len(nbrs) - 1)])
    return walk


def generate_walks(g: SocialGraph, cfg: WalkConfig, workers: int = 1) -> List[List[int]]:
    """``walks_per_node`` walks from every non-isolated node.

    Walk ``w`` (round-major over sorted sources) draws from its own stream
    keyed by ``w``, so the result does not depend on ``workers``.
    """
    adj = g.adjacency()
    adj_sets = [set(a) for a in adj]
    sources = [u for u in range(g.m) if adj[u]]
    total = cfg.walks_per_node * len(sources)

    def run(idx):
        out = []
        for w in idx:
            src = sources[w % len(sources)]
            out.append(_walk(adj, adj_sets, src, cfg.walk_length, cfg.p, cfg.q,
                             stream(cfg.seed, "walk", w)))
        return out

    if total == 0:
        return []
    if workers <= 1:
        return run(range(total))
    chunks = np.array_split(np.arange(total), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, [c.tolist() for c in chunks]))
    return [w for part in parts for w in part]


def context_pairs(walks: Sequence[Sequence[int]], window: int) -> np.ndarray:
    """All (center, context) pairs within ``window`` positions, as a ``(P, 2)`` array."""
    out = []
    by_len: Dict[int, list] = {}
    for w in walks:
        by_len.setdefault(len(w), []).append(w)
    for length, group in sorted(by_len.items()):
        arr = np.asarray(group, dtype=np.int64)
        for d in range(1, min(window, length - 1) + 1):
            a, b = arr[:, :-d].ravel(), arr[:, d:].ravel()
            out.append(np.stack([a, b], axis=1))
            out.append(np.stack([b, a], axis=1))
    if not out:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(out)


def noise_distribution(walks, m) -> np.ndarray:
    """Unigram^0.75 over node occurrences in the walks."""
    counts = np.zeros(m)
    for w in walks:
        np.add.at(counts, np.asarray(w, dtype=np.int64), 1.0)
    weights = counts ** 0.75
    return weights / weights.sum()


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sgns_pair_loss(center, context, negatives):
    """Negative-sampling loss of one pair and its gradients.

    Returns ``(loss, d_center, d_context, d_negatives)`` where ``negatives``
    is a ``(k, d)`` array of noise context vectors.
    """
    center = np.asarray(center, float)
    context = np.asarray(context, float)
    negatives = np.atleast_2d(np.asarray(negatives, float))
    s_pos = center @ context
    s_neg = negatives @ center
    loss = -_log_sigmoid(s_pos) - _log_sigmoid(-s_neg).sum()
    g_pos = _sigmoid(s_pos) - 1.0
    g_neg = _sigmoid(s_neg)
    d_center = g_pos * context + g_neg @ negatives
    d_context = g_pos * center
    d_negatives = g_neg[:, None] * center[None, :]
    return float(loss), d_center, d_context, d_negatives


def sgns_objective(emb, ctx, pairs, negatives) -> float:
    """Mean SGNS loss over ``pairs`` with a fixed ``(P, k)`` array of negative node ids."""
    c, o = pairs[:, 0], pairs[:, 1]
    s_pos = np.einsum("ij,ij->i", emb[c], ctx[o])
    s_neg = np.einsum("ij,ikj->ik", emb[c], ctx[negatives])
    return float(np.mean(-_log_sigmoid(s_pos) - _log_sigmoid(-s_neg).sum(axis=1)))


@njit(cache=True)
def _sgns_sweep(emb, ctx, pairs, order, negs, lr0, lr_floor, step0, total_steps):
    d = emb.shape[1]
    grad = np.empty(d)
    for t in range(order.shape[0]):
        lr = max(lr_floor, lr0 * (1.0 - (step0 + t) / total_steps))
        p = order[t]
        c = pairs[p, 0]
        grad[:] = 0.0
        for k in range(negs.shape[1] + 1):
            if k == 0:
                x = pairs[p, 1]
                label = 1.0
            else:
                x = negs[p, k - 1]
                label = 0.0
            s = 0.0
            for j in range(d):
                s += emb[c, j] * ctx[x, j]
            g = lr * (label - 1.0 / (1.0 + np.exp(-s)))
            for j in range(d):
                grad[j] += g * ctx[x, j]
                ctx[x, j] += g * emb[c, j]
        for j in range(d):
            emb[c, j] += grad[j]


def init_vectors(m, dim, seed):
    """word2vec-style start: small uniform input vectors, zero output vectors."""
    emb = stream(seed, "embed.init").uniform(-0.5 / dim, 0.5 / dim, (m, dim))
    return emb, np.zeros((m, dim))


def train_sgns(pairs: np.ndarray, noise: np.ndarray, m: int, cfg: WalkConfig):
    """Plain per-pair SGD on the negative-sampling objective, word2vec style.

    Pairs are visited in a fresh random order each epoch with pre-drawn
    negatives; the rate decays linearly to 1e-4 of its start over all updates.
    Returns ``(input_vectors, output_vectors)``.
    """
    emb, ctx = init_vectors(m, cfg.dim, cfg.seed)
    if cfg.epochs == 0 or len(pairs) == 0:
        return emb, ctx
    pairs = np.ascontiguousarray(pairs, dtype=np.int64)
    total = len(pairs) * cfg.epochs
    cdf = np.cumsum(noise)
    cdf /= cdf[-1]
    for epoch in range(cfg.epochs):
        rng = stream(cfg.seed, "embed.epoch", epoch)
        order = rng.permutation(len(pairs))
        negs = np.searchsorted(cdf, rng.random((len(pairs), cfg.negatives)), side="right")
        negs = np.minimum(negs, m - 1).astype(np.int64)
        _sgns_sweep(emb, ctx, pairs, order, negs, cfg.learning_rate,
                    cfg.learning_rate * 1e-4, epoch * len(pairs), total)
    return emb, ctx


def train_embeddings(walks: Sequence[Sequence[int]], cfg: WalkConfig,
                     m: Optional[int] = None) -> EmbeddingTable:
    """Fit confounder vectors from walks. Nodes absent from every walk get a zero row."""
    if not walks:
        raise ValueError("no walks to train on")
    if m is None:
        m = 1 + max(max(w) for w in walks)
    pairs = context_pairs(walks, cfg.window)
    if len(pairs) == 0:
        raise ValueError("walks are too short to produce context pairs")
    noise = noise_distribution(walks, m)
    emb, ctx = train_sgns(pairs, noise, m, cfg)
    rng = stream(cfg.seed, "embed.diagnostic")
    sample = pairs[rng.choice(len(pairs), size=min(len(pairs), 10000), replace=False)]
    negs = rng.choice(m, size=(len(sample), cfg.negatives), p=noise)
    loss = sgns_objective(emb, ctx, sample, negs)
    seen = np.zeros(m, dtype=bool)
    for w in walks:
        seen[np.asarray(w, dtype=np.int64)] = True
    emb[~seen] = 0.0
    return EmbeddingTable(emb, ~seen, loss)


def embed_graph(g: SocialGraph, cfg: WalkConfig, workers: int = 1) -> EmbeddingTable:
    """Walk + train; a graph without edges yields an all-zero table."""
    walks = generate_walks(g, cfg, workers=workers)
    if not walks:
        return EmbeddingTable.zeros(g.m, cfg.dim)
    return train_embeddings(walks, cfg, m=g.m)


def neighborhood_softmax_loss(Z, walks, window, context=None, max_nodes=200) -> float:
    """Exact negative log-likelihood of walk neighbourhoods under a full softmax.

    Each (center, context) occurrence contributes ``log sum_v exp(z_v . z_u) - z_ctx . z_u``.
    ``context`` defaults to ``Z`` itself.
    """
    Z = np.asarray(Z, float)
    if Z.shape[0] > max_nodes:
        raise ValueError(f"exact softmax limited to {max_nodes} nodes")
    X = Z if context is None else np.asarray(context, float)
    pairs = context_pairs(walks, window)
    scores = Z @ X.T
    logz = np.logaddexp.reduce(scores, axis=1)
    c, o = pairs[:, 0], pairs[:, 1]
    return float(np.sum(logz[c] - scores[c, o]))


def cosine_similarity(Z) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    U = Z / np.where(norms == 0, 1.0, norms)
    return U @ U.T
