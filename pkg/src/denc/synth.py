"""Semi-synthetic ratings with a social-network confounder.

Members of the social graph see items with probability ``0.5 + delta`` and
their ratings are shifted by ``beta * delta`` plus Gaussian noise; everyone
else is exposed uniformly at 0.5 and keeps the base rating.
"""

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from denc._rng import stream
from denc.data import Dataset, SocialGraph

DEFAULT_LEVELS = (-0.35, 0.0, 0.35)


@dataclass(frozen=True)
class ConfounderLevel:
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= 0.5 + self.delta <= 1.0:
            raise ValueError(f"delta={self.delta} maps to an invalid exposure probability")

    @property
    def exposure_prob(self) -> float:
        return 0.5 + self.delta


@dataclass(frozen=True)
class SynthConfig:
    m: int = 200
    n: int = 300
    membership_fraction: float = 0.5
    edge_prob: float = 0.5
    beta: float = 2.0
    noise_sd: float = 1.0
    rank: int = 5
    base_noise_sd: float = 0.5
    mean_rating: float = 3.0
    seed: int = 0
    # optional per-user override of beta, length m
    beta_per_user: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        for name in ("membership_fraction", "edge_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.noise_sd < 0 or self.base_noise_sd < 0:
            raise ValueError("noise scales must be non-negative")
        if self.beta_per_user is not None and len(self.beta_per_user) != self.m:
            raise ValueError("beta_per_user must have length m")

    def betas(self) -> np.ndarray:
        if self.beta_per_user is not None:
            return np.asarray(self.beta_per_user, dtype=float)
        return np.full(self.m, float(self.beta))

    def to_dict(self):
        d = asdict(self)
        if d["beta_per_user"] is not None:
            d["beta_per_user"] = list(d["beta_per_user"])
        return d


@dataclass
class SemiSyntheticDataset:
    dataset: Dataset
    full_truth: np.ndarray
    exposure: np.ndarray
    graph: SocialGraph
    membership: np.ndarray
    base: np.ndarray
    config: SynthConfig
    level: ConfounderLevel


def compose_base_ratings(P, Q, eta, mean=3.0):
    """``clamp(round_half_up(mean + P Q^T + eta), 1, 5)``."""
    raw = mean + np.asarray(P) @ np.asarray(Q).T + eta
    return np.clip(np.floor(raw + 0.5), 1.0, 5.0)


def generate_base_ratings(cfg: SynthConfig) -> np.ndarray:
    """Complete ``m x n`` table of integer ratings in [1, 5] from a low-rank model.

    Factor entries have variance ``1/sqrt(rank)`` so the inner product has unit
    variance whatever the rank.
    """
    scale = cfg.rank ** -0.25
    P = stream(cfg.seed, "synth.user_factors").normal(0.0, scale, (cfg.m, cfg.rank))
    Q = stream(cfg.seed, "synth.item_factors").normal(0.0, scale, (cfg.n, cfg.rank))
    eta = np.empty((cfg.m, cfg.n))
    for u in range(cfg.m):
        eta[u] = stream(cfg.seed, "synth.base_noise", u).normal(0.0, cfg.base_noise_sd, cfg.n)
    return compose_base_ratings(P, Q, eta, cfg.mean_rating)


def generate_confounded_graph(cfg: SynthConfig) -> Tuple[SocialGraph, np.ndarray]:
    membership = stream(cfg.seed, "synth.membership").random(cfg.m) < cfg.membership_fraction
    members = np.flatnonzero(membership)
    k = len(members)
    edges = set()
    if k >= 2 and cfg.edge_prob > 0:
        draws = stream(cfg.seed, "synth.edges").random((k, k))
        iu, ju = np.triu_indices(k, 1)
        hit = draws[iu, ju] < cfg.edge_prob
        edges = set(zip(members[iu[hit]].tolist(), members[ju[hit]].tolist()))
    return SocialGraph(cfg.m, frozenset(edges)), membership


def exposure_probability(level: ConfounderLevel, member: bool) -> float:
    return level.exposure_prob if member else 0.5


def simulate_exposure(u, i, level: ConfounderLevel, member: bool, rng) -> int:
    """One Bernoulli exposure draw for cell ``(u, i)``."""
    return int(rng.random() < exposure_probability(level, member))


def synthesize(cfg: SynthConfig, level: ConfounderLevel,
               base: Optional[np.ndarray] = None) -> SemiSyntheticDataset:
    """Build the observed dataset, the complete truth table and the exposure table.

    ``base`` replaces the generated low-rank ratings, e.g. with a dense table
    loaded from a real ratings file.
    """
    if base is None:
        base = generate_base_ratings(cfg)
    elif base.shape != (cfg.m, cfg.n):
        raise ValueError(f"base table has shape {base.shape}, expected {(cfg.m, cfg.n)}")
    graph, membership = generate_confounded_graph(cfg)
    betas = cfg.betas()

    exposure = np.zeros((cfg.m, cfg.n), dtype=np.int8)
    truth = np.array(base, dtype=float, copy=True)
    for u in range(cfg.m):
        p = exposure_probability(level, bool(membership[u]))
        exposure[u] = stream(cfg.seed, "synth.exposure", u).random(cfg.n) < p
        if membership[u]:
            eps = stream(cfg.seed, "synth.rating_noise", u).normal(0.0, cfg.noise_sd, cfg.n)
            truth[u] += betas[u] * level.delta + eps

    users, items = np.nonzero(exposure)
    ds = Dataset(cfg.m, cfg.n, users, items, truth[users, items])
    return SemiSyntheticDataset(ds, truth, exposure, graph, membership, base, cfg, level)
