"""Confounder diagnostics: cohort interaction/common-item distributions and the masking sweep."""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from denc._rng import stream
from denc.data import Dataset, SocialGraph, SplitSpec, mask_social_relations, split_dataset
from denc.trainer import TrainConfig, evaluate_checkpoint, train

log = logging.getLogger(__name__)

KDE_POINTS = 256


@dataclass(frozen=True)
class CohortPair:
    in_network: Tuple[int, ...]
    out_network: Tuple[int, ...]
    # True when the out-of-network side had to fall back to low-degree users
    fallback: bool = False

    def __post_init__(self):
        if len(self.in_network) != len(self.out_network):
            raise ValueError("cohorts must have equal sizes")
        if set(self.in_network) & set(self.out_network):
            raise ValueError("cohorts must be disjoint")

    def to_dict(self):
        return {"in_network": list(self.in_network), "out_network": list(self.out_network),
                "fallback": self.fallback}


@dataclass
class DistributionSummary:
    values: np.ndarray
    bins: np.ndarray
    counts: np.ndarray
    kde_x: np.ndarray
    kde_density: np.ndarray
    bandwidth: float
    pairs: Optional[np.ndarray] = None
    shortfall: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if len(self.values) else float("nan")

    @property
    def std_error(self) -> float:
        if len(self.values) < 2:
            return float("nan")
        return float(np.std(self.values, ddof=1) / np.sqrt(len(self.values)))

    def density_at(self, x) -> np.ndarray:
        return gaussian_kde(self.values, self.bandwidth, x)

    def table(self):
        """Integer grid from 0 to the end of the KDE range: (x, count, kde_density)."""
        top = int(np.ceil(self.kde_x[-1])) if len(self.kde_x) else 0
        x = np.arange(0, top + 1)
        count = np.zeros(len(x), dtype=np.int64)
        inside = (self.bins >= 0) & (self.bins <= top)
        count[self.bins[inside].astype(np.int64)] = self.counts[inside]
        return x, count, self.density_at(x)


def scott_bandwidth(values) -> float:
    """Scott's rule ``sd * N^(-1/5)``; 1.0 when the sample has no spread."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 1.0
    sd = float(np.std(v, ddof=1))
    return sd * v.size ** (-0.2) if sd > 0 else 1.0


def gaussian_kde(values, bandwidth, x) -> np.ndarray:
    """Gaussian KDE on a non-negative support, reflected at 0 so mass below 0 folds back."""
    v = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    if v.size == 0:
        return np.zeros_like(x)
    norm = 1.0 / (v.size * bandwidth * np.sqrt(2 * np.pi))
    d1 = (x[:, None] - v[None, :]) / bandwidth
    d2 = (x[:, None] + v[None, :]) / bandwidth
    return norm * (np.exp(-0.5 * d1 ** 2) + np.exp(-0.5 * d2 ** 2)).sum(axis=1)


def summarize(values, pairs=None, shortfall=0) -> DistributionSummary:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot summarise an empty sample")
    h = scott_bandwidth(v)
    lo, hi = int(np.floor(v.min())), int(np.floor(v.max()))
    bins = np.arange(lo, hi + 1)
    counts = np.bincount((np.floor(v) - lo).astype(np.int64), minlength=len(bins))
    kde_x = np.linspace(0.0, v.max() + 3 * h, KDE_POINTS)
    return DistributionSummary(v, bins, counts, kde_x, gaussian_kde(v, h, kde_x), h,
                               pairs, shortfall)


def sample_cohorts(ds: Dataset, g: SocialGraph, n: int, seed: int) -> CohortPair:
    """``n`` users with degree >= 1 and ``n`` users with degree 0, without replacement.

    If the graph leaves no user isolated at all, the ``n`` lowest-degree users
    (ties by index) stand in for the out-of-network side and a warning is logged.
    """
    if g.m != ds.m:
        raise ValueError("graph and dataset disagree on the user count")
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    deg = g.degrees()
    connected = np.flatnonzero(deg > 0)
    isolated = np.flatnonzero(deg == 0)
    fallback = False
    rng = stream(seed, "analysis.cohorts")
    if isolated.size == 0:
        fallback = True
        out = np.argsort(deg, kind="stable")[:n]
        connected = np.setdiff1d(connected, out)
        log.warning("no user is outside the social network; using the %d lowest-degree users "
                    "as the out-of-network cohort", n)
    elif isolated.size < n:
        raise ValueError(f"out-of-network side has {isolated.size} users, need {n}")
    else:
        out = None
    if connected.size < n:
        raise ValueError(f"in-network side has {connected.size} users, need {n}")
    inside = np.sort(rng.choice(connected, size=n, replace=False))
    if out is None:
        out = rng.choice(isolated, size=n, replace=False)
    out = np.sort(out)
    return CohortPair(tuple(int(u) for u in inside), tuple(int(u) for u in out), fallback)


def interaction_distribution(cohort: Sequence[int], ds: Dataset) -> DistributionSummary:
    """Per-user interaction counts of ``cohort`` with KDE and unit histogram."""
    cohort = np.asarray(cohort, dtype=np.int64)
    if cohort.size == 0:
        raise ValueError("empty cohort")
    return summarize(ds.interaction_counts()[cohort])


def _item_sets(ds: Dataset) -> List[set]:
    sets = [set() for _ in range(ds.m)]
    for u, i in zip(ds.users.tolist(), ds.items.tolist()):
        sets[u].add(i)
    return sets


def common_item_distribution(ds: Dataset, g: SocialGraph, cohorts: CohortPair,
                             pairs_per_user: int, seed: int) -> Dict[str, DistributionSummary]:
    """``|items(u) & items(v)|`` over user pairs for each cohort.

    In-network users are paired with up to ``pairs_per_user`` one-hop
    neighbours; out-of-network users with as many other members of their own
    cohort. Missing partners are tallied in ``shortfall``.
    """
    if pairs_per_user < 1:
        raise ValueError("pairs_per_user must be >= 1")
    items = _item_sets(ds)
    adj = g.adjacency()
    result = {}
    for side, members in (("in", cohorts.in_network), ("out", cohorts.out_network)):
        rng = stream(seed, "analysis.common", 0 if side == "in" else 1)
        pairs, shortfall = [], 0
        for u in members:
            pool = (np.asarray(adj[u], dtype=np.int64) if side == "in"
                    else np.asarray([v for v in members if v != u], dtype=np.int64))
            take = min(pairs_per_user, pool.size)
            shortfall += pairs_per_user - take
            for v in rng.choice(pool, size=take, replace=False).tolist() if take else []:
                pairs.append((u, v))
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        common = np.array([len(items[u] & items[v]) for u, v in pairs.tolist()], dtype=float)
        if common.size == 0:
            raise ValueError(f"no {side}-network pairs could be formed")
        result[side] = summarize(common, pairs, shortfall)
    return result


SWEEP_FIELDS = ("fraction", "seed", "MAE", "RMSE", "P@20", "R@20")


def masking_sweep(cfg: TrainConfig, ds: Dataset, g: SocialGraph, fractions: Sequence[float],
                  seeds: Sequence[int], truth: Optional[np.ndarray] = None,
                  split: SplitSpec = SplitSpec(), workers: int = 1, out_csv=None) -> List[dict]:
    """Train and evaluate the full model on graphs with a share of edges removed.

    Each ``(fraction, seed)`` cell splits ``ds`` and masks ``g`` with ``seed`` and
    trains with ``cfg.seed = seed``. With ``truth`` the error is measured on all
    cells outside train and validation; otherwise on the test split.
    """
    for f in fractions:
        if not 0 <= f < 1:
            raise ValueError(f"masking fraction {f} outside [0, 1)")
    cells = [(float(f), int(s)) for f in fractions for s in seeds]

    def run(cell):
        f, s = cell
        tr, va, te = split_dataset(ds, SplitSpec(split.test_fraction, split.val_fraction_of_train, s))
        model = train(cfg.replace(seed=s), tr, va, mask_social_relations(g, f, s))
        rep = evaluate_checkpoint(model, te, truth=truth, seen=tr.concat(va), ks=(20,))
        return {"fraction": f, "seed": s, "MAE": rep.mae, "RMSE": rep.rmse,
                "P@20": rep.precision_at_k[20], "R@20": rep.recall_at_k[20]}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(c) for c in cells]
    rows.sort(key=lambda r: (r["fraction"], r["seed"]))
    if out_csv is not None:
        write_rows(out_csv, SWEEP_FIELDS, rows)
    return rows


def write_rows(path, fields_, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields_)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in fields_])


def write_distribution(path, summary: DistributionSummary) -> None:
    x, count, dens = summary.table()
    rows = [{"x": int(a), "count": int(b), "kde_density": float(c)}
            for a, b, c in zip(x, count, dens)]
    write_rows(path, ("x", "count", "kde_density"), rows)


def write_common_items(path, summary: DistributionSummary) -> None:
    rows = [{"user": int(u), "partner": int(v), "common": int(c)}
            for (u, v), c in zip(summary.pairs.tolist(), summary.values)]
    write_rows(path, ("user", "partner", "common"), rows)
