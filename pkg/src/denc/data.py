"""Ratings and social-graph containers, TSV ingestion, splitting and statistics."""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from denc._rng import stream


class ParseError(ValueError):
    """Malformed input line; ``lineno`` is 1-based."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class RatingTriple(NamedTuple):
    user: int
    item: int
    rating: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed ratings over an ``m`` x ``n`` user/item index space.

    Triples are stored column-wise as numpy arrays. Instances are treated as
    immutable; the arrays are marked read-only on construction.
    """

    m: int
    n: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        ratings = np.ascontiguousarray(self.ratings, dtype=np.float64)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise ValueError("users, items and ratings must be aligned 1-d arrays")
        if len(users):
            if users.min() < 0 or users.max() >= self.m:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= self.n:
                raise ValueError("item index out of range")
        keys = users * max(self.n, 1) + items
        if len(np.unique(keys)) != len(keys):
            raise ValueError("duplicate (user, item) pair")
        for name, arr in (("users", users), ("items", items), ("ratings", ratings)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triples(cls, triples: Iterable, m: int, n: int) -> "Dataset":
        triples = list(triples)
        if not triples:
            return cls(m, n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
        u, i, r = zip(*triples)
        return cls(m, n, np.array(u), np.array(i), np.array(r, dtype=np.float64))

    def __len__(self):
        return len(self.users)

    @property
    def triples(self) -> List[RatingTriple]:
        return [RatingTriple(int(u), int(i), float(r))
                for u, i, r in zip(self.users, self.items, self.ratings)]

    @property
    def observed_index(self) -> FrozenSet[Tuple[int, int]]:
        return frozenset(zip(self.users.tolist(), self.items.tolist()))

    @property
    def keys(self) -> np.ndarray:
        """Flat cell index ``u * n + i`` for every triple."""
        return self.users * self.n + self.items

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.m, self.n, self.users[idx], self.items[idx], self.ratings[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        if (self.m, self.n) != (other.m, other.n):
            raise ValueError("index spaces differ")
        return Dataset(self.m, self.n,
                       np.concatenate([self.users, other.users]),
                       np.concatenate([self.items, other.items]),
                       np.concatenate([self.ratings, other.ratings]))

    def interaction_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.m)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.m == other.m and self.n == other.n
                and np.array_equal(self.users, other.users)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings))


@dataclass(frozen=True)
class SocialGraph:
    """Undirected simple graph over ``m`` users. Edges are stored as ``(u, v)`` with ``u < v``."""

    m: int
    edges: FrozenSet[Tuple[int, int]]

    def __post_init__(self):
        norm = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop at {a}")
            if not (0 <= a < self.m and 0 <= b < self.m):
                raise ValueError(f"edge ({a}, {b}) out of range for m={self.m}")
            norm.add((a, b) if a < b else (b, a))
        object.__setattr__(self, "edges", frozenset(norm))

    def sorted_edges(self) -> List[Tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> List[List[int]]:
        """Sorted neighbour lists, one per user."""
        adj = [[] for _ in range(self.m)]
        for a, b in self.sorted_edges():
            adj[a].append(b)
            adj[b].append(a)
        for nbrs in adj:
            nbrs.sort()
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=np.int64)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    val_fraction_of_train: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not 0.0 <= self.val_fraction_of_train < 1.0:
            raise ValueError("val_fraction_of_train must lie in [0, 1)")


@dataclass
class StatsReport:
    user_count: int
    item_count: int
    rating_count: int
    relation_count: int
    density_r: float
    density_sr: float
    # |E| / m^2 with each undirected edge counted once
    density_sr_undirected: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class ParsedRatings:
    dataset: Dataset
    user_ids: Dict[str, int]
    item_ids: Dict[str, int]
    duplicates: int = 0


@dataclass
class ParsedEdges:
    graph: SocialGraph
    self_loops: int = 0
    unknown: int = 0
    tallies: Dict[str, int] = field(default_factory=dict)


def _records(lines, nfields):
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != nfields:
            raise ParseError(lineno, f"expected {nfields} tab-separated fields, got {len(parts)}")
        yield lineno, parts


def parse_ratings(lines: Iterable[str]) -> ParsedRatings:
    """Parse ``user<TAB>item<TAB>rating`` records.

    IDs are remapped to dense indices in first-appearance order. A repeated
    (user, item) pair overwrites the earlier rating and bumps ``duplicates``.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    user_ids: Dict[str, int] = {}
    item_ids: Dict[str, int] = {}
    cells: Dict[Tuple[int, int], float] = {}
    duplicates = 0
    for lineno, (u, i, r) in _records(lines, 3):
        try:
            rating = float(r)
        except ValueError:
            raise ParseError(lineno, f"non-numeric rating {r!r}") from None
        if not math.isfinite(rating):
            raise ParseError(lineno, f"non-finite rating {r!r}")
        uu = user_ids.setdefault(u, len(user_ids))
        ii = item_ids.setdefault(i, len(item_ids))
        if (uu, ii) in cells:
            duplicates += 1
        cells[(uu, ii)] = rating
    ds = Dataset.from_triples(((u, i, r) for (u, i), r in cells.items()),
                              len(user_ids), len(item_ids))
    return ParsedRatings(ds, user_ids, item_ids, duplicates)


def parse_social_edges(lines: Iterable[str], user_ids: Dict[str, int]) -> ParsedEdges:
    """Parse ``user<TAB>user`` trust records into an undirected graph.

    Unknown IDs and self-loops are skipped and tallied.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    edges = set()
    loops = unknown = 0
    for _, (a, b) in _records(lines, 2):
        if a not in user_ids or b not in user_ids:
            unknown += 1
            continue
        ua, ub = user_ids[a], user_ids[b]
        if ua == ub:
            loops += 1
            continue
        edges.add((min(ua, ub), max(ua, ub)))
    g = SocialGraph(len(user_ids), frozenset(edges))
    return ParsedEdges(g, loops, unknown, {"self_loops": loops, "unknown_ids": unknown})


def format_ratings(ds: Dataset, user_names: Optional[List[str]] = None,
                   item_names: Optional[List[str]] = None) -> str:
    un = user_names or [str(u) for u in range(ds.m)]
    itn = item_names or [str(i) for i in range(ds.n)]
    return "".join(f"{un[u]}\t{itn[i]}\t{r!r}\n"
                   for u, i, r in zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist()))


def format_edges(g: SocialGraph, user_names: Optional[List[str]] = None) -> str:
    un = user_names or [str(u) for u in range(g.m)]
    return "".join(f"{un[a]}\t{un[b]}\n" for a, b in g.sorted_edges())


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_dataset(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Shuffle triples and cut them into train / validation / test partitions.

    The test share is ``round(N * test_fraction)`` and the validation share is
    taken from what remains; both round half-up.
    """
    total = len(ds)
    if total < 3:
        raise ValueError("need at least 3 triples to split")
    n_test = _round_half_up(total * spec.test_fraction)
    n_val = _round_half_up((total - n_test) * spec.val_fraction_of_train)
    n_train = total - n_test - n_val
    if n_test == 0 or n_train <= 0 or (spec.val_fraction_of_train > 0 and n_val == 0):
        raise ValueError(f"split of {total} triples leaves an empty partition "
                         f"(train={n_train}, val={n_val}, test={n_test})")
    perm = stream(spec.seed, "split").permutation(total)
    train = ds.subset(np.sort(perm[:n_train]))
    val = ds.subset(np.sort(perm[n_train:n_train + n_val]))
    test = ds.subset(np.sort(perm[n_train + n_val:]))
    return train, val, test


def stats_from_counts(users, items, ratings, relations, directed_relations=None) -> StatsReport:
    """Densities in percent.

    ``density_sr`` counts each undirected relation twice, which matches a
    trust file listing both directions; pass ``directed_relations`` to use a
    published directed pair count instead.
    """
    density_r = 100.0 * ratings / (users * items) if users and items else 0.0
    if not users:
        return StatsReport(users, items, ratings, relations, density_r, 0.0, 0.0)
    pairs = directed_relations if directed_relations is not None else 2 * relations
    return StatsReport(users, items, ratings, relations, density_r,
                       100.0 * pairs / (users * users),
                       100.0 * relations / (users * users))


def dataset_stats(ds: Dataset, g: SocialGraph) -> StatsReport:
    if g.m != ds.m:
        raise ValueError(f"graph has {g.m} users but dataset has {ds.m}")
    return stats_from_counts(ds.m, ds.n, len(ds), len(g.edges))


def mask_social_relations(g: SocialGraph, fraction: float, seed: int) -> SocialGraph:
    """Drop ``round(fraction * |E|)`` uniformly chosen edges."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("masking fraction must lie in [0, 1)")
    edges = g.sorted_edges()
    n_drop = _round_half_up(fraction * len(edges))
    if n_drop == 0:
        return SocialGraph(g.m, g.edges)
    drop = stream(seed, "mask").choice(len(edges), size=n_drop, replace=False)
    keep = np.ones(len(edges), dtype=bool)
    keep[drop] = False
    return SocialGraph(g.m, frozenset(e for e, k in zip(edges, keep) if k))
