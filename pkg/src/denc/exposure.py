"""Logistic exposure propensities over social confounder vectors."""

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np

from denc._rng import stream
from denc.data import Dataset


@dataclass
class PropensityParams:
    w0: np.ndarray
    b0: float = 0.0

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=float)
        if not (np.all(np.isfinite(self.w0)) and np.isfinite(self.b0)):
            raise ValueError("non-finite propensity parameters")

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(dim), 0.0)


@dataclass
class ExposureModel:
    params: PropensityParams
    omega: float = 0.1
    rating_prior: float = 1.0
    loss: float = float("nan")
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.omega < 1.0:
            raise ValueError("omega must lie in [0, 1)")
        if not 0.0 < self.rating_prior <= 1.0:
            raise ValueError("rating_prior must lie in (0, 1]")

    def propensities(self, Z) -> np.ndarray:
        """pi(a=1; z_u) for every row of ``Z``."""
        return propensity(Z, 1, self.params)

    def to_json(self) -> str:
        return json.dumps({"w0": self.params.w0.tolist(), "b0": float(self.params.b0),
                           "omega": self.omega, "rating_prior": self.rating_prior,
                           "k_a": int(self.params.w0.shape[0])}, indent=2)

    @classmethod
    def from_json(cls, text) -> "ExposureModel":
        d = json.loads(text)
        if len(d["w0"]) != d["k_a"]:
            raise ValueError("k_a does not match w0 length")
        return cls(PropensityParams(np.array(d["w0"]), d["b0"]), d["omega"], d["rating_prior"])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def propensity(z, a, params: PropensityParams):
    """``sigmoid((2a - 1) * (z . w0 + b0))``; ``z`` may be one vector or a matrix of rows."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.w0.shape[0]:
        raise ValueError(f"confounder has dim {z.shape[-1]}, weights have {params.w0.shape[0]}")
    sign = 2.0 * np.asarray(a, dtype=float) - 1.0
    out = _sigmoid(sign * (z @ params.w0 + params.b0))
    return float(out) if np.ndim(out) == 0 else out


def exposure_marginal(model: ExposureModel, z):
    """P(a=1) = pi * P(rated) + omega * (1 - P(rated)); P(a=?) is its complement."""
    p1 = propensity(z, 1, model.params) * model.rating_prior + model.omega * (1.0 - model.rating_prior)
    return p1, 1.0 - p1


def exposure_log_likelihood(observed_users, negative_users, Z, model: ExposureModel):
    """Negative log-likelihood of the exposure assignment and its gradient.

    Observed cells contribute ``-log pi(1; z_u)``; sampled unobserved cells
    contribute ``-(1 - omega) log pi(0; z_u)``. Only the user index matters
    because the confounder is per user. Returns ``(loss, d_w0, d_b0)``.
    """
    observed_users = np.asarray(observed_users, dtype=np.int64)
    negative_users = np.asarray(negative_users, dtype=np.int64)
    if observed_users.size == 0:
        raise ValueError("no observed pairs")
    Z = np.asarray(Z, dtype=float)
    m = Z.shape[0]
    # the likelihood only depends on per-user scores, so aggregate by user
    n_pos = np.bincount(observed_users, minlength=m)
    n_neg = np.bincount(negative_users, minlength=m)
    s = Z @ model.params.w0 + model.params.b0
    wneg = 1.0 - model.omega
    loss = -(n_pos @ _log_sigmoid(s)) - wneg * (n_neg @ _log_sigmoid(-s))
    # d/ds of -log sigmoid(s) = sigmoid(s) - 1; of -log sigmoid(-s) = sigmoid(s)
    g = n_pos * (_sigmoid(s) - 1.0) + wneg * n_neg * _sigmoid(s)
    d_w0 = Z.T @ g
    d_b0 = g.sum()
    return float(loss), d_w0, float(d_b0)


_DENSE_LOOKUP_LIMIT = 50_000_000


def sample_unobserved(m: int, n: int, observed: np.ndarray, size: int, rng) -> np.ndarray:
    """Uniform draw (with replacement) of ``size`` cells not in the sorted key array ``observed``.

    Cells are returned as flat keys ``u * n + i``.
    """
    total = m * n
    if len(observed) >= total:
        raise ValueError("no unobserved cells to sample")
    if total <= _DENSE_LOOKUP_LIMIT:
        taken = np.zeros(total, dtype=bool)
        taken[observed] = True
        is_observed = taken.__getitem__
    else:
        last = max(len(observed) - 1, 0)

        def is_observed(cand):
            if not len(observed):
                return np.zeros(len(cand), bool)
            return observed[np.minimum(np.searchsorted(observed, cand), last)] == cand
    out = np.empty(0, dtype=np.int64)
    while len(out) < size:
        need = size - len(out)
        cand = rng.integers(0, total, size=int(need * 1.2) + 8)
        out = np.concatenate([out, cand[~is_observed(cand)]])
    return out[:size]


def fit_exposure(train: Dataset, Z, omega: float = 0.1, learning_rate: float = 0.5,
                 max_epochs: int = 50, batch_size: int = 1024, tol: float = 1e-6,
                 negative_ratio: float = 1.0, seed: int = 0) -> ExposureModel:
    """Fit the propensity weights by mini-batch SGD from zero.

    Every epoch redraws ``round(negative_ratio * |O|)`` unobserved cells as
    label-0 examples weighted by ``1 - omega``. Stops when the epoch's mean
    loss changes by less than ``tol`` (relative) or after ``max_epochs``.
    """
    Z = np.asarray(Z, dtype=float)
    if len(train) == 0:
        raise ValueError("empty training set")
    if Z.shape[0] != train.m:
        raise ValueError(f"embedding covers {Z.shape[0]} users, dataset has {train.m}")
    model = ExposureModel(PropensityParams.zeros(Z.shape[1]), omega,
                          len(train) / (train.m * train.n))
    n_pos = len(train)
    n_neg = int(round(negative_ratio * n_pos))
    wneg = 1.0 - omega
    keys = np.sort(train.keys)
    prev = None
    for epoch in range(max_epochs):
        rng = stream(seed, "exposure.epoch", epoch)
        neg_users = sample_unobserved(train.m, train.n, keys, n_neg, rng) // train.n
        users = np.concatenate([train.users, neg_users])
        labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
        weights = np.where(labels == 1.0, 1.0, wneg)
        order = rng.permutation(len(users))
        w0, b0 = model.params.w0, model.params.b0
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            zb = Z[users[sel]]
            s = zb @ w0 + b0
            # weighted logistic gradient: w * (sigmoid(s) - y)
            g = weights[sel] * (_sigmoid(s) - labels[sel]) / len(sel)
            w0 = w0 - learning_rate * (zb.T @ g)
            b0 = b0 - learning_rate * g.sum()
        model.params = PropensityParams(w0, float(b0))
        loss, _, _ = exposure_log_likelihood(train.users, neg_users, Z, model)
        model.loss = loss
        mean_loss = loss / (n_pos + wneg * n_neg)
        model.history.append(mean_loss)
        if prev is not None and abs(prev - mean_loss) <= tol * max(abs(prev), 1e-12):
            break
        prev = mean_loss
    return model
