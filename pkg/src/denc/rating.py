"""Rating prediction ``U_u . I_i + W_u . Z_u`` and its IPS-weighted squared loss."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from denc.balance import FactorSpace


@dataclass
class RatingParams:
    fs: FactorSpace
    W: np.ndarray

    def __post_init__(self):
        if self.W.shape[0] != self.fs.U.shape[0]:
            raise ValueError("W must have one row per user")

    @property
    def U(self):
        return self.fs.U

    @property
    def I(self):
        return self.fs.I

    def copy(self) -> "RatingParams":
        return RatingParams(FactorSpace(self.U.copy(), self.I.copy()), self.W.copy())


class PredictionResult(NamedTuple):
    pairs: np.ndarray
    predictions: np.ndarray


class IPSLoss(NamedTuple):
    loss: float
    grad_U: np.ndarray
    grad_I: np.ndarray
    grad_W: np.ndarray


def xavier_uniform(rows, cols, rng):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, (rows, cols))


def init_params(m, n, k_d, k_a, rng) -> RatingParams:
    return RatingParams(FactorSpace(xavier_uniform(m, k_d, rng), xavier_uniform(n, k_d, rng)),
                        xavier_uniform(m, k_a, rng))


def predict(u, i, params: RatingParams, Z) -> float:
    m, n = params.U.shape[0], params.I.shape[0]
    if not (0 <= u < m and 0 <= i < n):
        raise IndexError(f"cell ({u}, {i}) outside {m} x {n}")
    return float(params.U[u] @ params.I[i] + params.W[u] @ Z[u])


def predict_pairs(users, items, params: RatingParams, Z) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    return (np.einsum("ij,ij->i", params.U[users], params.I[items])
            + np.einsum("ij,ij->i", params.W[users], Z[users]))


def predict_matrix(params: RatingParams, Z) -> np.ndarray:
    """Dense ``m x n`` score table."""
    offset = np.einsum("ij,ij->i", params.W, Z)
    return params.U @ params.I.T + offset[:, None]


def ips_weights(propensities, clip_floor=0.05) -> np.ndarray:
    p = np.asarray(propensities, dtype=float)
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("propensities must lie in (0, 1]")
    return 1.0 / np.maximum(p, clip_floor)


def scatter_rows(shape, idx, vals) -> np.ndarray:
    """Dense table of ``shape`` with ``vals[j]`` summed into row ``idx[j]``."""
    rows, k = shape
    flat = (np.asarray(idx, dtype=np.int64)[:, None] * k + np.arange(k)).ravel()
    return np.bincount(flat, weights=np.ravel(vals), minlength=rows * k).reshape(rows, k)


def ips_loss(users, items, ratings, params: RatingParams, Z, propensities,
             clip_floor: float = 0.05) -> IPSLoss:
    """Mean of ``(y - y_hat)^2 / max(pi, clip_floor)`` over the batch, with dense gradients."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size == 0:
        raise ValueError("empty batch")
    w = ips_weights(propensities, clip_floor)
    resid = np.asarray(ratings, float) - predict_pairs(users, items, params, Z)
    loss = float(np.mean(w * resid ** 2))
    coef = -2.0 * w * resid / len(users)
    grad_U = scatter_rows(params.U.shape, users, coef[:, None] * params.I[items])
    grad_I = scatter_rows(params.I.shape, items, coef[:, None] * params.U[users])
    grad_W = scatter_rows(params.W.shape, users, coef[:, None] * Z[users])
    return IPSLoss(loss, grad_U, grad_I, grad_W)


def ips_risk(users, items, ratings, params: RatingParams, Z, propensities, total_cells,
             clip_floor: float = 0.05) -> float:
    """Inverse-propensity estimate of the squared error over all ``total_cells`` cells.

    Unbiased for the full-population mean when every propensity is at least
    ``clip_floor``.
    """
    w = ips_weights(propensities, clip_floor)
    resid = np.asarray(ratings, float) - predict_pairs(users, items, params, Z)
    return float(np.sum(w * resid ** 2) / total_cells)
