"""Wasserstein-1 discrepancy between exposed and unexposed pair representations.

A cell ``(u, i)`` is represented by the concatenation ``[U_u; I_i]``. The
discrepancy between a mini-batch of ``l`` observed cells and ``l`` unobserved
cells is approximated with log-domain Sinkhorn; gradients treat the
transport plan as a constant.
"""

import itertools
import json
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from denc.exposure import sample_unobserved


@dataclass
class FactorSpace:
    U: np.ndarray
    I: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.I.ndim != 2 or self.U.shape[1] != self.I.shape[1]:
            raise ValueError("U and I must be 2-d with the same number of columns")

    @property
    def k(self) -> int:
        return self.U.shape[1]

    def pair_reps(self, users, items) -> np.ndarray:
        return np.hstack([self.U[users], self.I[items]])


@dataclass
class TransportPlan:
    gamma: np.ndarray
    marginal_error: float

    def marginals(self):
        return self.gamma.sum(axis=1), self.gamma.sum(axis=0)


@dataclass
class SinkhornResult:
    distance: float
    plan: TransportPlan
    eps_reg: float
    iterations: int
    converged: bool
    # marginal error of the last Sinkhorn iterate, before rounding
    sinkhorn_error: float = float("nan")
    grad_a: Optional[np.ndarray] = None
    grad_b: Optional[np.ndarray] = None

    def dump(self, C) -> str:
        """JSON diagnostic of cost matrix, plan and distance."""
        return json.dumps({"cost": np.asarray(C).tolist(), "plan": self.plan.gamma.tolist(),
                           "distance": self.distance, "eps_reg": self.eps_reg,
                           "iterations": self.iterations, "converged": self.converged})


class BalancedBatch(NamedTuple):
    exposed: np.ndarray
    unexposed: np.ndarray
    exposed_pairs: np.ndarray
    unexposed_pairs: np.ndarray


def sample_balanced_batch(fs: FactorSpace, observed_keys, l: int, rng) -> BalancedBatch:
    """Draw ``l`` observed and ``l`` unobserved cells and stack their representations.

    ``observed_keys`` are flat cell ids ``u * n + i``. Observed cells are drawn
    without replacement; unobserved ones by rejection, without replacement.
    """
    m, n = fs.U.shape[0], fs.I.shape[0]
    observed_keys = np.asarray(observed_keys, dtype=np.int64)
    if observed_keys.size > 1 and not np.all(observed_keys[1:] > observed_keys[:-1]):
        observed_keys = np.unique(observed_keys)
    if len(observed_keys) < l:
        raise ValueError(f"only {len(observed_keys)} exposed cells, need {l}")
    if m * n - len(observed_keys) < l:
        raise ValueError(f"only {m * n - len(observed_keys)} unexposed cells, need {l}")
    pos = observed_keys[rng.choice(len(observed_keys), size=l, replace=False)]
    neg = np.empty(0, dtype=np.int64)
    while len(neg) < l:
        draw = sample_unobserved(m, n, observed_keys, l - len(neg), rng)
        neg = np.unique(np.concatenate([neg, draw]))
    neg = rng.permutation(neg)[:l]
    pu, pi = np.divmod(pos, n)
    nu, ni = np.divmod(neg, n)
    return BalancedBatch(fs.pair_reps(pu, pi), fs.pair_reps(nu, ni),
                         np.stack([pu, pi], 1), np.stack([nu, ni], 1))


def cost_matrix(A, B) -> np.ndarray:
    """Pairwise Euclidean distances ``C[i, j] = ||A_i - B_j||``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"point dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _logsumexp(x, axis):
    mx = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(mx, axis=axis) + np.log(np.sum(np.exp(x - mx), axis=axis))


def sinkhorn_wasserstein(C, eps_reg: Optional[float] = None, max_iters: int = 50,
                         tol: float = 1e-6, A=None, B=None) -> SinkhornResult:
    """Entropic optimal transport between two uniform clouds of equal size.

    ``eps_reg`` defaults to ``0.1 * mean(C)``. The iteration stops once every
    row and column of the plan sums to ``1/l`` within ``tol``; if that does not
    happen within ``max_iters`` the result is flagged ``converged=False``.
    The last iterate is then rounded onto the feasible set so the returned
    plan has exact uniform marginals. The distance is ``<gamma, C>``. When the point clouds ``A`` and ``B``
    behind ``C`` are given, the frozen-plan gradients of the distance with
    respect to both are returned as well.
    """
    C = np.asarray(C, dtype=float)
    l = C.shape[0]
    if C.ndim != 2 or C.shape[1] != l or l == 0:
        raise ValueError("cost matrix must be square and non-empty")
    mean_c = float(C.mean())
    if eps_reg is None:
        eps_reg = 0.1 * mean_c if mean_c > 0 else 1.0
    if eps_reg <= 0:
        raise ValueError("eps_reg must be positive")
    log_w = -np.log(l)
    f = np.zeros(l)
    g = np.zeros(l)
    err = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = eps_reg * (log_w - _logsumexp((g[None, :] - C) / eps_reg, axis=1))
        g = eps_reg * (log_w - _logsumexp((f[:, None] - C) / eps_reg, axis=0))
        gamma = np.exp((f[:, None] + g[None, :] - C) / eps_reg)
        err = max(np.abs(gamma.sum(axis=1) - 1.0 / l).max(),
                  np.abs(gamma.sum(axis=0) - 1.0 / l).max())
        if err <= tol:
            break
    gamma = round_to_uniform(np.exp((f[:, None] + g[None, :] - C) / eps_reg))
    final_err = max(np.abs(gamma.sum(axis=1) - 1.0 / l).max(),
                    np.abs(gamma.sum(axis=0) - 1.0 / l).max())
    res = SinkhornResult(float(np.sum(gamma * C)), TransportPlan(gamma, float(final_err)),
                         float(eps_reg), it, bool(err <= tol), float(err))
    if A is not None and B is not None:
        res.grad_a, res.grad_b = plan_gradients(gamma, C, A, B)
    return res


def round_to_uniform(F):
    """Project a positive matrix onto couplings with uniform marginals.

    Scale rows, then columns, down to their targets and spread the remaining
    mass as a rank-one correction (Altschuler, Weed & Rigollet, 2017).
    """
    l = F.shape[0]
    target = np.full(l, 1.0 / l)
    F = F * np.minimum(target / F.sum(axis=1), 1.0)[:, None]
    F = F * np.minimum(target / F.sum(axis=0), 1.0)[None, :]
    err_r = target - F.sum(axis=1)
    err_c = target - F.sum(axis=0)
    mass = err_r.sum()
    if mass > 0:
        F = F + np.outer(err_r, err_c) / mass
    return F


def plan_gradients(gamma, C, A, B):
    """Gradients of ``sum_ij gamma_ij ||A_i - B_j||`` w.r.t. ``A`` and ``B`` with ``gamma`` fixed."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(C > 0, gamma / C, 0.0)
    grad_a = w.sum(axis=1)[:, None] * A - w @ B
    grad_b = w.sum(axis=0)[:, None] * B - w.T @ A
    return grad_a, grad_b


def wasserstein_balance(A, B, eps_scale: float = 0.1, max_iters: int = 50,
                        tol: float = 1e-6) -> SinkhornResult:
    """Sinkhorn distance between point clouds ``A`` and ``B`` with gradients."""
    C = cost_matrix(A, B)
    mean_c = float(C.mean())
    eps = eps_scale * mean_c if mean_c > 0 else 1.0
    return sinkhorn_wasserstein(C, eps, max_iters, tol, A=A, B=B)


def exact_wasserstein_oracle(C) -> float:
    """Exact W1 for uniform clouds of size ``l <= 8`` by enumerating assignments."""
    C = np.asarray(C, dtype=float)
    l = C.shape[0]
    if l > 8:
        raise ValueError("assignment enumeration is limited to l <= 8")
    perms = np.array(list(itertools.permutations(range(l))))
    return float(C[np.arange(l)[None, :], perms].sum(axis=1).min() / l)
