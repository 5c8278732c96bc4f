"""Stage-wise optimisation of the full objective, checkpointing and evaluation.

1. confounder vectors from the social graph (frozen afterwards);
2. exposure model fitted on them, giving per-user propensities (frozen unless
   ``joint_exposure`` is set);
3. mini-batch SGD on the IPS rating loss plus the Wasserstein balance term and
   L2 regularisation, with early stopping on validation RMSE.
"""

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from denc import io
from denc._rng import stream
from denc.balance import FactorSpace, sample_balanced_batch, wasserstein_balance
from denc.data import Dataset, SocialGraph
from denc.embed import EmbeddingTable, WalkConfig, embed_graph
from denc.exposure import (ExposureModel, PropensityParams, exposure_log_likelihood,
                           fit_exposure, sample_unobserved)
from denc.metrics import DEFAULT_KS, RELEVANCE_THRESHOLD, MetricsReport, mae, ranking_metrics, rmse
from denc.rating import (RatingParams, init_params, ips_loss, predict_matrix, predict_pairs,
                         scatter_rows)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_exposure", "no_confounder", "naive_mf")


@dataclass(frozen=True)
class TrainConfig:
    lambda_a: float = 1e-4
    lambda_z: float = 1e-4
    lambda_d: float = 1e-4
    l2_reg: float = 1e-4
    k_d: int = 15
    k_a: int = 45
    learning_rate: float = 0.005
    batch_size: int = 128
    max_epochs: int = 2000
    patience: int = 10
    balance_batch_l: int = 32
    clip_floor: float = 0.05
    omega: float = 0.1
    seed: int = 0
    ablation: str = "full"
    joint_exposure: bool = False
    sinkhorn_eps_scale: float = 0.1
    sinkhorn_iters: int = 50
    exposure_learning_rate: float = 0.5
    exposure_epochs: int = 50
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    p: float = 1.0
    q: float = 1.0
    negatives: int = 5
    walk_epochs: int = 5
    walk_learning_rate: float = 0.025
    clamp_min: Optional[float] = None
    clamp_max: Optional[float] = None
    relevance_threshold: float = RELEVANCE_THRESHOLD

    def __post_init__(self):
        for name in ("lambda_a", "lambda_z", "lambda_d", "l2_reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("k_d", "k_a", "batch_size", "balance_batch_l"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be non-negative")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if not 0 < self.clip_floor <= 1:
            raise ValueError("clip_floor must lie in (0, 1]")

    @property
    def uses_exposure(self) -> bool:
        return self.ablation in ("full", "no_confounder")

    @property
    def uses_confounder(self) -> bool:
        return self.ablation in ("full", "no_exposure")

    @property
    def effective_lambda_d(self) -> float:
        return self.lambda_d if self.uses_exposure else 0.0

    def walk_config(self) -> WalkConfig:
        return WalkConfig(walks_per_node=self.walks_per_node, walk_length=self.walk_length,
                          window=self.window, p=self.p, q=self.q, negatives=self.negatives,
                          dim=self.k_a, epochs=self.walk_epochs,
                          learning_rate=self.walk_learning_rate,
                          seed=int(stream(self.seed, "embed").integers(2 ** 63)))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values) -> "TrainConfig":
        """Build from string values (e.g. a parsed config file); unknown keys are ignored."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            kwargs[f.name] = _coerce(f.type, raw, f.name)
        return cls(**kwargs)


def _coerce(tp, raw, name):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if tp in (bool, "bool"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if tp in (int, "int"):
        return int(text)
    if tp in (float, "float"):
        return float(text)
    if tp in (str, "str"):
        return text
    # Optional[float]
    if text.lower() in ("", "none"):
        return None
    return float(text)


@dataclass
class TrainedModel:
    params: RatingParams
    exposure: Optional[ExposureModel]
    embeddings: EmbeddingTable
    rating_Z: np.ndarray
    propensities: np.ndarray
    history: List[dict]
    best_epoch: int
    config: TrainConfig
    seen_keys: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def predict_matrix(self) -> np.ndarray:
        return predict_matrix(self.params, self.rating_Z)

    def predict_pairs(self, users, items) -> np.ndarray:
        return predict_pairs(users, items, self.params, self.rating_Z)


def joint_loss(l_y, l_a=0.0, l_z=0.0, l_d=0.0, reg=0.0, cfg: Optional[TrainConfig] = None,
               lambda_a=None, lambda_z=None, lambda_d=None, l2_reg=None) -> float:
    """``L_y + lambda_a L_a + lambda_z L_z + lambda_d L_d + l2_reg * reg``.

    Coefficients default to those of ``cfg``; explicit keyword values win.
    ``reg`` is the squared norm of the regularised parameters.
    """
    cfg = cfg or TrainConfig()
    la = cfg.lambda_a if lambda_a is None else lambda_a
    lz = cfg.lambda_z if lambda_z is None else lambda_z
    ld = cfg.lambda_d if lambda_d is None else lambda_d
    lr = cfg.l2_reg if l2_reg is None else l2_reg
    return float(l_y + la * l_a + lz * l_z + ld * l_d + lr * reg)


def _val_metrics(params, Z, val: Dataset, cfg: TrainConfig):
    if len(val) == 0:
        return float("nan"), float("nan")
    pred = _clamp(predict_pairs(val.users, val.items, params, Z), cfg)
    return mae(pred, val.ratings), rmse(pred, val.ratings)


def _clamp(pred, cfg: TrainConfig):
    if cfg.clamp_min is None and cfg.clamp_max is None:
        return pred
    return np.clip(pred, cfg.clamp_min, cfg.clamp_max)


def train(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset, g: SocialGraph,
          embeddings: Optional[EmbeddingTable] = None) -> TrainedModel:
    """Run all three stages and restore the best-validation checkpoint.

    ``embeddings`` skips stage 1 when supplied (it must match ``cfg.k_a``).
    """
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    if g.m != train_ds.m or val_ds.m != train_ds.m or val_ds.n != train_ds.n:
        raise ValueError("train, validation and graph must share the same index space")
    m, n = train_ds.m, train_ds.n

    # stage 1
    need_embedding = cfg.uses_confounder or cfg.uses_exposure
    if embeddings is None:
        embeddings = (embed_graph(g, cfg.walk_config()) if need_embedding
                      else EmbeddingTable.zeros(m, cfg.k_a))
    if embeddings.vectors.shape != (m, cfg.k_a):
        raise ValueError(f"embedding table has shape {embeddings.vectors.shape}, "
                         f"expected {(m, cfg.k_a)}")
    Z = embeddings.vectors
    rating_Z = Z if cfg.uses_confounder else np.zeros_like(Z)
    l_z = embeddings.loss if need_embedding and np.isfinite(embeddings.loss) else 0.0

    # stage 2
    exposure = None
    l_a = 0.0
    if cfg.uses_exposure:
        exposure = fit_exposure(train_ds, Z, omega=cfg.omega,
                                learning_rate=cfg.exposure_learning_rate,
                                max_epochs=cfg.exposure_epochs,
                                seed=int(stream(cfg.seed, "exposure").integers(2 ** 63)))
        propensities = exposure.propensities(Z)
        l_a = exposure.loss
    else:
        propensities = np.ones(m)

    # stage 3
    params = init_params(m, n, cfg.k_d, cfg.k_a, stream(cfg.seed, "train.init"))
    train_keys = np.sort(train_ds.keys)
    lambda_d = cfg.effective_lambda_d
    history: List[dict] = []

    def record(epoch, l_y, l_d, reg):
        v_mae, v_rmse = _val_metrics(params, rating_Z, val_ds, cfg)
        row = {"epoch": epoch, "L_y": l_y, "L_a": l_a, "L_d": l_d,
               "L": joint_loss(l_y, l_a, l_z, l_d, reg, cfg, lambda_d=lambda_d),
               "val_MAE": v_mae, "val_RMSE": v_rmse}
        history.append(row)
        return row

    init_loss = ips_loss(train_ds.users, train_ds.items, train_ds.ratings, params, rating_Z,
                         propensities[train_ds.users], cfg.clip_floor).loss
    row = record(0, init_loss, 0.0, 0.0)
    best = params.copy()
    best_epoch, best_score = 0, _score(row)
    exposure_params = exposure.params if exposure is not None else None

    for epoch in range(1, cfg.max_epochs + 1):
        order = stream(cfg.seed, "train.epoch", epoch).permutation(len(train_ds))
        sum_y = sum_d = sum_reg = 0.0
        steps = 0
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            sel = order[start:start + cfg.batch_size]
            u, i, y = train_ds.users[sel], train_ds.items[sel], train_ds.ratings[sel]
            if cfg.joint_exposure and exposure is not None:
                exposure_params = _exposure_step(exposure, exposure_params, Z, u, train_ds,
                                                 train_keys, cfg, epoch, step)
                propensities = 1.0 / (1.0 + np.exp(-(Z @ exposure_params.w0 + exposure_params.b0)))
            res = ips_loss(u, i, y, params, rating_Z, propensities[u], cfg.clip_floor)
            gU, gI, gW = res.grad_U, res.grad_I, res.grad_W
            B = len(sel)
            reg = float((np.sum(params.U[u] ** 2) + np.sum(params.I[i] ** 2)
                         + np.sum(params.W[u] ** 2)) / B)
            if cfg.l2_reg > 0:
                c = 2.0 * cfg.l2_reg / B
                gU += scatter_rows(gU.shape, u, c * params.U[u])
                gI += scatter_rows(gI.shape, i, c * params.I[i])
                gW += scatter_rows(gW.shape, u, c * params.W[u])
            l_d = 0.0
            if lambda_d > 0:
                batch = sample_balanced_batch(params.fs, train_keys, cfg.balance_batch_l,
                                              stream(cfg.seed, "train.balance", epoch, step))
                ot = wasserstein_balance(batch.exposed, batch.unexposed, cfg.sinkhorn_eps_scale,
                                         cfg.sinkhorn_iters)
                l_d = ot.distance
                k = cfg.k_d
                pu = np.concatenate([batch.exposed_pairs[:, 0], batch.unexposed_pairs[:, 0]])
                pi = np.concatenate([batch.exposed_pairs[:, 1], batch.unexposed_pairs[:, 1]])
                grad = lambda_d * np.vstack([ot.grad_a, ot.grad_b])
                gU += scatter_rows(gU.shape, pu, grad[:, :k])
                gI += scatter_rows(gI.shape, pi, grad[:, k:])
            params.fs.U -= cfg.learning_rate * gU
            params.fs.I -= cfg.learning_rate * gI
            params.W -= cfg.learning_rate * gW
            sum_y += res.loss
            sum_d += l_d
            sum_reg += reg
            steps += 1
        if not np.all(np.isfinite(params.U)) or not np.all(np.isfinite(params.I)):
            raise FloatingPointError(f"parameters diverged at epoch {epoch}; "
                                     "lower the learning rate")
        row = record(epoch, sum_y / steps, sum_d / steps, sum_reg / steps)
        log.debug("epoch %d %s", epoch, row)
        if _score(row) < best_score:
            best, best_epoch, best_score = params.copy(), epoch, _score(row)
        elif epoch - best_epoch > cfg.patience:
            break

    if exposure is not None and exposure_params is not None:
        exposure.params = exposure_params
    return TrainedModel(best, exposure, embeddings, rating_Z, propensities, history,
                        best_epoch, cfg)


def _score(row):
    v = row["val_RMSE"]
    return v if np.isfinite(v) else row["L_y"]


def _exposure_step(exposure, params: PropensityParams, Z, users, train_ds, train_keys,
                   cfg: TrainConfig, epoch, step) -> PropensityParams:
    rng = stream(cfg.seed, "train.exposure", epoch, step)
    neg = sample_unobserved(train_ds.m, train_ds.n, train_keys, len(users), rng) // train_ds.n
    probe = ExposureModel(params, exposure.omega, exposure.rating_prior)
    _, d_w, d_b = exposure_log_likelihood(users, neg, Z, probe)
    scale = cfg.learning_rate * cfg.lambda_a
    return PropensityParams(params.w0 - scale * d_w, params.b0 - scale * d_b)


def evaluate_checkpoint(model: TrainedModel, test: Optional[Dataset] = None,
                        truth: Optional[np.ndarray] = None, seen: Optional[Dataset] = None,
                        ks=DEFAULT_KS) -> MetricsReport:
    """MAE/RMSE and P@K/R@K of a trained model.

    With ``truth`` (a dense ``m x n`` table), rating errors cover every cell not
    in ``seen`` (the cells used for fitting); otherwise they cover ``test``.
    Rankings use ``test`` when given and the held-out truth cells otherwise.
    """
    cfg = model.config
    scores = model.predict_matrix()
    m, n = scores.shape
    seen_keys = seen.keys if seen is not None else np.empty(0, np.int64)
    if truth is not None:
        mask = np.ones(m * n, dtype=bool)
        mask[seen_keys] = False
        held = np.flatnonzero(mask)
        if held.size == 0:
            raise ValueError("no held-out cells to evaluate")
        pred = _clamp(scores.ravel()[held], cfg)
        err_mae, err_rmse = mae(pred, truth.ravel()[held]), rmse(pred, truth.ravel()[held])
        n_pairs = held.size
    else:
        if test is None or len(test) == 0:
            raise ValueError("empty test set")
        pred = _clamp(scores[test.users, test.items], cfg)
        err_mae, err_rmse = mae(pred, test.ratings), rmse(pred, test.ratings)
        n_pairs = len(test)
    if test is not None and len(test):
        ru, ri, rr = test.users, test.items, test.ratings
    else:
        ru, ri = np.divmod(held, n)
        rr = truth.ravel()[held]
    prec, rec, n_users = ranking_metrics(scores, seen_keys, ru, ri, rr, ks,
                                         cfg.relevance_threshold)
    return MetricsReport(err_mae, err_rmse, tuple(ks), prec, rec, cfg.relevance_threshold,
                         int(n_pairs), n_users)


HISTORY_FIELDS = ("epoch", "L_y", "L_a", "L_d", "L", "val_MAE", "val_RMSE")


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def save_checkpoint(model: TrainedModel, directory) -> None:
    """Binary tables for U, I, W and Z plus JSON metadata and CSV history."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_table(d / "U.bin", model.params.U)
    io.write_table(d / "I.bin", model.params.I)
    io.write_table(d / "W.bin", model.params.W)
    io.write_table(d / "Z.bin", model.embeddings.vectors)
    io.write_table(d / "propensity.bin", model.propensities[:, None])
    if model.exposure is not None:
        (d / "exposure.json").write_text(model.exposure.to_json())
    meta = {"config": model.config.to_dict(), "best_epoch": model.best_epoch,
            "epochs_run": len(model.history) - 1, "embedding_loss": model.embeddings.loss}
    (d / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    write_history(d / "history.csv", model.history)


def load_checkpoint(directory) -> TrainedModel:
    d = Path(directory)
    meta = json.loads((d / "metadata.json").read_text())
    cfg = TrainConfig(**meta["config"])
    params = RatingParams(FactorSpace(io.read_table(d / "U.bin"), io.read_table(d / "I.bin")),
                          io.read_table(d / "W.bin"))
    Z = io.read_table(d / "Z.bin")
    emb = EmbeddingTable(Z, ~np.any(Z != 0, axis=1), meta.get("embedding_loss", float("nan")))
    exposure = None
    if (d / "exposure.json").exists():
        exposure = ExposureModel.from_json((d / "exposure.json").read_text())
    history = []
    with open(d / "history.csv") as fh:
        for row in csv.DictReader(fh):
            history.append({k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()})
    rating_Z = Z if cfg.uses_confounder else np.zeros_like(Z)
    prop = io.read_table(d / "propensity.bin")[:, 0]
    return TrainedModel(params, exposure, emb, rating_Z, prop, history, meta["best_epoch"], cfg)
