"""Deconfounded recommendation with social-network confounders."""

__version__ = "0.1.0"

from denc.data import Dataset, SocialGraph, SplitSpec, dataset_stats, split_dataset  # noqa: E402
from denc.synth import ConfounderLevel, SynthConfig, synthesize  # noqa: E402
from denc.embed import WalkConfig, EmbeddingTable, embed_graph  # noqa: E402
from denc.exposure import ExposureModel, fit_exposure  # noqa: E402
from denc.balance import FactorSpace, sinkhorn_wasserstein  # noqa: E402
from denc.rating import RatingParams, ips_loss, predict  # noqa: E402
from denc.trainer import TrainConfig, TrainedModel, evaluate_checkpoint, train  # noqa: E402
from denc.metrics import MetricsReport, mae, rmse  # noqa: E402

__all__ = [
    "ConfounderLevel", "Dataset", "EmbeddingTable", "ExposureModel", "FactorSpace",
    "MetricsReport", "RatingParams", "SocialGraph", "SplitSpec", "SynthConfig", "TrainConfig",
    "TrainedModel", "WalkConfig", "dataset_stats", "embed_graph", "evaluate_checkpoint",
    "fit_exposure", "ips_loss", "mae", "predict", "rmse", "sinkhorn_wasserstein",
    "split_dataset", "synthesize", "train",
]
