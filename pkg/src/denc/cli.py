"""Command-line driver: ``denc {synth,embed,train,eval,analyze,ablate}``.

Every subcommand reads a flat ``key = value`` config, writes its artifacts to
``--out`` and finishes with ``run_manifest.json``. Exit codes: 0 success,
1 usage or validation error, 2 runtime failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from denc import __version__, io
from denc.analysis import (common_item_distribution, interaction_distribution, masking_sweep,
                           sample_cohorts, write_common_items, write_distribution, write_rows)
from denc.data import (Dataset, SocialGraph, SplitSpec, dataset_stats, format_edges,
                       format_ratings, parse_ratings, parse_social_edges, split_dataset)
from denc.embed import embed_graph
from denc.synth import ConfounderLevel, SynthConfig, synthesize
from denc.trainer import (TrainConfig, _coerce, evaluate_checkpoint, load_checkpoint,
                          save_checkpoint, train)

log = logging.getLogger("denc")

COMMANDS = ("synth", "embed", "train", "eval", "analyze", "ablate")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}
ABLATE_DEFAULT = ("full", "no_exposure", "no_confounder")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="denc", description="Deconfounded recommendation experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}",
                                parser_class=_Parser)
    sub.required = True
    helps = {
        "synth": "generate a semi-synthetic confounded dataset",
        "embed": "pre-train social confounder vectors",
        "train": "train a model and write a checkpoint",
        "eval": "evaluate a checkpoint",
        "analyze": "cohort distributions and the masking sweep",
        "ablate": "train the full model and its ablations side by side",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", required=name != "synth", metavar="PATH",
                       help="flat key = value config file")
        p.add_argument("--out", default="out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, default=None, metavar="U64",
                       help="root seed, overrides the config")
        p.add_argument("--log", choices=tuple(LOG_LEVELS), default="warn", help="log level")
    return parser


# settings --------------------------------------------------------------

def _threads() -> int:
    raw = os.environ.get("DENC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"DENC_THREADS must be an integer, got {raw!r}")


def _get(settings, key, tp, default):
    if key not in settings:
        return default
    return _coerce(tp, settings[key], key)


def _float_list(settings, key, default):
    if key not in settings:
        return list(default)
    text = settings[key].strip()
    return [float(v) for v in text.split(",")] if text else []


def _int_list(settings, key, default):
    return [int(v) for v in _float_list(settings, key, default)]


def synth_config(settings) -> SynthConfig:
    kw = {}
    for f in fields(SynthConfig):
        if f.name == "beta_per_user" or f.name not in settings:
            continue
        kw[f.name] = _coerce(f.type, settings[f.name], f.name)
    return SynthConfig(**kw)


def split_spec(settings) -> SplitSpec:
    return SplitSpec(_get(settings, "test_fraction", float, 0.2),
                     _get(settings, "val_fraction_of_train", float, 0.2),
                     _get(settings, "seed", int, 0))


def _resolve(settings, key, base: Path, default_name):
    if key in settings:
        p = Path(settings[key])
        return p if p.is_absolute() else base / p
    if "data" in settings:
        d = Path(settings["data"])
        return (d if d.is_absolute() else base / d) / default_name
    return None


def load_inputs(settings, base: Path):
    """Ratings, graph and (if present) the dense truth table named by the config.

    A directory written by ``synth`` keeps integer ids and a ``config.json``
    with ``m`` and ``n``; such ids are used as indices directly.
    """
    ratings_path = _resolve(settings, "ratings", base, "ratings.tsv")
    trust_path = _resolve(settings, "trust", base, "trust.tsv")
    if ratings_path is None or trust_path is None:
        raise UsageError("config must name `data` or both `ratings` and `trust`")
    for p in (ratings_path, trust_path):
        if not p.exists():
            raise UsageError(f"missing input file {p}")
    meta_path = ratings_path.parent / "config.json"
    truth = None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        m, n = int(meta["m"]), int(meta["n"])
        tab = _read_tsv(ratings_path, 3)
        ds = Dataset(m, n, tab[:, 0].astype(np.int64), tab[:, 1].astype(np.int64), tab[:, 2])
        e = _read_tsv(trust_path, 2).astype(np.int64)
        g = SocialGraph(m, frozenset((int(a), int(b)) for a, b in e))
        truth_path = _resolve(settings, "truth", base, "truth.tsv") or ratings_path.parent / "truth.tsv"
        if truth_path.exists():
            t = _read_tsv(truth_path, 3)
            truth = np.full((m, n), np.nan)
            truth[t[:, 0].astype(np.int64), t[:, 1].astype(np.int64)] = t[:, 2]
            if np.isnan(truth).any():
                raise UsageError(f"{truth_path} does not cover every cell")
    else:
        with open(ratings_path, encoding="utf-8") as fh:
            parsed = parse_ratings(fh)
        with open(trust_path, encoding="utf-8") as fh:
            edges = parse_social_edges(fh, parsed.user_ids)
        if parsed.duplicates:
            log.warning("%d duplicate ratings replaced by their last occurrence", parsed.duplicates)
        if edges.self_loops or edges.unknown:
            log.warning("trust file: %d self-loops, %d unknown ids skipped",
                        edges.self_loops, edges.unknown)
        ds, g = parsed.dataset, edges.graph
    return ds, g, truth


def _read_tsv(path, ncols):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != ncols:
                raise UsageError(f"{path}:{lineno}: expected {ncols} fields")
            rows.append([float(p) for p in parts])
    return np.asarray(rows, dtype=float).reshape(-1, ncols)


# subcommands -----------------------------------------------------------

def cmd_synth(settings, out: Path):
    cfg = synth_config(settings)
    level = ConfounderLevel(_get(settings, "delta", float, 0.35))
    s = synthesize(cfg, level)
    m, n = cfg.m, cfg.n
    (out / "ratings.tsv").write_text(format_ratings(s.dataset))
    (out / "trust.tsv").write_text(format_edges(s.graph))
    uu, ii = np.divmod(np.arange(m * n), n)
    (out / "truth.tsv").write_text("".join(
        f"{u}\t{i}\t{r!r}\n" for u, i, r in zip(uu.tolist(), ii.tolist(),
                                                 s.full_truth.ravel().tolist())))
    (out / "exposure.tsv").write_text("".join(
        f"{u}\t{i}\t{a}\n" for u, i, a in zip(uu.tolist(), ii.tolist(),
                                               s.exposure.ravel().astype(int).tolist())))
    echo = {**cfg.to_dict(), "delta": level.delta, "members": int(s.membership.sum()),
            "observed": len(s.dataset), "edges": len(s.graph.edges)}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True))


def cmd_embed(settings, out: Path, base: Path):
    ds, g, _ = load_inputs(settings, base)
    cfg = TrainConfig.from_mapping(settings)
    table = embed_graph(g, cfg.walk_config(), workers=_threads())
    io.write_table(out / "Z.bin", table.vectors)
    io.write_table_csv(out / "Z.csv", table.vectors)
    info = {"m": table.m, "dim": table.dim, "isolated": int(table.isolated.sum()),
            "loss": table.loss, "walk_config": cfg.walk_config().to_dict()}
    (out / "embedding.json").write_text(json.dumps(info, indent=2, sort_keys=True))


def _evaluate(model, test, truth, seen, settings):
    ks = tuple(_int_list(settings, "ks", (10, 15, 20, 25, 30, 35, 40)))
    return evaluate_checkpoint(model, test, truth=truth, seen=seen, ks=ks)


def cmd_train(settings, out: Path, base: Path):
    ds, g, truth = load_inputs(settings, base)
    cfg = TrainConfig.from_mapping(settings)
    tr, va, te = split_dataset(ds, split_spec(settings))
    model = train(cfg, tr, va, g)
    save_checkpoint(model, out / "checkpoint")
    rep = _evaluate(model, te, truth, tr.concat(va), settings)
    (out / "metrics.json").write_text(rep.to_json())
    (out / "stats.json").write_text(dataset_stats(ds, g).to_json())


def cmd_eval(settings, out: Path, base: Path):
    if "checkpoint" not in settings:
        raise UsageError("config must name `checkpoint`")
    ckpt = Path(settings["checkpoint"])
    ckpt = ckpt if ckpt.is_absolute() else base / ckpt
    if not (ckpt / "metadata.json").exists():
        raise UsageError(f"{ckpt} is not a checkpoint directory")
    ds, g, truth = load_inputs(settings, base)
    model = load_checkpoint(ckpt)
    if model.params.U.shape[0] != ds.m or model.params.I.shape[0] != ds.n:
        raise UsageError("checkpoint and data disagree on the index space")
    tr, va, te = split_dataset(ds, split_spec(settings))
    rep = _evaluate(model, te, truth, tr.concat(va), settings)
    (out / "metrics.json").write_text(rep.to_json())


def cmd_analyze(settings, out: Path, base: Path):
    ds, g, truth = load_inputs(settings, base)
    seed = _get(settings, "seed", int, 0)
    n = _get(settings, "cohort_size", int, 70)
    cohorts = sample_cohorts(ds, g, n, seed)
    (out / "cohorts.json").write_text(json.dumps(cohorts.to_dict(), indent=2))
    for side, members in (("in", cohorts.in_network), ("out", cohorts.out_network)):
        write_distribution(out / f"interaction_dist_{side}.csv",
                           interaction_distribution(members, ds))
    common = common_item_distribution(ds, g, cohorts, _get(settings, "pairs_per_user", int, 4),
                                      seed)
    for side, summary in common.items():
        write_common_items(out / f"common_items_{side}.csv", summary)
    fractions = _float_list(settings, "mask_fractions", (0.0, 0.2, 0.5, 0.8))
    seeds = _int_list(settings, "sweep_seeds", (seed,))
    masking_sweep(TrainConfig.from_mapping(settings), ds, g, fractions, seeds, truth=truth,
                  split=split_spec(settings), workers=_threads(),
                  out_csv=out / "masking_sweep.csv")


def cmd_ablate(settings, out: Path, base: Path):
    ds, g, truth = load_inputs(settings, base)
    cfg = TrainConfig.from_mapping(settings)
    names = settings.get("ablations", ",".join(ABLATE_DEFAULT)).split(",")
    tr, va, te = split_dataset(ds, split_spec(settings))
    embedding = embed_graph(g, cfg.walk_config(), workers=_threads())
    rows = []
    for name in (s.strip() for s in names):
        model = train(cfg.replace(ablation=name), tr, va, g, embeddings=embedding)
        rep = _evaluate(model, te, truth, tr.concat(va), settings)
        k = 20 if 20 in rep.ks else rep.ks[0]
        rows.append({"ablation": name, "MAE": rep.mae, "RMSE": rep.rmse,
                     f"P@{k}": rep.precision_at_k[k], f"R@{k}": rep.recall_at_k[k],
                     "best_epoch": model.best_epoch})
    write_rows(out / "ablation.csv", tuple(rows[0]), rows)


# entry point -----------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command, settings, seed, wall):
    artifacts = {str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*"))
                 if p.is_file() and p.name != "run_manifest.json"}
    manifest = {"command": command, "config": settings, "seed": seed, "version": __version__,
                "wall_time_s": wall, "artifacts": artifacts}
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=LOG_LEVELS[args.log], format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        settings = {}
        base = Path.cwd()
        if args.config:
            cfg_path = Path(args.config)
            if not cfg_path.exists():
                raise UsageError(f"config file {cfg_path} not found")
            settings = io.parse_config(cfg_path.read_text())
            base = cfg_path.resolve().parent
        if args.seed is not None:
            settings["seed"] = str(args.seed)
        if not args.out:
            raise UsageError("--out must be non-empty")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        # validate the configs up front so bad values are usage errors
        TrainConfig.from_mapping(settings)
        if args.command == "synth":
            synth_config(settings)
        _threads()
    except (UsageError, ValueError, OSError) as exc:
        print(f"denc {args.command}: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "synth":
            cmd_synth(settings, out)
        else:
            {"embed": cmd_embed, "train": cmd_train, "eval": cmd_eval,
             "analyze": cmd_analyze, "ablate": cmd_ablate}[args.command](settings, out, base)
    except UsageError as exc:
        print(f"denc {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported and mapped to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"denc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    write_manifest(out, args.command, settings, _get(settings, "seed", int, 0),
                   time.perf_counter() - start)
    return 0


def main():
    sys.exit(dispatch())
