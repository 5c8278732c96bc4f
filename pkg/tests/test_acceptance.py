"""Acceptance gate: each test checks one criterion and reports a PASS/FAIL line."""

import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from denc.analysis import interaction_distribution, masking_sweep, sample_cohorts
from denc.balance import (FactorSpace, cost_matrix, exact_wasserstein_oracle,
                          sinkhorn_wasserstein, wasserstein_balance)
from denc.cli import dispatch
from denc.data import SocialGraph, SplitSpec, split_dataset, stats_from_counts
from denc.embed import WalkConfig, cosine_similarity, embed_graph, sgns_pair_loss
from denc.exposure import ExposureModel, PropensityParams, exposure_log_likelihood
from denc.metrics import mae, ranking_metrics, rmse
from denc.rating import RatingParams, ips_loss, ips_risk, predict_matrix
from denc.synth import ConfounderLevel, SynthConfig, synthesize
from denc.trainer import TrainConfig, evaluate_checkpoint, train

SEEDS = (0, 1, 2, 3, 4)
VARIANTS = ("full", "naive_mf", "no_exposure", "no_confounder")
# the rating loss is a per-batch mean, so large batches need a large step
RUN_CFG = TrainConfig(batch_size=1024, learning_rate=1.0, max_epochs=40, patience=3)


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def synth_setup(seed):
    cfg = SynthConfig(m=500, n=800, membership_fraction=0.5, edge_prob=0.05, beta=2.0,
                      noise_sd=1.0, seed=seed)
    return synthesize(cfg, ConfounderLevel(0.35))


@pytest.fixture(scope="module")
def runs():
    """Held-out full-truth MAE of every variant for every seed, plus timings."""
    out = {}
    for s in SEEDS:
        t0 = time.perf_counter()
        syn = synth_setup(s)
        tr, va, _ = split_dataset(syn.dataset, SplitSpec(seed=s))
        cfg = RUN_CFG.replace(seed=s)
        emb = embed_graph(syn.graph, cfg.walk_config())
        seen = tr.concat(va)
        t_base = time.perf_counter() - t0
        row = {"syn": syn, "time": {}}
        for v in VARIANTS:
            t1 = time.perf_counter()
            model = train(cfg.replace(ablation=v), tr, va, syn.graph, embeddings=emb)
            rep = evaluate_checkpoint(model, truth=syn.full_truth, seen=seen, ks=(20,))
            row[v] = rep.mae
            row["time"][v] = time.perf_counter() - t1
        row["time"]["base"] = t_base
        out[s] = row
    return out


def test_criterion_01_debias_ordering(runs):
    gains = [(runs[s]["naive_mf"] - runs[s]["full"]) / runs[s]["naive_mf"] for s in SEEDS]
    wall = sum(runs[s]["time"]["base"] + runs[s]["time"]["full"] + runs[s]["time"]["naive_mf"]
               for s in SEEDS)
    med = statistics.median(gains)
    detail = (f"median relative MAE gain over naive_mf {med:.4f} (need >= 0.05); "
              f"per seed {[round(g, 4) for g in gains]}; runtime {wall:.0f}s (need < 600s)")
    report(1, med >= 0.05 and wall < 600, detail)


def test_criterion_02_ablation_ordering(runs):
    wins = sum(runs[s]["full"] < runs[s]["no_exposure"] and runs[s]["full"] < runs[s]["no_confounder"]
               for s in SEEDS)
    table = {s: {v: round(runs[s][v], 4) for v in VARIANTS} for s in SEEDS}
    report(2, wins >= 4, f"full beats both ablations in {wins}/5 seeds (need >= 4); MAE {table}")


def test_criterion_03_masking_trend(runs):
    fractions = (0.0, 0.2, 0.5, 0.8)
    per_fraction = {0.0: [runs[s]["full"] for s in SEEDS]}
    for s in SEEDS:
        syn = runs[s]["syn"]
        rows = masking_sweep(RUN_CFG, syn.dataset, syn.graph, fractions[1:], [s],
                             truth=syn.full_truth)
        for r in rows:
            per_fraction.setdefault(r["fraction"], []).append(r["MAE"])
    med = [statistics.median(per_fraction[f]) for f in fractions]
    inversions = [(a - b) / a for a, b in zip(med, med[1:]) if b < a]
    ok = len(inversions) == 0 or (len(inversions) == 1 and inversions[0] < 0.01)
    report(3, ok, f"median MAE by fraction {dict(zip(fractions, [round(x, 5) for x in med]))}; "
                  f"inversions {[round(x, 5) for x in inversions]}")


def _fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def test_criterion_04_gradients():
    rng = np.random.default_rng(2024)
    fails = {"L_a": 0, "L_y": 0, "SGNS": 0, "L_d": 0}
    for _ in range(100):
        k = int(rng.integers(1, 6))
        Z = rng.normal(size=(8, k))
        pos, neg = rng.integers(0, 8, 10), rng.integers(0, 8, 10)
        w, b, omega = rng.normal(size=k), np.array([rng.normal()]), float(rng.uniform(0, 0.9))

        def la():
            return exposure_log_likelihood(
                pos, neg, Z, ExposureModel(PropensityParams(w, float(b[0])), omega))[0]

        _, dw, db = exposure_log_likelihood(pos, neg, Z,
                                            ExposureModel(PropensityParams(w, float(b[0])), omega))
        fails["L_a"] += _rel(np.append(dw, db), np.append(_fd(la, w), _fd(la, b))) >= 1e-4

        fs = FactorSpace(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)))
        p = RatingParams(fs, rng.normal(size=(4, 2)))
        Zr = rng.normal(size=(4, 2))
        bs = int(rng.integers(1, 8))
        u, i = rng.integers(0, 4, bs), rng.integers(0, 5, bs)
        y, prop = rng.normal(3, 1, bs), rng.uniform(0.02, 1, bs)
        res = ips_loss(u, i, y, p, Zr, prop)
        ly = lambda: ips_loss(u, i, y, p, Zr, prop).loss  # noqa: E731
        err = max(_rel(res.grad_U, _fd(ly, p.U)), _rel(res.grad_I, _fd(ly, p.I)),
                  _rel(res.grad_W, _fd(ly, p.W)))
        fails["L_y"] += err >= 1e-4

        c, o, ng = rng.normal(size=6), rng.normal(size=6), rng.normal(size=(3, 6))
        _, dc, do, dn = sgns_pair_loss(c, o, ng)
        sg = lambda: sgns_pair_loss(c, o, ng)[0]  # noqa: E731
        err = max(_rel(dc, _fd(sg, c)), _rel(do, _fd(sg, o)), _rel(dn, _fd(sg, ng)))
        fails["SGNS"] += err >= 1e-4

        l, d = int(rng.integers(2, 8)), int(rng.integers(1, 5))
        A, B = rng.normal(size=(l, d)), rng.normal(size=(l, d))
        ot = wasserstein_balance(A, B)
        gamma = ot.plan.gamma
        ld = lambda: float(np.sum(gamma * cost_matrix(A, B)))  # noqa: E731
        err = max(_rel(ot.grad_a, _fd(ld, A)), _rel(ot.grad_b, _fd(ld, B)))
        fails["L_d"] += err >= 1e-4
    report(4, sum(fails.values()) == 0, f"finite-difference failures out of 100 each: {fails}")


def test_criterion_05_optimal_transport():
    rng = np.random.default_rng(5)
    worst_gap = worst_marg = 0.0
    bad = 0
    for t in range(100):
        l = 2 + t % 7
        C = cost_matrix(rng.normal(size=(l, 3)), rng.normal(size=(l, 3)))
        res = sinkhorn_wasserstein(C, eps_reg=0.01 * C.mean(), max_iters=2000)
        oracle = exact_wasserstein_oracle(C)
        gap = abs(res.distance - oracle) / oracle
        r, c = res.plan.marginals()
        marg = max(np.abs(r - 1 / l).max(), np.abs(c - 1 / l).max())
        worst_gap, worst_marg = max(worst_gap, gap), max(worst_marg, marg)
        bad += gap > 0.05 or marg > 1e-6
    report(5, bad == 0, f"worst relative gap {worst_gap:.5f} (<= 0.05), "
                        f"worst marginal error {worst_marg:.2e} (<= 1e-6), failures {bad}/100")


def test_criterion_06_ips_unbiased():
    m = n = 20
    rng = np.random.default_rng(6)
    fs = FactorSpace(rng.normal(size=(m, 3)), rng.normal(size=(n, 3)))
    p, Z = RatingParams(fs, rng.normal(size=(m, 2))), rng.normal(size=(m, 2))
    truth = rng.normal(3.0, 1.0, (m, n))
    props = rng.uniform(0.1, 0.9, (m, n)).ravel()
    full = float(np.mean((truth - predict_matrix(p, Z)) ** 2))
    uu, ii = np.divmod(np.arange(m * n), n)
    flat = truth.ravel()
    est = []
    for _ in range(10_000):
        a = rng.random(m * n) < props
        est.append(ips_risk(uu[a], ii[a], flat[a], p, Z, props[a], m * n))
    rel = abs(np.mean(est) - full) / full
    report(6, rel <= 0.02, f"mean IPS risk {np.mean(est):.4f} vs population {full:.4f}, "
                           f"relative gap {rel:.4f} (<= 0.02)")


def test_criterion_07_embedding_quality():
    size = 20
    edges = {(a, b) for a in range(size) for b in range(a + 1, size)}
    edges |= {(a + size, b + size) for a, b in edges}
    edges.add((size - 1, size))
    g = SocialGraph(2 * size, frozenset(edges))
    gaps = []
    off = ~np.eye(size, dtype=bool)
    for seed in (0, 1, 2):
        S = cosine_similarity(embed_graph(g, WalkConfig(seed=seed)).vectors)
        intra = np.concatenate([S[:size, :size][off], S[size:, size:][off]]).mean()
        gaps.append(float(intra - S[:size, size:].mean()))
    ok = sum(x >= 0.2 for x in gaps) == 3
    report(7, ok, f"intra minus inter cosine per seed {[round(x, 4) for x in gaps]} (each >= 0.2)")


def test_criterion_08_cohort_skew():
    syn = synth_setup(0)
    c = sample_cohorts(syn.dataset, syn.graph, 70, 0)
    a = interaction_distribution(c.in_network, syn.dataset)
    b = interaction_distribution(c.out_network, syn.dataset)
    se = math.hypot(a.std_error, b.std_error)
    z = (a.mean - b.mean) / se
    report(8, z >= 3, f"in-network mean {a.mean:.2f}, out-network mean {b.mean:.2f}, "
                      f"difference {z:.1f} standard errors (need >= 3)")


PUBLISHED_COUNTS = [(22164, 296277, 922267, 355754, 0.0140), (7317, 104975, 283319, 111781, 0.0368),
          (6040, 3706, 1000209, 9606, 4.4683)]


def _brute_ranking(scores, seen, tu, ti, tr, ks, threshold):
    n = len(scores[0])
    users = sorted(set(tu))
    rel = {u: {i for uu, i, r in zip(tu, ti, tr) if uu == u and r >= threshold} for u in users}
    prec, rec = {}, {}
    for k in ks:
        ps, rs = [], []
        for u in users:
            cand = sorted((i for i in range(n) if (u, i) not in seen),
                          key=lambda i: (-scores[u][i], i))
            hits = len(set(cand[:k]) & rel[u])
            ps.append(hits / k)
            if rel[u]:
                rs.append(hits / len(rel[u]))
        prec[k] = math.fsum(ps) / len(ps)
        rec[k] = math.fsum(rs) / len(rs) if rs else 0.0
    return prec, rec, len(users)


def test_criterion_09_exactness():
    density_ok = all(math.floor(stats_from_counts(u, i, r, rel).density_r * 1e4) / 1e4 == dr
                     for u, i, r, rel, dr in PUBLISHED_COUNTS)
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(1000):
        m, n = int(rng.integers(1, 7)), int(rng.integers(2, 10))
        scores = rng.integers(0, 4, (m, n)).astype(float)
        cells = rng.permutation(m * n)
        n_seen = int(rng.integers(0, m * n // 2 + 1))
        n_test = int(rng.integers(1, m * n - n_seen + 1))
        seen, test = cells[:n_seen], cells[n_seen:n_seen + n_test]
        tu, ti = np.divmod(test, n)
        tr = rng.choice([1.0, 2.0, 3.0, 4.0, 5.0], size=len(test))
        pred = rng.normal(3, 1, len(test))
        ks = (1, 2, 3, 5)
        got = ranking_metrics(scores, seen, tu, ti, tr, ks, 3.5)
        want = _brute_ranking(scores.tolist(), {(int(k // n), int(k % n)) for k in seen},
                              tu.tolist(), ti.tolist(), tr.tolist(), ks, 3.5)
        d = [a - b for a, b in zip(pred.tolist(), tr.tolist())]
        exact = (mae(pred, tr) == math.fsum(abs(x) for x in d) / len(d)
                 and rmse(pred, tr) == math.sqrt(math.fsum(x * x for x in d) / len(d)))
        mismatches += (got != want) or not exact
    report(9, density_ok and mismatches == 0,
           f"published density-R reproduced: {density_ok}; oracle mismatches {mismatches}/1000")


def _artifacts(out: Path):
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "run_manifest.json"}


def test_criterion_10_cli_determinism(tmp_path):
    (tmp_path / "synth.cfg").write_text("m = 80\nn = 60\nedge_prob = 0.2\ndelta = 0.35\nseed = 3\n")
    (tmp_path / "run.cfg").write_text(
        "data = data\nk_d = 3\nk_a = 4\nbatch_size = 512\nlearning_rate = 0.5\nmax_epochs = 3\n"
        "patience = 2\nwalks_per_node = 2\nwalk_length = 8\nwalk_epochs = 1\n"
        "exposure_epochs = 5\nbalance_batch_l = 4\ncohort_size = 5\nmask_fractions = 0,0.5\n"
        "checkpoint = train0/checkpoint\n")
    differing = []
    steps = [("synth", "synth.cfg", "data")] + [(c, "run.cfg", c) for c in
                                                ("embed", "train", "eval", "analyze", "ablate")]
    for cmd, cfg, name in steps:
        outs = []
        for k in range(2):
            out = tmp_path / f"{name}{k}"
            assert dispatch([cmd, "--config", str(tmp_path / cfg), "--out", str(out)]) == 0
            outs.append(_artifacts(out))
        if cmd == "synth":
            (tmp_path / "data0").rename(tmp_path / "data")
            outs[0] = _artifacts(tmp_path / "data")
        if outs[0] != outs[1] or not outs[0]:
            differing.append(cmd)
    report(10, not differing, f"subcommands with differing artifacts across repeated runs: "
                              f"{differing or 'none'}")
