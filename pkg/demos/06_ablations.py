"""Full model against its ablations on one shared embedding.

no_exposure drops the propensity weights and the balance term, no_confounder
drops the social offset, naive_mf drops both.

On a short epoch budget the weighted variants also converge faster, because
weights above 1 scale up the effective step. Let every variant reach its
early stop before reading much into the gap.
"""
from denc.data import SplitSpec, split_dataset
from denc.embed import embed_graph
from denc.synth import ConfounderLevel, SynthConfig, synthesize
from denc.trainer import TrainConfig, evaluate_checkpoint, train

syn = synthesize(SynthConfig(m=300, n=400, edge_prob=0.05, seed=2), ConfounderLevel(0.35))
tr, va, _ = split_dataset(syn.dataset, SplitSpec(seed=2))
cfg = TrainConfig(batch_size=1024, learning_rate=1.0, max_epochs=200, patience=3, seed=2)
emb = embed_graph(syn.graph, cfg.walk_config())

print(f"{'variant':<14}{'MAE':>8}{'RMSE':>8}{'epochs':>8}")
for name in ("full", "no_exposure", "no_confounder", "naive_mf"):
    model = train(cfg.replace(ablation=name), tr, va, syn.graph, embeddings=emb)
    rep = evaluate_checkpoint(model, truth=syn.full_truth, seen=tr.concat(va), ks=(20,))
    print(f"{name:<14}{rep.mae:8.4f}{rep.rmse:8.4f}{model.best_epoch:8d}")
