"""Train the full model end to end and score it against the complete truth table."""
import time

from denc.data import SplitSpec, split_dataset
from denc.synth import ConfounderLevel, SynthConfig, synthesize
from denc.trainer import TrainConfig, evaluate_checkpoint, train

syn = synthesize(SynthConfig(m=300, n=400, edge_prob=0.05, seed=1), ConfounderLevel(0.35))
tr, va, te = split_dataset(syn.dataset, SplitSpec(seed=1))
print(f"train {len(tr)}, validation {len(va)}, test {len(te)}")

# the rating loss is a batch mean, so big batches want a big step
cfg = TrainConfig(batch_size=1024, learning_rate=1.0, max_epochs=30, patience=3, seed=1)
t0 = time.perf_counter()
model = train(cfg, tr, va, syn.graph)
print(f"trained in {time.perf_counter() - t0:.1f}s, best epoch {model.best_epoch} "
      f"of {len(model.history) - 1}")
for row in model.history[:: max(1, len(model.history) // 6)]:
    print(f"  epoch {row['epoch']:3d}  L_y {row['L_y']:8.4f}  L_d {row['L_d']:.4f}  "
          f"val RMSE {row['val_RMSE']:.4f}")

on_test = evaluate_checkpoint(model, te, seen=tr.concat(va), ks=(10, 20))
on_truth = evaluate_checkpoint(model, truth=syn.full_truth, seen=tr.concat(va), ks=(10, 20))
print(f"test split:        MAE {on_test.mae:.4f}  RMSE {on_test.rmse:.4f}  "
      f"P@10 {on_test.precision_at_k[10]:.3f}  R@10 {on_test.recall_at_k[10]:.3f}")
print(f"all held-out cells: MAE {on_truth.mae:.4f}  RMSE {on_truth.rmse:.4f}  "
      f"({on_truth.n_pairs} cells)")
