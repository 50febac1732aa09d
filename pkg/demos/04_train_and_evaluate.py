"""Train the dual-branch model on a generated toy manifest and evaluate.

Builds 4 compliant portraits, degrades them into 16 non-compliant ones,
overfits the tiny encoder for a few hundred epochs, then reports
per-requirement EERs on the training set. Desk-scale only: the point is
exercising the full train -> checkpoint -> score -> report loop, not a
meaningful model.
"""
import os
import tempfile

from portraitcheck.model import ModelConfig
from portraitcheck.toydata import build_toy_dataset
from portraitcheck.training import (
    TrainConfig,
    evaluate_checkpoint,
    save_weights,
    train,
    uniform_weights,
)

root = tempfile.mkdtemp(prefix="portraitcheck_demo_")
toy = build_toy_dataset(os.path.join(root, "toy"), n_bases=4, seed=11)
print(f"toy manifest: {toy.manifest_path} ({len(toy.records)} records)")

weights_path = os.path.join(root, "weights.npz")
save_weights(uniform_weights(), weights_path)

config = TrainConfig(
    epochs=120,
    seed=3,
    input_size=(64, 64),
    batch_size=20,
    lr_schedule={"kind": "constant", "lr": 3e-3},
    loss_mix_alpha=0.5,
    model=ModelConfig(encoder="tiny", encoder_channels=32),
    weight_source=weights_path,
)
result = train(toy.records, toy.masks_dir, config, os.path.join(root, "run"))

print("\nepoch    seg     cls     total")
for entry in result.log[:: max(1, len(result.log) // 8)] + [result.log[-1]]:
    print(
        f"{entry['epoch']:>5}  {entry['seg_loss']:.4f}  "
        f"{entry['cls_loss']:.4f}  {entry['total_loss']:.4f}"
    )
print(f"\nloss ratio final/initial: {result.final_total / result.initial_total:.3f}")

report = evaluate_checkpoint(result.checkpoint_dir, toy.records)
print(f"\ntrain-set mean EER: {report.mean_eer:.3f}")
for req, res in report.per_requirement.items():
    print(f"  {req.short_name:<16} EER {res.eer:.3f} @ threshold {res.threshold:.3f} "
          f"({res.n_pos} NC / {res.n_neg} C)")
print(f"\ncheckpoint (with EER operating points): {result.checkpoint_dir}")
