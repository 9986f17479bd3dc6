"""
Training the mask autoencoder
=============================

The canonical network maps 256x256x4 masks to 100 maps of 4x4 and back. For
a quick run we use the scaled variant on 64x64 synthetic masks.
"""
import tempfile
from pathlib import Path

from segqc import ArchitectureConfig, TrainConfig, build, load_checkpoint, reconstruct, save_checkpoint, train
from segqc.metrics import dsc
from segqc.synth import synth_generate

for h, w, c in ArchitectureConfig().shape_chain():
    print(f"{h:4d} x {w:<4d} x {c}")
print("canonical parameters:", build(ArchitectureConfig(), seed=None).parameter_count())

# the 64x64 variant drops the two leading stride-2 blocks
arch = ArchitectureConfig.scaled(64, scale_factor=0.5)
print("scaled chain:", arch.shape_chain())

masks = synth_generate(8, size=64, seed=7)
cfg = TrainConfig(epochs=40, lr=1e-3, batch_size=2, seed=0)
result = train(masks, cfg, arch, callback=lambda e: e.epoch % 10 == 9 and print(
    f"epoch {e.epoch + 1:3d}  train {e.train_loss:.4f}  val {e.val_loss:.4f}  dice classes {e.gd_classes}"))
print("best epoch:", result.checkpoint.epoch, "validation loss:", round(result.best_val_loss, 4))

# checkpoints reload bit for bit
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "ca.sqca"
    save_checkpoint(result.final, path)
    model = load_checkpoint(path).to_model()
pgt, probs = reconstruct(model, masks[0])
print("reconstruction Dice per class:", [round(dsc(pgt, masks[0], c), 3) for c in (1, 2, 3)])
