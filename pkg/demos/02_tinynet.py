"""
TinyNet: layers, BatchNorm statistics and checkpoints
=====================================================

Train a three-conv network on the procedural shapes dataset, look at what the
BatchNorm layers remembered, and round-trip the model through a checkpoint.
"""

import tempfile
from pathlib import Path

import numpy as np

from dfkd.autodiff import Tensor, no_grad
from dfkd.config import DatasetConfig, TeacherConfig
from dfkd.data import shapes_split
from dfkd.distill import evaluate
from dfkd.nn import load_checkpoint, save_checkpoint
from dfkd.train import train_teacher

data_cfg = DatasetConfig(train_count=800, test_count=200)
train, test = shapes_split(data_cfg, "train"), shapes_split(data_cfg, "test")
print("train images", train.images.shape, "class counts", np.bincount(train.labels))

teacher, losses = train_teacher(train, TeacherConfig(epochs=6))
print("epoch losses", np.round(losses, 3))
print("test accuracy", evaluate(teacher, test).accuracy)

# Train mode updated these running statistics; they are all the synthesis step gets to see later.
for i, bn in enumerate(teacher.bn_layers()):
    print(f"BN{i}: mean of running_mean {bn.running_mean.mean():+.3f}, mean of running_var {bn.running_var.mean():.3f}")

# forward() also returns each BN layer's statistics of the current batch.
with no_grad():
    logits, stats = teacher.forward(Tensor(test.images[:32]))
print("batch stats collected:", len(stats), "layers; first layer channels:", stats[0].mean.shape[0])

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "teacher.ckpt"
    save_checkpoint(teacher, path)
    again = load_checkpoint(path)
    with no_grad():
        same = again(Tensor(test.images[:32])).data.tobytes() == logits.data.tobytes()
    print(f"checkpoint {path.stat().st_size} bytes; reloaded logits identical: {same}")
