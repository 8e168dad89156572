"""
Synthesizing images from BatchNorm statistics
=============================================

Starting from Gaussian noise, optimize the pixels so the teacher is confident
and the activations it sees match the running statistics stored in its
BatchNorm layers.  Writes a few PPM files you can open in any image viewer.
"""

import tempfile

from dfkd.config import DatasetConfig, SynthesisConfig, TeacherConfig
from dfkd.data import shapes_split
from dfkd.dream import batch_rng, dump_ppm, generate_dataset, synthesize_batch
from dfkd.train import train_teacher

teacher, _ = train_teacher(shapes_split(DatasetConfig(train_count=800), "train"), TeacherConfig(epochs=6))

cfg = SynthesisConfig(batch=32, iters=120)
res = synthesize_batch(teacher, cfg, batch_rng(0, 0))
print("iter   entropy      L_BN        TV")
for it, ent, bn, tv, total in res.log[::20]:
    print(f"{it:4d}  {ent:8.4f}  {bn:8.3f}  {tv:9.1f}")
print(f"L_BN fell to {res.final.bn / res.initial.bn:.1%} of its starting value")
print(f"pixel range after clamping: [{res.images.min():.2f}, {res.images.max():.2f}]")

report = generate_dataset(teacher, SynthesisConfig(n_images=64, batch=32, iters=60), workers=2)
metrics = report.metrics()
print("predicted class histogram:", metrics["class_histogram"])
print("fraction with max prob >= 0.9:", metrics["confident_fraction"])

out = tempfile.mkdtemp(prefix="dreams-")
files = dump_ppm(report.dataset, out)
print(f"wrote {len(files)} PPM files to {out}")
