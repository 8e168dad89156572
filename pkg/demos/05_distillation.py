"""
Recovering a pruned student without real data
=============================================

Prune a trained teacher by 75%, synthesize a transfer set, and distill the
teacher's soft predictions into the student.  Real test images are used only
to report accuracy.
"""

from dfkd.config import DatasetConfig, DistillConfig, SynthesisConfig, TeacherConfig
from dfkd.data import shapes_split
from dfkd.distill import accuracy_ledger, distill, evaluate, ledger_csv
from dfkd.dream import generate_dataset
from dfkd.prune import prune
from dfkd.train import train_teacher

data_cfg = DatasetConfig(train_count=1200, test_count=400)
train, test = shapes_split(data_cfg, "train"), shapes_split(data_cfg, "test")
teacher, _ = train_teacher(train, TeacherConfig(epochs=10))
student = prune(teacher, 0.75)

dreams = generate_dataset(teacher, SynthesisConfig(n_images=256, batch=64, iters=100)).dataset
acc = {"teacher": evaluate(teacher, test).accuracy, "pruned": evaluate(student, test).accuracy}

result = distill(student, student.mask, teacher, dreams, DistillConfig(epochs=10), eval_set=test)
for epoch, (kd, a) in enumerate(zip(result.epoch_loss, result.epoch_acc)):
    print(f"epoch {epoch:2d}  kd {kd:.4f}  test acc {a:.3f}")
acc["recovered"] = evaluate(student, test).accuracy

print()
print(ledger_csv([accuracy_ledger(*(100 * acc[k] for k in ("teacher", "pruned", "recovered")))]))
still_zero = all((t.data[student.mask.masks[n] == 0] == 0).all() for n, t in student.prunable_weights())
print("pruned weights still exactly zero:", still_zero)
