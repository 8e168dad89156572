"""
The file-based pipeline
=======================

The same stages the ``dfkd`` command runs, driven from Python with a reduced
configuration.  Every stage reads and writes files in the work directory.
"""

import tempfile
from pathlib import Path

from dfkd.config import RunConfig
from dfkd.pipeline import run_pipeline

workdir = Path(tempfile.mkdtemp(prefix="dfkd-demo-"))
cfg = RunConfig.from_dict({
    "dataset": {"train_count": 800, "test_count": 200},
    "teacher": {"epochs": 6},
    "dream": {"n_images": 128, "batch": 64, "iters": 60},
    "distill": {"epochs": 8},
    "io": {"workdir": str(workdir)},
})
row = run_pipeline(cfg, threads=2)
print(row)
for p in sorted(workdir.rglob("*")):
    if p.is_file():
        print(f"{p.relative_to(workdir)!s:28s} {p.stat().st_size:9d} bytes")

# The same run from the shell:
#   dfkd pipeline --config <workdir>/config.json --threads 2
