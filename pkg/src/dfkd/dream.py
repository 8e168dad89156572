"""Synthesize a transfer set from a frozen teacher by inverting its BatchNorm statistics.

Noise images are optimized so that (a) the teacher is confident about them,
(b) the per-channel batch statistics entering every BatchNorm layer match that
layer's running statistics, and (c) neighbouring pixels vary smoothly.  The
teacher normalizes with its running statistics throughout; the batch
statistics are only observed, as differentiable side outputs.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import SGD, Adam, Tensor, absolute, backward, clamp, log, no_grad, norm2, reduce, roll
from .config import SynthesisConfig
from .errors import ContractError, DivergenceError, FormatError, NonFiniteError
from .nn import functional as F
from .nn.checkpoint import atomic_write, model_hash, pack_container, unpack_container
from .nn.model import Model, mode

# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------


def entropy_loss(probs) -> Tensor:
    """Batch mean of -sum_k p log p; 0 log 0 is taken as 0 via a 1e-12 floor inside the log."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    if np.any(probs.data < 0):
        raise ContractError("entropy_loss: probabilities must be non-negative")
    plogp = probs * log(clamp(probs, 1e-12, None))
    return -reduce("mean", reduce("sum", plogp, 1))


def bn_feature_loss(batch_stats: list[F.BNBatchStats], running: list[tuple[np.ndarray, np.ndarray]]) -> Tensor:
    """Sum over layers of ||mu - mu_run||_2 + ||var - var_run||_2 (plain, not squared, norms)."""
    if len(batch_stats) != len(running):
        raise ContractError(f"{len(batch_stats)} BN batch statistics but {len(running)} running pairs")
    total = None
    for i, (s, (mu_run, var_run)) in enumerate(zip(batch_stats, running)):
        if s.mean.shape != np.shape(mu_run) or s.var.shape != np.shape(var_run):
            raise ContractError(f"BN layer {i}: batch stats have {s.mean.shape[0]} channels, "
                                f"running stats {np.shape(mu_run)[0]}")
        term = norm2(s.mean - mu_run) + norm2(s.var - var_run)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def tv_loss(images) -> Tensor:
    """Anisotropic L1 total variation over channels, averaged over the batch."""
    x = images if isinstance(images, Tensor) else Tensor(images)
    n, _, h, w = x.shape
    total = Tensor(0.0)
    if h > 1:
        total = total + reduce("sum", absolute(x[:, :, 1:, :] - x[:, :, :-1, :]))
    if w > 1:
        total = total + reduce("sum", absolute(x[:, :, :, 1:] - x[:, :, :, :-1]))
    return total / n


def jitter(images, shift: tuple[int, int]) -> Tensor:
    """Circular shift by (dy, dx) pixels."""
    return roll(images, shift, (2, 3))


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

LOG_FIELDS = ("iter", "entropy", "bn", "tv", "total")


@dataclass
class LossBreakdown:
    entropy: float
    bn: float
    tv: float
    total: float


@dataclass
class BatchResult:
    images: np.ndarray
    logits: np.ndarray
    log: list[tuple]                 # rows of LOG_FIELDS
    initial: LossBreakdown           # on the starting noise, no jitter
    final: LossBreakdown             # on the returned images, no jitter


def _objective(teacher: Model, x: Tensor, cfg: SynthesisConfig, running, targets):
    logits, stats = teacher.forward(x)
    if cfg.target_mode == "balanced_ce":
        l_main = F.cross_entropy_with_labels(logits, targets)
    else:
        l_main = entropy_loss(F.softmax(logits))
    l_bn = bn_feature_loss(stats, running)
    return l_main, l_bn


def _breakdown(teacher, x: np.ndarray, cfg, running, targets) -> LossBreakdown:
    with no_grad():
        xt = Tensor(x)
        l_main, l_bn = _objective(teacher, xt, cfg, running, targets)
        l_tv = tv_loss(xt)
    e, b, t = l_main.item(), l_bn.item(), l_tv.item()
    return LossBreakdown(e, b, t, e + cfg.bn_weight * b + cfg.tv_weight * t)


def _synthesize(teacher: Model, cfg: SynthesisConfig, rng: np.random.Generator, size: int,
                first_index: int = 0) -> BatchResult:
    # assumes the teacher is frozen and in eval mode
    running = [(m.copy(), v.copy()) for m, v in teacher.running_stats()]
    if not running:
        raise ContractError("teacher has no BatchNorm layers to invert")
    targets = (first_index + np.arange(size)) % teacher.num_classes
    lo, hi = cfg.clamp
    x = Tensor(rng.standard_normal((size, *teacher.input_shape), dtype=np.float32), requires_grad=True)
    initial = _breakdown(teacher, x.data, cfg, running, targets)
    opt = Adam([x], cfg.lr) if cfg.optimizer == "adam" else SGD([x], cfg.lr)
    rows = []
    for it in range(cfg.iters):
        dy, dx = (int(v) for v in rng.integers(-cfg.jitter_max, cfg.jitter_max + 1, 2))
        try:
            l_main, l_bn = _objective(teacher, jitter(x, (dy, dx)), cfg, running, targets)
            l_tv = tv_loss(x)
            loss = l_main + cfg.bn_weight * l_bn + cfg.tv_weight * l_tv
        except NonFiniteError as e:
            raise DivergenceError(f"synthesis diverged at iteration {it}: {e}") from None
        parts = (l_main.item(), l_bn.item(), l_tv.item(), loss.item())
        if not all(math.isfinite(v) for v in parts):
            raise DivergenceError(f"synthesis diverged at iteration {it}: entropy={parts[0]} "
                                  f"bn={parts[1]} tv={parts[2]} total={parts[3]}")
        rows.append((it, *parts))
        opt.zero_grad()
        backward(loss)
        opt.step()
        np.clip(x.data, lo, hi, out=x.data)
    with no_grad():
        logits = teacher(Tensor(x.data)).data.copy()
    final = _breakdown(teacher, x.data, cfg, running, targets)
    return BatchResult(x.data.copy(), logits, rows, initial, final)


class _Frozen:
    """Eval mode and no parameter gradients for the duration of the block."""

    def __init__(self, model: Model):
        self.model = model

    def __enter__(self):
        self.flags = [p.requires_grad for p in self.model.parameters()]
        self.mode = mode(self.model, "eval")
        self.mode.__enter__()
        self.model.requires_grad_(False)
        return self.model

    def __exit__(self, *exc):
        for p, f in zip(self.model.parameters(), self.flags):
            p.requires_grad = f
        self.mode.__exit__(*exc)
        return False


def synthesize_batch(teacher: Model, cfg: SynthesisConfig, rng: np.random.Generator,
                     size: int | None = None, first_index: int = 0) -> BatchResult:
    """Optimize one batch of noise against ``teacher``; its weights and running stats are untouched."""
    with _Frozen(teacher):
        return _synthesize(teacher, cfg, rng, size or cfg.batch, first_index)


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

DFKS_MAGIC = b"DFKS"


@dataclass
class SynDataset:
    images: np.ndarray               # float32 [N, C, H, W]
    teacher_logits: np.ndarray       # float32 [N, K]
    teacher_hash: str = ""
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.images)

    def to_bytes(self) -> bytes:
        header = {
            "n_images": int(self.images.shape[0]),
            "image_shape": list(self.images.shape[1:]),
            "num_classes": int(self.teacher_logits.shape[1]),
            "teacher_hash": self.teacher_hash,
            "config": self.config,
            "blobs": [
                {"name": "images", "shape": list(self.images.shape), "dtype": "f32"},
                {"name": "teacher_logits", "shape": list(self.teacher_logits.shape), "dtype": "f32"},
            ],
        }
        return pack_container(DFKS_MAGIC, header, [self.images.astype("<f4"), self.teacher_logits.astype("<f4")])

    @classmethod
    def from_bytes(cls, buf: bytes) -> SynDataset:
        header, arrays = unpack_container(buf, DFKS_MAGIC, error=FormatError)
        try:
            images, logits = arrays["images"], arrays["teacher_logits"]
        except KeyError as e:
            raise FormatError(f"synthetic dataset lacks blob {e}") from None
        if images.shape[0] != header["n_images"] or logits.shape[0] != images.shape[0]:
            raise FormatError("synthetic dataset image/logit counts disagree with header")
        return cls(images, logits, header.get("teacher_hash", ""), header.get("config", {}))

    def save(self, path) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> SynDataset:
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class SynthesisReport:
    dataset: SynDataset
    batches: list[BatchResult]

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("batch",) + LOG_FIELDS)
        for b, res in enumerate(self.batches):
            for row in res.log:
                w.writerow((b, row[0], *(repr(v) for v in row[1:])))
        return buf.getvalue()

    def metrics(self) -> dict:
        probs = F.softmax(Tensor(self.dataset.teacher_logits)).data
        n = len(self.dataset)
        weights = [len(b.images) / n for b in self.batches]

        def avg(attr, key):
            return float(sum(w * getattr(getattr(b, attr), key) for w, b in zip(weights, self.batches)))

        return {
            "n_images": n,
            "confident_fraction": float(np.mean(probs.max(axis=1) >= 0.9)),
            "class_histogram": np.bincount(probs.argmax(axis=1), minlength=probs.shape[1]).tolist(),
            "initial": {k: avg("initial", k) for k in ("entropy", "bn", "tv", "total")},
            "final": {k: avg("final", k) for k in ("entropy", "bn", "tv", "total")},
        }


def batch_sizes(n_images: int, batch: int) -> list[int]:
    nb = math.ceil(n_images / batch)
    return [min(batch, n_images - b * batch) for b in range(nb)]


def batch_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for batch ``index``; identical regardless of worker count."""
    return np.random.default_rng([seed, index])


def generate_dataset(teacher: Model, cfg: SynthesisConfig, workers: int = 1,
                     teacher_hash: str | None = None) -> SynthesisReport:
    """Synthesize ceil(n_images / batch) batches and stack them in batch order."""
    cfg.validate()
    if teacher_hash is None:
        teacher_hash = model_hash(teacher)
    sizes = batch_sizes(cfg.n_images, cfg.batch)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).tolist()

    def job(b):
        return _synthesize(teacher, cfg, batch_rng(cfg.seed, b), sizes[b], starts[b])

    with _Frozen(teacher):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, range(len(sizes))))
        else:
            results = [job(b) for b in range(len(sizes))]
    cfg_json = asdict(cfg)
    cfg_json["clamp"] = list(cfg_json["clamp"])
    data = SynDataset(np.concatenate([r.images for r in results]),
                      np.concatenate([r.logits for r in results]), teacher_hash, cfg_json)
    return SynthesisReport(data, results)


# ---------------------------------------------------------------------------
# PPM dump
# ---------------------------------------------------------------------------

def to_ppm(image: np.ndarray) -> bytes:
    """Binary P6 bytes for one [C,H,W] image, min-max scaled to 0..255 (constant -> all 0)."""
    c, h, w = image.shape
    if c == 1:
        image = np.repeat(image, 3, axis=0)
    elif c != 3:
        raise ContractError(f"PPM export needs 1 or 3 channels, got {c}")
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        scaled = np.round((image.astype(np.float64) - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros(image.shape)
    pixels = scaled.astype(np.uint8).transpose(1, 2, 0).tobytes()
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels


def dump_ppm(dataset: SynDataset, directory) -> list[Path]:
    if len(dataset) == 0:
        raise ContractError("cannot dump an empty dataset")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(dataset.images):
        p = out / f"img_{i:05d}.ppm"
        p.write_bytes(to_ppm(img))
        paths.append(p)
    return paths
