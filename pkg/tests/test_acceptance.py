"""Acceptance gate: one test per criterion, each at its stated tolerance.

Outcomes are also printed as one PASS/FAIL line per criterion in the pytest
terminal summary (see ``conftest.pytest_terminal_summary``).
"""
import math
import time
import zlib

import numpy as np
import pytest

from acceptance_log import criterion
from gradcases import CASES
from dfkd.autodiff import Tensor, grad_check, precision
from dfkd.config import DistillConfig, RunConfig, SynthesisConfig
from dfkd.data import CIFAR_RECORD, parse_cifar10_batch, shapes_split
from dfkd.distill import distill, evaluate, kd_loss
from dfkd.dream import (
    SynDataset, batch_rng, bn_feature_loss, dump_ppm, entropy_loss, generate_dataset, synthesize_batch, tv_loss,
)
from dfkd.errors import FormatError
from dfkd.nn import checkpoint_bytes, load_checkpoint, model_from_bytes, model_hash, save_checkpoint, tinynet
from dfkd.nn.functional import BNBatchStats
from dfkd.pipeline import run_pipeline
from dfkd.prune import compute_mask, prune
from dfkd.train import train_teacher


def test_criterion_1_gradient_oracles():
    with criterion(1, "gradient oracle suite, rel err < 1e-2 on >= 3 shapes per op") as notes:
        start = time.perf_counter()
        worst, count = 0.0, 0
        for name, build in CASES.items():
            cases = build(np.random.default_rng(zlib.crc32(name.encode())))
            assert len(cases) >= 3, name
            for f, inputs in cases:
                err = grad_check(f, inputs)
                assert err < 1e-2, f"{name}: rel err {err:.3g}"
                worst, count = max(worst, err), count + 1
        elapsed = time.perf_counter() - start
        notes.append(f"{len(CASES)} ops, {count} checks, worst {worst:.2e}")
        assert elapsed < 60


def test_criterion_2_pruning_exactness():
    with criterion(2, "pruning count, nesting and global pooling") as notes:
        start = time.perf_counter()
        model = tinynet(seed=11)
        flat = np.concatenate([np.abs(t.data).ravel() for _, t in model.prunable_weights()])
        previous = None
        for p in (0, 0.25, 0.5, 0.75, 0.9):
            mask = compute_mask(model, p)
            assert mask.pruned_count() == math.floor(p * mask.total())
            pruned = np.concatenate([m.ravel() for m in mask.masks.values()]) == 0
            if previous is not None:
                assert np.all(pruned[previous])          # earlier pruned set is a subset
            previous = pruned
            # single-tensor oracle: sort every weight magnitude together
            oracle = np.zeros(flat.size, bool)
            oracle[np.argsort(flat, kind="stable")[:math.floor(p * flat.size)]] = True
            assert np.array_equal(pruned, oracle)
        notes.append(f"N={flat.size}")
        assert time.perf_counter() - start < 30


def test_criterion_3_loss_oracles():
    with criterion(3, "loss value oracles") as notes:
        assert abs(entropy_loss(np.full((1, 10), 0.1)).item() - math.log(10)) <= 1e-5
        assert tv_loss(np.array([[[[0.0, 1.0], [2.0, 3.0]]]])).item() == 6.0
        kd = kd_loss(np.zeros((1, 2)), np.log([[0.75, 0.25]]), 1.0, 1.0).item()
        assert abs(kd - 0.1308) <= 1e-4

        def st(m, v):
            return BNBatchStats(Tensor(np.array(m, float)), Tensor(np.array(v, float)))
        assert abs(bn_feature_loss([st([1, 2], [3, 4])], [(np.array([1., 2.]), np.array([3., 4.]))]).item()) <= 1e-6
        assert abs(bn_feature_loss([st([1, 0], [1, 1])], [(np.zeros(2), np.ones(2))]).item() - 1.0) <= 1e-6
        assert abs(bn_feature_loss([st([1, 0], [1, 1]), st([0, 0], [1, 2])],
                                   [(np.zeros(2), np.ones(2)), (np.zeros(2), np.ones(2))]).item() - 2.0) <= 1e-6

        rng = np.random.default_rng(3)
        worst = 0.0
        with precision(np.float64):
            for T, alpha in [(1.0, 1.0), (3.0, 1.0), (4.0, 0.5), (0.7, 0.2)]:
                zs, zt = rng.normal(size=(5, 6)) * 2, rng.normal(size=(5, 6)) * 2
                lhs = kd_loss(zs, zt, T, alpha).item()
                rhs = alpha * T * T * kd_loss(zs / T, zt / T, 1.0, 1.0).item()
                worst = max(worst, abs(lhs - rhs) / abs(lhs))
        assert worst <= 1e-6
        notes.append(f"kd hand case {kd:.6f}; temperature identity rel err {worst:.1e}")


def test_criterion_4_synthesis_efficacy():
    with criterion(4, "200-iteration synthesis: L_BN < 20% and entropy < 50% of initial, >= 9 of 10 seeds") as notes:
        start = time.perf_counter()
        cfg = RunConfig()
        teacher, _ = train_teacher(shapes_split(cfg.dataset, "train"), cfg.teacher)
        passed, bn_ok, ent_ok, ratios = 0, 0, 0, []
        for seed in range(10):
            scfg = SynthesisConfig(seed=seed)
            res = synthesize_batch(teacher, scfg, batch_rng(seed, 0))
            bn_r = res.final.bn / res.initial.bn
            ent_r = res.final.entropy / res.initial.entropy
            ratios.append((bn_r, ent_r))
            bn_ok += bn_r < 0.2
            ent_ok += ent_r < 0.5
            passed += bn_r < 0.2 and ent_r < 0.5
        elapsed = time.perf_counter() - start
        notes.append(f"both clauses {passed}/10, L_BN clause {bn_ok}/10 (max ratio {max(r[0] for r in ratios):.3f}), "
                     f"entropy clause {ent_ok}/10 (min ratio {min(r[1] for r in ratios):.1f})")
        assert elapsed < 300
        assert passed >= 9


def test_criterion_5_frozen_state(small_teacher, tmp_path):
    with criterion(5, "teacher bytes, student BN bytes and pruned zeros unchanged") as notes:
        path = tmp_path / "teacher.ckpt"
        save_checkpoint(small_teacher, path)
        before = path.read_bytes()
        teacher = load_checkpoint(path)

        report = generate_dataset(teacher, SynthesisConfig(n_images=64, batch=32, iters=30, seed=4))
        assert checkpoint_bytes(teacher) == before

        student = prune(teacher, 0.75)
        bn_bytes = b"".join(b.tobytes() for _, b in student.named_buffers())
        distill(student, student.mask, teacher, report.dataset, DistillConfig(epochs=3))
        assert checkpoint_bytes(teacher) == before
        assert b"".join(b.tobytes() for _, b in student.named_buffers()) == bn_bytes
        zeros = 0
        for name, t in student.prunable_weights():
            sel = student.mask.masks[name] == 0
            assert np.all(t.data[sel] == 0.0)
            zeros += int(sel.sum())
        notes.append(f"{zeros} pruned positions exactly 0.0")


def test_criterion_6_end_to_end_recovery(tmp_path):
    with criterion(6, "A_T >= .90, A_P <= A_T - .05, A_R >= A_P + .03 and A_R >= A_T - .10, >= 4 of 5 seeds") as notes:
        start = time.perf_counter()
        rows, ok = [], 0
        for seed in range(5):
            cfg = RunConfig()
            for section in (cfg.dataset, cfg.teacher, cfg.dream, cfg.distill):
                section.seed = seed
            cfg.io.workdir = str(tmp_path / f"seed{seed}")
            row = run_pipeline(cfg)
            a_t, a_p, a_r = (float(row[k]) / 100 for k in ("Teacher", "Pruned", "Recovered"))
            good = a_t >= 0.90 and a_p <= a_t - 0.05 and a_r >= a_p + 0.03 and a_r >= a_t - 0.10
            ok += good
            rows.append(f"s{seed}:{a_t:.3f}/{a_p:.3f}/{a_r:.3f}{'' if good else '!'}")
        elapsed = time.perf_counter() - start
        notes.append(f"{ok}/5 seeds; T/P/R " + " ".join(rows))
        assert ok >= 4
        assert elapsed < 900


def _small_run_config(workdir):
    return RunConfig.from_dict({
        "dataset": {"train_count": 320, "test_count": 120, "seed": 5},
        "teacher": {"epochs": 4, "seed": 5},
        "dream": {"n_images": 48, "batch": 8, "iters": 10, "seed": 5},
        "distill": {"epochs": 2, "seed": 5},
        "io": {"workdir": str(workdir)},
    })


def _artifacts(root):
    names = ("teacher.ckpt", "pruned.ckpt", "dreams.dfks", "recovered.ckpt", "ledger.csv")
    return {n: (root / n).read_bytes() for n in names}


def test_criterion_7_determinism(tmp_path):
    with criterion(7, "identical artifacts across reruns and thread counts 1 and 4") as notes:
        runs = {}
        for threads in (1, 4):
            for rep in range(2):
                root = tmp_path / f"t{threads}r{rep}"
                run_pipeline(_small_run_config(root), threads=threads)
                runs[(threads, rep)] = _artifacts(root)
        reference = runs[(1, 0)]
        assert all(r == reference for r in runs.values())
        notes.append(f"{len(runs)} runs, {len(reference)} artifacts each")


def test_criterion_8_format_round_trips(small_teacher, tmp_path):
    with criterion(8, "checkpoint/DFKS round-trips, PPM length, CIFAR-10 parsing") as notes:
        student = prune(small_teacher, 0.75)
        for model in (small_teacher, student):
            a = checkpoint_bytes(model)
            assert checkpoint_bytes(model_from_bytes(a)) == a

        report = generate_dataset(small_teacher, SynthesisConfig(n_images=8, batch=8, iters=2))
        p1, p2 = tmp_path / "a.dfks", tmp_path / "b.dfks"
        report.dataset.save(p1)
        SynDataset.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

        for f in dump_ppm(report.dataset, tmp_path / "ppm"):
            data = f.read_bytes()
            magic, dims, maxval, rest = data.split(b"\n", 3)
            w, h = map(int, dims.split())
            assert magic == b"P6" and maxval == b"255" and len(rest) == 3 * w * h
            assert len(data) == len(f"P6\n{w} {h}\n255\n") + 3 * w * h

        rng = np.random.default_rng(0)
        records = rng.integers(0, 256, (10000, CIFAR_RECORD), dtype=np.uint8)
        records[:, 0] = rng.integers(0, 10, 10000)
        buf = records.tobytes()
        assert len(buf) == 30_730_000
        images, labels = parse_cifar10_batch(buf)
        assert images.shape == (10000, 3, 32, 32) and np.array_equal(labels, records[:, 0])
        cut = 7 * CIFAR_RECORD + 1234
        with pytest.raises(FormatError) as err:
            parse_cifar10_batch(buf[:cut])
        assert f"got {cut}" in str(err.value) and "expected 30730000" in str(err.value)
        assert f"offset {7 * CIFAR_RECORD}" in str(err.value)
        notes.append("truncated file rejected at record offset 21511")
