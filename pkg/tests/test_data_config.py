import json
import os

import numpy as np
import pytest

from dfkd.config import DatasetConfig, RunConfig, TeacherConfig
from dfkd.data import (
    CIFAR_RECORD, CIFAR_RECORDS_PER_BATCH, generate_shapes, load_cifar10_binary, parse_cifar10_batch,
    shapes_split,
)
from dfkd.errors import ConfigError, DataError, FormatError
from dfkd.nn import checkpoint_bytes, tinynet
from dfkd.train import train_teacher


def cifar_bytes(records, rng, bad_label_at=None):
    arr = rng.integers(0, 256, (records, CIFAR_RECORD), dtype=np.uint8)
    arr[:, 0] = rng.integers(0, 10, records)
    if bad_label_at is not None:
        arr[bad_label_at, 0] = 10
    return arr.tobytes()


class TestShapes:
    def test_deterministic_and_balanced(self):
        cfg = DatasetConfig()
        a, b = shapes_split(cfg, "train"), shapes_split(cfg, "train")
        assert a.images.tobytes() == b.images.tobytes() and a.labels.tobytes() == b.labels.tobytes()
        assert np.bincount(a.labels).tolist() == [500] * 4
        assert abs(a.images.mean()) < 0.05 and abs(a.images.std() - 1) < 0.1

    def test_splits_differ(self):
        train, test = generate_shapes(DatasetConfig(train_count=40, test_count=40))
        assert train.images.tobytes() != test.images.tobytes()

    def test_class_limits(self):
        with pytest.raises(ConfigError):
            shapes_split(DatasetConfig(classes=9), "train")
        with pytest.raises(ConfigError):
            shapes_split(DatasetConfig(classes=1), "train")


class TestCifar:
    def test_valid_batch_length(self, rng):
        buf = cifar_bytes(CIFAR_RECORDS_PER_BATCH, rng)
        assert len(buf) == 30_730_000
        images, labels = parse_cifar10_batch(buf)
        assert images.shape == (10000, 3, 32, 32) and labels.max() <= 9
        # record layout: label byte then R, G, B planes row-major
        raw = np.frombuffer(buf, np.uint8)
        assert images[1, 1, 0, 5] == raw[CIFAR_RECORD + 1 + 1024 + 5]

    def test_truncated_reports_lengths_and_offset(self, rng):
        buf = cifar_bytes(3, rng)[:-100]
        with pytest.raises(FormatError) as e:
            parse_cifar10_batch(buf, "t.bin", records=3)
        msg = str(e.value)
        assert f"expected {3 * CIFAR_RECORD}" in msg and f"got {len(buf)}" in msg
        assert f"offset {2 * CIFAR_RECORD}" in msg

    def test_bad_label(self, rng):
        with pytest.raises(FormatError, match=f"offset {4 * CIFAR_RECORD}"):
            parse_cifar10_batch(cifar_bytes(6, rng, bad_label_at=4), records=6)

    def test_directory_loader(self, tmp_path, rng):
        (tmp_path / "test_batch.bin").write_bytes(cifar_bytes(CIFAR_RECORDS_PER_BATCH, rng))
        test = load_cifar10_binary(tmp_path, "test")
        assert len(test) == 10000 and test.images.dtype == np.float32
        with pytest.raises(DataError):
            load_cifar10_binary(tmp_path, "train")


class TestConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = RunConfig()
        p = tmp_path / "c.json"
        p.write_text(cfg.dumps())
        assert RunConfig.load(p).dumps() == cfg.dumps()
        assert cfg.dream.n_images == 1024 and cfg.distill.temperature == 3.0 and cfg.prune.amount == 0.75

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="tempreature"):
            RunConfig.from_dict({"distill": {"tempreature": 2}})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"extra": {}})

    def test_validation(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"prune": {"amount": 1.5}})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"dream": {"target_mode": "x"}})

    def test_workdir_env(self, monkeypatch):
        monkeypatch.setenv("DFKD_WORKDIR", "/tmp/elsewhere")
        assert RunConfig().io.workdir == "/tmp/elsewhere"


class TestTeacher:
    def test_zero_epochs_is_init(self, small_shapes):
        model, hist = train_teacher(small_shapes[0], TeacherConfig(epochs=0, seed=9))
        assert hist == [] and checkpoint_bytes(model) == checkpoint_bytes(tinynet(seed=9).eval())

    def test_running_stats_move(self, small_teacher):
        assert not np.allclose(small_teacher.bn_layers()[0].running_mean, 0)
        assert small_teacher.mode == "eval"
