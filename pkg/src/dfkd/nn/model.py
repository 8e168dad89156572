"""Sequential CNN built from JSON-serialisable layer specs."""
from __future__ import annotations

import contextlib
import copy
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from ..autodiff import Tensor, as_tensor
from ..errors import ConfigError, ShapeError
from . import functional as F

LAYER_KINDS = ("conv2d", "batchnorm2d", "linear", "relu", "maxpool2d", "globalavgpool", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.args}

    @classmethod
    def from_json(cls, obj: dict) -> LayerSpec:
        obj = dict(obj)
        return cls(obj.pop("kind"), obj)


class Layer:
    prunable = False

    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def __call__(self, x: Tensor, stats: list) -> Tensor:
        raise NotImplementedError


class Conv2d(Layer):
    prunable = True

    def __init__(self, spec, rng=None):
        super().__init__(spec)
        a = spec.args
        self.cin, self.cout = a["in_channels"], a["out_channels"]
        self.kernel, self.stride, self.padding = a["kernel"], a.get("stride", 1), a.get("padding", 0)
        fan_in = self.cin * self.kernel * self.kernel
        shape = (self.cout, self.cin, self.kernel, self.kernel)
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape) if rng is not None else np.zeros(shape)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(self.cout), requires_grad=True)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.cin:
            raise ShapeError(f"conv2d expects ({self.cin}, H, W) input, got {shape}")
        ho = F.conv_output_size(shape[1], self.kernel, self.stride, self.padding)
        wo = F.conv_output_size(shape[2], self.kernel, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ConfigError(f"conv2d produces non-positive output size from input {shape}")
        return (self.cout, ho, wo)

    def __call__(self, x, stats):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Layer):
    def __init__(self, spec, rng=None):
        super().__init__(spec)
        c = spec.args["channels"]
        self.channels = c
        self.eps = spec.args.get("eps", 1e-5)
        self.momentum = spec.args.get("momentum", 0.1)
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)
        self.num_batches = np.zeros(1, dtype=np.float32)
        self.training = True

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var,
                "num_batches": self.num_batches}

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.channels:
            raise ShapeError(f"batchnorm2d expects {self.channels} channels, got {shape}")
        return shape

    def __call__(self, x, stats):
        out, s = F.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               self.training, self.momentum, self.eps)
        if self.training:
            self.num_batches += 1
        stats.append(s)
        return out


class Linear(Layer):
    prunable = True

    def __init__(self, spec, rng=None):
        super().__init__(spec)
        self.fin, self.fout = spec.args["in_features"], spec.args["out_features"]
        shape = (self.fout, self.fin)
        w = rng.normal(0.0, np.sqrt(1.0 / self.fin), shape) if rng is not None else np.zeros(shape)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(self.fout), requires_grad=True)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, shape):
        if shape != (self.fin,):
            raise ShapeError(f"linear expects ({self.fin},) input, got {shape}")
        return (self.fout,)

    def __call__(self, x, stats):
        return F.linear(x, self.weight, self.bias)


class ReLU(Layer):
    def __call__(self, x, stats):
        return F.relu(x)


class MaxPool2d(Layer):
    def output_shape(self, shape):
        k = self.spec.args["kernel"]
        s = self.spec.args.get("stride", k)
        if len(shape) != 3 or shape[1] < k or shape[2] < k:
            raise ShapeError(f"maxpool2d window {k} does not fit {shape}")
        return (shape[0], (shape[1] - k) // s + 1, (shape[2] - k) // s + 1)

    def __call__(self, x, stats):
        k = self.spec.args["kernel"]
        return F.maxpool2d(x, k, self.spec.args.get("stride", k))


class GlobalAvgPool(Layer):
    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"globalavgpool expects (C, H, W), got {shape}")
        return (shape[0],)

    def __call__(self, x, stats):
        return F.global_avg_pool(x)


class Flatten(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def __call__(self, x, stats):
        return F.flatten(x)


_LAYER_TYPES = {
    "conv2d": Conv2d, "batchnorm2d": BatchNorm2d, "linear": Linear, "relu": ReLU,
    "maxpool2d": MaxPool2d, "globalavgpool": GlobalAvgPool, "flatten": Flatten,
}


def build_layer(spec: LayerSpec, rng=None) -> Layer:
    cls = _LAYER_TYPES[spec.kind]
    if cls in (Conv2d, BatchNorm2d, Linear):
        return cls(spec, rng)
    return cls(spec)


class Model:
    """Ordered layer stack.

    ``forward`` returns the logits together with the batch statistics of every
    BatchNorm layer, in layer order.  ``mask`` optionally carries the pruning
    mask so it travels with the weights through checkpoints.
    """

    def __init__(self, input_shape: tuple[int, ...], specs: list[LayerSpec], seed: int | None = 0):
        rng = np.random.default_rng(seed) if seed is not None else None
        self.input_shape = tuple(input_shape)
        self.specs = list(specs)
        self.layers = [build_layer(s, rng) for s in self.specs]
        self.mask = None
        self.meta: dict = {}
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except (ShapeError, ConfigError) as e:
                raise type(e)(f"layer {i} ({layer.spec.kind}): {e}") from None
        if len(shape) != 1:
            raise ShapeError(f"model output must be a vector per sample, got {shape}")
        self.num_classes = shape[0]

    # -- introspection -----------------------------------------------------
    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            for name, t in layer.parameters().items():
                yield f"{i}.{name}", t

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers().items():
                yield f"{i}.{name}", b

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every persistent array, parameters then buffers per layer, in layer order."""
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"{i}.{k}", t.data) for k, t in layer.parameters().items()]
            out += [(f"{i}.{k}", b) for k, b in layer.buffers().items()]
        return out

    def prunable_weights(self) -> list[tuple[str, Tensor]]:
        """Conv and linear weights (biases excluded), in layer order."""
        return [(f"{i}.weight", layer.weight) for i, layer in enumerate(self.layers) if layer.prunable]

    def bn_layers(self) -> list[BatchNorm2d]:
        return [layer for layer in self.layers if isinstance(layer, BatchNorm2d)]

    def running_stats(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(bn.running_mean, bn.running_var) for bn in self.bn_layers()]

    # -- modes -------------------------------------------------------------
    def train(self) -> Model:
        for bn in self.bn_layers():
            bn.training = True
        return self

    def eval(self) -> Model:
        for bn in self.bn_layers():
            bn.training = False
        return self

    @property
    def mode(self) -> str:
        modes = {bn.training for bn in self.bn_layers()}
        if modes == {True}:
            return "train"
        return "eval" if modes <= {False} else "mixed"

    def requires_grad_(self, flag: bool) -> Model:
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def copy(self) -> Model:
        return copy.deepcopy(self)

    def architecture(self) -> dict[str, Any]:
        return {"input_shape": list(self.input_shape), "layers": [s.to_json() for s in self.specs]}

    # -- compute -----------------------------------------------------------
    def forward(self, x) -> tuple[Tensor, list[F.BNBatchStats]]:
        x = as_tensor(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"model expects (N, {', '.join(map(str, self.input_shape))}) input, got {x.shape}")
        stats: list[F.BNBatchStats] = []
        for layer in self.layers:
            x = layer(x, stats)
        return x, stats

    def __call__(self, x) -> Tensor:
        return self.forward(x)[0]


@contextlib.contextmanager
def mode(model: Model, name: str):
    """Temporarily switch every BatchNorm layer of ``model`` to ``name`` mode."""
    saved = [bn.training for bn in model.bn_layers()]
    if name == "train":
        model.train()
    elif name == "eval":
        model.eval()
    else:
        raise ConfigError(f"mode must be 'train' or 'eval', got {name!r}")
    try:
        yield model
    finally:
        for bn, flag in zip(model.bn_layers(), saved):
            bn.training = flag


def forward(model: Model, x, mode_name: str | None = None):
    """Run ``model`` on ``x``; returns (logits, per-BN-layer batch statistics)."""
    if mode_name is None:
        return model.forward(x)
    with mode(model, mode_name):
        return model.forward(x)


def tinynet_specs(num_classes: int, in_channels: int = 3) -> list[LayerSpec]:
    return [
        LayerSpec("conv2d", {"in_channels": in_channels, "out_channels": 16, "kernel": 3, "stride": 1, "padding": 1}),
        LayerSpec("batchnorm2d", {"channels": 16, "eps": 1e-5, "momentum": 0.1}),
        LayerSpec("relu"),
        LayerSpec("conv2d", {"in_channels": 16, "out_channels": 32, "kernel": 3, "stride": 2, "padding": 1}),
        LayerSpec("batchnorm2d", {"channels": 32, "eps": 1e-5, "momentum": 0.1}),
        LayerSpec("relu"),
        LayerSpec("conv2d", {"in_channels": 32, "out_channels": 32, "kernel": 3, "stride": 1, "padding": 1}),
        LayerSpec("batchnorm2d", {"channels": 32, "eps": 1e-5, "momentum": 0.1}),
        LayerSpec("relu"),
        LayerSpec("globalavgpool"),
        LayerSpec("linear", {"in_features": 32, "out_features": num_classes}),
    ]


def tinynet(num_classes: int = 4, in_channels: int = 3, image_size: int = 16, seed: int = 0) -> Model:
    """conv16-BN-ReLU, conv32/2-BN-ReLU, conv32-BN-ReLU, global average pool, linear."""
    return Model((in_channels, image_size, image_size), tinynet_specs(num_classes, in_channels), seed)
