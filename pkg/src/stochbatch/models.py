"""Small classification networks laid out over one flat parameter array.

Every scalar parameter belongs to exactly one (layer index, parameter type)
group; the update-probability schemes compute their statistics per group.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ParamType(enum.Enum):
    CONV = "convolution"
    FC = "fully-connected"
    BIAS = "bias"
    BN_SCALE = "batchnorm-scale"
    BN_SHIFT = "batchnorm-shift"


@dataclass(frozen=True)
class ParameterGroup:
    layer: int
    kind: ParamType
    offset: int
    length: int
    shape: tuple

    @property
    def stop(self) -> int:
        return self.offset + self.length

    @property
    def name(self) -> str:
        return f"L{self.layer}/{self.kind.value}"


# Layer descriptors.  Parameterized layers hold their ParameterGroups.


@dataclass(frozen=True)
class Dense:
    name: str
    in_features: int
    out_features: int
    weight: ParameterGroup
    bias: ParameterGroup


@dataclass(frozen=True)
class Conv3x3:
    name: str
    in_channels: int
    out_channels: int
    weight: ParameterGroup
    bias: ParameterGroup


@dataclass(frozen=True)
class BatchNorm:
    name: str
    num_features: int
    scale: ParameterGroup
    shift: ParameterGroup


@dataclass(frozen=True)
class ReLU:
    name: str = "relu"


@dataclass(frozen=True)
class MaxPool2:
    name: str = "maxpool"


@dataclass(frozen=True)
class Flatten:
    name: str = "flatten"


@dataclass
class ParameterStore:
    """Flat float64 parameter vector plus non-trainable buffers.

    `revision` is bumped on every mutation so stale tapes can be detected.
    """

    data: np.ndarray
    buffers: dict = field(default_factory=dict)
    revision: int = 0

    def view(self, group: ParameterGroup) -> np.ndarray:
        return self.data[group.offset : group.stop].reshape(group.shape)

    def touch(self):
        self.revision += 1

    def copy(self) -> "ParameterStore":
        return ParameterStore(
            self.data.copy(),
            {k: {n: a.copy() for n, a in v.items()} for k, v in self.buffers.items()},
            self.revision,
        )


class ModelGraph:
    def __init__(self, input_shape: Sequence[int], num_classes: int, layers: list, groups: list):
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.layers = tuple(layers)
        self.groups = tuple(groups)
        self.num_params = sum(g.length for g in groups)
        self.num_layers = len({g.layer for g in groups})
        kinds = list(ParamType)
        self._layer_of = np.empty(self.num_params, dtype=np.int64)
        self._kind_of = np.empty(self.num_params, dtype=np.int64)
        self.group_id = np.empty(self.num_params, dtype=np.int64)
        for gi, g in enumerate(groups):
            self._layer_of[g.offset : g.stop] = g.layer
            self._kind_of[g.offset : g.stop] = kinds.index(g.kind)
            self.group_id[g.offset : g.stop] = gi
        self._kinds = kinds
        self.group_starts = np.array([g.offset for g in groups], dtype=np.int64)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.array([g.length for g in self.groups], dtype=np.int64)

    def layer_sizes(self) -> dict[int, int]:
        """Parameter count per layer index (all types pooled)."""
        out: dict[int, int] = {}
        for g in self.groups:
            out[g.layer] = out.get(g.layer, 0) + g.length
        return out

    def group_index(self, param_id: int) -> tuple[int, ParamType]:
        if not 0 <= param_id < self.num_params:
            raise IndexError(f"parameter id {param_id} out of range [0, {self.num_params})")
        return int(self._layer_of[param_id]), self._kinds[self._kind_of[param_id]]

    def init_params(self, seed=None, rng: Optional[np.random.Generator] = None) -> ParameterStore:
        """He-uniform weights, zero biases, unit/zero batchnorm scale/shift."""
        if rng is None:
            rng = np.random.default_rng(seed)
        data = np.zeros(self.num_params)
        buffers = {}
        for layer in self.layers:
            if isinstance(layer, (Dense, Conv3x3)):
                w = layer.weight
                fan_in = int(np.prod(w.shape[1:])) if isinstance(layer, Conv3x3) else w.shape[0]
                bound = np.sqrt(6.0 / fan_in)
                data[w.offset : w.stop] = rng.uniform(-bound, bound, size=w.length)
            elif isinstance(layer, BatchNorm):
                data[layer.scale.offset : layer.scale.stop] = 1.0
                buffers[layer.name] = {
                    "mean": np.zeros(layer.num_features),
                    "var": np.ones(layer.num_features),
                }
        return ParameterStore(data, buffers)

    def describe(self) -> str:
        lines = [f"ModelGraph(input={self.input_shape}, classes={self.num_classes}, m={self.num_params}, L={self.num_layers})"]
        for g in self.groups:
            lines.append(f"  {g.name:28s} offset={g.offset:7d} n={g.length}")
        return "\n".join(lines)


class _Builder:
    def __init__(self):
        self.groups: list[ParameterGroup] = []
        self.layers: list = []
        self.offset = 0

    def group(self, layer, kind, shape) -> ParameterGroup:
        length = int(np.prod(shape))
        g = ParameterGroup(layer, kind, self.offset, length, tuple(shape))
        self.offset += length
        self.groups.append(g)
        return g


def build_mlp(input_dim, hidden_dims, num_classes, use_batchnorm=False) -> ModelGraph:
    """Fully-connected ReLU network; `hidden_dims=[]` gives logistic regression."""
    if isinstance(input_dim, (tuple, list)):
        input_shape = tuple(int(d) for d in input_dim)
    else:
        input_shape = (int(input_dim),)
    dims = [int(np.prod(input_shape))] + [int(h) for h in hidden_dims] + [int(num_classes)]
    if any(d <= 0 for d in dims) or any(d <= 0 for d in input_shape):
        raise ValueError(f"all dimensions must be positive, got {dims}")
    b = _Builder()
    if len(input_shape) > 1:
        b.layers.append(Flatten())
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        last = i == len(dims) - 1
        w = b.group(i, ParamType.FC, (din, dout))
        bias = b.group(i, ParamType.BIAS, (dout,))
        b.layers.append(Dense(f"fc{i}", din, dout, w, bias))
        if not last:
            if use_batchnorm:
                s = b.group(i, ParamType.BN_SCALE, (dout,))
                t = b.group(i, ParamType.BN_SHIFT, (dout,))
                b.layers.append(BatchNorm(f"bn{i}", dout, s, t))
            b.layers.append(ReLU())
    return ModelGraph(input_shape, int(num_classes), b.layers, b.groups)


def build_small_cnn(input_shape, channels, num_classes) -> ModelGraph:
    """[conv3x3 + batchnorm + ReLU + maxpool2] blocks, then a linear classifier."""
    c, h, w = (int(v) for v in input_shape)
    if min(c, h, w, num_classes) <= 0 or any(int(ch) <= 0 for ch in channels):
        raise ValueError("all dimensions must be positive")
    div = 2 ** len(channels)
    if h % div or w % div:
        raise ValueError(f"spatial dims {(h, w)} not divisible by {div} for {len(channels)} pooling stages")
    b = _Builder()
    cin = c
    for i, cout in enumerate(channels, start=1):
        cout = int(cout)
        wg = b.group(i, ParamType.CONV, (cout, cin, 3, 3))
        bg = b.group(i, ParamType.BIAS, (cout,))
        b.layers.append(Conv3x3(f"conv{i}", cin, cout, wg, bg))
        s = b.group(i, ParamType.BN_SCALE, (cout,))
        t = b.group(i, ParamType.BN_SHIFT, (cout,))
        b.layers.append(BatchNorm(f"bn{i}", cout, s, t))
        b.layers.append(ReLU())
        b.layers.append(MaxPool2())
        cin = cout
    b.layers.append(Flatten())
    feat = cin * (h // div) * (w // div)
    i = len(channels) + 1
    wg = b.group(i, ParamType.FC, (feat, int(num_classes)))
    bg = b.group(i, ParamType.BIAS, (int(num_classes),))
    b.layers.append(Dense(f"fc{i}", feat, int(num_classes), wg, bg))
    return ModelGraph((c, h, w), int(num_classes), b.layers, b.groups)
