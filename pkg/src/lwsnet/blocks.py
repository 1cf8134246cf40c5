"""Building blocks of the segmentation net: Inception and SE modules.

An Inception block runs four parallel branches (1x1, 1x1->3x3, 1x1->5x5,
3x3-maxpool->1x1) and concatenates their outputs; every convolution
carries a bias and is followed by batch norm and relu.  An SE block
squeezes a feature map to per-channel means, runs a two-layer bottleneck,
and gates the channels with a sigmoid.

Each config dataclass knows its closed-form trainable parameter count so
block layouts can be audited or searched without instantiating weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    batch_norm,
    concat_channels,
    conv2d,
    conv_transpose2d,
    fully_connected,
    global_avg_pool,
    maxpool2d,
    relu,
    scale_channels,
    sigmoid,
)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Uniform init with relu gain: U(-b, b), b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass(frozen=True)
class SEConfig:
    channels: int
    reduction: int = 16

    def validate(self):
        if self.channels % self.reduction != 0:
            raise ValueError(
                f"SE channels {self.channels} not divisible by reduction {self.reduction}"
            )
        if self.channels // self.reduction < 1:
            raise ValueError(f"SE bottleneck would be empty for channels {self.channels}")

    def param_count(self) -> int:
        """Two biased affine maps: C->C/r and C/r->C."""
        c, r = self.channels, self.reduction
        hidden = c // r
        return c * hidden + hidden + hidden * c + c


@dataclass(frozen=True)
class InceptionConfig:
    """Branch widths of one Inception block producing ``out_channels`` maps."""

    out_channels: int
    b1_width: int
    b2_reduce: int
    b2_width: int
    b3_reduce: int
    b3_width: int
    b4_width: int
    with_bias: bool = True
    with_bn: bool = True

    def validate(self):
        widths = (self.b1_width, self.b2_reduce, self.b2_width, self.b3_reduce, self.b3_width, self.b4_width)
        if any(v < 1 for v in widths):
            raise ValueError(f"all branch widths must be >= 1, got {self}")
        total = self.b1_width + self.b2_width + self.b3_width + self.b4_width
        if total != self.out_channels:
            raise ValueError(
                f"branch widths sum to {total}, expected out_channels={self.out_channels} ({self})"
            )

    def param_count(self, in_channels: int) -> int:
        """Closed-form trainable parameter count of the built block."""
        bias = 1 if self.with_bias else 0
        count = (in_channels + bias) * (self.b1_width + self.b2_reduce + self.b3_reduce + self.b4_width)
        count += (9 * self.b2_reduce + bias) * self.b2_width
        count += (25 * self.b3_reduce + bias) * self.b3_width
        if self.with_bn:
            count += 2 * (
                self.b1_width
                + self.b2_width
                + self.b3_width
                + self.b4_width
                + self.b2_reduce
                + self.b3_reduce
            )
        return count


def ref_config(out_channels: int, with_bias: bool = True, with_bn: bool = True) -> InceptionConfig:
    """Reference branch split: widths (F/4, F/2, F/8, F/8), reduces (3F/8, F/16).

    Requires out_channels divisible by 16 so every width stays integral.
    """
    f = out_channels
    if f % 16 != 0:
        raise ValueError(f"reference config needs out_channels divisible by 16, got {f}")
    return InceptionConfig(
        out_channels=f,
        b1_width=f // 4,
        b2_reduce=3 * f // 8,
        b2_width=f // 2,
        b3_reduce=f // 16,
        b3_width=f // 8,
        b4_width=f // 8,
        with_bias=with_bias,
        with_bn=with_bn,
    )


class ConvUnit:
    """conv -> (batch norm) -> relu, stride 1, square kernel."""

    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, padding: int,
                 with_bias: bool = True, with_bn: bool = True, dtype=np.float32):
        self.padding = padding
        self.with_bias = with_bias
        self.with_bn = with_bn
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype), requires_grad=with_bias)
        if with_bn:
            self.gamma = Tensor(np.ones(out_ch, dtype), requires_grad=True)
            self.beta = Tensor(np.zeros(out_ch, dtype), requires_grad=True)
            self.running_mean = np.zeros(out_ch, dtype)
            self.running_var = np.ones(out_ch, dtype)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        y = conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)
        if self.with_bn:
            y = batch_norm(y, self.gamma, self.beta, self.running_mean, self.running_var, mode)
        return relu(y)

    def named_parameters(self):
        yield "weight", self.weight
        if self.with_bias:
            yield "bias", self.bias
        if self.with_bn:
            yield "bn_gamma", self.gamma
            yield "bn_beta", self.beta

    def named_stats(self):
        if self.with_bn:
            yield "bn_mean", self.running_mean
            yield "bn_var", self.running_var

    def set_stat(self, name: str, value: np.ndarray):
        target = {"bn_mean": self.running_mean, "bn_var": self.running_var}[name]
        target[...] = value


class SEBlock:
    """Channel gate: global average -> bottleneck affine pair -> sigmoid."""

    def __init__(self, config: SEConfig, rng=None, dtype=np.float32):
        config.validate()
        self.config = config
        if rng is None:
            rng = np.random.default_rng(0)
        c = config.channels
        hidden = c // config.reduction
        self.w1 = Tensor(kaiming_uniform(rng, (hidden, c), c, dtype), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden, dtype), requires_grad=True)
        self.w2 = Tensor(kaiming_uniform(rng, (c, hidden), hidden, dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(c, dtype), requires_grad=True)

    def forward(self, x: Tensor, mode: str = "eval", identity: bool = False) -> Tensor:
        if identity:
            return x
        s = global_avg_pool(x)
        s = relu(fully_connected(s, self.w1, self.b1))
        s = sigmoid(fully_connected(s, self.w2, self.b2))
        return scale_channels(x, s)

    def gate(self, x: Tensor) -> Tensor:
        """The per-channel gate values for an input map (diagnostics)."""
        s = global_avg_pool(x)
        s = relu(fully_connected(s, self.w1, self.b1))
        return sigmoid(fully_connected(s, self.w2, self.b2))

    def named_parameters(self):
        yield "fc1/weight", self.w1
        yield "fc1/bias", self.b1
        yield "fc2/weight", self.w2
        yield "fc2/bias", self.b2

    def named_stats(self):
        return iter(())

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


class InceptionBlock:
    """Four parallel branches concatenated to ``config.out_channels`` maps."""

    def __init__(self, in_channels: int, config: InceptionConfig, rng=None, dtype=np.float32):
        config.validate()
        self.in_channels = in_channels
        self.config = config
        if rng is None:
            rng = np.random.default_rng(0)
        bias, bn = config.with_bias, config.with_bn
        unit = lambda ci, co, k, p: ConvUnit(rng, ci, co, k, p, bias, bn, dtype)
        self.b1 = unit(in_channels, config.b1_width, 1, 0)
        self.b2r = unit(in_channels, config.b2_reduce, 1, 0)
        self.b2 = unit(config.b2_reduce, config.b2_width, 3, 1)
        self.b3r = unit(in_channels, config.b3_reduce, 1, 0)
        self.b3 = unit(config.b3_reduce, config.b3_width, 5, 2)
        self.b4 = unit(in_channels, config.b4_width, 1, 0)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        y1 = self.b1.forward(x, mode)
        y2 = self.b2.forward(self.b2r.forward(x, mode), mode)
        y3 = self.b3.forward(self.b3r.forward(x, mode), mode)
        y4 = self.b4.forward(maxpool2d(x, kernel=3, stride=1, padding=1), mode)
        return concat_channels(y1, y2, y3, y4)

    def _units(self):
        return (("b1", self.b1), ("b2r", self.b2r), ("b2", self.b2),
                ("b3r", self.b3r), ("b3", self.b3), ("b4", self.b4))

    def named_parameters(self):
        for uname, unit in self._units():
            for pname, p in unit.named_parameters():
                yield f"{uname}/{pname}", p

    def named_stats(self):
        for uname, unit in self._units():
            for sname, s in unit.named_stats():
                yield f"{uname}/{sname}", s

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


class DeconvLayer:
    """2x2 stride-2 transposed convolution halving the channel count."""

    def __init__(self, rng, in_ch: int, out_ch: int, dtype=np.float32):
        self.weight = Tensor(kaiming_uniform(rng, (in_ch, out_ch, 2, 2), in_ch * 4, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype), requires_grad=True)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias)

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def named_stats(self):
        return iter(())

    def param_count(self) -> int:
        return self.weight.size + self.bias.size


class FinalConv:
    """1x1 convolution onto class logits; no norm, no activation."""

    def __init__(self, rng, in_ch: int, classes: int, dtype=np.float32):
        self.weight = Tensor(kaiming_uniform(rng, (classes, in_ch, 1, 1), in_ch, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(classes, dtype), requires_grad=True)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return conv2d(x, self.weight, self.bias)

    def named_parameters(self):
        yield "weight", self.weight
        yield "bias", self.bias

    def named_stats(self):
        return iter(())

    def param_count(self) -> int:
        return self.weight.size + self.bias.size


def build_se_block(config: SEConfig, seed: int = 0) -> SEBlock:
    return SEBlock(config, np.random.default_rng(seed))


def build_inception_block(in_channels: int, config: InceptionConfig, seed: int = 0) -> InceptionBlock:
    return InceptionBlock(in_channels, config, np.random.default_rng(seed))
