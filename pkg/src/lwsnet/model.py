"""Assembly of the full segmentation network.

Encoder: five Inception blocks over filter widths [32, 64, 128, 256, 512],
the first four each followed by an SE gate and a 2x2 stride-2 max pool.
Decoder: four 2x2 stride-2 deconvolutions, each concatenated with the SE
output of the matching encoder level and refined by another Inception
block.  A final 1x1 convolution maps to two class logits per pixel.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .blocks import (
    DeconvLayer,
    FinalConv,
    InceptionBlock,
    InceptionConfig,
    SEBlock,
    SEConfig,
    ref_config,
)
from .tensor import Tensor, concat_channels, maxpool2d

FILTERS = [32, 64, 128, 256, 512]
IN_CHANNELS = 1
NUM_CLASSES = 2

#: Input sizes must be multiples of this so four pool/deconv levels round-trip.
SIZE_MULTIPLE = 16

#: Canonical input resolution; crops and the reference shape table use it.
WINDOW = 224


class LWSNet:
    """The light-weight shelf segmentation net (about 1.8M parameters)."""

    def __init__(self, configs: list[InceptionConfig] | None = None, seed: int = 0,
                 se_reduction: int = 16, dtype=np.float32):
        if configs is None:
            enc = [ref_config(f) for f in FILTERS]
            dec = [ref_config(f) for f in FILTERS[-2::-1]]
            configs = enc + dec
        if len(configs) != 9:
            raise ValueError(f"expected 9 inception configs (5 encoder + 4 decoder), got {len(configs)}")
        self.configs = list(configs)
        self.seed = seed
        rng = np.random.default_rng(seed)

        enc_out = [c.out_channels for c in configs[:5]]
        dec_out = [c.out_channels for c in configs[5:]]
        self.inceptions = []
        in_ch = IN_CHANNELS
        for cfg in configs[:5]:
            self.inceptions.append(InceptionBlock(in_ch, cfg, rng, dtype))
            in_ch = cfg.out_channels
        self.se_blocks = [SEBlock(SEConfig(c, se_reduction), rng, dtype) for c in enc_out[:4]]
        self.deconvs = []
        prev = enc_out[4]
        for k, cfg in enumerate(configs[5:]):
            self.deconvs.append(DeconvLayer(rng, prev, cfg.out_channels, dtype))
            skip = enc_out[3 - k]
            if skip != cfg.out_channels:
                raise ValueError(
                    f"decoder level {k + 1}: deconv gives {cfg.out_channels} channels but the"
                    f" encoder skip carries {skip}"
                )
            self.inceptions.append(InceptionBlock(2 * cfg.out_channels, cfg, rng, dtype))
            prev = cfg.out_channels
        self.final = FinalConv(rng, dec_out[-1], NUM_CLASSES, dtype)

        self.layers = self._layer_table()

    def _layer_table(self):
        """Ordered (name, block) pairs; pool rows carry no block."""
        rows = []
        for i in range(4):
            rows.append((f"Inception-{i + 1}", self.inceptions[i]))
            rows.append((f"SE-{i + 1}", self.se_blocks[i]))
            rows.append((f"MaxPool-{i + 1}", None))
        rows.append(("Inception-5", self.inceptions[4]))
        for k in range(4):
            rows.append((f"Deconv-{k + 1}", self.deconvs[k]))
            rows.append((f"Inception-{6 + k}", self.inceptions[5 + k]))
        rows.append(("Final conv", self.final))
        return rows

    # ------------------------------------------------------------------
    def forward(self, image, mode: str = "eval", se_identity: bool = False,
                trace: dict | None = None) -> Tensor:
        """Run the net on a 1xHxW image tensor; returns 2xHxW logits.

        H and W must be multiples of 16 (224 is the canonical window).
        ``se_identity`` bypasses the SE gates, which reduces the net to a
        plain Inception U-Net.  When ``trace`` is a dict it receives the
        output shape of every named layer.
        """
        if not isinstance(image, Tensor):
            image = Tensor(image)
        ok = image.ndim == 3 and image.shape[0] == IN_CHANNELS
        if ok:
            _, h, w = image.shape
            ok = h >= SIZE_MULTIPLE and w >= SIZE_MULTIPLE and h % SIZE_MULTIPLE == 0 and w % SIZE_MULTIPLE == 0
        if not ok:
            raise ValueError(
                f"expected input shape ({IN_CHANNELS}, H, W) with H, W multiples of"
                f" {SIZE_MULTIPLE}, got {tuple(image.shape)}"
            )
        if trace is not None:
            trace["Input image"] = tuple(image.shape)

        def note(name, t):
            if trace is not None:
                trace[name] = tuple(t.shape)
            return t

        skips = []
        x = image
        for i in range(4):
            x = note(f"Inception-{i + 1}", self.inceptions[i].forward(x, mode))
            x = note(f"SE-{i + 1}", self.se_blocks[i].forward(x, mode, identity=se_identity))
            skips.append(x)
            x = note(f"MaxPool-{i + 1}", maxpool2d(x, kernel=2, stride=2))
        x = note("Inception-5", self.inceptions[4].forward(x, mode))
        for k in range(4):
            x = note(f"Deconv-{k + 1}", self.deconvs[k].forward(x, mode))
            x = concat_channels(x, skips[3 - k])
            x = note(f"Inception-{6 + k}", self.inceptions[5 + k].forward(x, mode))
        return note("Final conv", self.final.forward(x, mode))

    # ------------------------------------------------------------------
    def named_parameters(self):
        for lname, block in self.layers:
            if block is None:
                continue
            for pname, p in block.named_parameters():
                yield f"{lname}/{pname}", p

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_running_stats(self):
        for lname, block in self.layers:
            if block is None:
                continue
            for sname, s in block.named_stats():
                yield f"{lname}/{sname}", s

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def layer_param_counts(self) -> "OrderedDict[str, int]":
        counts = OrderedDict()
        for lname, block in self.layers:
            if block is None:
                continue
            counts[lname] = block.param_count()
        return counts

    def param_count(self) -> int:
        return sum(self.layer_param_counts().values())

    # ------------------------------------------------------------------
    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, s in self.named_running_stats():
            state[name] = s.copy()
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        stats = dict(self.named_running_stats())
        seen = set()
        for name, value in state.items():
            if name in params:
                target = params[name].data
            elif name in stats:
                target = stats[name]
            else:
                raise KeyError(f"state entry {name!r} does not exist in this model")
            if target.shape != value.shape:
                raise ValueError(
                    f"state entry {name!r} has shape {value.shape}, model expects {target.shape}"
                )
            target[...] = value
            seen.add(name)
        missing = (set(params) | set(stats)) - seen
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")

    def clone(self) -> "LWSNet":
        twin = LWSNet(self.configs, seed=self.seed)
        twin.load_state_dict(self.state_dict())
        return twin

    def astype(self, dtype) -> "LWSNet":
        """Convert parameters in place (float64 mode is for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self


def build_lwsnet(configs: list[InceptionConfig] | None = None, seed: int = 0) -> LWSNet:
    return LWSNet(configs, seed=seed)


def reference_shape_table(side: int = WINDOW) -> "OrderedDict[str, tuple]":
    """Expected output shape of every named layer for a square input."""
    s = side
    table = OrderedDict()
    table["Input image"] = (1, s, s)
    widths = FILTERS
    for i in range(4):
        table[f"Inception-{i + 1}"] = (widths[i], s, s)
        table[f"SE-{i + 1}"] = (widths[i], s, s)
        s //= 2
        table[f"MaxPool-{i + 1}"] = (widths[i], s, s)
    table["Inception-5"] = (widths[4], s, s)
    for k in range(4):
        s *= 2
        table[f"Deconv-{k + 1}"] = (widths[3 - k], s, s)
        table[f"Inception-{6 + k}"] = (widths[3 - k], s, s)
    table["Final conv"] = (NUM_CLASSES, side, side)
    return table
