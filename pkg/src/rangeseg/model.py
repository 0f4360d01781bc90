"""Network blocks and the full encoder-decoder segmentation model.

The model runs, in order: a multi-scale context stem over the 5-channel
range image; five harmonic-dense encoder stages, each optionally gated by
a context-aggregation attention block, with stride-2 average pooling after
the first four; a bridge convolution; four residual decoder stages that
upsample and fuse the matching encoder skip; an optional per-channel
spatial-propagation refiner; and a final convolution producing class
logits. Softmax is applied only inside losses and inference decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import propagation
from .engine import (
    BatchNorm2d,
    Conv2d,
    ConvSpec,
    Module,
    Tensor,
    avg_pool2d,
    concat,
    dropout,
    leaky_relu,
    nearest_upsample2d,
    sigmoid,
)
from .engine.tensor import ShapeError
from .topology import Rule, TopologyPlan

#: paper-scale channel ladder C0..C13 (input, context widths, five encoder
#: stages, bridge, four decoder stages)
DEFAULT_CHANNELS = (5, 24, 32, 48, 96, 192, 320, 720, 1280, 1744, 842, 448, 192, 64)

#: total spatial downsampling across the encoder (four halvings)
DOWNSAMPLE_FACTOR = 16


def _round_even(x: float) -> int:
    return max(2, int(round(x / 2.0)) * 2)


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters.

    ``channels`` is the C0..C13 ladder: index 0 the input width, 3 the
    context-stem output, 4..8 the encoder stage widths, 9 the bridge, and
    10..13 the decoder stage widths. Indices 1 and 2 belong to the printed
    ladder and are kept for config fidelity; the default assembly does not
    bind them. ``icm_branches`` lists (kernel, dilation, width) per
    parallel context branch; widths must sum to ``channels[3]``.
    """

    channels: tuple[int, ...] = DEFAULT_CHANNELS
    class_count: int = 20
    dropout_p: float = 0.2
    icm_branches: tuple[tuple[int, int, int], ...] = ((3, 1, 16), (5, 2, 16), (7, 4, 16))
    decoder_kernels: tuple[int, ...] = (3, 5)
    lhd_depths: tuple[int, ...] = (4, 4, 4, 4, 4)
    lhd_growth: tuple[int, ...] = ()
    lhd_multiplier: float = 1.6
    cam_reduction: int = 4
    leaky_slope: float = 0.01
    bn_momentum: float = 0.9
    use_icm: bool = True
    use_cam: bool = True
    use_mcspn: bool = True
    mcspn_sweeps: int = 1
    mcspn_fusion: str = "max"

    def __post_init__(self):
        if len(self.channels) != 14:
            raise ValueError(f"channels must list C0..C13, got {len(self.channels)} values")
        if self.channels[0] != 5:
            raise ValueError(f"C0 must be 5 (x, y, z, rem, r), got {self.channels[0]}")
        if any(c < 1 for c in self.channels):
            raise ValueError("all channel counts must be >= 1")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if sum(width for _, _, width in self.icm_branches) != self.channels[3]:
            raise ValueError(
                f"context branch widths {[w for _, _, w in self.icm_branches]} "
                f"must sum to C3 = {self.channels[3]}"
            )
        if len(self.lhd_depths) != 5:
            raise ValueError("lhd_depths must cover the five encoder stages")
        if self.lhd_growth and len(self.lhd_growth) != 5:
            raise ValueError("lhd_growth must cover the five encoder stages when set")
        if self.mcspn_fusion not in ("max", "mean"):
            raise ValueError(f"mcspn_fusion must be 'max' or 'mean', got {self.mcspn_fusion}")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return self.channels[4:9]

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        return self.channels[10:14]

    def stage_growth(self, stage: int) -> int:
        if self.lhd_growth:
            return self.lhd_growth[stage]
        return _round_even(self.stage_channels[stage] / 5.0)

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "class_count": self.class_count,
            "dropout_p": self.dropout_p,
            "icm_branches": [list(b) for b in self.icm_branches],
            "decoder_kernels": list(self.decoder_kernels),
            "lhd_depths": list(self.lhd_depths),
            "lhd_growth": list(self.lhd_growth),
            "lhd_multiplier": self.lhd_multiplier,
            "cam_reduction": self.cam_reduction,
            "leaky_slope": self.leaky_slope,
            "bn_momentum": self.bn_momentum,
            "use_icm": self.use_icm,
            "use_cam": self.use_cam,
            "use_mcspn": self.use_mcspn,
            "mcspn_sweeps": self.mcspn_sweeps,
            "mcspn_fusion": self.mcspn_fusion,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        kwargs = dict(data)
        for key in ("channels", "decoder_kernels", "lhd_depths", "lhd_growth"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "icm_branches" in kwargs:
            kwargs["icm_branches"] = tuple(tuple(b) for b in kwargs["icm_branches"])
        return cls(**kwargs)


class ConvBlock(Module):
    """conv -> batch norm -> leaky relu."""

    def __init__(self, spec: ConvSpec, rng, slope: float, momentum: float):
        super().__init__()
        self.conv = Conv2d(spec, rng)
        self.norm = BatchNorm2d(spec.out_channels, momentum=momentum)
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return leaky_relu(self.norm(self.conv(x)), self.slope)

    __call__ = forward


class ContextModule(Module):
    """Parallel multi-scale dilated branches over the raw range image,
    concatenated and joined by a projected residual connection."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        c0, c3 = cfg.channels[0], cfg.channels[3]
        self.branches = [
            ConvBlock(
                ConvSpec(c0, width, (kernel, kernel), dilation=dilation),
                rng,
                cfg.leaky_slope,
                cfg.bn_momentum,
            )
            for kernel, dilation, width in cfg.icm_branches
        ]
        self.project = Conv2d(ConvSpec(c0, c3, (1, 1)), rng)
        self.project_norm = BatchNorm2d(c3, momentum=cfg.bn_momentum)
        self.slope = cfg.leaky_slope

    def forward(self, x: Tensor) -> Tensor:
        context = concat([branch(x) for branch in self.branches], axis=1)
        residual = self.project_norm(self.project(x))
        return leaky_relu(context + residual, self.slope)

    __call__ = forward


class ContextGate(Module):
    """Pooled-gate attention: a 7x7 average-pool squeeze feeds two pointwise
    convolutions whose sigmoid output rescales the features."""

    def __init__(self, channels: int, reduction: int, rng, slope: float):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.squeeze = Conv2d(ConvSpec(channels, hidden, (1, 1)), rng)
        self.expand = Conv2d(ConvSpec(hidden, channels, (1, 1)), rng)
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        pooled = avg_pool2d(x, 7, stride=1, padding="same")
        gate = sigmoid(self.expand(leaky_relu(self.squeeze(pooled), self.slope)))
        return x * gate

    __call__ = forward


class HarmonicStage(Module):
    """One pruned harmonic-dense block plus its output compression.

    Layer i consumes the concatenation of its plan predecessors (index 0
    is the stage input); the block output concatenates the even-indexed
    layers and the last layer, then a pointwise convolution compresses to
    the stage width.
    """

    def __init__(self, in_channels: int, out_channels: int, depth: int,
                 growth: int, multiplier: float, cfg: ModelConfig, rng):
        super().__init__()
        self.plan = TopologyPlan.build(Rule.LITE, depth, growth, multiplier)
        widths = {0: in_channels}
        self.layers = []
        for i in range(1, depth + 1):
            fan_in = sum(widths[p] for p in self.plan.predecessors[i - 1])
            width = self.plan.channels[i - 1]
            widths[i] = width
            self.layers.append(
                ConvBlock(ConvSpec(fan_in, width, (3, 3)), rng, cfg.leaky_slope, cfg.bn_momentum)
            )
        keep_width = sum(widths[i] for i in self.plan.keep_layers())
        self.compress = ConvBlock(
            ConvSpec(keep_width, out_channels, (1, 1)), rng, cfg.leaky_slope, cfg.bn_momentum
        )

    def forward(self, x: Tensor, ablate_layers: tuple[int, ...] = (),
                collect: dict | None = None) -> Tensor:
        outputs: dict[int, Tensor] = {0: x}
        for i, layer in enumerate(self.layers, start=1):
            preds = self.plan.predecessors[i - 1]
            inp = outputs[preds[0]] if len(preds) == 1 else concat(
                [outputs[p] for p in preds], axis=1
            )
            out = layer(inp)
            if i in ablate_layers:
                out = out * 0.0
            outputs[i] = out
            if collect is not None:
                collect[i] = out
        kept = [outputs[i] for i in self.plan.keep_layers()]
        merged = kept[0] if len(kept) == 1 else concat(kept, axis=1)
        return self.compress(merged)

    __call__ = forward


class DecoderStage(Module):
    """Upsample, fuse the same-resolution encoder skip, then run a
    residual ladder of increasing kernel sizes."""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int,
                 cfg: ModelConfig, rng):
        super().__init__()
        self.fuse = ConvBlock(
            ConvSpec(in_channels + skip_channels, out_channels, (1, 1)),
            rng, cfg.leaky_slope, cfg.bn_momentum,
        )
        self.ladder = [
            ConvBlock(ConvSpec(out_channels, out_channels, (k, k)),
                      rng, cfg.leaky_slope, cfg.bn_momentum)
            for k in cfg.decoder_kernels
        ]

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        up = nearest_upsample2d(x, 2)
        if up.shape[-2:] != skip.shape[-2:]:
            raise ShapeError(
                f"decoder skip {skip.shape} does not match upsampled input {up.shape}"
            )
        fused = self.fuse(concat([up, skip], axis=1))
        out = fused
        for rung in self.ladder:
            out = rung(out)
        return fused + out

    __call__ = forward


class SpatialRefiner(Module):
    """Learned three-way affinities (from a pointwise head) drive four
    directional propagation sweeps over the decoder features."""

    def __init__(self, channels: int, cfg: ModelConfig, rng):
        super().__init__()
        self.channels = channels
        self.head = Conv2d(ConvSpec(channels, 12 * channels, (1, 1)), rng)
        # zero affinities make refinement start as an exact identity; the
        # head learns to diffuse instead of scrambling features at init
        self.head.weight.data[...] = 0.0
        self.sweeps = cfg.mcspn_sweeps
        self.fusion = cfg.mcspn_fusion

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        raw = self.head(x).reshape((n, 4, 3, c, h, w))
        field = propagation.normalize_affinities(raw)
        return propagation.refine(x, field, sweeps=self.sweeps, fusion=self.fusion)

    __call__ = forward


class SegModel(Module):
    """The full range-image segmentation network."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(seed + 1)
        c = cfg.channels

        # without the context stem the encoder consumes the raw range image
        self.stem = ContextModule(cfg, rng) if cfg.use_icm else None
        stage_in = [c[3] if cfg.use_icm else c[0], c[4], c[5], c[6], c[7]]
        self.encoder = [
            HarmonicStage(stage_in[s], cfg.stage_channels[s], cfg.lhd_depths[s],
                          cfg.stage_growth(s), cfg.lhd_multiplier, cfg, rng)
            for s in range(5)
        ]
        self.gates = (
            [ContextGate(cfg.stage_channels[s], cfg.cam_reduction, rng, cfg.leaky_slope)
             for s in range(5)]
            if cfg.use_cam
            else []
        )
        self.bridge = ConvBlock(ConvSpec(c[8], c[9], (3, 3)), rng,
                                cfg.leaky_slope, cfg.bn_momentum)
        skips = [c[7], c[6], c[5], c[4]]
        dec_in = [c[9], c[10], c[11], c[12]]
        self.decoder = [
            DecoderStage(dec_in[s], skips[s], cfg.decoder_channels[s], cfg, rng)
            for s in range(4)
        ]
        self.refiner = SpatialRefiner(c[13], cfg, rng) if cfg.use_mcspn else None
        self.head = Conv2d(ConvSpec(c[13], cfg.class_count, (3, 3)), rng)

    def _dropout(self, x: Tensor) -> Tensor:
        return dropout(x, self.cfg.dropout_p, self.dropout_rng, self.training)

    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        """Range-image batch (N, 5, H, W) -> class logits (N, K, H, W)."""
        if x.ndim != 4 or x.shape[1] != self.cfg.channels[0]:
            raise ShapeError(
                f"expected (N, {self.cfg.channels[0]}, H, W) input, got {x.shape}"
            )
        h, w = x.shape[-2:]
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise ShapeError(
                f"spatial size {h}x{w} must be a multiple of {DOWNSAMPLE_FACTOR} "
                "(four down/upsampling stages)"
            )

        def record(name: str, t: Tensor):
            if trace is not None:
                trace.append((name, t.shape))

        out = x if self.stem is None else self.stem(x)
        record("stem", out)
        skips = []
        for s in range(5):
            out = self.encoder[s](out)
            if self.gates:
                out = self.gates[s](out)
            out = self._dropout(out)
            record(f"enc{s + 1}", out)
            if s < 4:
                skips.append(out)
                out = avg_pool2d(out, 2)
                record(f"pool{s + 1}", out)
        out = self.bridge(out)
        record("bridge", out)
        for s in range(4):
            out = self.decoder[s](out, skips[3 - s])
            out = self._dropout(out)
            record(f"dec{4 - s}", out)
        if self.refiner is not None:
            out = self.refiner(out)
            record("refine", out)
        logits = self.head(out)
        record("logits", logits)
        return logits

    __call__ = forward

    def conv_weight_tensors(self) -> list[Tensor]:
        """Convolution kernels only (regularization target); biases excluded."""
        return [m.weight for m in self.modules() if isinstance(m, Conv2d)]
