"""Conditional encoder: global low-frequency feature extraction.

The encoder is not invertible.  It stacks window-attention transformer
blocks with stride-2 convolutional downsampling, producing one feature map
per stage (the condition maps consumed by the invertible decoder) plus a
coarse projection back to band space (the low-frequency base image).

Also defines the half-instance-norm transfer block with channel attention
that turns an upsampled condition map into per-element scale/bias fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

LN_EPS = 1e-5
IN_EPS = 1e-5


@dataclass
class EncoderConfig:
    bands: int
    base_channels: int = 32
    stages: int = 3
    window: int = 4
    heads: int = 4
    blocks_per_stage: int = 1
    ffn_ratio: int = 2
    ca_reduction: int = 4

    def stage_channels(self, stage: int) -> int:
        # channels double per stage, capped at 4x the base width
        return min(self.base_channels * (2 ** stage), 4 * self.base_channels)

    def validate(self):
        if self.bands < 1 or self.base_channels < 1:
            raise ConfigError("encoder: bands and base_channels must be positive")
        if self.stages < 1:
            raise ConfigError("encoder: stages must be >= 1")
        if self.window < 1:
            raise ConfigError("encoder: window must be >= 1")
        for s in range(self.stages):
            ch = self.stage_channels(s)
            if ch % self.heads != 0:
                raise ConfigError(f"encoder: stage {s} channels {ch} not divisible by "
                                  f"{self.heads} heads")


@dataclass
class ConditionStack:
    """Condition maps in coarse-to-fine order, one per decoder flow step.

    ``scales[i]`` is the power-of-two spatial factor between map i and the
    decoder working resolution.
    """
    maps: list = field(default_factory=list)
    scales: list = field(default_factory=list)

    def __len__(self):
        return len(self.maps)


def check_spatial(h: int, w: int, cfg: EncoderConfig):
    """Divisibility preconditions for an encode pass."""
    down = 2 ** (cfg.stages - 1)
    if h % down or w % down:
        raise ShapeError(f"encode: spatial extent ({h},{w}) not divisible by 2^(stages-1)={down}")
    for s in range(cfg.stages):
        hs, ws = h >> s, w >> s
        if hs % cfg.window or ws % cfg.window:
            raise ShapeError(f"encode: stage {s} extent ({hs},{ws}) not divisible by "
                             f"window {cfg.window}")


# ---------------------------------------------------------------------------
# shared parameterized helpers
# ---------------------------------------------------------------------------

def _conv_init(rng: np.random.Generator, kh, kw, cin, cout, dtype):
    fan_in = kh * kw * cin
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=(kh, kw, cin, cout)).astype(dtype)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ad.matmul(x, w)
    if b is not None:
        shape = (1,) * (len(out.shape) - 1) + (b.shape[0],)
        out = ad.add(out, ad.expand(ad.reshape(b, shape), out.shape))
    return out


def channel_affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    shape = (1,) * (len(x.shape) - 1) + (gamma.shape[0],)
    g = ad.expand(ad.reshape(gamma, shape), x.shape)
    b = ad.expand(ad.reshape(beta, shape), x.shape)
    return ad.add(ad.mul(x, g), b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = ad.expand(ad.tmean(x, axis=-1, keepdims=True), x.shape)
    d = ad.sub(x, mu)
    var = ad.expand(ad.tmean(ad.mul(d, d), axis=-1, keepdims=True), x.shape)
    xhat = ad.div(d, ad.sqrt(ad.add(var, LN_EPS)))
    return channel_affine(xhat, gamma, beta)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-sample, per-channel spatial normalization of an NHWC tensor."""
    mu = ad.expand(ad.tmean(x, axis=(1, 2), keepdims=True), x.shape)
    d = ad.sub(x, mu)
    var = ad.expand(ad.tmean(ad.mul(d, d), axis=(1, 2), keepdims=True), x.shape)
    xhat = ad.div(d, ad.sqrt(ad.add(var, IN_EPS)))
    return channel_affine(xhat, gamma, beta)


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

class WindowAttentionBlock:
    """Pre-norm transformer block over non-overlapping spatial windows.

    y = x + MSA(LN(x)); out = y + FFN(LN(y)).  The FFN interposes a 3x3
    depthwise convolution between its two pointwise projections.  Output
    projections of both branches are zero-initialized so a fresh block is
    the identity map.
    """

    def __init__(self, dim: int, heads: int, window: int, ffn_ratio: int,
                 rng: np.random.Generator, dtype):
        if dim % heads:
            raise ConfigError(f"attention: dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.window = window
        hidden = ffn_ratio * dim
        t = lambda a: Tensor(a.astype(dtype), requires_grad=True)
        self.ln1_g = t(np.ones(dim))
        self.ln1_b = t(np.zeros(dim))
        self.qkv_w = t(rng.normal(0, dim ** -0.5, size=(dim, 3 * dim)))
        self.qkv_b = t(np.zeros(3 * dim))
        self.proj_w = t(np.zeros((dim, dim)))
        self.proj_b = t(np.zeros(dim))
        self.ln2_g = t(np.ones(dim))
        self.ln2_b = t(np.zeros(dim))
        self.fc1_w = t(rng.normal(0, dim ** -0.5, size=(dim, hidden)))
        self.fc1_b = t(np.zeros(hidden))
        self.dw_w = t(rng.normal(0, 1.0 / 3.0, size=(3, 3, hidden)))
        self.fc2_w = t(np.zeros((hidden, dim)))
        self.fc2_b = t(np.zeros(dim))

    def named_params(self, prefix: str):
        for k in ("ln1_g", "ln1_b", "qkv_w", "qkv_b", "proj_w", "proj_b",
                  "ln2_g", "ln2_b", "fc1_w", "fc1_b", "dw_w", "fc2_w", "fc2_b"):
            yield f"{prefix}.{k}", getattr(self, k)

    def output_projections(self):
        return [self.proj_w, self.proj_b, self.fc2_w, self.fc2_b]

    def _attend(self, x: Tensor, sink=None) -> Tensor:
        n, h, w, c = x.shape
        ww = self.window
        if h % ww or w % ww:
            raise ShapeError(f"attention: extent ({h},{w}) not divisible by window {ww}")
        nh, nw = h // ww, w // ww
        t = ww * ww
        hd = c // self.heads
        xw = ad.reshape(x, (n, nh, ww, nw, ww, c))
        xw = ad.permute(xw, (0, 1, 3, 2, 4, 5))
        xw = ad.reshape(xw, (n * nh * nw, t, c))
        qkv = linear(xw, self.qkv_w, self.qkv_b)
        q = ad.slice_axis(qkv, 2, 0, c)
        k = ad.slice_axis(qkv, 2, c, 2 * c)
        v = ad.slice_axis(qkv, 2, 2 * c, 3 * c)

        def heads_first(u):
            u = ad.reshape(u, (n * nh * nw, t, self.heads, hd))
            return ad.permute(u, (0, 2, 1, 3))

        q, k, v = heads_first(q), heads_first(k), heads_first(v)
        logits = ad.mul(ad.matmul(q, ad.permute(k, (0, 1, 3, 2))), hd ** -0.5)
        attn = ad.softmax(logits, axis=-1)
        if sink is not None:
            sink("attention_weights", attn.data)
        out = ad.matmul(attn, v)
        out = ad.permute(out, (0, 2, 1, 3))
        out = ad.reshape(out, (n * nh * nw, t, c))
        out = linear(out, self.proj_w, self.proj_b)
        out = ad.reshape(out, (n, nh, nw, ww, ww, c))
        out = ad.permute(out, (0, 1, 3, 2, 4, 5))
        return ad.reshape(out, (n, h, w, c))

    def forward(self, x: Tensor, sink=None) -> Tensor:
        y = ad.add(x, self._attend(layer_norm(x, self.ln1_g, self.ln1_b), sink=sink))
        z = layer_norm(y, self.ln2_g, self.ln2_b)
        z = linear(z, self.fc1_w, self.fc1_b)
        z = ad.gelu(z)
        z = ad.depthwise_conv2d(z, self.dw_w, padding=1)
        z = ad.gelu(z)
        z = linear(z, self.fc2_w, self.fc2_b)
        return ad.add(y, z)


class Downsample:
    """Stride-2 3x3 convolution, doubling channels up to the stage cap."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, dtype):
        self.w = Tensor(_conv_init(rng, 3, 3, cin, cout, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def named_params(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-3], x.shape[-2]
        if h % 2 or w % 2:
            raise ShapeError(f"downsample: spatial extent ({h},{w}) must be even")
        return ad.conv2d(x, self.w, self.b, stride=2, padding=1)


class TransferBlock:
    """Half-instance-norm block with channel attention.

    conv -> split channels -> instance-norm first half -> concat -> conv ->
    channel-attention gate -> residual add around the gate.  The second
    convolution is the block's output projection; zeroing it makes the block
    emit exactly zero, which is how the flow achieves identity
    initialization.
    """

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, dtype,
                 ca_reduction: int = 4):
        if out_ch % 2:
            raise ShapeError(f"transfer block: channel count {out_ch} must be even "
                             f"to split for half instance normalization")
        self.in_ch = in_ch
        self.out_ch = out_ch
        half = out_ch // 2
        squeeze = max(out_ch // ca_reduction, 1)
        t = lambda a: Tensor(a.astype(dtype), requires_grad=True)
        self.conv1_w = t(_conv_init(rng, 3, 3, in_ch, out_ch, dtype))
        self.conv1_b = t(np.zeros(out_ch))
        self.in_g = t(np.ones(half))
        self.in_b = t(np.zeros(half))
        self.conv2_w = t(np.zeros((3, 3, out_ch, out_ch)))
        self.conv2_b = t(np.zeros(out_ch))
        self.ca_w1 = t(rng.normal(0, np.sqrt(2.0 / out_ch), size=(out_ch, squeeze)))
        self.ca_b1 = t(np.zeros(squeeze))
        self.ca_w2 = t(rng.normal(0, np.sqrt(2.0 / squeeze), size=(squeeze, out_ch)))
        self.ca_b2 = t(np.zeros(out_ch))

    def named_params(self, prefix: str):
        for k in ("conv1_w", "conv1_b", "in_g", "in_b", "conv2_w", "conv2_b",
                  "ca_w1", "ca_b1", "ca_w2", "ca_b2"):
            yield f"{prefix}.{k}", getattr(self, k)

    def output_projections(self):
        return [self.conv2_w, self.conv2_b]

    def gate(self, w: Tensor) -> Tensor:
        pooled = ad.reshape(ad.tmean(w, axis=(1, 2), keepdims=False), (w.shape[0], self.out_ch))
        g = linear(pooled, self.ca_w1, self.ca_b1)
        g = ad.relu(g)
        g = linear(g, self.ca_w2, self.ca_b2)
        g = ad.sigmoid(g)
        return ad.expand(ad.reshape(g, (w.shape[0], 1, 1, self.out_ch)), w.shape)

    def forward(self, x: Tensor, sink=None) -> Tensor:
        half = self.out_ch // 2
        u = ad.conv2d(x, self.conv1_w, self.conv1_b, stride=1, padding=1)
        u1 = ad.slice_axis(u, 3, 0, half)
        u2 = ad.slice_axis(u, 3, half, self.out_ch)
        v = ad.concat([instance_norm(u1, self.in_g, self.in_b), u2], axis=3)
        v = ad.leaky_relu(v, 0.2)
        w = ad.conv2d(v, self.conv2_w, self.conv2_b, stride=1, padding=1)
        g = self.gate(w)
        if sink is not None:
            sink("gate", g.data[:, 0, 0, :])
        return ad.add(ad.mul(w, g), w)


class ConditionalEncoder:
    """Stacks attention stages with downsampling; emits conditions + base."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        c0 = cfg.stage_channels(0)
        self.embed_w = Tensor(_conv_init(rng, 3, 3, cfg.bands, c0, dtype), requires_grad=True)
        self.embed_b = Tensor(np.zeros(c0, dtype=dtype), requires_grad=True)
        self.stages = []
        self.downs = []
        for s in range(cfg.stages):
            dim = cfg.stage_channels(s)
            self.stages.append([
                WindowAttentionBlock(dim, cfg.heads, cfg.window, cfg.ffn_ratio, rng, dtype)
                for _ in range(cfg.blocks_per_stage)
            ])
            if s + 1 < cfg.stages:
                self.downs.append(Downsample(dim, cfg.stage_channels(s + 1), rng, dtype))
        last = cfg.stage_channels(cfg.stages - 1)
        # zero-initialized output projection: a fresh model has lowfreq == 0
        self.proj_w = Tensor(np.zeros((3, 3, last, cfg.bands), dtype=dtype), requires_grad=True)
        self.proj_b = Tensor(np.zeros(cfg.bands, dtype=dtype), requires_grad=True)

    def named_params(self, prefix: str = "encoder"):
        yield f"{prefix}.embed_w", self.embed_w
        yield f"{prefix}.embed_b", self.embed_b
        for s, blocks in enumerate(self.stages):
            for i, blk in enumerate(blocks):
                yield from blk.named_params(f"{prefix}.stage{s}.block{i}")
        for s, d in enumerate(self.downs):
            yield from d.named_params(f"{prefix}.down{s}")
        yield f"{prefix}.proj_w", self.proj_w
        yield f"{prefix}.proj_b", self.proj_b

    def output_projections(self):
        out = [self.proj_w, self.proj_b]
        for blocks in self.stages:
            for blk in blocks:
                out.extend(blk.output_projections())
        return out

    def stage_outputs(self, y: Tensor, sink=None):
        """Run the encoder; returns per-stage output lists and the base map."""
        if len(y.shape) != 4:
            raise ShapeError(f"encode: expected (N,H,W,B) input, got {y.shape}")
        h, w = y.shape[1], y.shape[2]
        check_spatial(h, w, self.cfg)
        x = ad.conv2d(y, self.embed_w, self.embed_b, stride=1, padding=1)
        per_stage = []
        for s, blocks in enumerate(self.stages):
            outs = []
            for i, blk in enumerate(blocks):
                x = blk.forward(x, sink=_scoped(sink, f"encoder/stage{s}/block{i}"))
                outs.append(x)
            per_stage.append(outs)
            if sink is not None:
                sink(f"encoder/stage{s}/output", x.data)
            if s < len(self.downs):
                x = self.downs[s].forward(x)
        base = ad.conv2d(x, self.proj_w, self.proj_b, stride=1, padding=1)
        if sink is not None:
            sink("encoder/base", base.data)
        return per_stage, base

    def encode(self, y: Tensor, num_conditions: int, sink=None):
        """Full encode pass: (ConditionStack coarse->fine, lowfreq base)."""
        per_stage, base = self.stage_outputs(y, sink=sink)
        stack = build_condition_stack(per_stage, num_conditions)
        return stack, base

    @property
    def base_scale(self) -> int:
        return 2 ** (self.cfg.stages - 1)


def _scoped(sink, prefix: str):
    if sink is None:
        return None
    return lambda name, arr: sink(f"{prefix}/{name}", arr)


def build_condition_stack(per_stage: list, num_conditions: int) -> ConditionStack:
    """Assign stage outputs to flow steps, coarsest stage to the earliest
    (latent-side) steps; steps within a stage cycle through its block
    outputs."""
    stages = len(per_stage)
    sizes = [num_conditions // stages + (1 if i < num_conditions % stages else 0)
             for i in range(stages)]
    stack = ConditionStack()
    for gi, size in enumerate(sizes):
        stage_idx = stages - 1 - gi  # coarse group first
        outs = per_stage[stage_idx]
        for j in range(size):
            stack.maps.append(outs[j % len(outs)])
            stack.scales.append(2 ** stage_idx)
    return stack
