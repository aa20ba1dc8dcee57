"""Composed denoiser: conditional encoder + invertible decoder.

Public entry points work on single cubes (rank-3, H x W x B); training uses
the batched (N,H,W,B) internals directly.  A fresh model has every output
projection zero-initialized, so the invertible part is exactly the identity
and the low-frequency base is exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ConditionalEncoder, ConditionStack, EncoderConfig
from .errors import ConfigError, ShapeError
from .flow import FlowDecoder, FlowTrace
from .rng import STREAM_INIT, STREAM_LATENT, stream

MAX_FLOW_STEPS = 16


@dataclass
class ModelConfig:
    bands: int
    width: int = 32
    stages: int = 3
    window: int = 4
    heads: int = 4
    blocks_per_stage: int = 1
    ffn_ratio: int = 2
    ca_reduction: int = 4
    flow_steps: int = 9
    clamp: float = 2.0
    # ablation switches: drop the conditional affine or the residual mixing
    use_affine: bool = True
    use_mixing: bool = True

    def validate(self):
        if not (1 <= self.flow_steps <= MAX_FLOW_STEPS):
            raise ConfigError(f"flow_steps must be in [1, {MAX_FLOW_STEPS}], "
                              f"got {self.flow_steps}")
        if self.clamp <= 0:
            raise ConfigError("clamp must be positive")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(bands=self.bands, base_channels=self.width,
                             stages=self.stages, window=self.window, heads=self.heads,
                             blocks_per_stage=self.blocks_per_stage,
                             ffn_ratio=self.ffn_ratio, ca_reduction=self.ca_reduction)

    def to_dict(self) -> dict:
        return asdict(self)


def condition_channels(cfg: ModelConfig) -> list[int]:
    """Channel width of the condition map feeding each flow step (step 0 is
    the latent-side step and receives the coarsest stage)."""
    enc = cfg.encoder_config()
    n, s = cfg.flow_steps, cfg.stages
    sizes = [n // s + (1 if i < n % s else 0) for i in range(s)]
    out = []
    for gi, size in enumerate(sizes):
        stage_idx = s - 1 - gi
        out.extend([enc.stage_channels(stage_idx)] * size)
    return out


class DenoiserModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.seed = seed
        rng = stream(seed, STREAM_INIT)
        self.encoder = ConditionalEncoder(cfg.encoder_config(), rng, self.dtype)
        self.decoder = FlowDecoder(cfg.bands, condition_channels(cfg), rng, self.dtype,
                                   clamp=cfg.clamp, ca_reduction=cfg.ca_reduction,
                                   use_affine=cfg.use_affine, use_mixing=cfg.use_mixing)

    # -- parameters ----------------------------------------------------------
    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.encoder.named_params("encoder"))
        out.update(dict(self.decoder.named_params("flow")))
        return out

    def zero_output_projections(self):
        for t in self.encoder.output_projections() + self.decoder.output_projections():
            t.data[...] = 0.0

    def randomize(self, seed: int, scale: float = 0.02, mix_scale: float = 0.05):
        """Random re-initialization for verification suites: perturbs every
        parameter, including output projections and the mixing matrices."""
        rng = stream(seed, STREAM_INIT, 777)
        for name, p in sorted(self.named_params().items()):
            if name.endswith("mix_w"):
                p.data[...] = rng.uniform(-mix_scale, mix_scale, size=p.shape)
            elif name.endswith(("_g",)):
                p.data[...] = 1.0 + rng.normal(0, scale, size=p.shape)
            else:
                p.data[...] = rng.normal(0, scale, size=p.shape)

    # -- batched internals -----------------------------------------------------
    def _require_batch(self, arr, what: str) -> Tensor:
        if isinstance(arr, Tensor):
            t = arr
        else:
            t = Tensor(np.asarray(arr), dtype=self.dtype)
        if len(t.shape) == 3:
            t = ad.reshape(t, (1,) + tuple(t.shape))
        if len(t.shape) != 4:
            raise ShapeError(f"{what}: expected rank-3 or rank-4 input, got {t.shape}")
        if t.shape[-1] != self.cfg.bands:
            raise ShapeError(f"{what}: band count {t.shape[-1]} != model bands "
                             f"{self.cfg.bands}")
        return t

    def encode(self, y, sink=None) -> tuple[ConditionStack, Tensor]:
        yb = self._require_batch(y, "encode")
        return self.encoder.encode(yb, self.decoder.num_steps, sink=sink)

    def prepare(self, y, sink=None):
        """Encode y and precompute per-step scale/bias + lowfreq for its extent."""
        yb = self._require_batch(y, "encode")
        conditions, base = self.encoder.encode(yb, self.decoder.num_steps, sink=sink)
        sb, lowfreq = self.decoder.prepare(conditions, base,
                                           (yb.shape[1], yb.shape[2]), sink=sink)
        return sb, lowfreq

    # -- cube-level API ----------------------------------------------------------
    def flow_forward(self, x, y, sink=None) -> FlowTrace:
        xb = self._require_batch(x, "flow_forward")
        sb, lowfreq = self.prepare(y, sink=sink)
        trace = self.decoder.forward_prepared(xb, sb, lowfreq, sink=sink)
        if not isinstance(x, Tensor) and np.asarray(x).ndim == 3:
            return FlowTrace(z=ad.reshape(trace.z, trace.z.shape[1:]),
                             logdet=ad.reshape(trace.logdet, ()))
        return trace

    def flow_inverse(self, z, y, sink=None) -> Tensor:
        zb = self._require_batch(z, "flow_inverse")
        sb, lowfreq = self.prepare(y, sink=sink)
        xb = self.decoder.inverse_prepared(zb, sb, lowfreq, sink=sink)
        if not isinstance(z, Tensor) and np.asarray(z).ndim == 3:
            return ad.reshape(xb, xb.shape[1:])
        return xb

    def denoise(self, y: np.ndarray, temperature: float = 0.0, seed: int = 0,
                num_samples: int = 0, sink=None):
        """Restore a noisy cube.

        Returns (point_estimate, samples): the deterministic z=0 estimate and
        ``num_samples`` draws with z ~ N(0, temperature^2 I).  Outputs are
        clamped to [0, 1]; this is the only place clamping happens.
        """
        y = np.asarray(y, dtype=self.dtype)
        if y.ndim != 3:
            raise ShapeError(f"denoise: expected a rank-3 cube, got {y.shape}")
        with ad.no_grad():
            sb, lowfreq = self.prepare(y[None], sink=sink)
            zeros = Tensor(np.zeros((1,) + y.shape, dtype=self.dtype))
            point = self.decoder.inverse_prepared(zeros, sb, lowfreq, sink=sink)
            ad.check_finite(point, "denoise: restored cube")
            point = np.clip(point.data[0], 0.0, 1.0)
            samples = []
            for k in range(num_samples):
                rng = stream(seed, STREAM_LATENT, k)
                z = rng.normal(0.0, 1.0, size=(1,) + y.shape) * float(temperature)
                xk = self.decoder.inverse_prepared(Tensor(z.astype(self.dtype)),
                                                   sb, lowfreq)
                samples.append(np.clip(xk.data[0], 0.0, 1.0))
        return point, samples
