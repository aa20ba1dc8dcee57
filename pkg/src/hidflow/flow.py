"""Invertible decoder: conditional affine steps + residual channel mixing.

The decoder is a stack of invertible steps plus a final additive fusion
with the upsampled low-frequency base.  Directional convention: the
generative direction maps latent z to image x; ``forward`` here runs the
normalizing direction x -> z and accumulates log|det dz/dx| exactly:

    per step:  h' = (W + I) (exp(s) * h + b)
               logdet += sum(s) + height*width*log|det(W + I)|
    fusion:    x = h + lowfreq          (logdet contribution exactly 0)

Scales are soft-clamped, s <- alpha * tanh(s / alpha), before use; the
log-determinant uses the clamped value, so forward and inverse remain an
exact pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ConditionStack, TransferBlock
from .errors import ShapeError, SingularityError

SINGULARITY_GUARD = 1e-12
DEFAULT_CLAMP = 2.0


@dataclass
class FlowTrace:
    """Latent tensor plus accumulated log-determinant (per sample)."""
    z: Tensor
    logdet: Tensor


def upsample_to(t: Tensor, target_hw: tuple, what: str = "condition") -> Tensor:
    """Repeated bilinear 2x upsampling until t matches the target extent."""
    th, tw = target_hw
    h, w = t.shape[-3], t.shape[-2]
    while (h, w) != (th, tw):
        if th % h or tw % w or th < h or tw < w:
            raise ShapeError(f"{what}: extent ({h},{w}) cannot reach ({th},{tw}) "
                             f"by 2x upsampling")
        t = ad.bilinear_up2(t)
        h, w = t.shape[-3], t.shape[-2]
    return t


class FlowStep:
    """One invertible conditional step (affine + residual 1x1 mixing).

    Either sub-layer can be disabled (ablation switches); a disabled
    sub-layer acts as the identity and contributes zero log-determinant.
    """

    def __init__(self, bands: int, cond_channels: int, rng: np.random.Generator,
                 dtype, clamp: float = DEFAULT_CLAMP, ca_reduction: int = 4,
                 use_affine: bool = True, use_mixing: bool = True):
        self.bands = bands
        self.clamp = clamp
        self.use_affine = use_affine
        self.use_mixing = use_mixing
        self.transfer = (TransferBlock(cond_channels, 2 * bands, rng, dtype,
                                       ca_reduction=ca_reduction)
                         if use_affine else None)
        # zero init keeps the step an exact identity at the start of training
        self.mix_w = (Tensor(np.zeros((bands, bands), dtype=dtype), requires_grad=True)
                      if use_mixing else None)
        self._eye = np.eye(bands, dtype=dtype)

    def named_params(self, prefix: str):
        if self.transfer is not None:
            yield from self.transfer.named_params(f"{prefix}.transfer")
        if self.mix_w is not None:
            yield f"{prefix}.mix_w", self.mix_w

    def output_projections(self):
        out = self.transfer.output_projections() if self.transfer is not None else []
        if self.mix_w is not None:
            out.append(self.mix_w)
        return out

    # -- conditional affine --------------------------------------------------

    def scale_bias(self, t: Tensor, target_hw: tuple, sink=None):
        """Upsample the condition, run the transfer block, split into (s, b)."""
        if self.transfer is None:
            return None, None
        t_up = upsample_to(t, target_hw)
        out = self.transfer.forward(t_up, sink=sink)
        if out.shape[-1] != 2 * self.bands:
            raise ShapeError(f"affine: transfer output channels {out.shape[-1]} != "
                             f"2x working channels {2 * self.bands}")
        s_raw = ad.slice_axis(out, 3, 0, self.bands)
        b = ad.slice_axis(out, 3, self.bands, 2 * self.bands)
        s = ad.mul(ad.tanh(ad.mul(s_raw, 1.0 / self.clamp)), self.clamp)
        return s, b

    def affine_forward(self, h: Tensor, s: Tensor, b: Tensor):
        if s.shape != h.shape or b.shape != h.shape:
            raise ShapeError(f"affine: scale/bias shape {s.shape} does not match "
                             f"input {h.shape}")
        out = ad.add(ad.mul(ad.exp(s), h), b)
        inc = ad.tsum(s, axis=(1, 2, 3))
        return out, inc

    def affine_inverse(self, h_next: Tensor, s: Tensor, b: Tensor):
        if s.shape != h_next.shape or b.shape != h_next.shape:
            raise ShapeError(f"affine inverse: scale/bias shape {s.shape} does not "
                             f"match input {h_next.shape}")
        return ad.div(ad.sub(h_next, b), ad.exp(s))

    # -- residual invertible mixing -------------------------------------------

    def _mix_matrix(self) -> Tensor:
        return ad.add(self.mix_w, Tensor(self._eye))

    def check_invertible(self):
        if self.mix_w is None:
            return 0.0
        sign, logabs = np.linalg.slogdet(self.mix_w.data + self._eye)
        if sign == 0 or logabs < math.log(SINGULARITY_GUARD):
            raise SingularityError(
                f"residual mixing: |det(W+I)| < {SINGULARITY_GUARD:g}")
        return logabs

    def mix_forward(self, h: Tensor):
        self.check_invertible()
        m = self._mix_matrix()
        out = ad.matmul(h, ad.permute(m, (1, 0)))
        hw = h.shape[1] * h.shape[2]
        inc = ad.mul(ad.slog_abs_det(m), float(hw))
        return out, inc

    def mix_inverse(self, h_next: Tensor):
        self.check_invertible()
        if ad.grad_enabled() and (h_next.requires_grad or h_next._ctx is not None
                                  or self.mix_w.requires_grad):
            minv = ad.matrix_inverse(self._mix_matrix())
            return ad.matmul(h_next, ad.permute(minv, (1, 0)))
        # inference fast path: LU solve per pixel, no tape
        m = self.mix_w.data + self._eye
        flat = h_next.data.reshape(-1, self.bands)
        sol = np.linalg.solve(m, flat.T).T.astype(h_next.dtype)
        return Tensor(sol.reshape(h_next.data.shape))

    # -- one full step ---------------------------------------------------------

    def forward(self, h: Tensor, s: Tensor, b: Tensor):
        if self.use_affine:
            out, inc = self.affine_forward(h, s, b)
        else:
            out = h
            inc = Tensor(np.zeros(h.shape[0], dtype=h.dtype))
        if self.use_mixing:
            out, inc_m = self.mix_forward(out)
            inc = ad.add(inc, ad.expand(ad.reshape(inc_m, (1,)), inc.shape))
        return out, inc

    def inverse(self, h_next: Tensor, s: Tensor, b: Tensor):
        h = self.mix_inverse(h_next) if self.use_mixing else h_next
        return self.affine_inverse(h, s, b) if self.use_affine else h


def fusion_forward(h: Tensor, lowfreq: Tensor):
    """Additive fusion with the upsampled low-frequency base; logdet == 0."""
    if h.shape != lowfreq.shape:
        raise ShapeError(f"fusion: shapes {h.shape} and {lowfreq.shape} do not match")
    return ad.add(h, lowfreq)


def fusion_inverse(x: Tensor, lowfreq: Tensor):
    if x.shape != lowfreq.shape:
        raise ShapeError(f"fusion: shapes {x.shape} and {lowfreq.shape} do not match")
    return ad.sub(x, lowfreq)


class FlowDecoder:
    """Stack of invertible steps; step 0 sits at the latent side and consumes
    the coarsest condition map."""

    def __init__(self, bands: int, cond_channels: list[int], rng: np.random.Generator,
                 dtype, clamp: float = DEFAULT_CLAMP, ca_reduction: int = 4,
                 use_affine: bool = True, use_mixing: bool = True):
        self.bands = bands
        self.steps = [FlowStep(bands, c, rng, dtype, clamp=clamp,
                               ca_reduction=ca_reduction, use_affine=use_affine,
                               use_mixing=use_mixing)
                      for c in cond_channels]

    @property
    def num_steps(self):
        return len(self.steps)

    def named_params(self, prefix: str = "flow"):
        for i, step in enumerate(self.steps):
            yield from step.named_params(f"{prefix}.step{i}")

    def output_projections(self):
        out = []
        for step in self.steps:
            out.extend(step.output_projections())
        return out

    def _check_conditions(self, conditions: ConditionStack):
        if len(conditions) != self.num_steps:
            raise ShapeError(f"flow: got {len(conditions)} condition maps for "
                             f"{self.num_steps} steps")

    def prepare(self, conditions: ConditionStack, base: Tensor, target_hw: tuple,
                sink=None):
        """Compute per-step (s, b) fields and the upsampled lowfreq once.

        Transfer outputs depend only on the conditioning input, so forward
        and inverse passes within one training step share them.
        """
        self._check_conditions(conditions)
        sb = []
        for i, (step, t) in enumerate(zip(self.steps, conditions.maps)):
            scoped = None if sink is None else (
                lambda name, arr, i=i: sink(f"flow/step{i}/transfer/{name}", arr))
            sb.append(step.scale_bias(t, target_hw, sink=scoped))
        lowfreq = upsample_to(base, target_hw, what="lowfreq base")
        return sb, lowfreq

    def forward_prepared(self, x: Tensor, sb: list, lowfreq: Tensor, sink=None) -> FlowTrace:
        h = fusion_inverse(x, lowfreq)
        n = x.shape[0]
        logdet = Tensor(np.zeros(n, dtype=x.dtype))
        # normalizing direction traverses generative steps last-to-first
        for i in range(self.num_steps - 1, -1, -1):
            s, b = sb[i]
            h, inc = self.steps[i].forward(h, s, b)
            logdet = ad.add(logdet, inc)
            if sink is not None:
                sink(f"flow/step{i}/normalized", h.data)
        return FlowTrace(z=h, logdet=logdet)

    def inverse_prepared(self, z: Tensor, sb: list, lowfreq: Tensor, sink=None) -> Tensor:
        h = z
        for i in range(self.num_steps):
            s, b = sb[i]
            h = self.steps[i].inverse(h, s, b)
            if sink is not None:
                sink(f"flow/step{i}/generated", h.data)
        return fusion_forward(h, lowfreq)

    def forward(self, x: Tensor, conditions: ConditionStack, base: Tensor,
                sink=None) -> FlowTrace:
        sb, lowfreq = self.prepare(conditions, base, (x.shape[1], x.shape[2]), sink=sink)
        return self.forward_prepared(x, sb, lowfreq, sink=sink)

    def inverse(self, z: Tensor, conditions: ConditionStack, base: Tensor,
                sink=None) -> Tensor:
        sb, lowfreq = self.prepare(conditions, base, (z.shape[1], z.shape[2]), sink=sink)
        return self.inverse_prepared(z, sb, lowfreq, sink=sink)
