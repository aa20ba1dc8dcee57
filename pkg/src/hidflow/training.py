"""Objectives, optimizer, patch pipeline, and the training loop.

The loss couples the exact likelihood of the normalizing direction with an
L1 reconstruction of a sampled restoration:

    nll   = 0.5*||z||^2 + (D/2)*log(2*pi) - logdet
    rec   = mean |inverse(z_hat; y) - x|,  z_hat ~ N(0, I) fresh per batch
    total = lambda_nll * nll + lambda_rec * rec

Training follows an easy-to-difficult curriculum: a Gaussian-noise phase
followed by a mixture-noise phase, with degradations drawn on the fly.
All randomness is keyed by (seed, stream, step indices), so a run resumed
from a checkpoint retraces the uninterrupted trajectory exactly.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .degradation import NoiseSpec, degrade
from .errors import DataError, NumericsError
from .flow import FlowTrace
from .model import DenoiserModel
from .metrics import psnr
from .rng import (STREAM_AUGMENT, STREAM_LATENT, STREAM_NOISE, STREAM_SHUFFLE,
                  STREAM_VALIDATION, stream)

log = logging.getLogger("hidflow.train")

LOG_2PI = math.log(2.0 * math.pi)
MAX_CONSECUTIVE_BAD_STEPS = 3


@dataclass
class TrainConfig:
    lambda_nll: float = 0.001
    lambda_rec: float = 1.0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    epochs_gaussian: int = 50
    epochs_mixture: int = 50
    patch_size: int = 64
    patch_stride: int = 16
    seed: int = 0
    sigma: float = 50.0
    max_steps: int | None = None
    checkpoint_every: int = 0   # epochs between checkpoints; 0 = phase ends only

    def validate(self):
        if self.lambda_nll < 0 or self.lambda_rec < 0:
            raise DataError("loss weights must be non-negative")
        if self.lr <= 0:
            raise DataError("learning rate must be positive")


class ParameterStore:
    """Named parameters with Adam moment slots and a step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.params = params
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in self.params.items()}

    def snapshot(self) -> dict:
        return {"params": {k: p.data.copy() for k, p in self.params.items()},
                "m": copy.deepcopy(self.m), "v": copy.deepcopy(self.v),
                "step_count": self.step_count}

    def restore(self, snap: dict):
        for k, p in self.params.items():
            p.data[...] = snap["params"][k]
            self.m[k][...] = snap["m"][k]
            self.v[k][...] = snap["v"][k]
        self.step_count = snap["step_count"]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def nll_per_sample(trace: FlowTrace) -> Tensor:
    """Per-sample negative log-likelihood of a batched trace (rank-4 z)."""
    z = trace.z
    d = int(np.prod(z.shape[1:]))
    quad = ad.mul(ad.tsum(ad.mul(z, z), axis=(1, 2, 3)), 0.5)
    return ad.sub(ad.add(quad, 0.5 * d * LOG_2PI), trace.logdet)


def nll_loss(trace: FlowTrace) -> Tensor:
    """Negative log-likelihood under a standard-normal latent.

    Accepts a single-cube trace (rank-3 z, scalar logdet) or a batched one
    (rank-4 z, per-sample logdet); batches are averaged.
    """
    z = trace.z
    if len(z.shape) == 3:
        d = z.size
        quad = ad.mul(ad.tsum(ad.mul(z, z)), 0.5)
        return ad.sub(ad.add(quad, 0.5 * d * LOG_2PI), trace.logdet)
    return ad.tmean(nll_per_sample(trace))


def rec_loss(x_hat: Tensor, x: Tensor) -> Tensor:
    """Mean absolute reconstruction error."""
    return ad.tmean(ad.tabs(ad.sub(x_hat, x)))


def total_loss(nll, rec, cfg: TrainConfig):
    """lambda_nll * nll + lambda_rec * rec (tensor or float inputs)."""
    if isinstance(nll, Tensor) or isinstance(rec, Tensor):
        nll_t = nll if isinstance(nll, Tensor) else Tensor(np.asarray(nll))
        rec_t = rec if isinstance(rec, Tensor) else Tensor(np.asarray(rec))
        return ad.add(ad.mul(nll_t, cfg.lambda_nll), ad.mul(rec_t, cfg.lambda_rec))
    return cfg.lambda_nll * nll + cfg.lambda_rec * rec


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], cfg: TrainConfig):
    """One bias-corrected Adam update; skipped if any gradient is non-finite."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        log.warning("adam: skipping step, non-finite gradients for %s", ", ".join(bad))
        return store
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, p in store.params.items():
        g = grads[k].astype(p.data.dtype, copy=False)
        store.m[k] = cfg.beta1 * store.m[k] + (1.0 - cfg.beta1) * g
        store.v[k] = cfg.beta2 * store.v[k] + (1.0 - cfg.beta2) * (g * g)
        m_hat = store.m[k] / c1
        v_hat = store.v[k] / c2
        p.data[...] = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return store


# ---------------------------------------------------------------------------
# patch pipeline
# ---------------------------------------------------------------------------

def make_patches(cube: np.ndarray, size: int = 64, stride: int = 16) -> list[np.ndarray]:
    """All stride-aligned square windows of a cube."""
    cube = np.asarray(cube)
    h, w = cube.shape[0], cube.shape[1]
    if h < size or w < size:
        raise DataError(f"make_patches: cube extent ({h},{w}) smaller than "
                        f"patch size {size}")
    out = []
    for i in range(0, h - size + 1, stride):
        for j in range(0, w - size + 1, stride):
            out.append(cube[i:i + size, j:j + size])
    return out


def augment(patch: np.ndarray, seed, *subkeys: int) -> np.ndarray:
    """Uniformly chosen flip in {none, horizontal, vertical} combined with a
    rotation in {0, 90, 180, 270} degrees; the spectral axis is untouched."""
    rng = stream(seed, STREAM_AUGMENT, *subkeys)
    flip = int(rng.integers(0, 3))
    quarter_turns = int(rng.integers(0, 4))
    out = patch
    if flip == 1:
        out = out[:, ::-1]
    elif flip == 2:
        out = out[::-1, :]
    if quarter_turns:
        out = np.rot90(out, k=quarter_turns, axes=(0, 1))
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    store: ParameterStore
    history: list = field(default_factory=list)      # per-epoch rows
    step_losses: list = field(default_factory=list)  # per-step total loss
    final_checkpoint: str | None = None


def _batch_losses(model: DenoiserModel, clean: np.ndarray, noisy: np.ndarray,
                  z_hat: np.ndarray, cfg: TrainConfig):
    x = Tensor(clean, dtype=model.dtype)
    y = Tensor(noisy, dtype=model.dtype)
    sb, lowfreq = model.prepare(y)
    trace = model.decoder.forward_prepared(x, sb, lowfreq)
    nll = nll_loss(trace)
    x_hat = model.decoder.inverse_prepared(Tensor(z_hat, dtype=model.dtype), sb, lowfreq)
    rec = rec_loss(x_hat, x)
    return total_loss(nll, rec, cfg), nll, rec


def train_step(model: DenoiserModel, store: ParameterStore, clean: np.ndarray,
               noisy: np.ndarray, z_hat: np.ndarray, cfg: TrainConfig):
    """One optimization step; returns (total, nll, rec) as floats.

    Raises NumericsError on a non-finite loss, after identifying the first
    offending layer.
    """
    store.zero_grad()
    total, nll, rec = _batch_losses(model, clean, noisy, z_hat, cfg)
    if not np.isfinite(total.data):
        layer = _find_nonfinite_layer(model, clean, noisy)
        raise NumericsError(f"training: non-finite loss at {layer}")
    backward(total)
    adam_step(store, store.grads(), cfg)
    for i, step in enumerate(model.decoder.steps):
        step.check_invertible()
    return float(total.data), float(nll.data), float(rec.data)


def _find_nonfinite_layer(model: DenoiserModel, clean: np.ndarray,
                          noisy: np.ndarray) -> str:
    """Replay the forward pass with per-layer checks; name the first bad one."""
    offender = ["<unlocated>"]
    done = [False]

    def sink(name, arr):
        if not done[0] and not np.all(np.isfinite(arr)):
            offender[0] = name
            done[0] = True

    try:
        with ad.no_grad():
            x = Tensor(clean, dtype=model.dtype)
            y = Tensor(noisy, dtype=model.dtype)
            sb, lowfreq = model.prepare(y, sink=sink)
            model.decoder.forward_prepared(x, sb, lowfreq, sink=sink)
    except Exception:  # diagnosis must not mask the original failure
        pass
    return offender[0]


def default_phases(cfg: TrainConfig) -> list[tuple[int, NoiseSpec]]:
    return [(cfg.epochs_gaussian, NoiseSpec(kind="gaussian", sigma=cfg.sigma)),
            (cfg.epochs_mixture, NoiseSpec(kind="mixture"))]


def train(model: DenoiserModel, dataset: list, cfg: TrainConfig,
          val_cubes: list = (), phases: list | None = None,
          out_dir: str | None = None, store: ParameterStore | None = None) -> TrainResult:
    """Run the curriculum over clean cubes; returns the store and logs.

    ``dataset`` and ``val_cubes`` hold clean cubes; degraded inputs are
    synthesized per batch with fresh, step-keyed seeds.  Passing a restored
    ``store`` resumes training: completed steps are skipped and, because
    every random draw is keyed by step index, the remaining trajectory is
    identical to an uninterrupted run.
    """
    from . import io as hio  # local import: io depends on training types

    cfg.validate()
    resume_from = 0
    if store is None:
        store = ParameterStore(model.named_params())
    else:
        if set(store.params) != set(model.named_params()):
            raise DataError("train: resumed store does not match model parameters")
        resume_from = store.step_count
    phases = default_phases(cfg) if phases is None else phases

    patches = []
    for cube in dataset:
        patches.extend(make_patches(cube, cfg.patch_size, cfg.patch_stride))
    if not patches:
        raise DataError("train: dataset produced no patches")

    result = TrainResult(store=store)
    snapshot = store.snapshot()
    bad_streak = 0
    global_step = 0
    stop = False

    def save_checkpoint(tag: str):
        nonlocal snapshot
        snapshot = store.snapshot()
        if out_dir is None:
            return None
        path = f"{out_dir}/checkpoint_{tag}.hfck"
        hio.save_checkpoint(path, model, store, extra={"tag": tag})
        result.final_checkpoint = path
        return path

    for phase_idx, (epochs, noise_spec) in enumerate(phases):
        for epoch in range(epochs):
            if stop:
                break
            order = stream(cfg.seed, STREAM_SHUFFLE, phase_idx, epoch).permutation(len(patches))
            epoch_totals, epoch_nll, epoch_rec = [], [], []
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and global_step >= cfg.max_steps:
                    stop = True
                    break
                idx = order[start:start + cfg.batch_size]
                global_step += 1
                if global_step <= resume_from:
                    continue
                clean, noisy = [], []
                for slot, pi in enumerate(idx):
                    patch = augment(patches[pi], cfg.seed, phase_idx, global_step, slot)
                    noisy_patch, _ = degrade(patch, noise_spec,
                                             seed=(cfg.seed, STREAM_NOISE, phase_idx,
                                                   global_step, slot))
                    clean.append(patch)
                    noisy.append(noisy_patch)
                clean = np.stack(clean).astype(model.dtype)
                noisy = np.stack(noisy).astype(model.dtype)
                z_hat = stream(cfg.seed, STREAM_LATENT, phase_idx, global_step).normal(
                    0.0, 1.0, size=clean.shape).astype(model.dtype)
                try:
                    total, nll, rec = train_step(model, store, clean, noisy, z_hat, cfg)
                except NumericsError as err:
                    bad_streak += 1
                    log.warning("step %d skipped: %s (streak %d)", global_step, err,
                                bad_streak)
                    if bad_streak >= MAX_CONSECUTIVE_BAD_STEPS:
                        log.warning("restoring last checkpoint after %d bad steps",
                                    bad_streak)
                        store.restore(snapshot)
                        bad_streak = 0
                    continue
                bad_streak = 0
                epoch_totals.append(total)
                epoch_nll.append(nll)
                epoch_rec.append(rec)
                result.step_losses.append(total)

            if global_step <= resume_from:
                continue  # epoch fully covered by the restored checkpoint

            val_psnr = float("nan")
            if val_cubes:
                val_psnr = validate(model, val_cubes, noise_spec, cfg, phase_idx)
            row = {"phase": phase_idx, "epoch": epoch, "step": global_step,
                   "total": float(np.mean(epoch_totals)) if epoch_totals else float("nan"),
                   "nll": float(np.mean(epoch_nll)) if epoch_nll else float("nan"),
                   "rec": float(np.mean(epoch_rec)) if epoch_rec else float("nan"),
                   "val_psnr": val_psnr}
            result.history.append(row)
            log.info("phase %d epoch %d step %d total %.5f nll %.3f rec %.5f val %.2f",
                     phase_idx, epoch, global_step, row["total"], row["nll"],
                     row["rec"], val_psnr)
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(f"p{phase_idx}e{epoch + 1}")
        save_checkpoint(f"p{phase_idx}final")
        if stop:
            break
    return result


def validate(model: DenoiserModel, val_cubes: list, noise_spec: NoiseSpec,
             cfg: TrainConfig, phase_idx: int) -> float:
    """Mean deterministic-estimate PSNR over held-out cubes, fixed noise seed."""
    scores = []
    for i, cube in enumerate(val_cubes):
        noisy, _ = degrade(cube, noise_spec, seed=(cfg.seed, STREAM_VALIDATION,
                                                   phase_idx, i))
        point, _ = model.denoise(noisy.astype(model.dtype))
        scores.append(psnr(point, cube))
    return float(np.mean(scores))
