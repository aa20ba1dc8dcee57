"""Self-verification suites: invertibility, log-determinant, gradients.

These run against freshly built models (no checkpoint needed) and are used
both by the `verify` CLI command and by the acceptance tests.  The oracles
are independent of the paths they check: round-trip measurement for
invertibility, a dense Jacobian assembled from tape gradients for the
log-determinant, central finite differences for gradients, and trapezoid
quadrature for density normalization.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .model import DenoiserModel, ModelConfig
from .rng import STREAM_TEST, stream
from .training import TrainConfig, nll_loss, nll_per_sample, rec_loss, total_loss

INVERT_TOL_32 = 1e-4
INVERT_TOL_64 = 1e-9
LOGDET_RTOL = 1e-6
GRAD_RTOL = 1e-3
IDENTITY_TOL = 1e-6
NLL_CLOSED_FORM_TOL = 1e-9
DENSITY_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def jacobian_via_tape(f, x_np: np.ndarray) -> np.ndarray:
    """Dense Jacobian of a tensor map, one backward pass per output element."""
    x = Tensor(np.asarray(x_np, dtype=np.float64), requires_grad=True)
    out = f(x)
    flat = ad.reshape(out, (out.size,))
    jac = np.zeros((out.size, x.size))
    for i in range(out.size):
        x.grad = None
        backward(ad.tsum(ad.slice_axis(flat, 0, i, i + 1)))
        jac[i] = x.grad.reshape(-1)
    return jac


def fd_gradient(f, param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one array."""
    grad = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f()
        flat[i] = keep - step
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


# ---------------------------------------------------------------------------
# model builders for the suites
# ---------------------------------------------------------------------------

def _small_model(bands, width, stages, window, heads, flow_steps, dtype, seed,
                 randomized=True):
    cfg = ModelConfig(bands=bands, width=width, stages=stages, window=window,
                      heads=heads, flow_steps=flow_steps)
    model = DenoiserModel(cfg, seed=seed, dtype=dtype)
    if randomized:
        model.randomize(seed=seed)
    return model


def _flow_map(model: DenoiserModel, y: np.ndarray):
    """x -> z with conditions frozen (they do not depend on x)."""
    with ad.no_grad():
        sb, lowfreq = model.prepare(y[None])
    sb = [(Tensor(s.data), Tensor(b.data)) for s, b in sb]
    lowfreq = Tensor(lowfreq.data)

    def f(x: Tensor):
        xb = ad.reshape(x, (1,) + tuple(x.shape))
        trace = model.decoder.forward_prepared(xb, sb, lowfreq)
        return ad.reshape(trace.z, trace.z.shape[1:])

    def analytic_logdet(x: Tensor):
        xb = ad.reshape(x, (1,) + tuple(x.shape))
        trace = model.decoder.forward_prepared(xb, sb, lowfreq)
        return float(trace.logdet.data[0])

    return f, analytic_logdet


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def invertibility_check(trials: int, dtype, tol: float, seed: int = 0,
                        shape=(8, 8, 4), flow_steps: int = 9) -> CheckResult:
    t0 = time.time()
    dtype = np.dtype(dtype)
    worst = 0.0
    for trial in range(trials):
        model = _small_model(shape[2], 8, 3, 2, 2, flow_steps, dtype,
                             seed=seed + trial)
        rng = stream(seed, STREAM_TEST, 10, trial)
        x = rng.uniform(0, 1, size=shape).astype(dtype)
        y = rng.uniform(0, 1, size=shape).astype(dtype)
        with ad.no_grad():
            sb, lowfreq = model.prepare(y[None])
            trace = model.decoder.forward_prepared(Tensor(x[None]), sb, lowfreq)
            x_back = model.decoder.inverse_prepared(trace.z, sb, lowfreq)
        worst = max(worst, float(np.max(np.abs(x_back.data[0] - x))))
    name = f"invertibility[{dtype.name}]"
    return CheckResult(name, worst <= tol,
                       f"max |inverse(forward(x)) - x| = {worst:.3e} (tol {tol:g}, "
                       f"{trials} trials)", time.time() - t0)


def logdet_check(trials: int = 20, seed: int = 0, shape=(4, 4, 2),
                 flow_steps: int = 2) -> CheckResult:
    t0 = time.time()
    worst = 0.0
    for trial in range(trials):
        model = _small_model(shape[2], 4, 2, 2, 2, flow_steps, np.float64,
                             seed=seed + trial)
        rng = stream(seed, STREAM_TEST, 20, trial)
        x = rng.uniform(0, 1, size=shape)
        y = rng.uniform(0, 1, size=shape)
        f, analytic = _flow_map(model, y)
        jac = jacobian_via_tape(f, x)
        sign, oracle = np.linalg.slogdet(jac)
        if sign == 0:
            return CheckResult("logdet", False, "oracle Jacobian singular",
                               time.time() - t0)
        got = analytic(Tensor(x))
        rel = abs(got - oracle) / max(abs(oracle), 1e-3)
        worst = max(worst, rel)
    return CheckResult("logdet", worst <= LOGDET_RTOL,
                       f"max rel err analytic vs dense-Jacobian = {worst:.3e} "
                       f"(tol {LOGDET_RTOL:g}, {trials} trials)", time.time() - t0)


def gradient_check(seed: int = 0, step: float = 1e-5,
                   max_entries_per_group: int | None = None) -> CheckResult:
    """total_loss gradients vs central finite differences on a tiny model.

    ``max_entries_per_group`` subsamples coordinates for the quick level;
    None checks every coordinate (acceptance grade).
    """
    t0 = time.time()
    model = _small_model(2, 4, 3, 2, 2, 1, np.float64, seed=seed, randomized=True)
    cfg = TrainConfig(seed=seed)
    rng = stream(seed, STREAM_TEST, 30)
    x = rng.uniform(0, 1, size=(8, 8, 2))
    y = rng.uniform(0, 1, size=(8, 8, 2))
    z_hat = rng.normal(0, 1, size=(8, 8, 2))

    def compute_loss(track: bool):
        def run():
            xt = Tensor(x[None])
            sb, lowfreq = model.prepare(Tensor(y[None]))
            trace = model.decoder.forward_prepared(xt, sb, lowfreq)
            nll = nll_loss(trace)
            x_hat = model.decoder.inverse_prepared(Tensor(z_hat[None]), sb, lowfreq)
            rec = rec_loss(x_hat, xt)
            return total_loss(nll, rec, cfg)
        if track:
            return run()
        with ad.no_grad():
            return float(run().data)

    params = model.named_params()
    for p in params.values():
        p.grad = None
    backward(compute_loss(track=True))

    worst = 0.0
    worst_name = ""
    for name, p in sorted(params.items()):
        g_ad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries_per_group is not None and flat.size > max_entries_per_group:
            idx = stream(seed, STREAM_TEST, 31).choice(flat.size,
                                                       size=max_entries_per_group,
                                                       replace=False)
        g_fd = np.zeros(flat.size)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            hi = compute_loss(track=False)
            flat[i] = keep - step
            lo = compute_loss(track=False)
            flat[i] = keep
            g_fd[i] = (hi - lo) / (2.0 * step)
        sel = np.zeros(flat.size, dtype=bool)
        sel[idx] = True
        diff = np.linalg.norm(g_fd[sel] - g_ad.reshape(-1)[sel])
        scale = max(np.linalg.norm(g_fd[sel]), 1e-8)
        rel = diff / scale
        if rel > worst:
            worst, worst_name = rel, name
    return CheckResult("gradients", worst <= GRAD_RTOL,
                       f"worst group rel err = {worst:.3e} at {worst_name} "
                       f"(tol {GRAD_RTOL:g})", time.time() - t0)


def identity_init_check(seed: int = 0) -> CheckResult:
    t0 = time.time()
    model = _small_model(4, 8, 3, 2, 2, 9, np.float64, seed=seed, randomized=False)
    model.zero_output_projections()
    rng = stream(seed, STREAM_TEST, 40)
    z = rng.normal(0, 1, size=(8, 8, 4))
    y = rng.uniform(0, 1, size=(8, 8, 4))
    with ad.no_grad():
        sb, lowfreq = model.prepare(y[None])
        x = model.decoder.inverse_prepared(Tensor(z[None]), sb, lowfreq)
        err_id = float(np.max(np.abs(x.data[0] - (z + lowfreq.data[0]))))
        x_in = rng.uniform(0, 1, size=(8, 8, 4))
        trace = model.decoder.forward_prepared(Tensor(x_in[None]), sb, lowfreq)
        nll = float(nll_per_sample(trace).data[0])
    d = z.size
    closed = 0.5 * np.sum((x_in - lowfreq.data[0]) ** 2) + 0.5 * d * math.log(2 * math.pi)
    err_nll = abs(nll - closed)
    ok = err_id <= IDENTITY_TOL and err_nll <= NLL_CLOSED_FORM_TOL
    return CheckResult("identity-init", ok,
                       f"|inverse(z)-(z+lowfreq)| = {err_id:.3e} (tol {IDENTITY_TOL:g}); "
                       f"|nll - closed form| = {err_nll:.3e} (tol {NLL_CLOSED_FORM_TOL:g})",
                       time.time() - t0)


def density_check(seed: int = 0, half_width: float = 6.0, points: int = 241) -> CheckResult:
    """Integrate exp(-nll) over a grid for a 2-element flow; expect 1."""
    t0 = time.time()
    model = _small_model(2, 4, 1, 1, 2, 1, np.float64, seed=seed, randomized=True)
    rng = stream(seed, STREAM_TEST, 50)
    y = rng.uniform(0, 1, size=(1, 1, 2))
    with ad.no_grad():
        sb, lowfreq = model.prepare(y[None])
        axis = np.linspace(-half_width, half_width, points)
        g0, g1 = np.meshgrid(axis, axis, indexing="ij")
        xs = np.stack([g0.reshape(-1), g1.reshape(-1)], axis=-1).reshape(-1, 1, 1, 2)
        n = xs.shape[0]
        sb_b = [(ad.expand(Tensor(s.data), (n,) + s.shape[1:]),
                 ad.expand(Tensor(b.data), (n,) + b.shape[1:])) for s, b in sb]
        lf_b = ad.expand(Tensor(lowfreq.data), (n,) + lowfreq.shape[1:])
        trace = model.decoder.forward_prepared(Tensor(xs), sb_b, lf_b)
        nll = nll_per_sample(trace).data
    dens = np.exp(-nll).reshape(points, points)
    integral = float(np.trapezoid(np.trapezoid(dens, axis, axis=1), axis))
    err = abs(integral - 1.0)
    return CheckResult("density", err <= DENSITY_TOL,
                       f"quadrature of exp(-nll) = {integral:.6f} "
                       f"(|err| {err:.2e}, tol {DENSITY_TOL:g})", time.time() - t0)


def primitive_gradcheck(seed: int = 0, rtol: float = 1e-4) -> CheckResult:
    """Spot finite-difference checks of sum(f(x)) for each smooth primitive."""
    t0 = time.time()
    rng = stream(seed, STREAM_TEST, 60)
    worst = 0.0
    worst_op = ""

    ops = []
    ops.append(("exp", lambda x: ad.exp(x), (3, 4), False))
    ops.append(("log", lambda x: ad.log(x), (3, 4), True))
    ops.append(("sqrt", lambda x: ad.sqrt(x), (3, 4), True))
    ops.append(("tanh", lambda x: ad.tanh(x), (3, 4), False))
    ops.append(("sigmoid", lambda x: ad.sigmoid(x), (3, 4), False))
    ops.append(("gelu", lambda x: ad.gelu(x), (3, 4), False))
    ops.append(("softmax", lambda x: ad.softmax(x, axis=-1), (3, 4), False))
    ops.append(("bilinear_up2", lambda x: ad.bilinear_up2(x), (3, 4, 2), False))
    ops.append(("mean", lambda x: ad.tmean(x, axis=0), (3, 4), False))
    for name, fn, shape, positive in ops:
        base = (rng.uniform(0.2, 2.0, size=shape) if positive
                else rng.uniform(-2, 2, size=shape))
        x = Tensor(base.copy(), requires_grad=True)
        # weight the output so constant-sum maps (softmax) stay non-degenerate
        out = fn(x)
        weights = Tensor(rng.normal(0, 1, size=out.shape))
        backward(ad.tsum(ad.mul(out, weights)))

        def scalar():
            with ad.no_grad():
                return float(ad.tsum(ad.mul(fn(Tensor(base)), weights)).data)

        g_fd = fd_gradient(scalar, base)
        rel = np.linalg.norm(g_fd - x.grad) / max(np.linalg.norm(g_fd), 1e-10)
        if rel > worst:
            worst, worst_op = rel, name
    return CheckResult("primitive-grads", worst <= rtol,
                       f"worst rel err = {worst:.3e} at {worst_op} (tol {rtol:g})",
                       time.time() - t0)


def run_suite(level: str = "quick", seed: int = 0) -> list[CheckResult]:
    quick = level == "quick"
    checks = [
        primitive_gradcheck(seed),
        invertibility_check(20 if quick else 100, np.float32, INVERT_TOL_32, seed),
        invertibility_check(20 if quick else 100, np.float64, INVERT_TOL_64, seed),
        logdet_check(5 if quick else 20, seed),
        gradient_check(seed, max_entries_per_group=8 if quick else None),
        identity_init_check(seed),
        density_check(seed, points=121 if quick else 241),
    ]
    return checks
