"""Conditional normalizing-flow denoiser for hyperspectral image cubes."""

import os as _os

# Cap BLAS threading before numpy spins up its pools; also bounds the
# worker pools used for multi-cube denoising.
_threads = _os.environ.get("HIDFLOW_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)


def worker_threads() -> int:
    value = _os.environ.get("HIDFLOW_THREADS", "")
    if value.isdigit() and int(value) > 0:
        return int(value)
    return _os.cpu_count() or 1


from . import autodiff  # noqa: E402
from .autodiff import Tensor, backward, no_grad  # noqa: E402
from .degradation import NoiseSpec, add_gaussian, add_mixture, degrade  # noqa: E402
from .encoder import ConditionStack, EncoderConfig  # noqa: E402
from .errors import (ConfigError, DataError, HidflowError, NumericsError,  # noqa: E402
                     ShapeError, SingularityError, VerificationError)
from .flow import FlowTrace  # noqa: E402
from .metrics import MetricReport, psnr, sam, ssim  # noqa: E402
from .model import DenoiserModel, ModelConfig  # noqa: E402
from .training import (ParameterStore, TrainConfig, adam_step, augment,  # noqa: E402
                       make_patches, nll_loss, rec_loss, total_loss, train)

__version__ = "0.1.0"
