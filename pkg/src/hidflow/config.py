"""Run configuration: sectioned key/value text files, strictly validated.

Unknown sections or keys are rejected so a typo cannot silently fall back
to a default.  The full text is stored inside every checkpoint, making a
run reproducible from (config, seed, input hash).
"""

from __future__ import annotations

import configparser
import io as _io
from dataclasses import dataclass, field

import numpy as np

from .degradation import NoiseSpec
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


def _maybe_int(v: str):
    return None if v.lower() == "none" else int(v)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


_SCHEMA = {
    "run": {"seed": int, "dtype": str},
    "model": {"bands": int, "width": int, "stages": int, "window": int, "heads": int,
              "blocks_per_stage": int, "ffn_ratio": int, "ca_reduction": int,
              "flow_steps": int, "clamp": float, "use_affine": _bool,
              "use_mixing": _bool},
    "train": {"lambda_nll": float, "lambda_rec": float, "lr": float, "beta1": float,
              "beta2": float, "eps": float, "batch_size": int,
              "epochs_gaussian": int, "epochs_mixture": int, "patch_size": int,
              "patch_stride": int, "sigma": float, "max_steps": _maybe_int,
              "checkpoint_every": int},
    "noise": {"kind": str, "sigma": float, "band_sigma_min": float,
              "band_sigma_max": float, "impulse_ratio_min": float,
              "impulse_ratio_max": float, "stripe_fraction_min": float,
              "stripe_fraction_max": float, "stripe_offset_min": float,
              "stripe_offset_max": float, "deadline_fraction_min": float,
              "deadline_fraction_max": float, "deadline_width_min": int,
              "deadline_width_max": int},
    "paths": {"data_dir": str, "val_dir": str, "out_dir": str},
}


@dataclass
class RunConfig:
    seed: int = 0
    dtype: str = "float32"
    model: ModelConfig = field(default_factory=lambda: ModelConfig(bands=8))
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    paths: dict = field(default_factory=dict)
    text: str = ""

    def numpy_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"run.dtype must be float32 or float64, got {self.dtype!r}")
        return np.dtype(self.dtype)


def parse_run_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"config: parse error: {err}") from err

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"config: unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"config: unknown key {key!r} in section [{section}]")
            conv = _SCHEMA[section][key]
            try:
                values[section][key] = conv(raw)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"config: bad value for [{section}] {key} = {raw!r}: "
                                  f"{err}") from err

    if "model" not in values or "bands" not in values["model"]:
        raise ConfigError("config: [model] bands is required")

    rc = RunConfig(text=text)
    run = values.get("run", {})
    rc.seed = run.get("seed", 0)
    rc.dtype = run.get("dtype", "float32")
    rc.numpy_dtype()

    rc.model = ModelConfig(**values["model"])
    rc.model.validate()

    train_kwargs = dict(values.get("train", {}))
    rc.train = TrainConfig(seed=rc.seed, **train_kwargs)
    rc.train.validate()

    nz = values.get("noise", {})
    rc.noise = NoiseSpec(
        kind=nz.get("kind", "gaussian"),
        sigma=nz.get("sigma", 50.0),
        band_sigma_range=(nz.get("band_sigma_min", 10.0), nz.get("band_sigma_max", 70.0)),
        impulse_ratio_range=(nz.get("impulse_ratio_min", 0.1),
                             nz.get("impulse_ratio_max", 0.5)),
        stripe_fraction_range=(nz.get("stripe_fraction_min", 0.05),
                               nz.get("stripe_fraction_max", 0.15)),
        stripe_offset_range=(nz.get("stripe_offset_min", -0.25),
                             nz.get("stripe_offset_max", 0.25)),
        deadline_fraction_range=(nz.get("deadline_fraction_min", 0.05),
                                 nz.get("deadline_fraction_max", 0.15)),
        deadline_width_range=(nz.get("deadline_width_min", 1),
                              nz.get("deadline_width_max", 3)),
    )
    rc.noise.validate()
    rc.paths = values.get("paths", {})
    return rc


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_run_config(fh.read())
    except OSError as err:
        raise ConfigError(f"config: cannot read {path}: {err}") from err


def serialize_run_config(rc: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser["run"] = {"seed": str(rc.seed), "dtype": rc.dtype}
    parser["model"] = {k: str(v) for k, v in rc.model.to_dict().items()}
    parser["train"] = {
        "lambda_nll": str(rc.train.lambda_nll), "lambda_rec": str(rc.train.lambda_rec),
        "lr": str(rc.train.lr), "beta1": str(rc.train.beta1),
        "beta2": str(rc.train.beta2), "eps": str(rc.train.eps),
        "batch_size": str(rc.train.batch_size),
        "epochs_gaussian": str(rc.train.epochs_gaussian),
        "epochs_mixture": str(rc.train.epochs_mixture),
        "patch_size": str(rc.train.patch_size),
        "patch_stride": str(rc.train.patch_stride), "sigma": str(rc.train.sigma),
        "max_steps": str(rc.train.max_steps), "checkpoint_every": str(rc.train.checkpoint_every),
    }
    parser["noise"] = {
        "kind": rc.noise.kind, "sigma": str(rc.noise.sigma),
        "band_sigma_min": str(rc.noise.band_sigma_range[0]),
        "band_sigma_max": str(rc.noise.band_sigma_range[1]),
        "impulse_ratio_min": str(rc.noise.impulse_ratio_range[0]),
        "impulse_ratio_max": str(rc.noise.impulse_ratio_range[1]),
        "stripe_fraction_min": str(rc.noise.stripe_fraction_range[0]),
        "stripe_fraction_max": str(rc.noise.stripe_fraction_range[1]),
        "stripe_offset_min": str(rc.noise.stripe_offset_range[0]),
        "stripe_offset_max": str(rc.noise.stripe_offset_range[1]),
        "deadline_fraction_min": str(rc.noise.deadline_fraction_range[0]),
        "deadline_fraction_max": str(rc.noise.deadline_fraction_range[1]),
        "deadline_width_min": str(rc.noise.deadline_width_range[0]),
        "deadline_width_max": str(rc.noise.deadline_width_range[1]),
    }
    if rc.paths:
        parser["paths"] = {k: str(v) for k, v in rc.paths.items()}
    buf = _io.StringIO()
    parser.write(buf)
    return buf.getvalue()
