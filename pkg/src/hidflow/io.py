"""Binary cube files, checkpoints, raw import, and PNG export.

Both on-disk formats are little-endian with fixed magic headers so any
language can parse them without a library:

cube (.hsic):      "HSIC0001" | H,W,B uint32 | dtype uint32 (0=f32,1=f64)
                   | meta_len uint32 | meta UTF-8 | row-major payload
checkpoint (.hfck) "HIDF0001" | manifest_len uint64 | manifest JSON
                   | concatenated tensor payloads at the stated offsets

Writes are atomic (write to a temp file, then rename), so a partial file is
never left behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import DataError
from .model import DenoiserModel, ModelConfig

CUBE_MAGIC = b"HSIC0001"
CKPT_MAGIC = b"HIDF0001"
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}
_RAW_DTYPES = {"u8": np.uint8, "u16": np.uint16, "f32": np.float32, "f64": np.float64}


def _atomic_write(path: str, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# cubes
# ---------------------------------------------------------------------------

def write_cube(path: str, cube: np.ndarray, meta: str = ""):
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DataError(f"write_cube: expected a rank-3 cube, got shape {cube.shape}")
    if cube.dtype not in (np.float32, np.float64):
        cube = cube.astype(np.float32)
    if not np.all(np.isfinite(cube)):
        raise DataError("write_cube: cube contains non-finite values")
    h, w, b = cube.shape
    meta_bytes = meta.encode("utf-8")
    header = CUBE_MAGIC + struct.pack("<IIIII", h, w, b,
                                      _DTYPE_CODE[np.dtype(cube.dtype)], len(meta_bytes))
    payload = np.ascontiguousarray(cube).astype(cube.dtype.newbyteorder("<")).tobytes()
    _atomic_write(path, header + meta_bytes + payload)


def read_cube(path: str) -> tuple[np.ndarray, str]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataError(f"read_cube: cannot read {path}: {err}") from err
    if len(blob) < 28 or blob[:8] != CUBE_MAGIC:
        raise DataError(f"read_cube: {path} is not a cube file (bad magic)")
    h, w, b, code, meta_len = struct.unpack("<IIIII", blob[8:28])
    if code not in _CODE_DTYPE:
        raise DataError(f"read_cube: unknown dtype code {code} in {path}")
    dtype = _CODE_DTYPE[code]
    meta = blob[28:28 + meta_len].decode("utf-8")
    expected = h * w * b * dtype.itemsize
    payload = blob[28 + meta_len:]
    if len(payload) != expected:
        raise DataError(f"read_cube: {path} payload is {len(payload)} bytes, "
                        f"expected {expected} for dims ({h},{w},{b})")
    cube = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
    cube = cube.reshape(h, w, b)
    if not np.all(np.isfinite(cube)):
        raise DataError(f"read_cube: {path} contains non-finite values")
    return cube, meta


def import_raw(path: str, height: int, width: int, bands: int, dtype: str,
               scale: float | None = None, order: str = "hwb") -> np.ndarray:
    """Load a flat binary raster and rescale to [0,1] by the declared max.

    ``path`` is either one flat file (``order`` "hwb" = band-interleaved by
    pixel, "bhw" = band-sequential) or a directory of per-band flat rasters
    (sorted by name, one H*W plane each).
    """
    if dtype not in _RAW_DTYPES:
        raise DataError(f"import_raw: dtype must be one of {sorted(_RAW_DTYPES)}")
    raw_dtype = np.dtype(_RAW_DTYPES[dtype]).newbyteorder("<")
    if os.path.isdir(path):
        files = sorted(os.path.join(path, f) for f in os.listdir(path)
                       if not f.startswith("."))
        if len(files) != bands:
            raise DataError(f"import_raw: {path} holds {len(files)} band files, "
                            f"expected {bands}")
        plane_bytes = height * width * raw_dtype.itemsize
        planes = []
        for f in files:
            size = os.path.getsize(f)
            if size != plane_bytes:
                raise DataError(f"import_raw: {f} is {size} bytes, expected "
                                f"{plane_bytes} for a ({height},{width}) band")
            planes.append(np.fromfile(f, dtype=raw_dtype).reshape(height, width))
        cube = np.stack(planes, axis=-1)
    else:
        expected = height * width * bands * raw_dtype.itemsize
        size = os.path.getsize(path)
        if size != expected:
            raise DataError(f"import_raw: {path} is {size} bytes, expected {expected} "
                            f"for dims ({height},{width},{bands}) {dtype}")
        flat = np.fromfile(path, dtype=raw_dtype)
        if order == "hwb":
            cube = flat.reshape(height, width, bands)
        elif order == "bhw":
            cube = flat.reshape(bands, height, width).transpose(1, 2, 0)
        else:
            raise DataError(f"import_raw: order must be hwb or bhw, got {order!r}")
    cube = cube.astype(np.float64)
    if not np.all(np.isfinite(cube)):
        raise DataError(f"import_raw: {path} contains non-finite values")
    if scale is None:
        scale = {"u8": 255.0, "u16": 65535.0}.get(dtype, 1.0)
    if scale <= 0:
        raise DataError("import_raw: scale must be positive")
    return (cube / scale).astype(np.float32)


def export_falsecolor(cube: np.ndarray, bands: tuple, path: str):
    """8-bit PNG of three selected bands; values clamped to [0,1] then scaled."""
    from PIL import Image

    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DataError(f"export_falsecolor: expected a rank-3 cube, got {cube.shape}")
    for b in bands:
        if not (0 <= b < cube.shape[2]):
            raise DataError(f"export_falsecolor: band index {b} out of range "
                            f"[0, {cube.shape[2] - 1}]")
    if len(bands) != 3:
        raise DataError("export_falsecolor: need exactly three band indices")
    rgb = np.stack([cube[:, :, b] for b in bands], axis=-1)
    img = np.round(255.0 * np.clip(rgb, 0.0, 1.0)).astype(np.uint8)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(img).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, model: DenoiserModel, store=None,
                    config_text: str = "", extra: dict | None = None):
    """Serialize parameters (and Adam state) with a JSON manifest."""
    entries = []
    blobs = []
    offset = 0

    def add(name: str, arr: np.ndarray):
        nonlocal offset
        data = np.ascontiguousarray(arr)
        blob = data.astype(data.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "shape": list(data.shape),
                        "dtype": str(data.dtype), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    for name, p in sorted(model.named_params().items()):
        add(f"param/{name}", p.data)
    step_count = 0
    if store is not None:
        for name in sorted(store.m):
            add(f"adam_m/{name}", store.m[name])
        for name in sorted(store.v):
            add(f"adam_v/{name}", store.v[name])
        step_count = store.step_count
    manifest = {
        "format": CKPT_MAGIC.decode(),
        "model_config": model.cfg.to_dict(),
        "model_seed": model.seed,
        "dtype": str(model.dtype),
        "step_count": step_count,
        "config_text": config_text,
        "extra": extra or {},
        "tensors": entries,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = CKPT_MAGIC + struct.pack("<Q", len(mbytes)) + mbytes + b"".join(blobs)
    _atomic_write(path, payload)


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataError(f"load_checkpoint: cannot read {path}: {err}") from err
    if len(blob) < 16 or blob[:8] != CKPT_MAGIC:
        raise DataError(f"load_checkpoint: {path} is not a checkpoint (bad magic)")
    (mlen,) = struct.unpack("<Q", blob[8:16])
    manifest = json.loads(blob[16:16 + mlen].decode("utf-8"))
    base = 16 + mlen
    tensors = {}
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(blob):
            raise DataError(f"load_checkpoint: {path} truncated at {entry['name']}")
        arr = np.frombuffer(blob[start:stop],
                            dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return manifest, tensors


def restore_model(path: str):
    """Rebuild the model (and optimizer state, if present) from a checkpoint."""
    from .training import ParameterStore

    manifest, tensors = load_checkpoint(path)
    cfg = ModelConfig(**manifest["model_config"])
    model = DenoiserModel(cfg, seed=manifest["model_seed"],
                          dtype=np.dtype(manifest["dtype"]))
    params = model.named_params()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in tensors:
            raise DataError(f"restore_model: checkpoint missing tensor {key}")
        if tuple(tensors[key].shape) != tuple(p.shape):
            raise DataError(f"restore_model: shape mismatch for {key}: "
                            f"{tensors[key].shape} vs {p.shape}")
        p.data[...] = tensors[key]
    store = ParameterStore(params)
    if any(k.startswith("adam_m/") for k in tensors):
        for name in params:
            store.m[name][...] = tensors[f"adam_m/{name}"]
            store.v[name][...] = tensors[f"adam_v/{name}"]
        store.step_count = manifest["step_count"]
    return model, store, manifest


# ---------------------------------------------------------------------------
# feature dump hook
# ---------------------------------------------------------------------------

def feature_dump_sink(directory: str):
    """Sink writing each named feature map as a cube file under directory."""
    os.makedirs(directory, exist_ok=True)
    counter = [0]

    def sink(name: str, arr: np.ndarray):
        arr = np.asarray(arr)
        if arr.ndim == 4:
            arr = arr[0]
        elif arr.ndim == 2:
            arr = arr[None]
        elif arr.ndim != 3:
            arr = arr.reshape(1, 1, -1)
        safe = name.replace("/", "_")
        write_cube(os.path.join(directory, f"{counter[0]:03d}_{safe}.hsic"),
                   arr.astype(np.float32), meta=name)
        counter[0] += 1

    return sink
