"""File formats: T3B tensors, flat ``key = value`` run configs, CSV tables.

T3B layout: the magic bytes ``T3B1``, three little-endian uint32 dims
``n1, n2, n3``, then ``n1 * n2 * n3`` little-endian float64 values, frontal
slice by frontal slice, each slice row-major.
"""

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, MalformedFile, SpecInvalid
from .synthdata import BenchmarkConfig
from .tensor_core import from_slice_major, to_slice_major
from .trainer import TrainConfig

MAGIC = b"T3B1"
_HEADER = struct.Struct("<4s3I")


def encode_t3b(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"T3B holds 3-way tensors, got ndim {a.ndim}")
    return _HEADER.pack(MAGIC, *a.shape) + to_slice_major(a).astype("<f8").tobytes()


def decode_t3b(raw):
    if len(raw) < _HEADER.size:
        raise MalformedFile(f"file has {len(raw)} bytes, shorter than the 16-byte header")
    magic, n1, n2, n3 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedFile(f"bad magic {magic!r}")
    expected = _HEADER.size + 8 * n1 * n2 * n3
    if len(raw) != expected:
        raise MalformedFile(f"expected {expected} bytes for dims {(n1, n2, n3)}, got {len(raw)}")
    if min(n1, n2, n3) == 0:
        raise MalformedFile("all dims must be positive")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return from_slice_major(values, (n1, n2, n3))


def atomic_write_bytes(path, data):
    """Write through a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_t3b(path, a):
    atomic_write_bytes(path, encode_t3b(a))


def read_t3b(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    return decode_t3b(raw)


def as_t3(m):
    """View a vector or matrix as a tensor with trailing singleton modes."""
    m = np.asarray(m, dtype=np.float64)
    return m.reshape(m.shape + (1,) * (3 - m.ndim))


# ---------------------------------------------------------------- run config

@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    data_seed: int | None = None  # None: reuse train.seed
    output_dir: str = "run"
    noise_levels: tuple = (0.0, 0.1, 0.5, 1.0)
    sweep_domain: int = 0
    noise_draws: int = 32

    @property
    def dataset_seed(self):
        return self.train.seed if self.data_seed is None else self.data_seed

    def dataset(self):
        return self.data.generate(self.dataset_seed)

    def validate(self):
        self.train.validate()
        try:
            self.data.validate()
        except SpecInvalid as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 <= self.sweep_domain <= self.data.num_sources:
            raise ConfigError("sweep_domain must index a source or the target")
        if self.noise_draws < 1 or any(r < 0 for r in self.noise_levels):
            raise ConfigError("noise_draws must be >= 1 and noise levels >= 0")
        return self


_RUN_KEYS = {"data_seed": int, "output_dir": str, "noise_levels": float, "sweep_domain": int, "noise_draws": int}
_TUPLE_KEYS = {"rotations", "shifts", "stds", "label_noise", "noise_levels"}


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _field_types(cls):
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def _convert(key, text, kind):
    if key in _TUPLE_KEYS:
        return tuple(float(p) for p in text.split(",") if p.strip())
    if kind is bool:
        return _parse_bool(text)
    return kind(text)


def parse_config(text):
    """Parse flat ``key = value`` text into a validated :class:`RunConfig`."""
    train_types = _field_types(TrainConfig)
    data_types = _field_types(BenchmarkConfig)
    groups = {"train": {}, "data": {}, "run": {}}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        for name, types in (("train", train_types), ("data", data_types), ("run", _RUN_KEYS)):
            if key in types:
                break
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in groups[name]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            groups[name][key] = _convert(key, value, types[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(
        train=TrainConfig(**groups["train"]),
        data=BenchmarkConfig(**groups["data"]),
        **groups["run"],
    ).validate()


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _format_value(v):
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def format_config(run):
    """Inverse of :func:`parse_config`; every set key is written out."""
    pairs = [(f.name, getattr(run.train, f.name)) for f in fields(run.train)]
    pairs += [(f.name, getattr(run.data, f.name)) for f in fields(run.data)]
    pairs += [(f.name, getattr(run, f.name)) for f in fields(run) if f.name not in ("train", "data")]
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in pairs if v is not None)


# ---------------------------------------------------------------- tables

def write_csv(path, header, rows):
    path = os.fspath(path)
    tmp = path + ".partial"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def domain_rows(domain):
    return [[*map(repr, map(float, row)), int(label)] for row, label in zip(domain.x, domain.y)]


def domain_header(input_dim):
    return [f"x{i}" for i in range(input_dim)] + ["label"]


# ---------------------------------------------------------------- model files

def save_params(directory, params):
    """One T3B file per parameter array, named after the parameter."""
    os.makedirs(directory, exist_ok=True)
    for name, value in params.items():
        write_t3b(os.path.join(directory, f"{name}.t3b"), as_t3(value))


def load_params(directory):
    from .model_grad import PARAM_NAMES, ModelParams, init_params

    arrays = {}
    for name in PARAM_NAMES:
        t = read_t3b(os.path.join(directory, f"{name}.t3b"))
        # weights are matrices, biases vectors
        arrays[name] = t[:, :, 0] if "_w" in name else t[:, 0, 0]
    params = ModelParams(**arrays)
    # shapes must chain; a mismatch means the directory mixes models
    ref = init_params(params.input_dim, params.num_classes, params.hidden_dim, params.feat_dim)
    for (name, got), (_, want) in zip(params.items(), ref.items()):
        if got.shape != want.shape:
            raise MalformedFile(f"{name} has shape {got.shape}, expected {want.shape}")
    return params
