"""Activation containers, norms, the MIXQ file format, and synthetic data.

Activations are stored as 32-bit floats (matching the on-disk format) while
every reduction (norms, statistics) accumulates in 64-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    DegenerateFitError,
    DimensionError,
    NonFiniteError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    VersionMismatchError,
)

MAGIC = b"MIXQ"
FORMAT_VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sIB3xQQ")  # magic, version, dtype, reserved, m, d

SYNTHETIC_KINDS = ("gaussian", "laplacian", "student_t", "sparse_outlier")


class ActivationSet:
    """A batch of m row vectors of dimension d.

    ``data`` is an m-by-d float32 array; every entry is finite.
    """

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 2:
            raise DimensionError(f"expected a 2-d matrix, got shape {arr.shape}")
        m, d = arr.shape
        if m < 1 or d < 1:
            raise DimensionError(f"need m >= 1 and d >= 1, got {m}x{d}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("activation matrix contains NaN or Inf")
        self.data = arr
        self.data.setflags(write=False)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]

    def blocks(self, b: int) -> np.ndarray:
        """View of the batch as (m, n, b) contiguous blocks."""
        if self.d % b != 0:
            raise DimensionError(f"block size {b} does not divide d={self.d}")
        return self.data.reshape(self.m, self.d // b, b)

    def __eq__(self, other):
        if not isinstance(other, ActivationSet):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and np.array_equal(
                self.data.view(np.uint32), other.data.view(np.uint32)
            )
        )

    def __repr__(self):
        return f"ActivationSet(m={self.m}, d={self.d})"


def block_view(row: np.ndarray, block_size: int, block_index: int) -> np.ndarray:
    """The ``block_index``-th contiguous block of a single row (0-based)."""
    row = np.asarray(row)
    d = row.shape[-1]
    if d % block_size != 0:
        raise DimensionError(f"block size {block_size} does not divide d={d}")
    n = d // block_size
    if not 0 <= block_index < n:
        raise DimensionError(f"block index {block_index} out of range [0, {n})")
    return row[block_index * block_size : (block_index + 1) * block_size]


def norms(row) -> tuple[float, float, float]:
    """(l1, l2, linf) of a vector, accumulated in float64."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise DimensionError("norms expects a nonempty 1-d vector")
    if not np.all(np.isfinite(row)):
        raise NonFiniteError("row contains NaN or Inf")
    a = np.abs(row)
    return float(a.sum()), float(np.sqrt((a * a).sum())), float(a.max())


def save_activations(aset: ActivationSet, path) -> None:
    """Write an ActivationSet in the MIXQ binary format (little-endian f32)."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_F32, aset.m, aset.d))
        f.write(aset.data.astype("<f4", copy=False).tobytes())


def load_activations(path) -> ActivationSet:
    """Read a MIXQ activation file. Inverse of :func:`save_activations`."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a MIXQ file (bad magic)")
    magic, version, dtype, m, d = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {FORMAT_VERSION}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"{path}: unknown dtype code {dtype}")
    payload = raw[_HEADER.size :]
    expected = m * d * 4
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload[:expected], dtype="<f4").reshape(m, d)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{path}: payload contains non-finite entries")
    return ActivationSet(data)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic synthetic activation batch.

    params by kind:
      gaussian:       loc, scale
      laplacian:      loc, scale
      student_t:      loc, scale, dof (> 2)
      sparse_outlier: count, magnitude, background (optional gaussian noise
                      sigma for the non-outlier coordinates, default 0)
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        p = self.params
        if self.kind in ("gaussian", "laplacian", "student_t"):
            if p.get("scale", 1.0) <= 0:
                raise ValueError("scale must be positive")
        if self.kind == "student_t" and p.get("dof", 4.0) <= 2:
            raise ValueError("student_t needs dof > 2")
        if self.kind == "sparse_outlier":
            if p.get("count", 1) < 1:
                raise ValueError("sparse_outlier needs count >= 1")
            if p.get("background", 0.0) < 0:
                raise ValueError("background sigma must be >= 0")


def generate(spec: SyntheticSpec, m: int, d: int) -> ActivationSet:
    """Draw an m-by-d batch from the spec. Deterministic for a fixed seed."""
    if m < 1 or d < 1:
        raise DimensionError(f"need m >= 1 and d >= 1, got {m}x{d}")
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    if spec.kind == "gaussian":
        data = rng.normal(p.get("loc", 0.0), p.get("scale", 1.0), size=(m, d))
    elif spec.kind == "laplacian":
        data = rng.laplace(p.get("loc", 0.0), p.get("scale", 1.0), size=(m, d))
    elif spec.kind == "student_t":
        data = p.get("loc", 0.0) + p.get("scale", 1.0) * rng.standard_t(
            p.get("dof", 4.0), size=(m, d)
        )
    else:  # sparse_outlier
        count = int(p.get("count", 1))
        if count >= d:
            raise ValueError(f"outlier count {count} must be < d={d}")
        magnitude = float(p.get("magnitude", 100.0))
        background = float(p.get("background", 0.0))
        if background > 0:
            data = rng.normal(0.0, background, size=(m, d))
        else:
            data = np.zeros((m, d))
        for k in range(m):
            idx = rng.choice(d, size=count, replace=False)
            signs = rng.choice((-1.0, 1.0), size=count)
            data[k, idx] = signs * magnitude
    return ActivationSet(data.astype(np.float32))


def fit_per_token(aset: ActivationSet, family: str) -> list[SyntheticSpec]:
    """Fit a gaussian (mean, n-1 std) or laplacian (median, MAD) per row."""
    if family not in ("gaussian", "laplacian"):
        raise ValueError(f"unknown family {family!r}")
    specs = []
    for k in range(aset.m):
        row = aset.row(k).astype(np.float64)
        if np.ptp(row) == 0.0:
            raise DegenerateFitError(f"row {k} has zero variance")
        if family == "gaussian":
            loc = float(row.mean())
            scale = float(row.std(ddof=1))
        else:
            loc = float(np.median(row))
            scale = float(np.abs(row - loc).mean())
        if scale <= 0.0:
            raise DegenerateFitError(f"row {k}: degenerate {family} scale")
        specs.append(SyntheticSpec(family, {"loc": loc, "scale": scale}, seed=k))
    return specs
