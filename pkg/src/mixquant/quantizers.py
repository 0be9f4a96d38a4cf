"""INT-q, FP4 (e2m1) and MXFP4 quantizers with scale search and the
worst-case error verification used by the bound suite.

Row convention: the quantization axis is the last one. "per_token" and
"per_channel" both scale along rows of the given matrix (tokens for
activation batches, output channels for weight matrices passed
channels-first); "per_group" splits rows into fixed-size groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ActivationSet
from .errors import DimensionError

FP4_VALUES = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0])
_FP4_MIDPOINTS = np.array([0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5.0])
# ties at these midpoints round up to the even-mantissa neighbor
_FP4_TIES_UP = np.array([0.75, 1.75, 3.5])

FORMATS = ("int_symmetric", "int_asymmetric", "fp4", "mxfp4")
GRANULARITIES = ("per_channel", "per_token", "per_group")

# smallest positive power-of-2 scale used when a group is identically zero
MIN_POW2_SCALE = 2.0**-126


@dataclass(frozen=True)
class QuantizerConfig:
    format: str
    bits: int = 4
    granularity: str = "per_token"
    group_size: int = 32
    scale_search: str = "absmax"  # or "mse"
    grid_size: int = 64
    alpha_min: float = 0.3
    # the fp4 per-token scale divisor; 6 is the alphabet max, 7 the literal
    # 2^(q-1) - 1
    fp4_divisor: float = 6.0

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.format.startswith("int") and not 2 <= self.bits <= 8:
            raise ValueError("integer formats support q in 2..8")
        if self.format in ("fp4", "mxfp4") and self.bits != 4:
            raise ValueError(f"{self.format} is a 4-bit format")
        if self.format == "mxfp4" and self.granularity != "per_group":
            raise ValueError("mxfp4 forces per_group granularity")
        if self.scale_search not in ("absmax", "mse"):
            raise ValueError(f"unknown scale search {self.scale_search!r}")
        if self.scale_search == "mse" and self.grid_size < 2:
            raise ValueError("mse search needs grid_size >= 2")


@dataclass
class QuantizedTensor:
    """Codes plus the affine metadata needed to dequantize.

    For integer formats codes are integers and dequantize(x) =
    s * (code - z). For fp4/mxfp4 codes are values from the (sign-extended)
    e2m1 alphabet and z = 0.
    """

    codes: np.ndarray
    scales: np.ndarray
    zero_points: np.ndarray
    config: QuantizerConfig
    shape: tuple
    clamped_groups: int = 0

    def dequantize(self) -> np.ndarray:
        return _expand(self.scales, self.codes.shape) * (
            self.codes.astype(np.float64) - _expand(self.zero_points, self.codes.shape)
        )


def _expand(per_row: np.ndarray, shape) -> np.ndarray:
    """Broadcast per-row (or per-group) parameters over element positions."""
    per_row = np.asarray(per_row, dtype=np.float64)
    if per_row.ndim == len(shape):
        return per_row
    return per_row[..., None]


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, ActivationSet):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DimensionError("input contains non-finite entries")
    return x


def fp4_project(v: np.ndarray) -> np.ndarray:
    """Nearest e2m1 alphabet value with ties to the even-mantissa neighbor."""
    a = np.abs(v)
    idx = np.searchsorted(_FP4_MIDPOINTS, a, side="right")
    out = FP4_VALUES[idx]
    below = FP4_VALUES[np.maximum(idx - 1, 0)]
    # searchsorted(side="right") sends exact midpoints down only for ties
    # that should stay down; exact ties listed in _FP4_TIES_UP round up,
    # everything else at a midpoint rounds down.
    tie_down = np.isin(a, _FP4_MIDPOINTS) & ~np.isin(a, _FP4_TIES_UP)
    out = np.where(tie_down, below, out)
    return np.copysign(out, v)


def _int_sym_quant(x: np.ndarray, cfg: QuantizerConfig):
    qmax = 2 ** (cfg.bits - 1) - 1
    amax = np.abs(x).max(axis=-1)
    clamped = int(np.count_nonzero(amax == 0))
    scales = np.where(amax > 0, amax / qmax, MIN_POW2_SCALE)
    if cfg.scale_search == "mse":
        scales = mse_scale_search(x, cfg.bits, cfg.grid_size, cfg.alpha_min)
    codes = np.clip(np.round(x / scales[:, None]), -qmax, qmax).astype(np.int32)
    return codes, scales, np.zeros_like(scales), clamped


def _int_asym_quant(x: np.ndarray, cfg: QuantizerConfig):
    lo = x.min(axis=-1)
    hi = x.max(axis=-1)
    span = hi - lo
    clamped = int(np.count_nonzero(span == 0))
    scales = np.where(span > 0, span / (2**cfg.bits - 1), MIN_POW2_SCALE)
    zeros = -np.round(lo / scales)
    codes = np.clip(
        np.round(x / scales[:, None]) + zeros[:, None], 0, 2**cfg.bits - 1
    ).astype(np.int32)
    return codes, scales, zeros, clamped


def _fp4_quant(x: np.ndarray, cfg: QuantizerConfig):
    amax = np.abs(x).max(axis=-1)
    clamped = int(np.count_nonzero(amax == 0))
    scales = np.where(amax > 0, amax / cfg.fp4_divisor, MIN_POW2_SCALE)
    codes = fp4_project(x / scales[:, None])
    return codes, scales, np.zeros_like(scales), clamped


def _mxfp4_quant(x: np.ndarray, cfg: QuantizerConfig):
    m, d = x.shape
    g = cfg.group_size
    if d % g != 0:
        raise DimensionError(f"group size {g} does not divide d={d}")
    groups = x.reshape(m, d // g, g)
    amax = np.abs(groups).max(axis=-1)
    clamped = int(np.count_nonzero(amax == 0))
    raw = np.where(amax > 0, amax / 6.0, MIN_POW2_SCALE)
    scales = 2.0 ** np.floor(np.log2(raw))
    codes = fp4_project(groups / scales[..., None])
    return codes, scales, np.zeros_like(scales), clamped


def quantize(x, config: QuantizerConfig) -> QuantizedTensor:
    """Quantize a batch of rows (ActivationSet or matrix) per the config."""
    mat = _as_matrix(x)
    if config.format == "int_symmetric":
        codes, s, z, clamped = _int_sym_quant(mat, config)
    elif config.format == "int_asymmetric":
        codes, s, z, clamped = _int_asym_quant(mat, config)
    elif config.format == "fp4":
        codes, s, z, clamped = _fp4_quant(mat, config)
    else:
        codes, s, z, clamped = _mxfp4_quant(mat, config)
    return QuantizedTensor(codes, s, z, config, mat.shape, clamped)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    return qt.dequantize().reshape(qt.shape)


def fake_quantize(x, config: QuantizerConfig) -> np.ndarray:
    """quantize then dequantize, preserving the input shape."""
    return dequantize(quantize(x, config))


def mse_scale_search(
    weights, bits: int, grid_size: int = 64, alpha_min: float = 0.3
) -> np.ndarray:
    """Per-channel symmetric scale minimizing reconstruction MSE.

    Searches a linear grid of candidates alpha * s_absmax for alpha in
    [alpha_min, 1]; the absmax scale is always a candidate, so the result
    never does worse than absmax.
    """
    w = _as_matrix(weights)
    qmax = 2 ** (bits - 1) - 1
    amax = np.abs(w).max(axis=-1)
    base = np.where(amax > 0, amax / qmax, MIN_POW2_SCALE)
    alphas = np.linspace(alpha_min, 1.0, grid_size)
    best_scale = base.copy()
    best_err = np.full(w.shape[0], np.inf)
    for alpha in alphas:
        s = alpha * base
        err = (
            (w - s[:, None] * np.clip(np.round(w / s[:, None]), -qmax, qmax)) ** 2
        ).sum(axis=-1)
        better = err < best_err
        best_err = np.where(better, err, best_err)
        best_scale = np.where(better, s, best_scale)
    return best_scale


@dataclass
class ErrorBoundReport:
    """Per-row worst-case error check for symmetric absmax INT-q."""

    bits: int
    linf_errors: np.ndarray
    linf_bounds: np.ndarray
    l2_errors: np.ndarray
    l2_bounds: np.ndarray
    violations: int = field(init=False)
    max_ratio: float = field(init=False)

    def __post_init__(self):
        bad = (self.linf_errors > self.linf_bounds) | (self.l2_errors > self.l2_bounds)
        self.violations = int(np.count_nonzero(bad))
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(
                self.linf_bounds > 0, self.linf_errors / self.linf_bounds, 0.0
            )
        self.max_ratio = float(ratio.max()) if ratio.size else 0.0


def verify_error_bound(x, config: QuantizerConfig) -> ErrorBoundReport:
    """Check |X - Q(X)|_inf <= |X|_inf / (2^q - 2) and the sqrt(d)-scaled
    l2 analogue for the symmetric absmax integer quantizer."""
    if config.format != "int_symmetric" or config.scale_search != "absmax":
        raise ValueError("the worst-case bound applies to symmetric absmax INT-q")
    mat = _as_matrix(x)
    d = mat.shape[1]
    err = mat - fake_quantize(mat, config)
    amax = np.abs(mat).max(axis=-1)
    denom = 2**config.bits - 2
    return ErrorBoundReport(
        bits=config.bits,
        linf_errors=np.abs(err).max(axis=-1),
        linf_bounds=amax / denom,
        l2_errors=np.linalg.norm(err, axis=-1),
        l2_bounds=np.sqrt(d) * amax / denom,
    )
