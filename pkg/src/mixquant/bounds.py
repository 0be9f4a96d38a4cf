"""Mass/energy concentration statistics and verification of the
deterministic and probabilistic outlier-suppression bounds.

All checks are vectorized over rows; single vectors are treated as 1-row
batches. Bound verdicts use a relative slack tolerance of -1e-9 * |X|_inf
to absorb floating-point rounding (the inequalities are exact in reals).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import ActivationSet
from .errors import DimensionError, UndefinedDeltaError
from .hadamard import BlockRotation, HadamardSpec, dense_rotate, fwht, rotate, rotate_block

SLACK_RTOL = 1e-9


def _rows(x) -> np.ndarray:
    if isinstance(x, ActivationSet):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected rows, got shape {x.shape}")
    return x


@dataclass
class DeltaStats:
    """Mass/energy concentration of one vector at block size b."""

    delta: float
    delta_energy: float
    per_block_delta: np.ndarray
    per_block_linf: np.ndarray
    block_size: int


def delta_stats(row, b: int) -> DeltaStats:
    row = np.asarray(row, dtype=np.float64)
    d = row.shape[-1]
    if d % b != 0:
        raise DimensionError(f"block size {b} does not divide d={d}")
    a = np.abs(row)
    linf = a.max()
    if linf == 0.0:
        raise UndefinedDeltaError("all-zero row has undefined delta")
    blocks = a.reshape(d // b, b)
    blk_linf = blocks.max(axis=-1)
    if np.any(blk_linf == 0.0):
        raise UndefinedDeltaError("all-zero block has undefined per-block delta")
    return DeltaStats(
        delta=float(a.sum() / (d * linf)),
        delta_energy=float(np.sqrt((a * a).sum()) / (np.sqrt(d) * linf)),
        per_block_delta=blocks.sum(axis=-1) / (b * blk_linf),
        per_block_linf=blk_linf,
        block_size=b,
    )


@dataclass
class BoundReport:
    """Per-row bound check results plus aggregates."""

    name: str
    pre_range: np.ndarray
    post_range: np.ndarray
    bound_value: np.ndarray
    sufficient: np.ndarray  # sufficient-condition indicator per row
    zero_blocks_excluded: int = 0
    slack: np.ndarray = field(init=False)
    satisfied: np.ndarray = field(init=False)

    def __post_init__(self):
        self.slack = self.bound_value - self.post_range
        self.satisfied = self.slack >= -SLACK_RTOL * self.pre_range

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.satisfied))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["row", "pre_range", "post_range", "bound_value", "slack",
                 "satisfied", "sufficient"]
            )
            for i in range(len(self.pre_range)):
                w.writerow(
                    [i, repr(float(self.pre_range[i])), repr(float(self.post_range[i])),
                     repr(float(self.bound_value[i])), repr(float(self.slack[i])),
                     int(self.satisfied[i]), int(self.sufficient[i])]
                )

    def summary(self) -> dict:
        return {
            "check": self.name,
            "rows": int(len(self.pre_range)),
            "violations": self.violations,
            "zero_blocks_excluded": self.zero_blocks_excluded,
            "mean_post_over_pre": float(np.mean(self.post_range / self.pre_range)),
            "min_slack": float(self.slack.min()),
            "sufficient_rows": int(np.count_nonzero(self.sufficient)),
        }


def check_prop1(x, hadamard: HadamardSpec | None = None) -> BoundReport:
    """Full-vector bound |XR|_inf <= delta * sqrt(d) * |X|_inf.

    With hadamard=None the standard fast rotation is used (Sylvester for
    power-of-2 d, the composite decomposition otherwise); any supplied
    normalized Hadamard matrix of order d is applied densely.
    """
    rows = _rows(x)
    d = rows.shape[1]
    a = np.abs(rows)
    linf = a.max(axis=-1)
    if np.any(linf == 0.0):
        raise UndefinedDeltaError("all-zero row has undefined delta")
    delta = a.sum(axis=-1) / (d * linf)
    if hadamard is None:
        rotated = rotate(rows)
    else:
        if hadamard.order != d:
            raise DimensionError(f"matrix order {hadamard.order}, rows have d={d}")
        if hadamard.construction == "sylvester":
            rotated = fwht(rows)
        else:
            rotated = dense_rotate(rows, hadamard)
    return BoundReport(
        name="prop1",
        pre_range=linf,
        post_range=np.abs(rotated).max(axis=-1),
        bound_value=delta * np.sqrt(d) * linf,
        sufficient=delta < 1.0 / np.sqrt(d),
    )


def _block_bound(rows: np.ndarray, b: int):
    """max_j delta_j * sqrt(b) * |X_j|_inf = max_j |X_j|_1 / sqrt(b), with
    zero blocks excluded (they cannot dominate the max)."""
    m, d = rows.shape
    blocks = np.abs(rows).reshape(m, d // b, b)
    blk_l1 = blocks.sum(axis=-1)
    zero_blocks = int(np.count_nonzero(blocks.max(axis=-1) == 0.0))
    return blk_l1.max(axis=-1) / np.sqrt(b), zero_blocks


def check_prop2(x, rot: BlockRotation) -> BoundReport:
    """Block bound |X R~|_inf <= max_j delta_j * sqrt(b) * |X_j|_inf."""
    rows = _rows(x)
    if rows.shape[1] != rot.d:
        raise DimensionError(f"rotation is {rot.d}-dimensional, rows have d={rows.shape[1]}")
    linf = np.abs(rows).max(axis=-1)
    if np.any(linf == 0.0):
        raise UndefinedDeltaError("all-zero row has undefined delta")
    bound, zero_blocks = _block_bound(rows, rot.b)
    rotated = rotate_block(rows, rot)
    return BoundReport(
        name="prop2",
        pre_range=linf,
        post_range=np.abs(rotated).max(axis=-1),
        bound_value=bound,
        sufficient=bound < linf,
        zero_blocks_excluded=zero_blocks,
    )


@dataclass
class Corollary3Report:
    z_b: np.ndarray
    z_bprime: np.ndarray
    k: int
    slack: np.ndarray = field(init=False)
    satisfied: np.ndarray = field(init=False)

    def __post_init__(self):
        self.slack = np.sqrt(self.k) * self.z_bprime - self.z_b
        scale = np.maximum(self.z_b, self.z_bprime)
        self.satisfied = self.slack >= -SLACK_RTOL * scale

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.satisfied))


def zeta(x, b: int) -> np.ndarray:
    """Z(b; X) = max_j sqrt(b) * delta_j * |X_j|_inf = max_j |X_j|_1 / sqrt(b)."""
    rows = _rows(x)
    if rows.shape[1] % b != 0:
        raise DimensionError(f"block size {b} does not divide d={rows.shape[1]}")
    if np.any(np.abs(rows).max(axis=-1) == 0.0):
        raise UndefinedDeltaError("all-zero row has undefined Z")
    z, _ = _block_bound(rows, b)
    return z


def check_corollary3(x, b_prime: int, k: int) -> Corollary3Report:
    """Z(k*b'; X) <= sqrt(k) * Z(b'; X) from the same row(s)."""
    rows = _rows(x)
    d = rows.shape[1]
    if d % (k * b_prime) != 0:
        raise DimensionError(f"k*b' = {k * b_prime} must divide d={d}")
    return Corollary3Report(zeta(rows, k * b_prime), zeta(rows, b_prime), k)


@dataclass
class Prop4Result:
    epsilon: float
    trials: int
    bound_value: float
    bound_value_per_block: float
    exceed_rate: float
    exceed_rate_per_block: float


def prop4_bound(Y, b: int, epsilon: float) -> float:
    """sqrt((2/b) * log(2d/eps) * |Y|_2^2), the headline high-probability bound."""
    y = np.asarray(Y, dtype=np.float64)
    d = y.shape[-1]
    return float(np.sqrt(2.0 / b * np.log(2.0 * d / epsilon) * (y * y).sum()))


def check_prop4(
    Y, rot: BlockRotation, epsilon: float, trials: int, seed: int = 0
) -> Prop4Result:
    """Empirical exceedance of the probabilistic bound under random signs.

    Draws `trials` i.i.d. Rademacher sign vectors S, rotates X = S * Y, and
    reports the fraction of draws exceeding the whole-vector bound and the
    tighter per-block variant (max_j |X_j|_2^2 in place of |X|_2^2).
    """
    y = np.asarray(Y, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionError("Y must be a vector of magnitudes")
    d = y.shape[0]
    if d != rot.d:
        raise DimensionError(f"rotation is {rot.d}-dimensional, Y has d={d}")
    if not np.any(y != 0.0):
        raise UndefinedDeltaError("Y must be nonzero")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    b = rot.b
    bound = prop4_bound(y, b, epsilon)
    blk_energy = (y * y).reshape(d // b, b).sum(axis=-1).max()
    bound_tight = float(np.sqrt(2.0 / b * np.log(2.0 * d / epsilon) * blk_energy))

    rng = np.random.default_rng(seed)
    exceed = 0
    exceed_tight = 0
    chunk = max(1, min(trials, 2**22 // max(d, 1)))
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        signs = rng.integers(0, 2, size=(n, d)) * 2 - 1
        post = np.abs(rotate_block(signs * y, rot)).max(axis=-1)
        exceed += int(np.count_nonzero(post > bound))
        exceed_tight += int(np.count_nonzero(post > bound_tight))
        done += n
    return Prop4Result(
        epsilon=epsilon,
        trials=trials,
        bound_value=bound,
        bound_value_per_block=bound_tight,
        exceed_rate=exceed / trials,
        exceed_rate_per_block=exceed_tight / trials,
    )


@dataclass
class RademacherDiagnostics:
    sign_fractions: np.ndarray  # positive-sign fraction per row
    offdiag_sigma: float  # std of off-diagonal entries of the sign Gram matrix
    baseline: float  # 1/sqrt(m)


def rademacher_diagnostics(aset) -> RademacherDiagnostics:
    """Sanity diagnostics for the i.i.d.-signs assumption behind the
    probabilistic bound."""
    rows = _rows(aset)
    m, d = rows.shape
    if m < 2:
        raise DimensionError("need m >= 2 tokens")
    signs = np.where(rows >= 0.0, 1.0, -1.0)
    gram = signs.T @ signs / m
    off = gram[~np.eye(d, dtype=bool)]
    return RademacherDiagnostics(
        sign_fractions=(signs > 0).mean(axis=-1),
        offdiag_sigma=float(off.std()),
        baseline=1.0 / np.sqrt(m),
    )


def figure5_statistic(aset, block_sizes) -> list[dict]:
    """Mean/std across rows of max_j delta_j |X_j|_inf / |X|_inf per block
    size, with the 1/sqrt(b) and 1/b reference envelopes."""
    rows = _rows(aset)
    m, d = rows.shape
    linf = np.abs(rows).max(axis=-1)
    if np.any(linf == 0.0):
        raise UndefinedDeltaError("all-zero row")
    out = []
    for b in block_sizes:
        if d % b != 0:
            raise DimensionError(f"block size {b} does not divide d={d}")
        blocks = np.abs(rows).reshape(m, d // b, b)
        zero_blocks = int(np.count_nonzero(blocks.max(axis=-1) == 0.0))
        stat = blocks.sum(axis=-1).max(axis=-1) / b / linf  # = max_j delta_j |X_j|_inf / |X|_inf
        out.append(
            {
                "b": int(b),
                "mean": float(stat.mean()),
                "std": float(stat.std()),
                "ref_inv_sqrt_b": 1.0 / np.sqrt(b),
                "ref_inv_b": 1.0 / b,
                "zero_blocks_skipped": zero_blocks,
            }
        )
    return out


def write_json_summary(path, payload: dict):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
