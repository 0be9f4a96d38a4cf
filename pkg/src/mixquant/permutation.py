"""Block-assignment permutation strategies and their mass objective.

The greedy mass-diffusion calibration assigns coordinates (sorted by
descending average magnitude) to the open block with the smallest average
l1 load; because a coordinate's own magnitude is the same whichever block
receives it, this is longest-processing-time scheduling under a capacity
constraint, implemented with a priority queue but step-equivalent to the
literal argmin over open blocks.

Tie-breaking is fixed everywhere: the lowest block index wins argmin ties
and the lowest original coordinate index wins sort ties.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

from .data import ActivationSet
from .errors import DimensionError

STRATEGIES = ("identity", "random", "absmax", "zigzag", "massdiff")


@dataclass(frozen=True)
class Permutation:
    """A bijection on [d] with its assignment-into-blocks provenance.

    pi is the gather order: permuted[j] = original[pi[j]]. Block j of the
    permuted vector holds the original coordinates block_assignment[j].
    """

    pi: np.ndarray
    block_assignment: tuple
    strategy: str
    b: int
    seed: int | None = None

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.int64)
        object.__setattr__(self, "pi", pi)
        d = pi.shape[0]
        if not np.array_equal(np.sort(pi), np.arange(d)):
            raise DimensionError("pi is not a bijection on [d]")
        flat = [i for blk in self.block_assignment for i in blk]
        if flat != pi.tolist():
            raise DimensionError("block assignment does not concatenate to pi")
        if any(len(blk) != self.b for blk in self.block_assignment):
            raise DimensionError("blocks are not all of size b")

    @property
    def d(self) -> int:
        return self.pi.shape[0]

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.pi)
        inv[self.pi] = np.arange(self.d)
        blocks = tuple(
            tuple(inv[j * self.b : (j + 1) * self.b].tolist())
            for j in range(self.d // self.b)
        )
        return Permutation(inv, blocks, f"inverse({self.strategy})", self.b, self.seed)

    def to_json(self) -> str:
        return json.dumps(
            {
                "d": self.d,
                "b": self.b,
                "strategy": self.strategy,
                "seed": self.seed,
                "pi": self.pi.tolist(),
            }
        )

    @staticmethod
    def from_json(text: str) -> "Permutation":
        obj = json.loads(text)
        return _from_pi(
            np.asarray(obj["pi"], dtype=np.int64),
            obj["b"],
            obj["strategy"],
            obj.get("seed"),
        )

    def to_binary(self) -> bytes:
        """Compact u32 little-endian form for large d."""
        return self.pi.astype("<u4").tobytes()


def _from_pi(pi: np.ndarray, b: int, strategy: str, seed=None) -> Permutation:
    d = pi.shape[0]
    if d % b != 0:
        raise DimensionError(f"block size {b} does not divide d={d}")
    blocks = tuple(
        tuple(int(v) for v in pi[j * b : (j + 1) * b]) for j in range(d // b)
    )
    return Permutation(pi, blocks, strategy, b, seed)


def _cal_matrix(cal) -> np.ndarray:
    if isinstance(cal, ActivationSet):
        return cal.data.astype(np.float64)
    x = np.asarray(cal, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _sorted_by(key: np.ndarray) -> np.ndarray:
    """Indices in descending key order, ties broken by ascending index."""
    return np.argsort(-key, kind="stable")


def massdiff(cal, b: int) -> Permutation:
    """Greedy mass diffusion: place each coordinate, in descending average
    magnitude order, into the open block with the smallest average l1 load."""
    X = _cal_matrix(cal)
    d = X.shape[1]
    if d % b != 0:
        raise DimensionError(f"block size {b} does not divide d={d}")
    n = d // b
    avg_mag = np.abs(X).mean(axis=0)
    order = _sorted_by(avg_mag)
    blocks = [[] for _ in range(n)]
    heap = [(0.0, j) for j in range(n)]  # (avg block l1, block index)
    heapq.heapify(heap)
    for i in order:
        load, j = heapq.heappop(heap)
        blocks[j].append(int(i))
        if len(blocks[j]) < b:
            heapq.heappush(heap, (load + avg_mag[i], j))
    pi = np.array([i for blk in blocks for i in blk], dtype=np.int64)
    return Permutation(pi, tuple(tuple(blk) for blk in blocks), "massdiff", b)


def absmax_permutation(cal, b: int) -> Permutation:
    """Coordinates in descending max-absolute-value order, dealt to blocks
    in that order (block 0 gets the top b, block 1 the next b, ...)."""
    X = _cal_matrix(cal)
    d = X.shape[1]
    pi = _sorted_by(np.abs(X).max(axis=0))
    return _from_pi(pi, b, "absmax")


def zigzag_permutation(cal, b: int, sort_key: str = "mean") -> Permutation:
    """Coordinates sorted by descending magnitude (average by default,
    absmax with sort_key="absmax"), then dealt to blocks in snake order."""
    X = _cal_matrix(cal)
    d = X.shape[1]
    if d % b != 0:
        raise DimensionError(f"block size {b} does not divide d={d}")
    if sort_key == "mean":
        key = np.abs(X).mean(axis=0)
    elif sort_key == "absmax":
        key = np.abs(X).max(axis=0)
    else:
        raise ValueError(f"unknown sort key {sort_key!r}")
    order = _sorted_by(key)
    n = d // b
    blocks = [[] for _ in range(n)]
    forward = True
    pos = 0
    for i in order:
        deal = range(n) if forward else range(n - 1, -1, -1)
        blocks[list(deal)[pos]].append(int(i))
        pos += 1
        if pos == n:
            pos = 0
            forward = not forward
    pi = np.array([i for blk in blocks for i in blk], dtype=np.int64)
    return Permutation(pi, tuple(tuple(blk) for blk in blocks), "zigzag", b)


def random_permutation(d: int, seed: int, b: int | None = None) -> Permutation:
    rng = np.random.default_rng(seed)
    pi = rng.permutation(d).astype(np.int64)
    return _from_pi(pi, b if b is not None else d, "random", seed)


def identity_permutation(d: int, b: int | None = None) -> Permutation:
    return _from_pi(np.arange(d, dtype=np.int64), b if b is not None else d, "identity")


@dataclass
class MassObjective:
    """Expected max per-block l1 norm over the calibration set."""

    expected_max_block_l1: float
    per_block_avg_l1: np.ndarray

    @property
    def mean_block_avg_l1(self) -> float:
        return float(self.per_block_avg_l1.mean())


def apply_permutation(x, perm: Permutation):
    """Gather columns: output block j holds the coordinates assigned to it."""
    if isinstance(x, ActivationSet):
        return ActivationSet(x.data[:, perm.pi])
    x = np.asarray(x)
    return x[..., perm.pi]


def permutation_matrix(perm: Permutation) -> np.ndarray:
    """Dense reference form P with (XP) equal to the gather (d <= 4096)."""
    if perm.d > 4096:
        raise DimensionError("dense permutation matrix limited to d <= 4096")
    P = np.zeros((perm.d, perm.d))
    P[perm.pi, np.arange(perm.d)] = 1.0
    return P


def evaluate_objective(cal, perm: Permutation, b: int | None = None) -> MassObjective:
    """Mean over calibration rows of the max per-block l1 norm after
    permuting, plus per-block average loads for diagnostics."""
    X = _cal_matrix(cal)
    b = b if b is not None else perm.b
    d = X.shape[1]
    if d % b != 0:
        raise DimensionError(f"block size {b} does not divide d={d}")
    permuted = np.abs(X[:, perm.pi]).reshape(X.shape[0], d // b, b)
    block_l1 = permuted.sum(axis=-1)  # (m, n)
    return MassObjective(
        expected_max_block_l1=float(block_l1.max(axis=-1).mean()),
        per_block_avg_l1=block_l1.mean(axis=0),
    )


def _balanced_partitions(indices: tuple, b: int):
    """Canonical enumeration of partitions of `indices` into blocks of size b.

    The first remaining index always opens the next block, which avoids
    enumerating block orderings or within-block orderings.
    """
    from itertools import combinations

    if not indices:
        yield ()
        return
    head, rest = indices[0], indices[1:]
    for tail in combinations(rest, b - 1):
        block = (head,) + tail
        remaining = tuple(i for i in rest if i not in tail)
        for others in _balanced_partitions(remaining, b):
            yield (block,) + others


def optimal_oracle(cal, b: int) -> tuple[Permutation, float]:
    """Exact minimizer of the mass objective by exhaustive enumeration of
    balanced partitions. Only feasible for d <= 16."""
    X = _cal_matrix(cal)
    m, d = X.shape
    if d > 16:
        raise DimensionError(f"exhaustive oracle limited to d <= 16, got {d}")
    if d % b != 0:
        raise DimensionError(f"block size {b} does not divide d={d}")
    A = np.abs(X)
    best = None
    best_obj = np.inf
    chunk = []
    chunk_size = 65536

    def flush(chunk):
        nonlocal best, best_obj
        parts = np.asarray(chunk, dtype=np.int64)  # (p, n, b)
        loads = A[:, parts].sum(axis=-1)  # (m, p, n)
        obj = loads.max(axis=-1).mean(axis=0)  # (p,)
        i = int(obj.argmin())
        if obj[i] < best_obj:
            best_obj = float(obj[i])
            best = parts[i]

    for part in _balanced_partitions(tuple(range(d)), b):
        chunk.append(part)
        if len(chunk) >= chunk_size:
            flush(chunk)
            chunk = []
    if chunk:
        flush(chunk)
    pi = np.array([i for blk in best for i in blk], dtype=np.int64)
    return _from_pi(pi, b, "oracle"), best_obj
