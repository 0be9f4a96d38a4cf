"""Hadamard matrix constructions and fast rotation kernels.

Covers Sylvester (power-of-2) and Paley I/II (quadratic residue) matrices,
the radix-2 fast transform, the optimized non-power-of-2 decomposition, and
closed-form add/subtract operation counts with matching kernel
instrumentation.

Counting convention: only additions and subtractions are counted. One
radix-2 butterfly stage over d lanes costs d; a dense accumulation of m
terms costs m - 1; the shared-subexpression stage that produces all eight
signed four-sums of a group of four inputs costs 12.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import ActivationSet
from .errors import ConstructionError, DimensionError

ORTHO_TOL = 1e-10
DENSE_REFERENCE_LIMIT = 4096


class OpCounter:
    """Per-invocation counter of signed add/subtract operations."""

    def __init__(self):
        self.adds = 0

    def add(self, n: int):
        self.adds += int(n)


# ---------------------------------------------------------------------------
# constructions


def _sylvester_signs(k: int) -> np.ndarray:
    if k < 1 or k & (k - 1):
        raise ConstructionError(f"sylvester order must be a power of 2, got {k}")
    h = np.array([[1]], dtype=np.int8)
    while h.shape[0] < k:
        h = np.block([[h, h], [h, -h]])
    return h


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    i = 2
    while i * i <= n:
        if n % i == 0:
            return False
        i += 1
    return True


def _prime_power(q: int):
    """Return (p, e) with q = p**e for prime p, or None."""
    if q < 2:
        return None
    for p in range(2, q + 1):
        if p * p > q:
            break
        if q % p == 0:
            e = 0
            r = q
            while r % p == 0:
                r //= p
                e += 1
            return (p, e) if r == 1 and _is_prime(p) else None
    return (q, 1)  # q itself is prime


def _gf_elements(p: int, e: int):
    """Elements of GF(p^e) as coefficient tuples plus a multiplication map.

    Returns (elements, mul) where elements is a list of tuples (degree < e,
    coefficients mod p, constant term first) and mul multiplies two tuples
    modulo a fixed irreducible polynomial.
    """
    from itertools import product

    if e == 1:
        elements = [(a,) for a in range(p)]

        def mul(x, y):
            return ((x[0] * y[0]) % p,)

        return elements, mul

    # deterministically pick the lexicographically first monic irreducible
    # polynomial of degree e over Z_p
    from sympy.polys.galoistools import gf_irreducible_p
    from sympy import ZZ

    irred = None
    for tail in product(range(p), repeat=e):
        poly = [1] + list(tail)  # descending coefficients, monic
        if gf_irreducible_p([ZZ(c) for c in poly], p, ZZ):
            irred = poly
            break
    assert irred is not None

    elements = [tuple(reversed(c)) for c in product(range(p), repeat=e)]

    def mul(x, y):
        # schoolbook product, then reduce modulo irred
        prod = [0] * (2 * e - 1)
        for i, xi in enumerate(x):
            if xi:
                for j, yj in enumerate(y):
                    prod[i + j] = (prod[i + j] + xi * yj) % p
        # reduce: irred is monic of degree e (descending); x^e = -tail
        for deg in range(2 * e - 2, e - 1, -1):
            c = prod[deg]
            if c:
                prod[deg] = 0
                for i in range(1, e + 1):
                    prod[deg - i] = (prod[deg - i] - c * irred[i]) % p
        return tuple(prod[:e])

    return elements, mul


@lru_cache(maxsize=None)
def _jacobsthal(q: int) -> np.ndarray:
    """Q[i, j] = chi(a_i - a_j) for the quadratic character chi of GF(q)."""
    pe = _prime_power(q)
    if pe is None:
        raise ConstructionError(f"{q} is not a prime power")
    p, e = pe
    elements, mul = _gf_elements(p, e)
    index = {el: i for i, el in enumerate(elements)}
    squares = {mul(el, el) for el in elements if any(el)}

    def chi(el):
        if not any(el):
            return 0
        return 1 if el in squares else -1

    n = len(elements)
    Q = np.zeros((n, n), dtype=np.int8)
    for i, a in enumerate(elements):
        for j, b in enumerate(elements):
            diff = tuple((x - y) % p for x, y in zip(a, b))
            Q[i, j] = chi(diff)
    del index
    return Q


def _paley1_signs(k: int) -> np.ndarray:
    q = k - 1
    if _prime_power(q) is None or q % 4 != 3:
        raise ConstructionError(
            f"paley1 needs order q+1 with q a prime power, q = 3 mod 4; got k={k}"
        )
    Q = _jacobsthal(q)
    S = np.zeros((k, k), dtype=np.int8)
    S[0, 1:] = 1
    S[1:, 0] = -1
    S[1:, 1:] = Q
    return np.eye(k, dtype=np.int8) + S


def _paley2_signs(k: int) -> np.ndarray:
    if k % 2 != 0:
        raise ConstructionError(f"paley2 order must be even, got {k}")
    q = k // 2 - 1
    if _prime_power(q) is None or q % 4 != 1:
        raise ConstructionError(
            f"paley2 needs order 2(q+1) with q a prime power, q = 1 mod 4; got k={k}"
        )
    Q = _jacobsthal(q)
    C = np.zeros((q + 1, q + 1), dtype=np.int8)
    C[0, 1:] = 1
    C[1:, 0] = 1
    C[1:, 1:] = Q
    a = np.array([[1, 1], [1, -1]], dtype=np.int8)
    b = np.array([[1, -1], [-1, -1]], dtype=np.int8)
    return np.kron(C, a) + np.kron(np.eye(q + 1, dtype=np.int8), b)


def _dephase(signs: np.ndarray) -> np.ndarray:
    """Negate rows/columns so the first row and first column are all +1."""
    signs = signs * signs[0:1, :]  # fix first row
    signs = signs * signs[:, 0:1]  # fix first column
    return signs


@dataclass(frozen=True)
class HadamardSpec:
    """A validated normalized Hadamard matrix with entries +-1/sqrt(k)."""

    order: int
    construction: str
    matrix: np.ndarray  # float64, normalized
    signs: np.ndarray  # int8, +-1

    @staticmethod
    def from_signs(signs: np.ndarray, construction: str) -> "HadamardSpec":
        signs = np.asarray(signs, dtype=np.int8)
        k = signs.shape[0]
        if signs.shape != (k, k) or not np.all(np.abs(signs) == 1):
            raise ConstructionError("sign matrix must be square with +-1 entries")
        signs = _dephase(signs)
        matrix = signs.astype(np.float64) / np.sqrt(k)
        spec = HadamardSpec(k, construction, matrix, signs)
        spec.validate()
        return spec

    def validate(self):
        k = self.order
        err = np.abs(self.matrix @ self.matrix.T - np.eye(k)).max()
        if err > ORTHO_TOL:
            raise ConstructionError(
                f"order-{k} matrix fails orthogonality (max residual {err:.3e})"
            )
        col_l2 = np.linalg.norm(self.matrix, axis=0)
        col_linf = np.abs(self.matrix).max(axis=0)
        if np.abs(col_l2 - 1.0).max() > ORTHO_TOL:
            raise ConstructionError("columns are not unit norm")
        if np.abs(col_linf - 1.0 / np.sqrt(k)).max() > ORTHO_TOL:
            raise ConstructionError("entries are not +-1/sqrt(k)")


_CONSTRUCTORS = {
    "sylvester": _sylvester_signs,
    "paley1": _paley1_signs,
    "paley2": _paley2_signs,
}


def build_hadamard(order: int, construction: str | None = None) -> HadamardSpec:
    """Build a normalized Hadamard matrix of the given order.

    With construction=None, tries sylvester, then paley1, then paley2, and
    reports every attempt on failure.
    """
    if construction is not None:
        if construction not in _CONSTRUCTORS:
            raise ConstructionError(f"unknown construction {construction!r}")
        return HadamardSpec.from_signs(_CONSTRUCTORS[construction](order), construction)
    tried = []
    for name, fn in _CONSTRUCTORS.items():
        try:
            return HadamardSpec.from_signs(fn(order), name)
        except ConstructionError as exc:
            tried.append(f"{name}: {exc}")
    raise ConstructionError(
        f"no construction for order {order}; tried " + "; ".join(tried)
    )


def load_hadamard_file(path) -> HadamardSpec:
    """Load a +-1 matrix from a text file ("order k" then k rows of k signs)."""
    with open(path) as f:
        first = f.readline().split()
        if len(first) != 2 or first[0] != "order":
            raise ConstructionError(f"{path}: first line must be 'order k'")
        k = int(first[1])
        rows = [[int(v) for v in f.readline().split()] for _ in range(k)]
    signs = np.array(rows, dtype=np.int8)
    if signs.shape != (k, k):
        raise ConstructionError(f"{path}: expected {k} rows of {k} entries")
    return HadamardSpec.from_signs(signs, "file")


@dataclass(frozen=True)
class BlockRotation:
    """The block-diagonal Kronecker lift I_n (x) R of an order-b matrix."""

    block: HadamardSpec
    n: int

    @property
    def b(self) -> int:
        return self.block.order

    @property
    def d(self) -> int:
        return self.n * self.b

    def dense(self) -> np.ndarray:
        """Reference-only dense materialization (d <= 4096)."""
        if self.d > DENSE_REFERENCE_LIMIT:
            raise DimensionError(
                f"refusing to materialize {self.d}x{self.d} block rotation"
            )
        return np.kron(np.eye(self.n), self.block.matrix)


def block_rotation(d: int, b: int, construction: str | None = None) -> BlockRotation:
    if d % b != 0:
        raise DimensionError(f"block size {b} does not divide d={d}")
    return BlockRotation(build_hadamard(b, construction), d // b)


# ---------------------------------------------------------------------------
# transforms


@lru_cache(maxsize=None)
def _sylvester_factors(d: int):
    """Split H_d = H_d1 (x) H_d2 for the tiled (matmul) transform path."""
    half = (d.bit_length() - 1) // 2
    d1 = 1 << half
    d2 = d // d1
    return (_sylvester_signs(d1).astype(np.float64),
            _sylvester_signs(d2).astype(np.float64))


def fwht(x, counter: OpCounter | None = None) -> np.ndarray:
    """Normalized fast Walsh-Hadamard transform along the last axis.

    Equals multiplication by the normalized Sylvester matrix of the same
    order. Length must be a power of 2. Accepts 1-d vectors or batches.
    Uninstrumented calls use a Kronecker-factored matmul (same transform,
    better memory locality); with a counter the radix-2 butterfly runs so
    the instrumentation reflects the counted schedule.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if d < 1 or d & (d - 1):
        raise DimensionError(f"fwht length must be a power of 2, got {d}")
    if counter is None and d >= 16:
        h1, h2 = _sylvester_factors(d)
        lead = x.shape[:-1]
        tiles = x.reshape((-1,) + (h1.shape[0], h2.shape[0]))
        out = h1 @ tiles @ h2
        return out.reshape(lead + (d,)) / np.sqrt(d)
    y = np.ascontiguousarray(x, dtype=np.float64).copy()
    lead = y.shape[:-1]
    batch = int(np.prod(lead, dtype=np.int64))
    h = 1
    while h < d:
        v = y.reshape(batch * (d // (2 * h)), 2, h)
        a = v[:, 0, :]
        b = v[:, 1, :]
        diff = a - b
        np.add(a, b, out=a)
        b[...] = diff
        if counter is not None:
            counter.add(batch * d)
        h *= 2
    return y.reshape(lead + (d,)) / np.sqrt(d)


@dataclass(frozen=True)
class DimensionFactorization:
    """d = k * t with t the odd-part-style non-power-of-2 factor.

    t is d divided by its largest power-of-2 divisor when that quotient
    exceeds 1, else t = 1. k_prime = log2(k) - 2 is defined when t > 1.
    """

    d: int
    t: int
    k: int
    k_prime: int


def factorize(d: int) -> DimensionFactorization:
    if d < 1:
        raise DimensionError(f"d must be positive, got {d}")
    t = d
    while t % 2 == 0:
        t //= 2
    if t == 1:
        return DimensionFactorization(d, 1, d, -1)
    k = d // t
    if k < 4:
        raise DimensionError(
            f"d={d} has non-power-of-2 factor t={t} but power-of-2 cofactor "
            f"k={k} < 4; the 4t-dimensional base block does not exist"
        )
    return DimensionFactorization(d, t, k, int(k.bit_length() - 1) - 2)


@lru_cache(maxsize=None)
def _base_gather_tables(order: int, construction: str | None):
    """Per-column gather tables for the optimized 4t-point rotation.

    For each output column of the order-4t sign matrix, record which of the
    eight precomputed signed four-sums each input group contributes, and
    with which global sign.
    """
    spec = build_hadamard(order, construction)
    return _gather_tables_from_signs(spec.signs)


_PATTERNS = {
    (1, 1, 1, 1): 0,
    (1, 1, -1, -1): 1,
    (1, -1, 1, -1): 2,
    (1, -1, -1, 1): 3,
    (1, 1, 1, -1): 4,
    (1, 1, -1, 1): 5,
    (1, -1, 1, 1): 6,
    (1, -1, -1, -1): 7,
}


def _gather_tables_from_signs(signs: np.ndarray):
    m = signs.shape[0]
    t = m // 4
    idx = np.zeros((m, t), dtype=np.int64)
    sgn = np.zeros((m, t), dtype=np.float64)
    for col in range(m):
        for g in range(t):
            s = signs[4 * g : 4 * g + 4, col]
            lead = int(s[0])
            pattern = tuple(int(lead * v) for v in s)
            idx[col, g] = _PATTERNS[pattern]
            sgn[col, g] = lead
    return idx, sgn


def _four_sums(groups: np.ndarray, counter: OpCounter | None) -> np.ndarray:
    """All eight signed four-sums (leading +) per group of four inputs.

    groups: (..., t, 4) -> (..., t, 8). Costs 12 ops per group: four shared
    pairwise sums/differences plus eight combinations.
    """
    a = groups[..., 0]
    b = groups[..., 1]
    c = groups[..., 2]
    e = groups[..., 3]
    s1 = a + b
    s2 = a - b
    s3 = c + e
    s4 = c - e
    out = np.stack(
        (
            s1 + s3,  # + + + +
            s1 - s3,  # + + - -
            s2 + s4,  # + - + -
            s2 - s4,  # + - - +
            s1 + s4,  # + + + -
            s1 - s4,  # + + - +
            s2 + s3,  # + - + +
            s2 - s3,  # -(+ - - -) with leading sign folded below
        ),
        axis=-1,
    )
    # pattern 7 is (+,-,-,-) up to global sign: s2 - s3 = a - b - c - e
    if counter is not None:
        t = groups.shape[-2]
        batch = int(np.prod(groups.shape[:-2], dtype=np.int64))
        counter.add(batch * 12 * t)
    return out


def _base_rotate(rows: np.ndarray, tables, counter: OpCounter | None) -> np.ndarray:
    """Unnormalized order-4t rotation of (..., 4t) rows via the sign matrix.

    Stage 1 precomputes the eight signed four-sums per adjacent group;
    stage 2 accumulates t group values per output with signs read from the
    matrix (t - 1 adds per output).
    """
    idx, sgn = tables
    m = idx.shape[0]
    t = m // 4
    lead = rows.shape[:-1]
    groups = rows.reshape(lead + (t, 4))
    P = _four_sums(groups, counter)  # (..., t, 8)
    gathered = P[..., np.arange(t), idx]  # (..., m, t)
    out = (gathered * sgn).sum(axis=-1)
    if counter is not None:
        batch = int(np.prod(lead, dtype=np.int64))
        counter.add(batch * m * (t - 1))
    return out


def rotate_nonpo2(
    x,
    fact: DimensionFactorization | None = None,
    base: HadamardSpec | None = None,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """Rotate a non-power-of-2 vector by H_{2^k'} (x) H_{4t}.

    k' radix-2 butterfly stages followed by 2^k' independent optimized
    4t-dimensional rotations. Accepts 1-d vectors or batches along the last
    axis. The base order-4t matrix is built (Paley/Sylvester) unless
    supplied.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if fact is None:
        fact = factorize(d)
    if fact.d != d:
        raise DimensionError(f"factorization is for d={fact.d}, input has d={d}")
    if fact.t == 1:
        raise DimensionError(f"d={d} is a power of 2; use fwht")
    t, kp = fact.t, fact.k_prime
    m4 = 4 * t
    outer = 1 << kp
    if base is not None:
        if base.order != m4:
            raise DimensionError(f"base matrix order {base.order}, need {m4}")
        tables = _gather_tables_from_signs(base.signs)
    else:
        try:
            tables = _base_gather_tables(m4, None)
        except ConstructionError as exc:
            raise ConstructionError(
                f"no Hadamard matrix of order 4t={m4} available for d={d}"
            ) from exc

    lead = x.shape[:-1]
    y = x.reshape(lead + (outer, m4)).copy()
    # butterfly stages along the outer (power-of-2) axis
    h = 1
    while h < outer:
        y = y.reshape(lead + (outer // (2 * h), 2, h, m4))
        a = y[..., 0, :, :]
        b = y[..., 1, :, :]
        y = np.stack((a + b, a - b), axis=-3)
        if counter is not None:
            counter.add(int(np.prod(lead, dtype=np.int64)) * d)
        h *= 2
    y = y.reshape(lead + (outer, m4))
    y = _base_rotate(y, tables, counter)
    return y.reshape(lead + (d,)) / np.sqrt(d)


def rotate(x, counter: OpCounter | None = None) -> np.ndarray:
    """Full-vector rotation: fwht when d is a power of 2, else the
    optimized non-power-of-2 path."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if d & (d - 1) == 0:
        return fwht(x, counter)
    return rotate_nonpo2(x, counter=counter)


def rotate_block(aset, rot: BlockRotation, counter: OpCounter | None = None):
    """Apply the order-b transform independently to each block of each row.

    Accepts an ActivationSet (returns an ActivationSet) or a plain array
    (returns float64). The block matrix must follow the standard fast path
    (Sylvester for power-of-2 b, the composite decomposition otherwise);
    arbitrary sign matrices go through the dense reference.
    """
    is_set = isinstance(aset, ActivationSet)
    x = aset.data if is_set else np.asarray(aset, dtype=np.float64)
    d = x.shape[-1]
    if d != rot.d:
        raise DimensionError(f"rotation is {rot.d}-dimensional, input has d={d}")
    b = rot.b
    lead = x.shape[:-1]
    blocks = np.asarray(x, dtype=np.float64).reshape(lead + (rot.n, b))
    if b & (b - 1) == 0:
        out = fwht(blocks, counter)
    else:
        out = rotate_nonpo2(blocks, base=rot.block, counter=counter)
    out = out.reshape(lead + (d,))
    return ActivationSet(out.astype(np.float32)) if is_set else out


def dense_rotate(x, spec: HadamardSpec) -> np.ndarray:
    """Brute-force dense multiply, the oracle for all fast paths (d <= 4096)."""
    if spec.order > DENSE_REFERENCE_LIMIT:
        raise DimensionError(f"dense reference limited to d <= {DENSE_REFERENCE_LIMIT}")
    return np.asarray(x, dtype=np.float64) @ spec.matrix


def composite_spec(d: int) -> HadamardSpec:
    """Dense H_{2^k'} (x) H_{4t} composite used as the rotate_nonpo2 oracle."""
    fact = factorize(d)
    if fact.t == 1:
        return build_hadamard(d, "sylvester")
    outer = _sylvester_signs(1 << fact.k_prime)
    inner = build_hadamard(4 * fact.t)
    return HadamardSpec.from_signs(np.kron(outer, inner.signs), "composite")


# ---------------------------------------------------------------------------
# operation counts


@dataclass(frozen=True)
class OpCount:
    additions_subtractions: int
    method: str


def count_ops(d: int, method: str, b: int | None = None) -> OpCount:
    """Closed-form add/subtract counts for each rotation method.

    methods: "full" (power-of-2 butterfly or optimized non-power-of-2),
    "block" (requires b, a power of 2), "dense_matmul",
    "butterfly_plus_matmul", "optimized".
    """
    if method == "block":
        if b is None or b < 1 or b & (b - 1) or d % b:
            raise DimensionError(f"block method needs a power-of-2 b dividing d={d}")
        return OpCount(d * int(b).bit_length() - d, f"block({b})")
    if method == "dense_matmul":
        return OpCount(d * (d - 1), method)
    fact = factorize(d)
    if method == "full":
        if fact.t == 1:
            return OpCount(d * (d.bit_length() - 1), "full_power_of_2")
        return OpCount(d * (fact.k_prime + fact.t + 2), "optimized")
    if fact.t == 1:
        raise DimensionError(f"method {method!r} needs a non-power-of-2 d, got {d}")
    if method == "butterfly_plus_matmul":
        return OpCount(d * (fact.k_prime + 4 * fact.t - 1), method)
    if method == "optimized":
        return OpCount(d * (fact.k_prime + fact.t + 2), method)
    raise DimensionError(f"unknown op-count method {method!r}")


def format_count(n: int) -> str:
    """Human format used in the op-count tables (e.g. 258.05K, 205.51M)."""
    if n >= 10**6:
        return f"{n / 10**6:.2f}M"
    return f"{n / 10**3:.2f}K"
