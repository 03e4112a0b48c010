"""Matrix splitting and rateless encoding of block-product computation units.

A job computes C = A^T B with A (s x r) and B (s x l).  A is cut into m column
blocks and B into k, giving K = m*k source products A_x^T B_y.  Every encoded
symbol sums d' blocks of A and d'' blocks of B, so one worker product yields
the sum of the d'*d'' source products selected by z = a (x) b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .degree_analysis import DegreeDistribution
from .errors import DimensionError, InfeasibleDegree, ResampleLimit, ShapeError

MAX_RESAMPLES = 100


@dataclass
class MatrixSplit:
    a_blocks: list
    b_blocks: list
    m: int
    k: int

    @property
    def K(self) -> int:
        return self.m * self.k

    def products(self) -> list:
        """All K source products in row-major (x-major) order."""
        return [a.T @ b for a in self.a_blocks for b in self.b_blocks]


def split_matrices(A, B, m: int, k: int) -> MatrixSplit:
    A = np.asarray(A)
    B = np.asarray(B)
    if m < 1 or k < 1:
        raise DimensionError("m and k must be positive")
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ShapeError(f"row counts differ: A is {A.shape}, B is {B.shape}")
    r, l = A.shape[1], B.shape[1]
    if r % m:
        raise DimensionError(f"m={m} does not divide r={r}")
    if l % k:
        raise DimensionError(f"k={k} does not divide l={l}")
    return MatrixSplit(np.hsplit(A, m), np.hsplit(B, k), m, k)


def unsplit(split: MatrixSplit):
    return np.hstack(split.a_blocks), np.hstack(split.b_blocks)


def factor_degree(d: int, m: int, k: int) -> tuple[int, int]:
    """Most balanced factorization d = d' * d'' with d' <= m and d'' <= k.

    Ties on |d' - d''| go to the smaller d'.
    """
    if d < 1 or d > m * k:
        raise ValueError(f"degree {d} outside [1, {m * k}]")
    best = None
    for d1 in range(1, math.isqrt(d) + 1):
        if d % d1:
            continue
        for a, b in ((d1, d // d1), (d // d1, d1)):
            if a <= m and b <= k:
                cand = (abs(a - b), a, b)
                if best is None or cand < best:
                    best = cand
    if best is None:
        raise InfeasibleDegree(f"degree {d} has no factorization within ({m}, {k})")
    return best[1], best[2]


@dataclass
class EncodedSymbol:
    index: int
    a_support: tuple
    b_support: tuple
    m: int
    k: int
    degree: int
    a_tilde: np.ndarray | None = None
    b_tilde: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.m * self.k

    @property
    def a_vec(self) -> np.ndarray:
        v = np.zeros(self.m, dtype=np.uint8)
        v[list(self.a_support)] = 1
        return v

    @property
    def b_vec(self) -> np.ndarray:
        v = np.zeros(self.k, dtype=np.uint8)
        v[list(self.b_support)] = 1
        return v

    @property
    def support(self) -> tuple:
        """Flat source indices x*k + y covered by z = kron(a, b), ascending."""
        return tuple(x * self.k + y for x in self.a_support for y in self.b_support)

    @property
    def z_vec(self) -> np.ndarray:
        return np.kron(self.a_vec, self.b_vec)


def sample_coefficients(dist: DegreeDistribution, m: int, k: int, rng):
    """Draw (d, a_support, b_support); resamples d when it cannot be factored."""
    for _ in range(MAX_RESAMPLES):
        d = dist.sample(rng)
        try:
            d1, d2 = factor_degree(d, m, k)
        except InfeasibleDegree:
            continue
        a = np.sort(rng.choice(m, size=d1, replace=False))
        b = np.sort(rng.choice(k, size=d2, replace=False))
        return d, tuple(int(x) for x in a), tuple(int(y) for y in b)
    raise ResampleLimit(f"no feasible degree after {MAX_RESAMPLES} draws")


def _combine(blocks, support):
    out = blocks[support[0]].copy()
    for i in support[1:]:
        out += blocks[i]
    return out


def generate_symbol(split: MatrixSplit | None, dist: DegreeDistribution, rng, index: int = 0,
                    m: int | None = None, k: int | None = None) -> EncodedSymbol:
    """Encode one symbol.  With ``split=None`` only the coefficients are drawn."""
    if split is not None:
        m, k = split.m, split.k
    if m * k != dist.K:
        raise DimensionError(f"distribution has K={dist.K}, split has {m}x{k}")
    d, a, b = sample_coefficients(dist, m, k, rng)
    sym = EncodedSymbol(index, a, b, m, k, d)
    if split is not None:
        sym.a_tilde = _combine(split.a_blocks, a)
        sym.b_tilde = _combine(split.b_blocks, b)
    return sym


class Encoder:
    """Stateful symbol stream for one job; successive batches continue the index sequence."""

    def __init__(self, dist: DegreeDistribution, rng, split: MatrixSplit | None = None,
                 m: int | None = None, k: int | None = None):
        if split is not None:
            m, k = split.m, split.k
        if m is None or k is None:
            raise ValueError("need a split or explicit m, k")
        self.dist, self.rng, self.split = dist, rng, split
        self.m, self.k = m, k
        self.next_index = 0
        self.rows = []
        self.degree_counts = np.zeros(dist.K + 1, dtype=np.int64)

    def next_symbol(self) -> EncodedSymbol:
        sym = generate_symbol(self.split, self.dist, self.rng, self.next_index, self.m, self.k)
        self.next_index += 1
        self.rows.append(sym.support)
        self.degree_counts[len(sym.a_support) * len(sym.b_support)] += 1
        return sym

    def encode_batch(self, count: int) -> list:
        if count < 1:
            raise ValueError("count must be at least 1")
        return [self.next_symbol() for _ in range(count)]

    def coefficient_matrix(self) -> np.ndarray:
        Z = np.zeros((len(self.rows), self.m * self.k), dtype=np.uint8)
        for i, row in enumerate(self.rows):
            Z[i, list(row)] = 1
        return Z

    def degree_histogram(self) -> np.ndarray:
        """Realized degree frequencies, index = d' * d''."""
        total = self.degree_counts.sum()
        return self.degree_counts / total if total else self.degree_counts.astype(float)


def encode_batch(encoder: Encoder, count: int) -> list:
    return encoder.encode_batch(count)


def worker_compute(symbol: EncodedSymbol):
    return symbol.a_tilde.T @ symbol.b_tilde


def round_sizes(K: int, Gamma: float, supplement: float = 0.1) -> tuple[int, int]:
    """(first round, each supplementary round) symbol counts."""
    # guard against ceil(1.36 * 49) landing on 67.00000000000001
    first = math.ceil(round(Gamma * K, 9))
    return max(first, 1), max(math.ceil(round(supplement * K, 9)), 1)
