"""Peeling decoder for the block-product code, with incremental rank tracking.

Sources are keyed by their flat index x*k + y.  Blocks may be integer arrays
(exact mode), float arrays, or ``None`` (symbolic decoding, used when only the
number of symbols needed matters).

Completion modes:

* ``"peeling"``: done only when belief propagation has recovered every source.
* ``"rank"`` (default): additionally watches the rank of the received
  coefficient rows; once it reaches K, sources still unresolved by peeling are
  solved from the received blocks by elimination.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction

import numpy as np

from .errors import IncompleteDecode, InconsistentSymbol

FLOAT_TOL = 1e-9


def _mode_of(block):
    if block is None:
        return "symbolic"
    if np.asarray(block).dtype.kind in "iuO":
        return "exact"
    return "float"


class RankTracker:
    """Incremental reduced row echelon form of 0/1 coefficient rows."""

    def __init__(self, K: int, exact: bool = False):
        self.K = K
        self.exact = exact
        self.pivots = []
        if exact:
            self.rows = []
        else:
            self.R = np.zeros((0, K))

    @property
    def rank(self) -> int:
        return len(self.pivots)

    def add(self, support) -> bool:
        """Insert a row; True when it raised the rank."""
        if self.rank == self.K:
            return False
        return self._add_exact(support) if self.exact else self._add_float(support)

    def _add_float(self, support):
        v = np.zeros(self.K)
        v[list(support)] = 1.0
        if self.pivots:
            v -= v[self.pivots] @ self.R
        p = int(np.argmax(np.abs(v)))
        if abs(v[p]) < FLOAT_TOL:
            return False
        v /= v[p]
        v[np.abs(v) < 1e-14] = 0.0
        self.R -= np.outer(self.R[:, p], v)
        self.R = np.vstack([self.R, v])
        self.pivots.append(p)
        return True

    def _add_exact(self, support):
        v = {s: Fraction(1) for s in support}
        for p, row in zip(self.pivots, self.rows):
            c = v.get(p)
            if c:
                for j, val in row.items():
                    nv = v.get(j, 0) - c * val
                    if nv:
                        v[j] = nv
                    else:
                        v.pop(j, None)
        if not v:
            return False
        p = min(v)
        inv = 1 / v[p]
        v = {j: val * inv for j, val in v.items()}
        for row in self.rows:
            c = row.get(p)
            if c:
                for j, val in v.items():
                    nv = row.get(j, 0) - c * val
                    if nv:
                        row[j] = nv
                    else:
                        row.pop(j, None)
        self.rows.append(v)
        self.pivots.append(p)
        return True


class _Pending:
    __slots__ = ("support", "block")

    def __init__(self, support, block):
        self.support = support
        self.block = block


class DecoderState:
    def __init__(self, K: int, completion: str = "rank"):
        if completion not in ("rank", "peeling"):
            raise ValueError(f"unknown completion mode {completion!r}")
        self.K = K
        self.completion = completion
        self.recovered = {}
        self.pending = {}
        self.degree_one_queue = deque()
        self.symbols_received = 0
        self.subtractions = 0
        self.solved_by_rank = 0
        self.mode = None
        self._covering = {}
        self._next_id = 0
        self._tracker = None
        self._basis = []

    # -- ingestion -----------------------------------------------------

    def ingest(self, z_vec, block=None) -> "DecoderState":
        z = np.asarray(z_vec)
        if z.shape != (self.K,):
            raise ValueError(f"z_vec must have length {self.K}")
        return self.ingest_support(np.flatnonzero(z).tolist(), block)

    def ingest_support(self, support, block=None) -> "DecoderState":
        support = sorted(set(int(s) for s in support))
        if not support or support[0] < 0 or support[-1] >= self.K:
            raise ValueError("support must be a nonempty subset of range(K)")
        if self.mode is None:
            self.mode = _mode_of(block)
            if self.completion == "rank":
                self._tracker = RankTracker(self.K, exact=self.mode == "exact")
        elif _mode_of(block) != self.mode:
            raise ValueError("mixed block kinds within one decoder")
        self.symbols_received += 1
        if self.is_complete():
            if self.mode == "exact":
                self._check_zero(block - sum(self.recovered[s] for s in support))
            return self
        if block is not None:
            block = np.array(block, copy=True)
        if self._tracker is not None and self._tracker.add(support):
            self._basis.append((tuple(support), None if block is None else block.copy()))
        residual = []
        for s in support:
            if s in self.recovered:
                if block is not None:
                    block -= self.recovered[s]
                self.subtractions += 1
            else:
                residual.append(s)
        if not residual:
            self._check_zero(block)
            return self
        sid = self._next_id
        self._next_id += 1
        self.pending[sid] = _Pending(set(residual), block)
        for s in residual:
            self._covering.setdefault(s, set()).add(sid)
        if len(residual) == 1:
            self.degree_one_queue.append(sid)
        return self

    def _check_zero(self, block):
        if block is None or self.mode != "exact":
            return
        if np.any(block != 0):
            raise InconsistentSymbol("degree-zero residual with nonzero block")

    # -- peeling -------------------------------------------------------

    def peel(self) -> "DecoderState":
        while self.degree_one_queue:
            sid = self.degree_one_queue.popleft()
            p = self.pending.get(sid)
            if p is None or len(p.support) != 1:
                continue
            (s,) = p.support
            del self.pending[sid]
            self._covering[s].discard(sid)
            self._recover(s, p.block)
        if self.completion == "rank" and not self.is_complete() and self._tracker.rank == self.K:
            self._solve_remaining()
        return self

    def _recover(self, s, value):
        self.recovered[s] = value
        for sid in self._covering.pop(s, ()):
            p = self.pending[sid]
            p.support.discard(s)
            if value is not None:
                p.block -= value
            self.subtractions += 1
            if len(p.support) == 1:
                self.degree_one_queue.append(sid)
            elif not p.support:
                del self.pending[sid]
                self._check_zero(p.block)

    def _solve_remaining(self):
        unknown = [s for s in range(self.K) if s not in self.recovered]
        if self.mode == "symbolic":
            values = [None] * len(unknown)
        else:
            values = self._eliminate(unknown)
        for s, v in zip(unknown, values):
            self.recovered[s] = v
        self.solved_by_rank += len(unknown)
        self.pending.clear()
        self._covering.clear()
        self.degree_one_queue.clear()

    def _eliminate(self, unknown):
        col = {s: i for i, s in enumerate(unknown)}
        shape = self._basis[0][1].shape
        Z = np.zeros((len(self._basis), len(unknown)), dtype=np.int64)
        rhs = []
        for j, (support, block) in enumerate(self._basis):
            b = block.copy()
            for s in support:
                if s in col:
                    Z[j, col[s]] = 1
                else:
                    b -= self.recovered[s]
            rhs.append(b.reshape(-1))
        rhs = np.array(rhs)
        if self.mode == "float":
            X = np.linalg.lstsq(Z.astype(float), rhs, rcond=None)[0]
        else:
            X = _exact_solve(Z, rhs)
        return [X[i].reshape(shape) for i in range(len(unknown))]

    # -- queries -------------------------------------------------------

    @property
    def rank(self) -> int | None:
        return None if self._tracker is None else self._tracker.rank

    def is_complete(self) -> bool:
        return len(self.recovered) == self.K

    def assemble(self, m: int, k: int):
        if m * k != self.K:
            raise ValueError("m*k must equal K")
        if not self.is_complete():
            raise IncompleteDecode(f"{len(self.recovered)} of {self.K} sources recovered")
        return np.block([[self.recovered[x * k + y] for y in range(k)] for x in range(m)])

    def receive(self, support, block=None) -> bool:
        """Ingest, peel, and report completion."""
        self.ingest_support(support, block)
        self.peel()
        return self.is_complete()


def _exact_solve(Z, rhs):
    """Solve the full-column-rank integer system Z X = rhs exactly.

    Tries a rounded floating solve first and verifies it in integer arithmetic;
    falls back to rational elimination.
    """
    if rhs.dtype != object:
        X = np.rint(np.linalg.lstsq(Z.astype(float), rhs.astype(float), rcond=None)[0])
        if np.all(np.abs(X) < 2 ** 52):
            X = X.astype(np.int64)
            if np.array_equal(Z @ X, rhs):
                return X
    n = Z.shape[1]
    aug = [[Fraction(int(v)) for v in Z[i]] + [Fraction(v) for v in rhs[i]] for i in range(Z.shape[0])]
    row = 0
    for c in range(n):
        piv = next(i for i in range(row, len(aug)) if aug[i][c] != 0)
        aug[row], aug[piv] = aug[piv], aug[row]
        inv = 1 / aug[row][c]
        aug[row] = [v * inv for v in aug[row]]
        for i in range(len(aug)):
            if i != row and aug[i][c] != 0:
                f = aug[i][c]
                aug[i] = [a - f * b for a, b in zip(aug[i], aug[row])]
        row += 1
    out = np.array([aug[i][n:] for i in range(n)], dtype=object)
    if all(v.denominator == 1 for v in out.flat):
        out = np.vectorize(lambda f: f.numerator, otypes=[object])(out)
    return out


def ingest(state: DecoderState, z_vec, block=None) -> DecoderState:
    return state.ingest(z_vec, block)


def peel(state: DecoderState) -> DecoderState:
    return state.peel()


def is_complete(state: DecoderState) -> bool:
    return state.is_complete()


def assemble(state: DecoderState, m: int, k: int):
    return state.assemble(m, k)


def symbols_to_complete(stream, K: int, completion: str = "rank") -> int:
    """Feed supports from ``stream`` until decoding completes; returns the count used."""
    dec = DecoderState(K, completion)
    for support in stream:
        if dec.receive(support):
            return dec.symbols_received
    raise IncompleteDecode("stream exhausted before completion")
