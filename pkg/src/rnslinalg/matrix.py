"""
Sparse matrix formats for DLP linear algebra.

Coefficients are signed 32-bit integers, overwhelmingly +-1.  Every format
stores the same logical matrix and converts back to row-sorted COO with
``to_coo()``; the conversions and the row transformations (category
reordering, +-1 compression, balanced row permutation) never change the
logical entry set.

Arrays are made read-only on construction: matrix objects are immutable.
"""

from dataclasses import dataclass, field

import numpy as np

INDEX = np.int64
VALUE = np.int32
COEFF_LIMIT = 1 << 31

CATEGORIES = ("+1", "-1", ">1", "<-1")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


def _category(data):
    """0 for +1, 1 for -1, 2 for lam > 1, 3 for lam < -1."""
    data = np.asarray(data)
    cat = np.full(data.shape, 3, dtype=np.int8)
    cat[data > 1] = 2
    cat[data == -1] = 1
    cat[data == 1] = 0
    return cat


def _row_ids(ptr):
    return np.repeat(np.arange(len(ptr) - 1, dtype=INDEX), np.diff(ptr))


def _cache_field():
    return field(default_factory=dict, init=False, repr=False, compare=False)


@dataclass(frozen=True, eq=False)
class CooMatrix:
    n_rows: int
    n_cols: int
    row: np.ndarray
    col: np.ndarray
    data: np.ndarray
    _cache: dict = _cache_field()

    def __post_init__(self):
        object.__setattr__(self, "row", _frozen(self.row, INDEX))
        object.__setattr__(self, "col", _frozen(self.col, INDEX))
        object.__setattr__(self, "data", _frozen(self.data, VALUE))

    @classmethod
    def from_triplets(cls, n_rows, n_cols, rows, cols, vals):
        """Sort by (row, col) and validate; duplicates and zeros are rejected."""
        rows = np.asarray(rows, dtype=INDEX)
        cols = np.asarray(cols, dtype=INDEX)
        vals = np.asarray(vals, dtype=np.int64)
        order = np.lexsort((cols, rows))
        m = cls(n_rows, n_cols, rows[order], cols[order], _checked_values(vals[order]))
        m.validate()
        return m

    @property
    def nnz(self):
        return len(self.data)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def validate(self):
        if not (len(self.row) == len(self.col) == len(self.data)):
            raise ValueError("row/col/data length mismatch")
        if self.nnz:
            if self.row.min() < 0 or self.row.max() >= self.n_rows:
                raise ValueError("row index out of range")
            if self.col.min() < 0 or self.col.max() >= self.n_cols:
                raise ValueError("column index out of range")
            if (self.data == 0).any():
                raise ValueError("explicit zero coefficient")
            key = self.row * max(self.n_cols, 1) + self.col
            step = np.diff(key)
            if (step < 0).any():
                raise ValueError("entries not sorted by (row, col)")
            if (step == 0).any():
                raise ValueError("duplicate entry")
        return self

    def to_coo(self):
        return self

    def row_lengths(self):
        return np.bincount(self.row, minlength=self.n_rows).astype(INDEX)

    def triplets(self):
        return list(zip(self.row.tolist(), self.col.tolist(), self.data.tolist()))


def _checked_values(vals):
    vals = np.asarray(vals, dtype=np.int64)
    if len(vals) and np.abs(vals).max() >= COEFF_LIMIT:
        raise ValueError("coefficient magnitude must be < 2^31")
    return vals.astype(VALUE)


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Row pointers plus column ids and values.

    ``ordering`` is "column" (ascending column inside each row) or
    "category" (+1, -1, >1, <-1 blocks, ascending column inside a block).
    """

    n_rows: int
    n_cols: int
    ptr: np.ndarray
    idx: np.ndarray
    data: np.ndarray
    ordering: str = "column"
    _cache: dict = _cache_field()

    def __post_init__(self):
        object.__setattr__(self, "ptr", _frozen(self.ptr, INDEX))
        object.__setattr__(self, "idx", _frozen(self.idx, INDEX))
        object.__setattr__(self, "data", _frozen(self.data, VALUE))
        if len(self.ptr) != self.n_rows + 1 or self.ptr[0] != 0 or self.ptr[-1] != len(self.idx):
            raise ValueError("inconsistent row pointers")
        if (np.diff(self.ptr) < 0).any():
            raise ValueError("row pointers must be non-decreasing")

    @property
    def nnz(self):
        return len(self.data)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def row_lengths(self):
        return np.diff(self.ptr)

    def row(self, i):
        a, b = self.ptr[i], self.ptr[i + 1]
        return self.idx[a:b], self.data[a:b]

    def to_coo(self):
        rows = _row_ids(self.ptr)
        order = np.lexsort((self.idx, rows))
        return CooMatrix(self.n_rows, self.n_cols, rows[order], self.idx[order], self.data[order])


@dataclass(frozen=True, eq=False)
class CompressedCsrMatrix:
    """Category-ordered CSR whose +-1 values are replaced by counts.

    Row i's value stream ``data[ptr_data[i]:ptr_data[i+1]]`` is
    [n_plus, n_minus, values of the >1 block..., magnitudes of the <-1
    block...].  ``n_big_pos[i]`` is the size of the >1 block, needed to
    tell the two explicit blocks apart.
    """

    n_rows: int
    n_cols: int
    ptr: np.ndarray
    idx: np.ndarray
    ptr_data: np.ndarray
    data: np.ndarray
    n_big_pos: np.ndarray
    _cache: dict = _cache_field()

    def __post_init__(self):
        for name, dt in (("ptr", INDEX), ("idx", INDEX), ("ptr_data", INDEX),
                         ("data", np.int64), ("n_big_pos", INDEX)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))

    @property
    def nnz(self):
        return len(self.idx)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def row_lengths(self):
        return np.diff(self.ptr)

    def expanded_values(self):
        """Signed coefficient of every entry, aligned with ``idx``."""
        out = np.empty(self.nnz, dtype=np.int64)
        for i in range(self.n_rows):
            a, b = self.ptr[i], self.ptr[i + 1]
            d0 = self.ptr_data[i]
            n_plus, n_minus = self.data[d0], self.data[d0 + 1]
            explicit = self.data[d0 + 2:self.ptr_data[i + 1]]
            npos = self.n_big_pos[i]
            out[a:a + n_plus] = 1
            out[a + n_plus:a + n_plus + n_minus] = -1
            out[a + n_plus + n_minus:b] = np.concatenate([explicit[:npos], -explicit[npos:]])
        return out

    def decompress(self):
        return CsrMatrix(self.n_rows, self.n_cols, self.ptr, self.idx,
                         self.expanded_values(), ordering="category")

    def to_coo(self):
        return self.decompress().to_coo()


@dataclass(frozen=True, eq=False)
class SlcooMatrix:
    """Horizontal slices of ``slice_size`` rows; column-sorted inside a slice."""

    n_rows: int
    n_cols: int
    slice_size: int
    ptr_slice: np.ndarray
    row: np.ndarray
    col: np.ndarray
    data: np.ndarray
    _cache: dict = _cache_field()

    def __post_init__(self):
        for name, dt in (("ptr_slice", INDEX), ("row", INDEX), ("col", INDEX), ("data", VALUE)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))

    @property
    def nnz(self):
        return len(self.data)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def n_slices(self):
        return len(self.ptr_slice) - 1

    def to_coo(self):
        order = np.lexsort((self.col, self.row))
        return CooMatrix(self.n_rows, self.n_cols, self.row[order], self.col[order], self.data[order])


@dataclass(frozen=True, eq=False)
class EllMatrix:
    """N-by-K padded layout; padding has coefficient 0 and column 0."""

    n_rows: int
    n_cols: int
    K: int
    idx: np.ndarray
    data: np.ndarray
    _cache: dict = _cache_field()

    def __post_init__(self):
        object.__setattr__(self, "idx", _frozen(self.idx, INDEX).reshape(self.n_rows, self.K))
        object.__setattr__(self, "data", _frozen(self.data, VALUE).reshape(self.n_rows, self.K))

    @property
    def nnz(self):
        return int(np.count_nonzero(self.data))

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def row_lengths(self):
        return np.count_nonzero(self.data, axis=1).astype(INDEX)

    def to_coo(self):
        rows, pos = np.nonzero(self.data)
        cols = self.idx[rows, pos]
        order = np.lexsort((cols, rows))
        return CooMatrix(self.n_rows, self.n_cols, rows[order], cols[order],
                         self.data[rows, pos][order])


@dataclass(frozen=True, eq=False)
class HybridMatrix:
    ell_part: EllMatrix
    coo_tail: CooMatrix
    _cache: dict = _cache_field()

    @property
    def n_rows(self):
        return self.ell_part.n_rows

    @property
    def n_cols(self):
        return self.ell_part.n_cols

    @property
    def shape(self):
        return self.ell_part.shape

    @property
    def nnz(self):
        return self.ell_part.nnz + self.coo_tail.nnz

    def to_coo(self):
        a, b = self.ell_part.to_coo(), self.coo_tail
        return CooMatrix.from_triplets(
            self.n_rows, self.n_cols,
            np.concatenate([a.row, b.row]), np.concatenate([a.col, b.col]),
            np.concatenate([a.data, b.data]),
        )


# -- conversions ----------------------------------------------------------------

def coo_to_csr(m):
    ptr = np.zeros(m.n_rows + 1, dtype=INDEX)
    np.cumsum(np.bincount(m.row, minlength=m.n_rows), out=ptr[1:])
    return CsrMatrix(m.n_rows, m.n_cols, ptr, m.col, m.data)


def as_csr(m):
    """CSR view of any format (column ordering unless already CSR)."""
    if isinstance(m, CsrMatrix):
        return m
    if isinstance(m, CompressedCsrMatrix):
        return m.decompress()
    return coo_to_csr(m.to_coo())


def csr_to_slcoo(m, slice_size):
    if slice_size < 1:
        raise ValueError("slice_size must be >= 1")
    rows = _row_ids(m.ptr)
    slc = rows // slice_size
    order = np.lexsort((rows, m.idx, slc))
    n_slices = -(-m.n_rows // slice_size)
    ptr_slice = np.zeros(n_slices + 1, dtype=INDEX)
    np.cumsum(np.bincount(slc, minlength=n_slices), out=ptr_slice[1:])
    return SlcooMatrix(m.n_rows, m.n_cols, slice_size, ptr_slice,
                       rows[order], m.idx[order], m.data[order])


def csr_to_ell(m, K=None):
    lengths = m.row_lengths()
    longest = int(lengths.max()) if m.n_rows else 0
    if K is None:
        K = longest
    if K < longest:
        raise ValueError(f"row overflow: a row has {longest} entries, K={K}")
    idx = np.zeros((m.n_rows, K), dtype=INDEX)
    data = np.zeros((m.n_rows, K), dtype=VALUE)
    rows = _row_ids(m.ptr)
    pos = np.arange(m.nnz) - m.ptr[rows]
    idx[rows, pos] = m.idx
    data[rows, pos] = m.data
    return EllMatrix(m.n_rows, m.n_cols, K, idx, data)


def split_hybrid(m, K):
    """First min(K, len) entries of each row to ELL, the rest to a COO tail."""
    if K < 1:
        raise ValueError("K must be >= 1")
    rows = _row_ids(m.ptr)
    pos = np.arange(m.nnz) - m.ptr[rows]
    head = pos < K
    head_csr = CsrMatrix(
        m.n_rows, m.n_cols,
        np.concatenate([[0], np.cumsum(np.minimum(m.row_lengths(), K))]),
        m.idx[head], m.data[head], ordering=m.ordering,
    )
    tail = ~head
    return HybridMatrix(
        csr_to_ell(head_csr, K),
        CooMatrix(m.n_rows, m.n_cols, rows[tail], m.idx[tail], m.data[tail]),
    )


TAIL_WEIGHT = 3


def hybrid_cost(lengths, K):
    return len(lengths) * K + TAIL_WEIGHT * int(np.maximum(lengths - K, 0).sum())


def choose_hybrid_k(m):
    """K minimizing N*K + 3*tail_nnz; smallest K on ties."""
    lengths = as_csr(m).row_lengths()
    if lengths.sum() == 0:
        raise ValueError("matrix has no non-zeros")
    longest = int(lengths.max())
    # tail_nnz(K) = sum over K' >= K of #rows with length > K'
    longer = np.bincount(lengths, minlength=longest + 1)[::-1].cumsum()[::-1]
    best_k, best = 1, None
    for K in range(1, longest + 1):
        tail = int(longer[K + 1:].sum()) if K + 1 <= longest else 0
        cost = len(lengths) * K + TAIL_WEIGHT * tail
        if best is None or cost < best:
            best_k, best = K, cost
    return best_k


# -- row transformations -------------------------------------------------------------

def reorder_row_categories(m):
    """Stable per-row partition into +1, -1, >1, <-1 blocks."""
    m = as_csr(m)
    rows = _row_ids(m.ptr)
    order = np.lexsort((np.arange(m.nnz), _category(m.data), rows))
    return CsrMatrix(m.n_rows, m.n_cols, m.ptr, m.idx[order], m.data[order], ordering="category")


def _is_category_ordered(m):
    cat = _category(m.data).astype(np.int64)
    rows = _row_ids(m.ptr)
    key = rows * 4 + cat
    return bool((np.diff(key) >= 0).all())


def compress_values(m):
    """Replace the +-1 values of a category-ordered CSR by two counts per row."""
    if not _is_category_ordered(m):
        raise ValueError("matrix is not category-reordered")
    cat = _category(m.data)
    rows = _row_ids(m.ptr)
    counts = np.zeros((m.n_rows, 4), dtype=INDEX)
    np.add.at(counts, (rows, cat), 1)
    explicit = cat >= 2
    n_explicit = counts[:, 2] + counts[:, 3]
    ptr_data = np.zeros(m.n_rows + 1, dtype=INDEX)
    np.cumsum(2 + n_explicit, out=ptr_data[1:])
    data = np.empty(ptr_data[-1], dtype=np.int64)
    data[ptr_data[:-1]] = counts[:, 0]
    data[ptr_data[:-1] + 1] = counts[:, 1]
    slots = np.ones(len(data), dtype=bool)
    slots[ptr_data[:-1]] = False
    slots[ptr_data[:-1] + 1] = False
    data[slots] = np.abs(m.data[explicit].astype(np.int64))
    return CompressedCsrMatrix(m.n_rows, m.n_cols, m.ptr, m.idx, ptr_data, data, counts[:, 2])


def permute_rows_balanced(m, workers):
    """Row permutation that balances round-robin partitions.

    Rows are taken heaviest first in rounds of ``workers``; inside a round
    the heaviest row goes to the currently lightest partition, so every
    partition receives one row per round.  Partition labels are finally
    renumbered so that dealing position q to partition q mod workers
    reproduces the assignment.

    Returns (permuted matrix, perm) where row q of the result is row
    perm[q] of the input.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    m = as_csr(m)
    lengths = m.row_lengths()
    if workers == 1 or len(np.unique(lengths)) <= 1:
        return m, np.arange(m.n_rows, dtype=INDEX)
    order = np.argsort(-lengths, kind="stable")
    load = [0] * workers
    members = [[] for _ in range(workers)]
    for start in range(0, m.n_rows, workers):
        batch = order[start:start + workers]
        targets = sorted(range(workers), key=lambda w: (load[w], w))[:len(batch)]
        for row, w in zip(batch, targets):
            members[w].append(int(row))
            load[w] += int(lengths[row])
    # partitions holding an extra row must come first in round-robin order
    labels = sorted(range(workers), key=lambda w: (-len(members[w]), w))
    perm = np.empty(m.n_rows, dtype=INDEX)
    for slot, w in enumerate(labels):
        perm[slot::workers] = members[w]
    return permute_rows(m, perm), perm


def permute_rows(m, perm):
    m = as_csr(m)
    perm = np.asarray(perm, dtype=INDEX)
    lengths = m.row_lengths()[perm]
    ptr = np.concatenate([[0], np.cumsum(lengths)]).astype(INDEX)
    take = np.concatenate([np.arange(m.ptr[r], m.ptr[r + 1]) for r in perm]) if m.nnz else \
        np.zeros(0, dtype=INDEX)
    return CsrMatrix(m.n_rows, m.n_cols, ptr, m.idx[take], m.data[take], ordering=m.ordering)


def round_robin_loads(lengths, workers):
    lengths = np.asarray(lengths)
    return [int(lengths[w::workers].sum()) for w in range(workers)]


# -- statistics ---------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixStats:
    n_rows: int
    n_cols: int
    nnz: int
    max_row_norm: int
    pct_pm1: float
    row_weight_hist: dict
    col_density: tuple

    @property
    def r(self):
        return self.max_row_norm

    def as_dict(self):
        return {
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "nnz": self.nnz,
            "max_row_norm": self.max_row_norm,
            "pct_pm1": self.pct_pm1,
            "row_weight_hist": {str(k): v for k, v in self.row_weight_hist.items()},
        }


def row_norms(m):
    coo = m.to_coo()
    return np.bincount(coo.row, weights=np.abs(coo.data.astype(np.int64)),
                       minlength=coo.n_rows).astype(np.int64)


def negative_row_norms(m):
    """Sum of |lam| over the negative coefficients of each row."""
    coo = m.to_coo()
    neg = np.where(coo.data < 0, -coo.data.astype(np.int64), 0)
    return np.bincount(coo.row, weights=neg, minlength=coo.n_rows).astype(np.int64)


def matrix_stats(m):
    coo = m.to_coo()
    norms = row_norms(coo)
    lengths = coo.row_lengths()
    weights, counts = np.unique(lengths, return_counts=True)
    return MatrixStats(
        n_rows=coo.n_rows,
        n_cols=coo.n_cols,
        nnz=coo.nnz,
        max_row_norm=int(norms.max()) if coo.n_rows else 0,
        pct_pm1=float(np.mean(np.abs(coo.data) == 1)) if coo.nnz else 1.0,
        row_weight_hist={int(w): int(c) for w, c in zip(weights, counts)},
        col_density=tuple(np.bincount(coo.col, minlength=coo.n_cols).tolist()),
    )


# -- generator ------------------------------------------------------------------------

def gen_ffs_like(n, mean_row_weight, pct_pm1=0.927, max_coeff=32, dense_cols=None, seed=0,
                 n_cols=None):
    """Random matrix with the statistics of a filtered FFS matrix.

    Row weights are uniform within +-20% of the mean.  Column choice follows a
    truncated power law over the first ``dense_cols`` columns blended with a
    decaying tail and a uniform floor; columns are finally relabeled by
    decreasing weight so density falls off monotonically from column 0.
    Coefficients are +-1 with probability ``pct_pm1``, otherwise uniform in
    [2, max_coeff] with a random sign.

    This approximates the qualitative density profile of real FFS matrices;
    it is not fitted to any published data.
    """
    n_cols = n if n_cols is None else n_cols
    if n < 2:
        raise ValueError("N must be >= 2")
    if mean_row_weight < 1 or mean_row_weight >= n_cols:
        raise ValueError("mean_row_weight must be in [1, N)")
    if not 0.0 <= pct_pm1 <= 1.0:
        raise ValueError("pct_pm1 must be in [0, 1]")
    if max_coeff >= COEFF_LIMIT or (pct_pm1 < 1.0 and max_coeff < 2):
        raise ValueError("max_coeff must be in [2, 2^31)")
    if dense_cols is None:
        dense_cols = max(1, min(n_cols // 10, mean_row_weight // 4))
    rng = np.random.default_rng(seed)

    j = np.arange(n_cols, dtype=np.float64)
    head = np.where(j < dense_cols, 1.0 / np.sqrt(j + 1.0), 0.0)
    tail = np.where(j >= dense_cols, 1.0 / np.maximum(j - dense_cols + 8.0, 1.0), 0.0)
    floor = np.ones(n_cols)
    weight = 0.35 * head / head.sum() + 0.25 * tail / max(tail.sum(), 1e-300) + 0.40 * floor / n_cols
    prob = weight / weight.sum()

    lo = max(1, int(np.ceil(0.8 * mean_row_weight)))
    hi = min(n_cols - 1, int(np.floor(1.2 * mean_row_weight)))
    hi = max(hi, lo)
    lengths = rng.integers(lo, hi + 1, size=n)

    rows, cols = [], []
    for i, w in enumerate(lengths):
        picked = rng.choice(n_cols, size=int(w), replace=False, p=prob)
        rows.append(np.full(len(picked), i, dtype=INDEX))
        cols.append(picked)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols).astype(INDEX)

    total = len(rows)
    unit = rng.random(total) < pct_pm1
    sign = np.where(rng.random(total) < 0.5, -1, 1)
    mag = np.ones(total, dtype=np.int64)
    if max_coeff >= 2:
        mag[~unit] = rng.integers(2, max_coeff + 1, size=int((~unit).sum()))
    vals = sign * mag

    counts = np.bincount(cols, minlength=n_cols)
    relabel = np.empty(n_cols, dtype=INDEX)
    relabel[np.argsort(-counts, kind="stable")] = np.arange(n_cols)
    return CooMatrix.from_triplets(n, n_cols, rows, relabel[cols], vals)


def make_singular(m, seed=0):
    """Replace one row by the sum of two others (over Z), making A singular."""
    coo = m.to_coo()
    rng = np.random.default_rng(seed)
    target, a, b = (int(x) for x in rng.choice(coo.n_rows, size=3, replace=False))
    keep = coo.row != target
    acc = {}
    for src in (a, b):
        sel = coo.row == src
        for c, v in zip(coo.col[sel].tolist(), coo.data[sel].tolist()):
            acc[c] = acc.get(c, 0) + v
    new = [(c, v) for c, v in sorted(acc.items()) if v]
    return CooMatrix.from_triplets(
        coo.n_rows, coo.n_cols,
        np.concatenate([coo.row[keep], np.full(len(new), target, dtype=INDEX)]),
        np.concatenate([coo.col[keep], np.array([c for c, _ in new], dtype=INDEX)]),
        np.concatenate([coo.data[keep], np.array([v for _, v in new], dtype=np.int64)]),
    )
