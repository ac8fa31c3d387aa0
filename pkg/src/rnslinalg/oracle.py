"""
Arbitrary-precision reference arithmetic.

Everything here works on plain Python integers.  It is the independent
check for the RNS engine and doubles as the multi-precision (MP) SpMV path
used for the RNS-vs-MP comparison in the benchmarks.
"""


def oracle_mod(x, m):
    """Return x mod m in [0, m-1]."""
    if m == 0:
        raise ZeroDivisionError("zero modulus")
    if m < 0:
        raise ValueError("modulus must be positive")
    return x % m


def _triplets(a):
    coo = a.to_coo()
    return (
        coo.n_rows,
        coo.n_cols,
        coo.row.tolist(),
        coo.col.tolist(),
        coo.data.tolist(),
    )


def mp_spmv(a, v):
    """Unreduced product A*v with exact (signed) integer accumulation."""
    n_rows, n_cols, rows, cols, vals = _triplets(a)
    if len(v) != n_cols:
        raise ValueError(f"dimension mismatch: matrix has {n_cols} columns, vector {len(v)}")
    out = [0] * n_rows
    for i, j, lam in zip(rows, cols, vals):
        out[i] += lam * v[j]
    return out


def oracle_spmv_mod(a, v, ell):
    """Return (A*v) mod ell, every coordinate in [0, ell-1].

    Negative coefficients are accumulated as signed integers and the sign is
    resolved by the final reduction.
    """
    return [oracle_mod(x, ell) for x in mp_spmv(a, v)]


def mp_spmv_iterate(a, v, ell, t, accumulate=1):
    """A^t v mod ell in multi-precision form.

    ``accumulate`` products are chained before each reduction modulo ell,
    the MP counterpart of the deferred reduction schedule.
    """
    v = list(v)
    pending = 0
    for _ in range(t):
        v = mp_spmv(a, v)
        pending += 1
        if pending == accumulate:
            v = [x % ell for x in v]
            pending = 0
    return [x % ell for x in v]


def dense_rows(a):
    """Dense list-of-lists copy of any matrix format (small matrices only)."""
    n_rows, n_cols, rows, cols, vals = _triplets(a)
    dense = [[0] * n_cols for _ in range(n_rows)]
    for i, j, lam in zip(rows, cols, vals):
        dense[i][j] += lam
    return dense
