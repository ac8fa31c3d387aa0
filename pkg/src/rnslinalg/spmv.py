"""
Exact SpMV over Z/lZ on RNS vectors, for every storage format.

Each format is compiled once into a *schedule*: a list of vectorized steps.
A step touches every destination row at most once and applies one RNS
primitive to all of them (``add`` for +-1 coefficients, ``addmul``
otherwise; negative coefficients use the complement p_j - y).  Row
accumulation stays a sequential chain of relaxed-range AddMul operations,
exactly as in the scalar algorithm, while numpy vectorizes across rows.

Work is split into partitions (row sets, COO entry chunks or SLCOO slice
ranges) and, with the "residue-vector" strategy, also into channel groups.
Partitions are merged by a single coordinator in partition order and the
destination residues are normalized to [0, p_j) on exit, so the output is
bit-identical for every format, flag and worker count.

Products of signed coefficients can be negative, which RNS would wrap modulo
P.  When the caller passes ``src_bound`` B (a multiple of l bounding every
source value), row i starts from the offset (sum of its negative |lam|) * B,
which is 0 mod l and keeps every value in [0, r*B).
"""

import math
import time
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import matrix as mx
from .rns import UNBOUNDED, max_accumulation_count
from .vector import Channels, RnsVector, batch_reduce, canonicalize

FORMATS = ("csr", "coo", "slcoo", "ell", "hybrid")
STRATEGIES = ("scalar", "residue-vector")


class AccumulationOverflow(ArithmeticError):
    """A deferred-reduction chain exceeded the representable range."""


@dataclass
class SpmvPlan:
    basis: object
    fmt: str = "csr"
    workers: int = 1
    F: float = UNBOUNDED
    r: int = 1
    use_compression: bool = False
    use_reordering: bool = False
    balance: bool = False
    strategy: str = "scalar"
    slice_size: int = 4
    hybrid_k: int = None
    debug: bool = False
    _prepared: weakref.WeakKeyDictionary = field(
        default_factory=weakref.WeakKeyDictionary, repr=False, compare=False)
    _pool: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.fmt not in FORMATS:
            raise ValueError(f"unknown format {self.fmt!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.F != UNBOUNDED and self.F < 1:
            raise ValueError("reduction frequency must be >= 1")

    def flags(self):
        return {
            "compress": self.use_compression,
            "reorder": self.use_reordering,
            "balance": self.balance,
        }

    def map(self, fn, items):
        if self.workers == 1 or len(items) <= 1:
            return [fn(it) for it in items]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        return list(self._pool.map(fn, items))


def make_plan(m, basis, fmt="csr", workers=1, reorder=False, compress=False, balance=False,
              strategy="scalar", slice_size=4, hybrid_k=None, debug=False):
    """Plan for ``m``: row norm r and reduction frequency F come from the matrix."""
    r = int(mx.row_norms(m).max()) if m.n_rows else 0
    F = max_accumulation_count(basis, max(r, 1))
    return SpmvPlan(basis, fmt=fmt, workers=workers, F=F, r=r,
                    use_compression=compress, use_reordering=reorder, balance=balance,
                    strategy=strategy, slice_size=slice_size, hybrid_k=hybrid_k, debug=debug)


def default_plan(m, basis):
    fmt = {
        mx.CooMatrix: "coo", mx.SlcooMatrix: "slcoo", mx.EllMatrix: "ell",
        mx.HybridMatrix: "hybrid",
    }.get(type(m), "csr")
    plan = make_plan(m, basis, fmt=fmt)
    plan.use_compression = isinstance(m, mx.CompressedCsrMatrix)
    plan.use_reordering = plan.use_compression or getattr(m, "ordering", "") == "category"
    if isinstance(m, mx.SlcooMatrix):
        plan.slice_size = m.slice_size
    return plan


# -- preparation ------------------------------------------------------------------

def _matches(m, plan):
    if plan.fmt == "csr":
        if plan.use_compression:
            return isinstance(m, mx.CompressedCsrMatrix)
        return isinstance(m, mx.CsrMatrix) and (
            not plan.use_reordering or m.ordering == "category")
    if plan.fmt == "slcoo":
        return isinstance(m, mx.SlcooMatrix) and m.slice_size == plan.slice_size
    return isinstance(m, {"coo": mx.CooMatrix, "ell": mx.EllMatrix,
                          "hybrid": mx.HybridMatrix}[plan.fmt])


def prepare(m, plan):
    """``m`` converted to the plan's format and flags (cached per matrix)."""
    if _matches(m, plan):
        return m
    cached = plan._prepared.get(m)
    if cached is not None:
        return cached
    csr = mx.as_csr(m)
    if plan.use_reordering or plan.use_compression:
        csr = mx.reorder_row_categories(csr)
    if plan.fmt == "csr":
        out = mx.compress_values(csr) if plan.use_compression else csr
    elif plan.fmt == "coo":
        out = csr.to_coo()
    elif plan.fmt == "slcoo":
        out = mx.csr_to_slcoo(csr, plan.slice_size)
    elif plan.fmt == "ell":
        out = mx.csr_to_ell(csr)
    else:
        k = plan.hybrid_k or mx.choose_hybrid_k(csr)
        out = mx.split_hybrid(csr, k)
    plan._prepared[m] = out
    return out


# -- schedules ----------------------------------------------------------------------

@dataclass
class _Task:
    rows: np.ndarray        # global rows owned (or touched) by this partition
    ops: list               # (local_rows, cols, lam, neg, unit)
    owner: np.ndarray = None   # COO only: rows whose first entry lies here


def _ops_from_positions(local_rows, cols, vals, is_float):
    """Split one position step into a unit op and a multiply op."""
    ops = []
    vals = np.asarray(vals, dtype=np.int64)
    mag = np.abs(vals)
    unit = mag == 1
    for sel, is_unit in ((unit, True), (~unit, False)):
        if not sel.any():
            continue
        lam = mag[sel].reshape(-1, 1).astype(np.float64 if is_float else np.uint64)
        neg = (vals[sel] < 0).reshape(-1, 1)
        ops.append((local_rows[sel], cols[sel], lam, neg if neg.any() else None, is_unit))
    return ops


def _row_major_ops(lengths, start, entry_cols, entry_vals, is_float):
    """Position-wise ops for rows with ``lengths`` entries starting at ``start``.

    ``entry_cols(idx)`` / ``entry_vals(idx, t, rows)`` fetch the t-th entry of
    each listed row.
    """
    order = np.argsort(-lengths, kind="stable")
    sorted_len = lengths[order]
    ops = []
    t = 0
    while True:
        active = int(np.count_nonzero(sorted_len > t))
        if active == 0:
            break
        local = order[:active]
        idx = start[local] + t
        ops += _ops_from_positions(local, entry_cols(idx), entry_vals(idx, t, local), is_float)
        t += 1
    return ops


def _csr_task(m, rows, is_float):
    return _Task(rows, _row_major_ops(
        m.row_lengths()[rows], m.ptr[rows], lambda i: m.idx[i],
        lambda i, t, local: m.data[i], is_float))


def _compressed_task(m, rows, is_float):
    d0 = m.ptr_data[rows]
    n_plus = m.data[d0]
    n_minus = m.data[d0 + 1]
    n_pos = m.n_big_pos[rows]

    def values(i, t, local):
        p, q = n_plus[local], n_minus[local]
        out = np.where(t < p, 1, -1).astype(np.int64)
        big = t >= p + q
        if big.any():
            e = t - p[big] - q[big]
            mag = m.data[d0[local][big] + 2 + e]
            out[big] = np.where(e < n_pos[local][big], mag, -mag)
        return out

    return _Task(rows, _row_major_ops(
        m.row_lengths()[rows], m.ptr[rows], lambda i: m.idx[i], values, is_float))


def _ell_task(m, rows, is_float):
    sub_idx, sub_data = m.idx[rows], m.data[rows]
    lengths = np.count_nonzero(sub_data, axis=1)
    local_of = np.arange(len(rows))
    return _Task(rows, _row_major_ops(
        lengths, local_of * m.K,
        lambda i: sub_idx.reshape(-1)[i], lambda i, t, local: sub_data.reshape(-1)[i],
        is_float))


def _hybrid_task(m, rows, is_float):
    task = _ell_task(m.ell_part, rows, is_float)
    tail = m.coo_tail
    sel = np.isin(tail.row, rows)
    if sel.any():
        t_row, t_col, t_val = tail.row[sel], tail.col[sel], tail.data[sel]
        uniq, start, counts = np.unique(t_row, return_index=True, return_counts=True)
        local_of = np.searchsorted(rows, uniq)   # partition rows are sorted
        ops = _row_major_ops(counts, start, lambda i: t_col[i], lambda i, t, local: t_val[i],
                             is_float)
        task.ops += [(local_of[lr], c, lam, neg, unit) for lr, c, lam, neg, unit in ops]
    return task


def _coo_task(m, lo, hi, is_float):
    row, col, val = m.row[lo:hi], m.col[lo:hi], m.data[lo:hi]
    uniq, start, counts = np.unique(row, return_index=True, return_counts=True)
    ops = _row_major_ops(counts, start, lambda i: col[i], lambda i, t, local: val[i], is_float)
    first = np.searchsorted(m.row, uniq, side="left")
    return _Task(uniq, ops, owner=first >= lo)


def _slcoo_task(m, s_lo, s_hi, is_float):
    lo, hi = m.ptr_slice[s_lo], m.ptr_slice[s_hi]
    row_lo = s_lo * m.slice_size
    row_hi = min(s_hi * m.slice_size, m.n_rows)
    rows = np.arange(row_lo, row_hi)
    starts = m.ptr_slice[s_lo:s_hi] - lo
    lengths = np.diff(m.ptr_slice[s_lo:s_hi + 1])
    e_row, e_col, e_val = m.row[lo:hi] - row_lo, m.col[lo:hi], m.data[lo:hi]
    # one step per slice position: rows of different slices never collide
    ops = []
    t = 0
    while True:
        active = np.flatnonzero(lengths > t)
        if len(active) == 0:
            break
        idx = starts[active] + t
        ops += _ops_from_positions(e_row[idx], e_col[idx], e_val[idx], is_float)
        t += 1
    return _Task(rows, ops)


def _row_partitions(m, plan):
    key = ("rows", plan.workers, plan.balance)
    if key not in m._cache:
        n = m.n_rows
        if plan.balance and plan.workers > 1:
            _, perm = mx.permute_rows_balanced(m if not isinstance(m, mx.HybridMatrix)
                                               else m.to_coo(), plan.workers)
            parts = [np.sort(perm[w::plan.workers]) for w in range(plan.workers)]
        else:
            parts = np.array_split(np.arange(n), plan.workers)
        m._cache[key] = [p for p in parts if len(p)] or [np.arange(0)]
    return m._cache[key]


def _tasks(m, plan):
    is_float = plan.basis.flavor == "float"
    key = ("tasks", plan.workers, plan.balance, is_float)
    if key in m._cache:
        return m._cache[key]
    if isinstance(m, mx.CooMatrix):
        bounds = np.linspace(0, m.nnz, plan.workers + 1).astype(np.int64)
        tasks = [_coo_task(m, a, b, is_float) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    elif isinstance(m, mx.SlcooMatrix):
        bounds = np.linspace(0, m.n_slices, plan.workers + 1).astype(np.int64)
        tasks = [_slcoo_task(m, a, b, is_float) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    else:
        build = {
            mx.CsrMatrix: _csr_task, mx.CompressedCsrMatrix: _compressed_task,
            mx.EllMatrix: _ell_task, mx.HybridMatrix: _hybrid_task,
        }[type(m)]
        tasks = [build(m, rows, is_float) for rows in _row_partitions(m, plan)]
    m._cache[key] = tasks
    return tasks


# -- execution -----------------------------------------------------------------------

def _channel_groups(plan):
    n = plan.basis.n
    if plan.strategy == "scalar":
        return [None]
    groups = min(plan.workers, n)
    return [g for g in np.array_split(np.arange(n), groups) if len(g)]


def _run_task(task, chans, src, init, basis):
    ch = Channels(basis, chans)
    if chans is None:
        acc = init[task.rows].copy()
    else:
        acc = init[np.ix_(task.rows, chans)].copy()
    if task.owner is not None:
        acc[~task.owner] = 0
    for local, cols, lam, neg, unit in task.ops:
        y = src[cols] if chans is None else src[np.ix_(cols, chans)]
        if neg is not None:
            y = np.where(neg, ch.complement(y), y)
        x = acc[local]
        acc[local] = ch.add(x, y) if unit else ch.addmul(x, lam, y)
    return acc


def _execute(m, src, plan, init):
    basis = plan.basis
    tasks = _tasks(m, plan)
    groups = _channel_groups(plan)
    work = [(t, g) for t in tasks for g in groups]
    results = plan.map(lambda tg: _run_task(tg[0], tg[1], src, init, basis), work)
    out = init.copy()
    for (task, chans), acc in zip(work, results):
        ch = Channels(basis, chans)
        if task.owner is None:
            if chans is None:
                out[task.rows] = acc
            else:
                out[np.ix_(task.rows, chans)] = acc
            continue
        # COO: owner rows written directly, carried partial sums merged in order
        own, carry = task.owner, ~task.owner
        if chans is None:
            out[task.rows[own]] = acc[own]
            if carry.any():
                out[task.rows[carry]] = ch.add(out[task.rows[carry]], ch.normalize(acc[carry]))
        else:
            out[np.ix_(task.rows[own], chans)] = acc[own]
            if carry.any():
                cells = np.ix_(task.rows[carry], chans)
                out[cells] = ch.add(out[cells], ch.normalize(acc[carry]))
    return Channels(basis).normalize(out)


def row_offsets(basis, neg_norms, bound):
    """RNS residues of neg_norms[i] * bound for every row."""
    mods = np.array(basis.moduli, dtype=object)
    bmod = np.array([bound % p for p in basis.moduli], dtype=object)
    neg = np.asarray(neg_norms, dtype=np.int64).astype(object).reshape(-1, 1)
    dtype = np.float64 if basis.flavor == "float" else np.uint64
    return ((neg % mods) * bmod % mods).astype(dtype)


def _init_array(m, basis, src_bound, addend):
    dtype = np.float64 if basis.flavor == "float" else np.uint64
    init = np.zeros((m.n_rows, basis.n), dtype=dtype)
    if src_bound:
        neg = m._cache.get("neg_norms")
        if neg is None:
            neg = m._cache["neg_norms"] = mx.negative_row_norms(m)
        init = row_offsets(basis, neg, src_bound)
    if addend is not None:
        ch = Channels(basis)
        init = ch.normalize(ch.add(init, addend.data))
    return init


def _check_src(m, src, basis):
    if len(src) != m.n_cols:
        raise ValueError(f"dimension mismatch: {m.n_cols} columns, vector of {len(src)}")
    if src.basis != basis:
        raise ValueError("vector and plan use different bases")
    assert src.is_normalized(), "source residues must be normalized"


def spmv(m, src, basis=None, plan=None, src_bound=None, addend=None):
    """dst = A * src (+ addend) in RNS form, residues normalized.

    Without ``src_bound`` the represented value is sum(lam * y) modulo P.
    With it, every row is offset by a multiple of l so the value is the
    non-negative integer offset_i + sum(lam * y) < r * src_bound.
    """
    basis = basis or src.basis
    plan = plan or default_plan(m, basis)
    pm = prepare(m, plan)
    _check_src(pm, src, basis)
    init = _init_array(pm, basis, src_bound, addend)
    return RnsVector(basis, _execute(pm, src.data, plan, init))


def spmv_csr(m, src, basis=None, plan=None, src_bound=None):
    if not isinstance(m, (mx.CsrMatrix, mx.CompressedCsrMatrix)):
        raise TypeError("spmv_csr expects a CSR or compressed CSR matrix")
    return spmv(m, src, basis, plan, src_bound)


def spmv_format(m, src, basis=None, plan=None, src_bound=None):
    if not isinstance(m, (mx.CooMatrix, mx.SlcooMatrix, mx.EllMatrix, mx.HybridMatrix)):
        raise TypeError("spmv_format expects a COO, SLCOO, ELL or hybrid matrix")
    return spmv(m, src, basis, plan, src_bound)


# -- deferred reduction ----------------------------------------------------------------

class DeferredIterator:
    """Repeated v <- A v (+ addend) with reductions modulo l only when needed.

    ``bound`` is a multiple of l bounding every value of the current vector.
    After each product it grows to r * bound (+ l with an addend); the vector
    is reduced as soon as one more step could reach (1 - Delta) * P.  For
    plain iteration this is every F = max_accumulation_count steps.
    """

    def __init__(self, m, v, plan, with_addend=False, stats=None):
        self.plan = plan
        self.basis = plan.basis
        self.m = prepare(m, plan)
        self.r = max(plan.r, 1)
        self.extra = self.basis.ell if with_addend else 0
        self.v = v
        self.bound = self.basis.reduce_bound
        self.steps = 0
        self.stats = stats if stats is not None else new_stats()
        self.spmv_time = 0.0
        self.reduce_time = 0.0

    def step(self, addend=None):
        t0 = time.perf_counter()
        self.v = spmv(self.m, self.v, self.basis, self.plan, src_bound=self.bound, addend=addend)
        self.spmv_time += time.perf_counter() - t0
        self.bound = self.r * self.bound + (self.basis.ell if addend is not None else 0)
        self.steps += 1
        self.stats["spmv"] += 1
        if self.plan.debug:
            self.check()
        if not self.basis.below_cap(self.r * self.bound + self.extra):
            self.reduce()

    def check(self):
        values = self.v.to_ints()
        self.stats["checks"] += 1
        top = max(values, default=0)
        if top >= self.bound or not self.basis.below_cap(top):
            raise AccumulationOverflow(
                f"value of {top.bit_length()} bits exceeds the accumulation bound after "
                f"step {self.steps}")

    def reduce(self):
        t0 = time.perf_counter()
        self.v = batch_reduce(self.v)
        self.reduce_time += time.perf_counter() - t0
        self.bound = self.basis.reduce_bound
        self.stats["reductions"] += 1
        self.stats["reduced_at"].append(self.steps)

    def pending(self):
        return self.bound != self.basis.reduce_bound

    def coordinate(self, i):
        """Exact value of coordinate i modulo l."""
        return self.v.value(i) % self.basis.ell

    def canonical(self):
        """Fully reduced copy, each value in [0, l-1]; resets the bound."""
        if self.pending():
            self.reduce()
        self.v = canonicalize(self.v)
        return self.v


def new_stats():
    return {"spmv": 0, "reductions": 0, "reduced_at": [], "checks": 0}


def spmv_iterate(m, v0, t, basis=None, plan=None, stats=None):
    """A^t v0 mod l, canonical; v0 must be fully reduced (values < l)."""
    if t < 0:
        raise ValueError("iteration count must be >= 0")
    basis = basis or v0.basis
    plan = plan or default_plan(m, basis)
    if t == 0:
        return v0.copy()
    it = DeferredIterator(m, v0, plan, stats=stats)
    for _ in range(t):
        it.step()
    return it.canonical()


# -- benchmarking -----------------------------------------------------------------------

TIMING_FIELDS = ("wall_time", "spmv_time", "reduce_time", "time_per_iteration",
                 "ops_per_second", "reduction_share", "mp_time")


@dataclass
class ThroughputReport:
    fmt: str
    flags: dict
    workers: int
    strategy: str
    iterations: int
    nnz: int
    n_residues: int
    ops_per_iteration: int
    total_ops: int
    frequency: float
    reductions: int
    wall_time: float
    spmv_time: float
    reduce_time: float
    time_per_iteration: float
    ops_per_second: float
    reduction_share: float
    mp_time: float = None

    @property
    def reduction_frequency(self):
        return "never" if self.frequency == UNBOUNDED else f"1/{int(self.frequency)}"

    def as_record(self, timing=True):
        rec = {
            "format": self.fmt, "flags": self.flags, "workers": self.workers,
            "strategy": self.strategy, "iterations": self.iterations, "nnz": self.nnz,
            "n": self.n_residues, "ops_per_iteration": self.ops_per_iteration,
            "total_ops": self.total_ops, "reduction_frequency": self.reduction_frequency,
            "reductions": self.reductions,
        }
        if timing:
            for name in TIMING_FIELDS:
                rec[name] = getattr(self, name)
        return rec


def operation_count(nnz, n):
    """Operations per SpMV: twice the non-zeros times 2n."""
    return 2 * nnz * 2 * n


def benchmark(m, basis, plan, iterations, mp=False):
    """Time ``iterations`` deferred-reduction SpMVs.

    The per-iteration time charges each reduction at its invocation
    frequency 1/F, i.e. spmv time + reduce time / F.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    pm = prepare(m, plan)
    nnz = pm.nnz
    rng = np.random.default_rng(0)
    v0 = RnsVector.from_ints(basis, [int(x) % basis.ell for x in
                                     rng.integers(0, 1 << 62, size=m.n_cols)])
    stats = new_stats()
    it = DeferredIterator(pm, v0, plan, stats=stats)
    t0 = time.perf_counter()
    for _ in range(iterations):
        it.step()
    wall = time.perf_counter() - t0
    reductions = stats["reductions"]
    if reductions:
        reduce_avg = it.reduce_time / reductions
    else:
        t1 = time.perf_counter()
        batch_reduce(it.v)
        reduce_avg = time.perf_counter() - t1
    spmv_avg = it.spmv_time / iterations
    per_reduction = 0.0 if plan.F == UNBOUNDED else reduce_avg / plan.F
    per_iter = spmv_avg + per_reduction
    ops = operation_count(nnz, basis.n)
    mp_time = None
    if mp:
        from .oracle import mp_spmv_iterate
        values = v0.to_ints()
        acc = 1 if plan.F == UNBOUNDED else int(plan.F)
        t2 = time.perf_counter()
        mp_spmv_iterate(pm, values, basis.ell, iterations, accumulate=acc)
        mp_time = time.perf_counter() - t2
    return ThroughputReport(
        fmt=plan.fmt, flags=plan.flags(), workers=plan.workers, strategy=plan.strategy,
        iterations=iterations, nnz=nnz, n_residues=basis.n, ops_per_iteration=ops,
        total_ops=ops * iterations, frequency=plan.F, reductions=reductions,
        wall_time=wall, spmv_time=it.spmv_time, reduce_time=it.reduce_time,
        time_per_iteration=per_iter, ops_per_second=ops / per_iter if per_iter else math.inf,
        reduction_share=per_reduction / per_iter if per_iter else 0.0, mp_time=mp_time,
    )
