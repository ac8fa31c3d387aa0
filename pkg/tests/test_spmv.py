import itertools
import random

import numpy as np
import pytest

from rnslinalg import matrix as mx
from rnslinalg.matrix import CooMatrix
from rnslinalg.oracle import mp_spmv_iterate, oracle_spmv_mod
from rnslinalg.params import ELL_217
from rnslinalg.rns import UNBOUNDED, build_basis
from rnslinalg.spmv import (
    FORMATS,
    AccumulationOverflow,
    DeferredIterator,
    benchmark,
    make_plan,
    new_stats,
    operation_count,
    prepare,
    spmv,
    spmv_csr,
    spmv_format,
    spmv_iterate,
)
from rnslinalg.vector import RnsVector, batch_reduce

ELL = ELL_217


def vec(basis, n, seed):
    rnd = random.Random(seed)
    values = [rnd.randrange(basis.ell) for _ in range(n)]
    return values, RnsVector.from_ints(basis, values)


def reduced(v):
    return [x % v.basis.ell for x in v.to_ints()]


@pytest.fixture(scope="module")
def case():
    m = mx.gen_ffs_like(200, 15, seed=21)
    basis = build_basis(ELL, r=int(mx.row_norms(m).max()))
    values, src = vec(basis, 200, 1)
    return m, basis, values, src


def test_identity(basis217):
    eye = CooMatrix.from_triplets(3, 3, [0, 1, 2], [0, 1, 2], [1, 1, 1])
    _, src = vec(basis217, 3, 2)
    for fmt in FORMATS:
        out = spmv(eye, src, basis217, make_plan(eye, basis217, fmt=fmt))
        assert out == src


def test_cancellation(basis217):
    m = CooMatrix.from_triplets(1, 2, [0, 0], [0, 1], [1, -1])
    a = 123456789 * ELL % basis217.P
    src = RnsVector.from_ints(basis217, [a % ELL, a % ELL])
    out = spmv(m, src, basis217)
    for r, p in zip(out.element(0), basis217.moduli):
        assert r % p == 0


def test_oracle_equivalence(case):
    m, basis, values, src = case
    expect = oracle_spmv_mod(m, values, ELL)
    out = spmv(m, src, basis, src_bound=basis.reduce_bound)
    assert reduced(batch_reduce(out)) == expect
    assert reduced(out) == expect


def test_offset_keeps_values_below_bound(case):
    m, basis, values, src = case
    out = spmv(m, src, basis, src_bound=basis.reduce_bound)
    r = int(mx.row_norms(m).max())
    assert max(out.to_ints()) < r * basis.reduce_bound


@pytest.mark.parametrize("flavor", ["integer", "float"])
def test_formats_bit_identical(case, flavor):
    m = case[0]
    k = 52 if flavor == "float" else 64
    basis = build_basis(ELL, r=int(mx.row_norms(m).max()), k=k, flavor=flavor)
    values, src = vec(basis, 200, 3)
    expect = oracle_spmv_mod(m, values, ELL)
    ref = None
    for fmt, workers, strategy in itertools.product(FORMATS, (1, 4), ("scalar", "residue-vector")):
        for reorder, compress, balance in itertools.product((False, True), repeat=3):
            plan = make_plan(m, basis, fmt=fmt, workers=workers, strategy=strategy,
                             reorder=reorder, compress=compress, balance=balance)
            out = spmv(m, src, basis, plan, src_bound=basis.reduce_bound)
            ref = ref or out
            assert out == ref, (fmt, workers, strategy, reorder, compress, balance)
    assert reduced(ref) == expect


@pytest.mark.parametrize("slice_size", [2, 4, 8])
def test_slcoo_slice_sizes(case, slice_size):
    m, basis, values, src = case
    plan = make_plan(m, basis, fmt="slcoo", slice_size=slice_size)
    sl = prepare(m, plan)
    assert sl.slice_size == slice_size
    assert spmv_format(sl, src, basis, plan) == spmv(m, src, basis)


def test_typed_entry_points(case):
    m, basis, _, src = case
    csr = mx.as_csr(m)
    assert spmv_csr(csr, src, basis) == spmv(m, src, basis)
    with pytest.raises(TypeError):
        spmv_csr(m, src, basis)
    with pytest.raises(TypeError):
        spmv_format(csr, src, basis)


def test_dimension_mismatch(case):
    m, basis, _, _ = case
    _, short = vec(basis, 10, 0)
    with pytest.raises(ValueError, match="dimension mismatch"):
        spmv(m, short, basis)


def test_linearity(case):
    m, basis, u, su = case
    v, sv = vec(basis, 200, 9)
    w = [(a + b) % ELL for a, b in zip(u, v)]
    sw = RnsVector.from_ints(basis, w)
    bound = basis.reduce_bound
    left = reduced(spmv(m, sw, basis, src_bound=bound))
    right = [(a + b) % ELL for a, b in zip(reduced(spmv(m, su, basis, src_bound=bound)),
                                           reduced(spmv(m, sv, basis, src_bound=bound)))]
    assert left == right


def test_permuted_matrix_matches(case):
    m, basis, _, src = case
    pm, perm = mx.permute_rows_balanced(mx.as_csr(m), 4)
    out = spmv(pm, src, basis)
    direct = spmv(m, src, basis)
    assert np.array_equal(out.data, direct.data[perm])


# -- iteration -----------------------------------------------------------------------

def test_iterate_zero_and_one(case):
    m, basis, _, src = case
    assert spmv_iterate(m, src, 0, basis) == src
    one = spmv_iterate(m, src, 1, basis)
    assert reduced(one) == one.to_ints()
    assert one.to_ints() == reduced(batch_reduce(spmv(m, src, basis, src_bound=basis.reduce_bound)))
    with pytest.raises(ValueError):
        spmv_iterate(m, src, -1, basis)


def test_iterate_ten(case):
    m, basis, values, src = case
    assert spmv_iterate(m, src, 10, basis).to_ints() == mp_spmv_iterate(m, values, ELL, 10)


def test_reduction_schedule(case):
    m, basis, _, src = case
    plan = make_plan(m, basis, debug=True)
    stats = new_stats()
    spmv_iterate(m, src, 12, basis, plan, stats=stats)
    F = plan.F
    # every F steps, plus the final one when iterations are pending
    assert stats["reduced_at"] == list(range(F, 13, F)) + ([12] if 12 % F else [])
    assert stats["checks"] == 12


def test_debug_check_detects_overflow(case):
    m, basis, _, src = case
    plan = make_plan(m, basis, debug=True)
    it = DeferredIterator(m, src, plan)
    it.bound = 1          # lie about the bound: the check must notice
    with pytest.raises(AccumulationOverflow):
        it.step()


def test_permutation_matrix_never_reduces(basis217):
    n = 20
    perm = CooMatrix.from_triplets(n, n, range(n), [(i + 1) % n for i in range(n)], [1] * n)
    plan = make_plan(perm, basis217)
    assert plan.F == UNBOUNDED
    values, src = vec(basis217, n, 5)
    stats = new_stats()
    out = spmv_iterate(perm, src, 50, basis217, plan, stats=stats)
    assert stats["reductions"] == 0
    assert out.to_ints() == [values[(i + 50) % n] for i in range(n)]


# -- benchmark -------------------------------------------------------------------------

def test_benchmark_accounting(case):
    m, basis, _, _ = case
    plan = make_plan(m, basis)
    rep = benchmark(m, basis, plan, 8)
    assert rep.ops_per_iteration == 2 * m.nnz * 2 * basis.n == operation_count(m.nnz, basis.n)
    assert rep.total_ops == 8 * rep.ops_per_iteration
    assert rep.reduction_frequency == f"1/{plan.F}"
    assert rep.reductions == 8 // plan.F
    twice = benchmark(m, basis, plan, 16)
    assert twice.total_ops == 2 * rep.total_ops
    assert rep.as_record(timing=False) == benchmark(m, basis, plan, 8).as_record(timing=False)
    assert 0 < rep.reduction_share < 1


def test_operation_count_large_matrix():
    assert operation_count(65 * 10**6, 5) == 13 * 10**8


def test_benchmark_rejects_zero_iterations(case):
    m, basis, _, _ = case
    with pytest.raises(ValueError):
        benchmark(m, basis, make_plan(m, basis), 0)
