import random

import pytest
from hypothesis import given, strategies as st

from rnslinalg.matrix import CooMatrix, gen_ffs_like
from rnslinalg.oracle import dense_rows, mp_spmv, mp_spmv_iterate, oracle_mod, oracle_spmv_mod
from rnslinalg.params import ELL_217


def test_oracle_mod_examples():
    assert oracle_mod(0, 7) == 0
    assert oracle_mod(7, 7) == 0
    assert oracle_mod(1 << 64, (1 << 64) - 59) == 59


def test_oracle_mod_zero_modulus():
    with pytest.raises(ZeroDivisionError, match="zero modulus"):
        oracle_mod(5, 0)


@given(st.integers(min_value=-(1 << 300), max_value=1 << 300), st.integers(1, 1 << 256))
def test_oracle_mod_range_and_divisibility(x, m):
    r = oracle_mod(x, m)
    assert 0 <= r < m
    assert (x - r) % m == 0


def test_spmv_identity_and_negation():
    eye = CooMatrix.from_triplets(3, 3, [0, 1, 2], [0, 1, 2], [1, 1, 1])
    assert oracle_spmv_mod(eye, [4, 5, 6], 7) == [4, 5, 6]
    neg = CooMatrix.from_triplets(1, 1, [0], [0], [-1])
    assert oracle_spmv_mod(neg, [3], 7) == [4]


def test_spmv_dimension_mismatch():
    eye = CooMatrix.from_triplets(2, 2, [0, 1], [0, 1], [1, 1])
    with pytest.raises(ValueError):
        oracle_spmv_mod(eye, [1, 2, 3], 7)


def test_spmv_against_dense_rows():
    m = gen_ffs_like(50, 8, seed=11)
    rnd = random.Random(3)
    v = [rnd.randrange(ELL_217) for _ in range(50)]
    rows = dense_rows(m)
    expect = [sum(a * b for a, b in zip(row, v)) % ELL_217 for row in rows]
    assert oracle_spmv_mod(m, v, ELL_217) == expect


def test_spmv_linearity():
    m = gen_ffs_like(40, 6, seed=2)
    rnd = random.Random(9)
    u = [rnd.randrange(ELL_217) for _ in range(40)]
    v = [rnd.randrange(ELL_217) for _ in range(40)]
    s = [(a + b) % ELL_217 for a, b in zip(u, v)]
    left = oracle_spmv_mod(m, s, ELL_217)
    right = [(a + b) % ELL_217 for a, b in
             zip(oracle_spmv_mod(m, u, ELL_217), oracle_spmv_mod(m, v, ELL_217))]
    assert left == right


def test_mp_spmv_is_signed_exact():
    m = CooMatrix.from_triplets(1, 2, [0, 0], [0, 1], [2, -5])
    assert mp_spmv(m, [3, 4]) == [-14]


@pytest.mark.parametrize("accumulate", [1, 3])
def test_mp_iterate_matches_repeated_oracle(accumulate):
    m = gen_ffs_like(30, 5, seed=4)
    rnd = random.Random(1)
    v = [rnd.randrange(ELL_217) for _ in range(30)]
    expect = v
    for _ in range(7):
        expect = oracle_spmv_mod(m, expect, ELL_217)
    assert mp_spmv_iterate(m, v, ELL_217, 7, accumulate=accumulate) == expect
