import json
import random

import pytest

from rnslinalg import matrix as mx
from rnslinalg.matrix import CooMatrix
from rnslinalg.oracle import oracle_spmv_mod
from rnslinalg.params import ELL_217
from rnslinalg.rns import build_basis
from rnslinalg.spmv import make_plan
from rnslinalg.vector import RnsVector
from rnslinalg.wiedemann import (
    GeneratorPoly,
    Halted,
    SolverError,
    berlekamp_massey,
    block_krylov,
    block_sequence_length,
    check_kernel,
    kernel_scan,
    krylov,
    load_checkpoint,
    mksol,
    random_vector,
    sequence_length,
    solve,
)

ELL = ELL_217


def planted(order, seed, extra=8):
    rnd = random.Random(seed)
    coeffs = [rnd.randrange(ELL) for _ in range(order)] + [1]
    seq = [rnd.randrange(ELL) for _ in range(order)]
    while len(seq) < 2 * order + extra:
        i = len(seq) - order
        seq.append(-sum(c * seq[i + j] for j, c in enumerate(coeffs[:-1])) % ELL)
    return coeffs, seq


def eye(n):
    return CooMatrix.from_triplets(n, n, range(n), range(n), [1] * n)


def powers(A, y, count):
    out, v = [y], y
    for _ in range(count - 1):
        v = oracle_spmv_mod(A, v, ELL)
        out.append(v)
    return out


@pytest.fixture(scope="module")
def small():
    A = mx.gen_ffs_like(50, 6, seed=31)
    basis = build_basis(ELL, r=int(mx.row_norms(A).max()))
    return A, basis


# -- berlekamp-massey ---------------------------------------------------------------------

def test_bm_constant():
    F = berlekamp_massey([7] * 10, ELL)
    assert F.coeffs == [ELL - 1, 1]


def test_bm_fibonacci():
    fib = [0, 1]
    while len(fib) < 20:
        fib.append((fib[-1] + fib[-2]) % ELL)
    assert berlekamp_massey(fib, ELL).coeffs == [ELL - 1, ELL - 1, 1]


def test_bm_zero_and_short():
    assert berlekamp_massey([0] * 6, ELL).coeffs == [1]
    with pytest.raises(ValueError, match="insufficient sequence"):
        berlekamp_massey([], ELL)
    _, seq = planted(12, 1, extra=0)
    with pytest.raises(ValueError, match="insufficient sequence"):
        berlekamp_massey(seq[:15], ELL)


@pytest.mark.parametrize("order", [1, 2, 12, 64])
def test_bm_planted(order):
    coeffs, seq = planted(order, order)
    F = berlekamp_massey(seq, ELL)
    assert F.degree == order
    assert F.coeffs == coeffs
    assert F.annihilates(seq)


def test_bm_valuation():
    F = GeneratorPoly([0, 0, 5, 1], ELL)
    assert F.valuation == 2 and F.degree == 3


# -- krylov ---------------------------------------------------------------------------

def test_krylov_identity_and_zero(basis217):
    y = random_vector(basis217, 5, 1)
    seq = krylov(eye(5), 2, y, 8, basis217)
    assert seq.values == [y.value(2)] * 8
    zero = CooMatrix.from_triplets(5, 5, [], [], [])
    seq = krylov(zero, 2, y, 8, basis217)
    assert seq.values == [y.value(2)] + [0] * 7
    with pytest.raises(IndexError):
        krylov(eye(5), 5, y, 3, basis217)


def test_krylov_matches_oracle(small):
    A, basis = small
    y = random_vector(basis, 50, 4)
    seq = krylov(A, 7, y, 101, basis)
    expect = [v[7] for v in powers(A, y.to_ints(), 101)]
    assert seq.values == expect


# -- mksol and kernel checks ------------------------------------------------------------

def test_mksol_trivial(basis217):
    y = random_vector(basis217, 6, 2)
    assert mksol(eye(6), GeneratorPoly([1], ELL), y, basis217).to_ints() == y.to_ints()
    w = mksol(eye(6), GeneratorPoly([ELL - 1, 1], ELL), y, basis217)
    assert w.to_ints() == [0] * 6


def test_mksol_matches_oracle(small):
    A, basis = small
    y = random_vector(basis, 50, 5)
    rnd = random.Random(6)
    F = GeneratorPoly([rnd.randrange(ELL) for _ in range(9)] + [1], ELL)
    expect = [0] * 50
    for f, p in zip(F.coeffs, powers(A, y.to_ints(), 10)):
        expect = [(e + f * v) % ELL for e, v in zip(expect, p)]
    assert mksol(A, F, y, basis).to_ints() == expect


def test_check_kernel(basis217):
    A = mx.gen_ffs_like(30, 4, seed=3)
    assert not check_kernel(A, [0] * 30, basis217)
    # planted kernel: last column is minus the sum of the first two
    n = 4
    B = CooMatrix.from_triplets(n, 3, [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3],
                                [0, 1, 2] * 4, [1, 2, -3, 4, 1, -5, 2, 2, -4, 1, 1, -2])
    assert check_kernel(B, [1, 1, 1], basis217)
    assert not check_kernel(B, [1, 2, 3], basis217)
    rnd = random.Random(0)
    assert not check_kernel(A, [rnd.randrange(ELL) for _ in range(30)], basis217)


def test_kernel_scan_on_singular(small):
    _, basis = small
    A = mx.make_singular(mx.gen_ffs_like(40, 6, seed=8), seed=8)
    basis = build_basis(ELL, r=int(mx.row_norms(A).max()))
    plan = make_plan(A, basis)
    y = random_vector(basis, 40, 3)
    seq = krylov(A, 0, y, sequence_length(40), basis, plan)
    F = berlekamp_massey(seq, ELL)
    assert F.valuation >= 1
    w, t, _ = kernel_scan(A, F, y, plan)
    assert w is not None and t <= F.valuation and check_kernel(A, w, basis)


# -- solve ------------------------------------------------------------------------------

def singular(n, seed, weight=10):
    return mx.make_singular(mx.gen_ffs_like(n, weight, seed=seed), seed=seed)


def test_solve_singular_100():
    A = singular(100, 1)
    w, rep = solve(A, ELL, seed=1)
    assert check_kernel(A, w, ELL)
    assert rep.retries <= 1
    assert rep.krylov_iterations == sequence_length(100) - 1


def test_solve_deterministic():
    A = singular(60, 2)
    w1, r1 = solve(A, ELL, seed=5)
    w2, r2 = solve(A, ELL, seed=5)
    assert w1 == w2
    assert r1.as_record(timing=False) == r2.as_record(timing=False)


def test_solve_nonsingular_fails():
    n = 30
    rnd = random.Random(1)
    entries = {(i, i): 1 for i in range(n)}
    for _ in range(60):
        i, j = sorted(rnd.sample(range(n), 2))
        entries[(i, j)] = rnd.choice([-2, -1, 1, 3])
    rows, cols = zip(*entries)
    A = CooMatrix.from_triplets(n, n, rows, cols, list(entries.values()))
    with pytest.raises(SolverError, match="no kernel vector found"):
        solve(A, ELL, seed=0, retries=2)


def test_solve_rejects_rectangular():
    A = CooMatrix.from_triplets(2, 3, [0], [0], [1])
    with pytest.raises(ValueError):
        solve(A, ELL)


def test_checkpoint_resume_bit_exact(tmp_path):
    A = singular(50, 3)
    w_ref, rep_ref = solve(A, ELL, seed=7, checkpoint=str(tmp_path / "ref.ckpt"),
                           checkpoint_every=16)
    ckpt = str(tmp_path / "run.ckpt")
    for halt in (40, 130):
        with pytest.raises(Halted):
            solve(A, ELL, seed=7, checkpoint=ckpt, checkpoint_every=16, halt_after=halt)
        state = load_checkpoint(ckpt)
        assert state["phase"] == ("krylov" if halt < 100 else "mksol")
        w, rep = solve(A, ELL, seed=7, resume=ckpt)
        assert w == w_ref
        assert rep.as_record(timing=False) == rep_ref.as_record(timing=False)


def test_resume_rejects_other_matrix(tmp_path):
    A = singular(30, 4)
    ckpt = str(tmp_path / "c.ckpt")
    with pytest.raises(Halted):
        solve(A, ELL, seed=1, checkpoint=ckpt, checkpoint_every=8, halt_after=8)
    with pytest.raises(ValueError):
        solve(singular(30, 5), ELL, seed=1, resume=ckpt)
    assert json.load(open(ckpt))["step"] == 8


# -- block krylov -------------------------------------------------------------------------

def test_block_degenerates_to_scalar(small):
    A, basis = small
    blk = block_krylov(A, 1, 1, [11], basis)
    y = random_vector(basis, 50, 11)
    assert len(blk) == block_sequence_length(50, 1, 1) == 50 + 50 + 16
    assert blk.column(0, 0) == krylov(A, 0, y, len(blk), basis).values


def test_block_cells_match_oracle():
    A = mx.gen_ffs_like(40, 5, seed=12)
    basis = build_basis(ELL, r=int(mx.row_norms(A).max()))
    blk = block_krylov(A, 2, 2, [1, 2], basis)
    assert len(blk) == 20 + 20 + 16
    for v, seed in enumerate((1, 2)):
        pw = powers(A, random_vector(basis, 40, seed).to_ints(), 30)
        for t in range(30):
            for u in range(2):
                assert blk.terms[t][u][v] == pw[t][u]


def test_block_production_parameters(small):
    A, basis = small
    blk = block_krylov(A, 8, 4, range(4), basis)
    assert len(blk) == 13 + 7 + 16
    assert len(blk.terms[0]) == 8 and len(blk.terms[0][0]) == 4


@pytest.mark.parametrize("m, n_blk", [(0, 1), (1, 0), (65, 1), (1, 65)])
def test_block_parameter_range(small, m, n_blk):
    A, basis = small
    with pytest.raises(ValueError):
        block_krylov(A, m, n_blk, range(max(n_blk, 1)), basis)
