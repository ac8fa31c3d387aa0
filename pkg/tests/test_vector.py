import random

import numpy as np
import pytest

from rnslinalg.rns import rns_add, rns_addmul, rns_from_int, rns_mod_reduce, int_from_rns
from rnslinalg.vector import Channels, RnsVector, batch_reduce, canonicalize


@pytest.fixture(params=["integer", "float"])
def basis(request, basis217, basis217f):
    return basis217 if request.param == "integer" else basis217f


def _relaxed_and_normalized(b, rnd, size):
    top = (1 << b.k) - 1
    x = [[rnd.choice([rnd.randrange(top + 1), top, p, p - 1, 0]) for p in b.moduli]
         for _ in range(size)]
    y = [[rnd.choice([rnd.randrange(p), p - 1, 0, 1]) for p in b.moduli] for _ in range(size)]
    return x, y


def test_channel_ops_match_scalar(basis):
    b = basis
    rnd = random.Random(4)
    ch = Channels(b)
    dt = np.float64 if b.flavor == "float" else np.uint64
    x, y = _relaxed_and_normalized(b, rnd, 400)
    lam_max = (1 << 31) - 1
    lam = [rnd.choice([1, 2, lam_max, rnd.randrange(1, lam_max)]) for _ in range(400)]
    X, Y = np.array(x, dtype=dt), np.array(y, dtype=dt)
    L = np.array(lam, dtype=dt).reshape(-1, 1)
    added, muls = ch.add(X, Y), ch.addmul(X, L, Y)
    for i in range(400):
        for j in range(b.n):
            assert int(added[i, j]) == rns_add(b, j, x[i][j], y[i][j])
            assert int(muls[i, j]) == rns_addmul(b, j, x[i][j], lam[i], y[i][j])


def test_complement_and_normalize(basis217):
    ch = Channels(basis217)
    p = ch.p
    y = np.array([[0] * 5, [1] * 5], dtype=np.uint64)
    comp = ch.complement(y)
    assert comp[0].tolist() == [0] * 5
    assert comp[1].tolist() == (p - np.uint64(1)).tolist()
    top = np.full((1, 5), (1 << 64) - 1, dtype=np.uint64)
    assert ch.normalize(top)[0, 0] == 58


def test_vector_conversions(basis):
    rnd = random.Random(1)
    vals = [rnd.randrange(basis.P) for _ in range(50)]
    v = RnsVector.from_ints(basis, vals)
    assert v.to_ints() == vals
    assert v.value(7) == vals[7]
    assert v.element(3) == rns_from_int(basis, vals[3])
    assert v.is_normalized()
    with pytest.raises(ValueError, match="out of RNS range"):
        RnsVector.from_ints(basis, [basis.P])


def test_batch_reduce_matches_scalar(basis217):
    b = basis217
    rnd = random.Random(2)
    vals = [rnd.randrange(b.P // 2) for _ in range(200)]
    v = RnsVector.from_ints(b, vals)
    out = batch_reduce(v)
    for i, x in enumerate(vals):
        assert out.element(i) == rns_mod_reduce(b, v.element(i))
        assert int_from_rns(b, out.element(i)) % b.ell == x % b.ell
    assert [x % b.ell for x in vals] == canonicalize(v).to_ints()


def test_batch_reduce_float(basis217f):
    b = basis217f
    rnd = random.Random(3)
    vals = [rnd.randrange(b.P // 2) for _ in range(100)]
    out = batch_reduce(RnsVector.from_ints(b, vals))
    assert out.data.dtype == np.float64
    for x, z in zip(vals, out.to_ints()):
        assert z % b.ell == x % b.ell and z < b.reduce_bound


def test_shape_checked(basis217):
    with pytest.raises(ValueError):
        RnsVector(basis217, np.zeros((3, 4), dtype=np.uint64))
