"""
RNS vectors and the array versions of the residue primitives.

A vector of N elements is an (N, n) array, element-major: element i owns the
n consecutive residues of row i.  Integer-flavor residues are uint64; float
flavor residues are float64 holding integers below 2^52.

The array kernels reproduce the scalar algorithms in ``rns`` bit for bit and
are what the SpMV engine runs.  The integer addmul builds the 128-bit
product from 32-bit limbs, so it requires lam < 2^32 (matrix coefficients
are signed 32-bit, hence |lam| < 2^31).
"""

import numpy as np

from .rns import int_from_rns

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO52 = float(1 << 52)
_INV_TWO52 = 1.0 / _TWO52
_SPLITTER = float((1 << 27) + 1)


def residue_dtype(basis):
    return np.float64 if basis.flavor == "float" else np.uint64


class Channels:
    """Per-channel constants as arrays, optionally restricted to a subset."""

    def __init__(self, basis, chans=None):
        self.basis = basis
        self.chans = np.arange(basis.n) if chans is None else np.asarray(chans)
        dt = residue_dtype(basis)
        self.p = np.array([basis.moduli[j] for j in self.chans], dtype=dt)
        self.c = np.array([basis.c[j] for j in self.chans], dtype=dt)
        self.is_float = basis.flavor == "float"

    def complement(self, y):
        """p - y, with 0 kept as 0 (y normalized)."""
        return np.where(y == 0, y, self.p - y)

    def add(self, x, y):
        if self.is_float:
            z = x + y
            return np.where(z >= self.p, z - self.p, z)
        z = x + y
        return z + self.c * (z < x)

    def addmul(self, x, lam, y):
        """lam has shape (m, 1); x, y have shape (m, nchan)."""
        if self.is_float:
            return _addmul_f64(x, lam, y, self.p, self.c)
        a = lam * (y & _M32)
        b = lam * (y >> _S32)
        lo = a + (b << _S32)
        hi = (b >> _S32) + (lo < a)
        lo2 = lo + x
        hi = hi + (lo2 < x)
        z = lo2 + self.c * hi
        return z + self.c * (z < lo2)

    def normalize(self, x):
        return np.where(x >= self.p, x - self.p, x)


def _two_product(a, b):
    p = a * b
    g = _SPLITTER * a
    ah = g - (g - a)
    al = a - ah
    g = _SPLITTER * b
    bh = g - (g - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _addmul_f64(x, lam, y, p, c):
    t_hi, t_lo = _two_product(y, lam)
    hh = np.floor(t_hi * _INV_TWO52)
    hl = t_hi - hh * _TWO52
    folded = hh * c
    hl = np.where(hl >= p, hl - p, hl)
    t_lo = np.where(t_lo < 0, t_lo + p, t_lo)
    z = x + folded
    z = np.where(z >= p, z - p, z)
    z = z + hl
    z = np.where(z >= p, z - p, z)
    z = z + t_lo
    return np.where(z >= p, z - p, z)


class RnsVector:
    """N elements of Z/lZ in RNS form, stored as an (N, n) residue array."""

    __slots__ = ("basis", "data")

    def __init__(self, basis, data):
        data = np.asarray(data, dtype=residue_dtype(basis))
        if data.ndim != 2 or data.shape[1] != basis.n:
            raise ValueError(f"expected shape (N, {basis.n}), got {data.shape}")
        self.basis = basis
        self.data = data

    @classmethod
    def zeros(cls, basis, size):
        return cls(basis, np.zeros((size, basis.n), dtype=residue_dtype(basis)))

    @classmethod
    def from_ints(cls, basis, values):
        values = [int(v) for v in values]
        if any(v < 0 or v >= basis.P for v in values):
            raise ValueError("out of RNS range")
        obj = np.array(values, dtype=object).reshape(-1, 1)
        mods = np.array(basis.moduli, dtype=object)
        res = obj % mods if len(values) else np.zeros((0, basis.n), dtype=object)
        return cls(basis, res.astype(residue_dtype(basis)))

    def __len__(self):
        return self.data.shape[0]

    def element(self, i):
        return tuple(int(r) for r in self.data[i])

    def to_ints(self):
        """Exact CRT value of every element, in [0, P)."""
        b = self.basis
        if len(self) == 0:
            return []
        g = _gammas_obj(b, self.data)
        weights = np.array([b.P // p for p in b.moduli], dtype=object)
        return [int(v) % b.P for v in g.dot(weights)]

    def value(self, i):
        return int_from_rns(self.basis, self.element(i))

    def normalized(self):
        return RnsVector(self.basis, Channels(self.basis).normalize(self.data))

    def is_normalized(self):
        return bool((self.data < Channels(self.basis).p).all())

    def copy(self):
        return RnsVector(self.basis, self.data.copy())

    def __eq__(self, other):
        return (
            isinstance(other, RnsVector)
            and self.basis == other.basis
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"RnsVector(N={len(self)}, n={self.basis.n}, flavor={self.basis.flavor})"


def _gammas_obj(basis, data):
    mods = np.array(basis.moduli, dtype=object)
    inv = np.array(basis.inv_P_table, dtype=object)
    x = np.asarray(data)
    if basis.flavor == "float":
        x = x.astype(np.int64)
    x = x.astype(object)
    return ((x % mods) * inv) % mods


def batch_reduce(vec):
    """rns_mod_reduce applied to every element; output residues < p_j."""
    b = vec.basis
    if len(vec) == 0:
        return vec.copy()
    g = _gammas_obj(b, vec.data)
    shift = b.k - b.s
    alpha = ((g >> shift).sum(axis=1) + b.delta_num) >> b.s
    mods = np.array(b.moduli, dtype=object)
    table = np.array(b.Pi_mod_ell_rns, dtype=object)
    alpha_rows = np.array(((0,) * b.n,) + tuple(b.alpha_p_mod_ell_rns), dtype=object)
    z = (g.dot(table) - alpha_rows[alpha.astype(np.int64)]) % mods
    return RnsVector(b, z.astype(residue_dtype(b)))


def canonicalize(vec):
    """Exact reduction of every element to [0, l-1], back in RNS form."""
    b = vec.basis
    return RnsVector.from_ints(b, [v % b.ell for v in vec.to_ints()])


def scale_mod_ell(basis, scalar, values):
    """RNS form of (scalar * v) mod l for canonical integers v."""
    ell = basis.ell
    return RnsVector.from_ints(basis, [(scalar * v) % ell for v in values])
