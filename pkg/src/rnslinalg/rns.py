"""
RNS basis construction and residue-level arithmetic.

An element of Z/lZ is carried as n residues modulo pseudo-Mersenne moduli
p_j = 2^k - c_j.  Residues are kept in the relaxed range [0, 2^k) rather than
[0, p_j); the add/addmul primitives below accept and return relaxed values.

Two flavors exist: "integer" (k = 64, residues are machine words) and
"float" (k = 52, residues are exact integers held in IEEE doubles).

Reduction modulo l happens inside the RNS via Bernstein's method: with
gamma_i = |x_i * P_i^-1|_{p_i},

    x = sum(gamma_i * P_i) - alpha * P,     alpha = floor(sum(gamma_i / p_i))

and alpha is estimated from the top s bits of each gamma_i plus a correction
term Delta.  The estimate is exact whenever 0 <= x < (1 - Delta) * P.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

from sympy import isprime

SUPPORTED_K = {"integer": 64, "float": 52}
C_LIMIT_BITS = 8
DEFAULT_S = 16

# Sentinel returned by max_accumulation_count when products never grow.
UNBOUNDED = math.inf


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class RnsBasis:
    """Immutable RNS context: moduli, Bernstein parameters and tables.

    ``delta_num`` is Delta scaled by 2^s, so Delta = delta_num / 2^s exactly.
    ``alpha_p_mod_ell_rns[a - 1]`` holds the residues of |a*P|_l, a in 1..n-1.
    """

    k: int
    flavor: str
    ell: int
    c: tuple
    moduli: tuple
    P: int
    s: int
    delta_num: int
    k0: int
    inv_P_table: tuple
    Pi_mod_ell_rns: tuple
    alpha_p_mod_ell_rns: tuple

    @property
    def n(self):
        return len(self.moduli)

    @property
    def delta(self):
        return Fraction(self.delta_num, 1 << self.s)

    @property
    def reduce_bound(self):
        """Upper bound n * 2^k * l on the value returned by rns_mod_reduce."""
        return self.n * (1 << self.k) * self.ell

    def below_cap(self, x):
        """True iff x < (1 - Delta) * P, the reduction input limit."""
        return (x << self.s) < ((1 << self.s) - self.delta_num) * self.P

    @property
    def epsilon(self):
        return Fraction(sum(self.c), 1 << self.k)

    @property
    def truncation_error(self):
        # delta in Bernstein's bound
        return Fraction(self.n * ((1 << (self.k - self.s)) - 1), 1 << self.k)

    def check(self):
        """Assert every structural invariant of the basis; returns self."""
        for j, (p, c) in enumerate(zip(self.moduli, self.c)):
            assert p == (1 << self.k) - c
            assert 0 < c < (1 << self.k0)
            assert (self.inv_P_table[j] * (self.P // p)) % p == 1
            for q in self.moduli[j + 1:]:
                assert math.gcd(p, q) == 1
        assert math.prod(self.moduli) == self.P
        assert self.epsilon + self.truncation_error <= self.delta < 1
        assert 1 <= self.s <= self.k
        assert self.below_cap(self.reduce_bound)
        return self

    def describe(self):
        """Text form of the basis; parse back with ``parse_basis``."""
        return "\n".join([
            "rns-basis v1",
            f"flavor {self.flavor}",
            f"k {self.k}",
            f"n {self.n}",
            "c " + ",".join(str(c) for c in self.c),
            f"ell {self.ell:x}",
            f"delta {self.delta_num}/{1 << self.s}",
            f"s {self.s}",
        ]) + "\n"


def _pick_offsets(k, count):
    """First ``count`` offsets c (scanned upward, c < 2^8) with 2^k - c usable.

    Primes come first.  Once they run out the scan restarts and admits any
    2^k - c coprime to everything chosen so far.
    """
    limit = 1 << C_LIMIT_BITS
    primes = [c for c in range(1, limit) if isprime((1 << k) - c)]
    chosen = primes[:count]
    if len(chosen) < count:
        for c in range(1, limit):
            if len(chosen) == count:
                break
            p = (1 << k) - c
            if c not in chosen and all(math.gcd(p, (1 << k) - d) == 1 for d in chosen):
                chosen.append(c)
    if len(chosen) < count:
        raise BasisError(f"no {count} coprime moduli 2^{k} - c with c < 2^{C_LIMIT_BITS}")
    return chosen


def make_basis(ell, c, k=64, flavor="integer", s=DEFAULT_S, delta_num=None):
    """Assemble a basis from explicit offsets, computing every table."""
    if flavor not in SUPPORTED_K:
        raise BasisError(f"unknown flavor {flavor!r}")
    if k != SUPPORTED_K[flavor]:
        raise BasisError(f"k={k} unsupported for {flavor} flavor (expected {SUPPORTED_K[flavor]})")
    if delta_num is None:
        delta_num = 1 << (s - 1)
    c = tuple(int(x) for x in c)
    moduli = tuple((1 << k) - x for x in c)
    P = math.prod(moduli)
    inv = tuple(pow(P // p, -1, p) for p in moduli)
    pi_rows = tuple(tuple(((P // pi) % ell) % pj for pj in moduli) for pi in moduli)
    alpha_rows = tuple(
        tuple(((a * P) % ell) % pj for pj in moduli) for a in range(1, len(moduli))
    )
    return RnsBasis(
        k=k, flavor=flavor, ell=ell, c=c, moduli=moduli, P=P, s=s,
        delta_num=delta_num, k0=C_LIMIT_BITS, inv_P_table=inv,
        Pi_mod_ell_rns=pi_rows, alpha_p_mod_ell_rns=alpha_rows,
    )


def build_basis(ell, r=1, k=64, flavor="integer"):
    """Smallest basis with r * n * 2^k * l < (1 - Delta) * P.

    Moduli are added one at a time; with Delta = 1/2 this always leaves at
    least one modulus of headroom above l for the reduction output.
    """
    if ell < 3:
        raise BasisError("l must be a prime >= 3")
    if r < 1:
        raise BasisError("row norm bound r must be >= 1")
    if flavor not in SUPPORTED_K or k != SUPPORTED_K[flavor]:
        raise BasisError(f"k={k} unsupported for {flavor} flavor")
    n = 1
    while True:
        offsets = _pick_offsets(k, n)
        basis = make_basis(ell, offsets, k=k, flavor=flavor)
        if basis.below_cap(r * basis.reduce_bound):
            return basis.check()
        n += 1


def parse_basis(text):
    """Inverse of RnsBasis.describe."""
    fields = {}
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0] != "rns-basis v1":
        raise BasisError("not an rns-basis v1 description")
    for ln in lines[1:]:
        key, _, value = ln.partition(" ")
        fields[key] = value.strip()
    try:
        num, den = (int(x) for x in fields["delta"].split("/"))
        s = int(fields["s"])
        if den != 1 << s:
            raise BasisError("delta denominator must be 2^s")
        c = [int(x) for x in fields["c"].split(",")]
        basis = make_basis(
            int(fields["ell"], 16), c, k=int(fields["k"]), flavor=fields["flavor"],
            s=s, delta_num=num,
        )
    except KeyError as exc:
        raise BasisError(f"missing field {exc.args[0]!r}") from None
    if basis.n != int(fields["n"]):
        raise BasisError("n does not match the number of offsets")
    return basis.check()


# -- conversions -------------------------------------------------------------

def rns_from_int(basis, x):
    if x < 0 or x >= basis.P:
        raise ValueError("out of RNS range")
    return tuple(x % p for p in basis.moduli)


def int_from_rns(basis, x):
    """CRT reconstruction; relaxed residues are accepted."""
    P = basis.P
    acc = 0
    for xi, p, inv in zip(x, basis.moduli, basis.inv_P_table):
        acc += ((xi * inv) % p) * (P // p)
    return acc % P


def normalize(basis, x):
    # input < 2^k < 2 p_j, so one subtraction is enough
    return tuple(r - p if r >= p else r for r, p in zip(x, basis.moduli))


# -- integer flavor ------------------------------------------------------------

def _add_int(k, c, x, y):
    mask = (1 << k) - 1
    t = x + y
    z = t & mask
    if t >> k:
        z = (z + c) & mask
    return z


def _addmul_int(k, c, x, lam, y):
    mask = (1 << k) - 1
    t = x + lam * y
    lo, hi = t & mask, t >> k
    u = lo + c * hi
    z = u & mask
    if u >> k:
        # u - 2^k < c*hi <= (2^k0 - 1) * 2^(k-k0) - c, so z + c cannot wrap again
        z = z + c
        assert z <= mask
    return z


def rns_add(basis, j, x, y):
    """z = x + y (mod p_j) with x < 2^k, y < p_j; result < 2^k."""
    if basis.flavor == "float":
        return int(rns_add_float(float(basis.moduli[j]), float(x), float(y)))
    return _add_int(basis.k, basis.c[j], x, y)


def rns_addmul(basis, j, x, lam, y):
    """z = x + lam * y (mod p_j) for 0 < lam < 2^(k - k0)."""
    if basis.flavor == "float":
        return int(rns_addmul_float(
            float(basis.moduli[j]), float(basis.c[j]), float(x), float(lam), float(y)))
    return _addmul_int(basis.k, basis.c[j], x, lam, y)


def rns_submul(basis, j, x, lam, y):
    """z = x - lam * y (mod p_j), as an addmul with the complement p_j - y."""
    if y == 0:
        return x
    return rns_addmul(basis, j, x, lam, basis.moduli[j] - y)


# -- float flavor ----------------------------------------------------------------

_TWO52 = float(1 << 52)
_SPLITTER = float((1 << 27) + 1)


def _split(a):
    g = _SPLITTER * a
    hi = g - (g - a)
    return hi, a - hi


def two_product(a, b):
    """(p, e) with p = fl(a*b) and p + e = a*b exactly (Dekker, no FMA)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def veltkamp_split(t, bits=52):
    """Split t = hi + lo at the 2^bits boundary.

    hi is a multiple of 2^bits and 0 <= lo < 2^bits.  Scaling by a power of
    two and flooring are exact, so the split is error-free.
    """
    if not math.isfinite(t):
        raise ValueError("non-finite input")
    scale = math.ldexp(1.0, bits)
    hi = math.floor(t / scale) * scale
    return float(hi), t - hi


def rns_add_float(p, x, y):
    """x < 2^52, y < p: one exact double addition then a conditional -p."""
    z = x + y
    if z >= p:
        z -= p
    return z


def rns_addmul_float(p, c, x, lam, y):
    """z = x + lam * y (mod p) with p = 2^52 - c, lam < 2^44, all in doubles.

    The 96-bit product is split into (t_hi, t_lo) by two_product, t_hi into a
    multiple of 2^52 and a remainder; the 2^52 part folds to c.  Each of the
    three partial terms is below p and is added with rns_add_float, so every
    intermediate stays below 2^53 and is exact.
    """
    t_hi, t_lo = two_product(y, lam)
    hh, hl = veltkamp_split(t_hi, 52)
    folded = (hh / _TWO52) * c          # < 2^44 * 2^8 - c < p
    if hl >= p:
        hl -= p
    if t_lo < 0:
        t_lo += p                       # |t_lo| <= 2^42
    z = rns_add_float(p, x, folded)
    z = rns_add_float(p, z, hl)
    z = rns_add_float(p, z, t_lo)
    assert 0 <= z < _TWO52 and z == int(z)
    return z


# -- reduction modulo l ------------------------------------------------------------

def gammas(basis, x):
    """gamma_j = |x_j * |P_j^-1|_{p_j}|_{p_j} on normalized residues."""
    return tuple(
        ((xi % p) * inv) % p for xi, p, inv in zip(x, basis.moduli, basis.inv_P_table)
    )


def estimate_alpha(basis, g):
    """floor(sum(floor(g_i / 2^(k-s)) / 2^s) + Delta), in scaled integers."""
    shift = basis.k - basis.s
    return (sum(gi >> shift for gi in g) + basis.delta_num) >> basis.s


def rns_mod_reduce(basis, x):
    """Bernstein reduction: z = x (mod l) with value(z) < n * 2^k * l.

    Caller contract: the value X of x satisfies 0 <= X < (1 - Delta) * P.
    The output residues are fully reduced modulo their p_j.
    """
    g = gammas(basis, normalize(basis, x))
    alpha = estimate_alpha(basis, g)
    out = []
    for j, p in enumerate(basis.moduli):
        z = sum(gi * row[j] for gi, row in zip(g, basis.Pi_mod_ell_rns)) % p
        if alpha:
            z = (z - basis.alpha_p_mod_ell_rns[alpha - 1][j]) % p
        out.append(z)
    return tuple(out)


def max_accumulation_count(basis, r):
    """Largest F with r^F * n * 2^k * l < (1 - Delta) * P.

    r = 1 means products never grow; UNBOUNDED is returned.
    """
    if r < 1:
        raise ValueError("row norm must be >= 1")
    if r == 1:
        return UNBOUNDED
    bound = basis.reduce_bound * r
    if not basis.below_cap(bound):
        raise BasisError(f"basis too small for row norm {r}")
    f = 1
    while basis.below_cap(bound * r):
        bound *= r
        f += 1
    return f
