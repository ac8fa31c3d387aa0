"""
Kernel vectors of sparse singular matrices over Z/lZ (scalar Wiedemann).

    krylov            a_i = coordinate x of A^i y
    berlekamp_massey  minimal linear generator F of (a_i)
    mksol             w = sum_i A^i F_i y, Horner style
    solve             the retry loop around the three, with checkpoints

F usually has a factor X^v (A is singular), in which case F(A) y = 0 and
the kernel vector is one of the Horner states w_t = sum_{i>=t} A^(i-t) F_i y
for t <= v: the first non-zero one that A maps to zero.
"""

import hashlib
import json
import math
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .matrix_io import encode_binary
from .oracle import oracle_spmv_mod
from .rns import build_basis
from .spmv import DeferredIterator, default_plan, make_plan, new_stats
from .vector import RnsVector

MAX_BLOCK = 64
SEQUENCE_SLACK = 16
DEFAULT_RETRIES = 5
CHECKPOINT_VERSION = 1


class SolverError(RuntimeError):
    pass


class Halted(RuntimeError):
    """Raised after a checkpoint when a halt was requested."""

    def __init__(self, path, iteration):
        super().__init__(f"halted after iteration {iteration}, checkpoint in {path}")
        self.path = path
        self.iteration = iteration


@dataclass
class ScalarSequence:
    values: list
    x_index: int
    y_seed: object = None

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


@dataclass
class GeneratorPoly:
    """F_0 + F_1 X + ... + F_d X^d over Z/lZ, monic."""

    coeffs: list
    ell: int

    @property
    def degree(self):
        return len(self.coeffs) - 1

    @property
    def valuation(self):
        """Largest v with X^v dividing F."""
        return next(i for i, f in enumerate(self.coeffs) if f)

    def annihilates(self, seq):
        d, ell = self.degree, self.ell
        return all(
            sum(f * seq[i + j] for j, f in enumerate(self.coeffs)) % ell == 0
            for i in range(len(seq) - d)
        )


@dataclass
class BlockSequence:
    m: int
    n_blk: int
    terms: list          # terms[t][u][v] = coordinate u of A^t y_v

    def __len__(self):
        return len(self.terms)

    def column(self, u, v):
        return [t[u][v] for t in self.terms]


def sequence_length(n):
    return 2 * n + SEQUENCE_SLACK


def block_sequence_length(n, m, n_blk):
    return math.ceil(n / n_blk) + math.ceil(n / m) + SEQUENCE_SLACK


def random_vector(basis, size, seed):
    rnd = random.Random(seed)
    return RnsVector.from_ints(basis, [rnd.randrange(basis.ell) for _ in range(size)])


def _plan_for(A, basis, plan):
    if plan is None:
        plan = default_plan(A, basis)
    elif plan.basis != basis:
        raise ValueError("plan built for a different basis")
    return plan


# -- krylov --------------------------------------------------------------------------

def krylov(A, x_index, y, length, basis=None, plan=None, checkpoint=None, state=None,
           stats=None):
    """a_i = (A^i y)[x_index] mod l for 0 <= i < length."""
    basis = basis or y.basis
    plan = _plan_for(A, basis, plan)
    if not 0 <= x_index < A.n_rows:
        raise IndexError(f"x_index {x_index} out of range for {A.n_rows} rows")
    if length < 1:
        raise ValueError("sequence length must be >= 1")
    if state is None:
        seq, vec = [y.value(x_index) % basis.ell], y
    else:
        seq, vec = list(state["sequence"]), state["vector"]
    it = DeferredIterator(A, vec, plan, stats=stats)
    while len(seq) < length:
        it.step()
        seq.append(it.coordinate(x_index))
        step = len(seq) - 1
        if checkpoint is not None and checkpoint.due(step):
            checkpoint.save("krylov", step, it.canonical(), {"sequence": seq})
    return ScalarSequence(seq, x_index)


# -- berlekamp-massey ------------------------------------------------------------------

def berlekamp_massey(a, ell):
    """Minimal monic F with sum_j F_j a_(i+j) = 0 mod l over the whole sequence."""
    a = [int(x) % ell for x in (a.values if isinstance(a, ScalarSequence) else a)]
    if not a:
        raise ValueError("insufficient sequence")
    C, B = [1], [1]
    L, shift, b = 0, 1, 1
    for i, ai in enumerate(a):
        d = ai
        for j in range(1, L + 1):
            d += C[j] * a[i - j]
        d %= ell
        if d == 0:
            shift += 1
            continue
        coef = d * pow(b, -1, ell) % ell
        T = C[:]
        if len(C) < len(B) + shift:
            C += [0] * (len(B) + shift - len(C))
        for j, bj in enumerate(B):
            C[j + shift] = (C[j + shift] - coef * bj) % ell
        if 2 * L <= i:
            L, B, b, shift = i + 1 - L, T, d, 1
        else:
            shift += 1
    if 2 * L > len(a):
        raise ValueError("insufficient sequence")
    C += [0] * (L + 1 - len(C))
    # connection polynomial C(x) = 1 + c_1 x + ... ; generator is its reverse
    return GeneratorPoly([C[L - j] % ell for j in range(L + 1)], ell)


# -- mksol --------------------------------------------------------------------------

def _horner(A, F, y, plan, stop=0, checkpoint=None, state=None, stats=None):
    """w_stop = sum_{i >= stop} A^(i - stop) F_i y, canonical."""
    basis = plan.basis
    y_ints = y.to_ints()
    if state is None:
        i, w = F.degree, _scaled(basis, F.coeffs[-1], y_ints)
    else:
        i, w = state["index"], state["vector"]
    it = DeferredIterator(A, w, plan, with_addend=True, stats=stats)
    while i > stop:
        i -= 1
        f = F.coeffs[i]
        it.step(_scaled(basis, f, y_ints) if f else None)
        done = F.degree - i
        if checkpoint is not None and i > stop and checkpoint.due(done):
            checkpoint.save("mksol", done, it.canonical(), {"index": i})
    return it.canonical()


def _scaled(basis, f, y_ints):
    ell = basis.ell
    return RnsVector.from_ints(basis, [f * v % ell for v in y_ints])


def mksol(A, F, y, basis=None, plan=None):
    """w = sum_i A^i F_i y mod l, canonical."""
    basis = basis or y.basis
    return _horner(A, F, y, _plan_for(A, basis, plan))


def _is_zero(vec):
    return not vec.data.any()


def kernel_scan(A, F, y, plan, checkpoint=None, state=None, stats=None):
    """First non-zero Horner state w_t (t <= valuation) with A w_t = 0.

    Returns (vector or None, t, products used by the scan).
    """
    t = F.valuation
    w = _horner(A, F, y, plan, stop=t, checkpoint=checkpoint, state=state, stats=stats)
    products = 0
    while t >= 0 and not _is_zero(w):
        it = DeferredIterator(A, w, plan, stats=stats)
        it.step()
        u = it.canonical()
        products += 1
        if _is_zero(u):
            return w, t, products
        w, t = u, t - 1
    return None, t, products


# -- verification ------------------------------------------------------------------------

def _as_ints(w):
    return w.to_ints() if isinstance(w, RnsVector) else [int(x) for x in w]


def check_kernel(A, w, basis):
    """True iff w != 0 and A w = 0 mod l, checked with the plain-integer oracle."""
    ell = basis if isinstance(basis, int) else basis.ell
    values = _as_ints(w)
    if len(values) != A.n_cols:
        return False
    if not any(v % ell for v in values):
        return False
    return not any(oracle_spmv_mod(A, values, ell))


# -- checkpoints --------------------------------------------------------------------------

def matrix_fingerprint(A):
    return hashlib.sha256(encode_binary(A)).hexdigest()


def _hex_list(values):
    return [format(int(v), "x") for v in values]


def _from_hex(items):
    return [int(x, 16) for x in items]


class Checkpointer:
    """Writes the solver state every ``every`` iterations of a phase."""

    def __init__(self, path, every, context, halt_after=None):
        if every < 1:
            raise ValueError("checkpoint interval must be >= 1")
        self.path = path
        self.every = every
        self.context = context
        self.halt_after = halt_after
        self.done_before = 0     # iterations of earlier phases and attempts
        self.stats = None
        self.report = None

    def due(self, step):
        return step % self.every == 0

    def save(self, phase, step, vector, extra):
        record = dict(self.context)
        record.update({
            "version": CHECKPOINT_VERSION,
            "phase": phase,
            "step": step,
            "vector": _hex_list(vector.to_ints()),
            "stats": {k: v for k, v in self.stats.items() if k != "reduced_at"},
            "report": self.report,
        })
        for key, value in extra.items():
            record[key] = _hex_list(value) if isinstance(value, list) else value
        tmp = f"{self.path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(record, fh)
        os.replace(tmp, self.path)
        total = self.done_before + step
        if self.halt_after is not None and total >= self.halt_after:
            raise Halted(self.path, total)


def load_checkpoint(path):
    with open(path) as fh:
        record = json.load(fh)
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    return record


# -- solve --------------------------------------------------------------------------------

TIMING_KEYS = ("krylov_time", "lingen_time", "mksol_time", "total_time")


@dataclass
class SolveReport:
    n: int
    attempts: int = 0
    krylov_iterations: int = 0
    mksol_iterations: int = 0
    scan_iterations: int = 0
    generator_degree: int = None
    valuation: int = None
    x_index: int = None
    kernel_state: int = None
    kernel_weight: int = 0
    spmv_count: int = 0
    reductions: int = 0
    failures: list = field(default_factory=list)
    krylov_time: float = 0.0
    lingen_time: float = 0.0
    mksol_time: float = 0.0
    total_time: float = 0.0

    @property
    def retries(self):
        return max(self.attempts - 1, 0)

    def as_record(self, timing=True):
        rec = {
            "n": self.n, "attempts": self.attempts, "retries": self.retries,
            "krylov_iterations": self.krylov_iterations,
            "mksol_iterations": self.mksol_iterations,
            "scan_iterations": self.scan_iterations,
            "generator_degree": self.generator_degree, "valuation": self.valuation,
            "x_index": self.x_index, "kernel_state": self.kernel_state,
            "kernel_weight": self.kernel_weight, "spmv_count": self.spmv_count,
            "reductions": self.reductions, "failures": list(self.failures),
        }
        if timing:
            for key in TIMING_KEYS:
                rec[key] = getattr(self, key)
        return rec

    _COUNTS = ("attempts", "krylov_iterations", "mksol_iterations", "scan_iterations",
               "spmv_count", "reductions")

    def counts(self):
        return {k: getattr(self, k) for k in self._COUNTS} | {"failures": list(self.failures)}

    def restore(self, counts):
        for k in self._COUNTS:
            setattr(self, k, counts[k])
        self.failures = list(counts["failures"])


def _draw(basis, n, seed, attempt):
    """y and x_index of one attempt; depends only on (seed, attempt)."""
    rnd = random.Random(f"{seed}/{attempt}")
    values = [rnd.randrange(basis.ell) for _ in range(n)]
    support = [i for i, v in enumerate(values) if v]
    return RnsVector.from_ints(basis, values), rnd.choice(support)


def solve(A, ell, seed=0, k=64, flavor="integer", basis=None, plan=None, fmt="csr",
          workers=1, retries=DEFAULT_RETRIES, checkpoint=None, checkpoint_every=None,
          halt_after=None, resume=None):
    """A kernel vector of the square matrix A over Z/lZ.

    Returns (list of canonical ints, SolveReport).  Each attempt draws a
    fresh y; after ``retries`` failed retries a SolverError is raised.
    ``resume`` is a checkpoint path; the resumed run follows the same path
    as an uninterrupted one and returns the same vector.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("matrix must be square")
    n = A.n_rows
    if basis is None:
        r = int(max(1, _max_row_norm(A)))
        basis = build_basis(ell, r=r, k=k, flavor=flavor)
    elif basis.ell != ell:
        raise ValueError("basis built for a different modulus")
    if plan is None:
        plan = make_plan(A, basis, fmt=fmt, workers=workers)
    fingerprint = matrix_fingerprint(A)
    t_start = time.perf_counter()
    report = SolveReport(n=n)
    state = None
    first_attempt = 0
    if resume is not None:
        state = load_checkpoint(resume)
        if state["basis"] != basis.describe() or state["matrix"] != fingerprint:
            raise ValueError("checkpoint does not match this matrix and basis")
        if state["seed"] != seed:
            raise ValueError("checkpoint was written with a different seed")
        first_attempt = state["attempt"]
        report.restore(state["report"])
        checkpoint = checkpoint or resume
        checkpoint_every = state["every"]
    ckpt = None
    if checkpoint is not None and checkpoint_every:
        context = {"basis": basis.describe(), "matrix": fingerprint, "seed": seed,
                   "every": checkpoint_every}
        ckpt = Checkpointer(checkpoint, checkpoint_every, context, halt_after)

    length = sequence_length(n)
    for attempt in range(first_attempt, retries + 1):
        stats = new_stats()
        y, x_index = _draw(basis, n, seed, attempt)
        resuming = state is not None and state["attempt"] == attempt
        if resuming:
            for key in ("spmv", "reductions", "checks"):
                stats[key] = state["stats"][key]
        report.attempts = attempt + 1
        report.x_index = x_index
        if ckpt is not None:
            ckpt.context["attempt"] = attempt
            ckpt.stats = stats
            ckpt.done_before = sum(_attempt_iterations(report))

        phase = state["phase"] if resuming else "krylov"
        t0 = time.perf_counter()
        if phase == "krylov":
            kstate = None
            if resuming:
                kstate = {"sequence": _from_hex(state["sequence"]),
                          "vector": RnsVector.from_ints(basis, _from_hex(state["vector"]))}
            if ckpt is not None:
                ckpt.report = report.counts()
            seq = krylov(A, x_index, y, length, basis, plan, checkpoint=ckpt, state=kstate,
                         stats=stats)
            report.krylov_iterations += length - 1
            report.krylov_time += time.perf_counter() - t0
            t1 = time.perf_counter()
            F = berlekamp_massey(seq, ell)
            report.lingen_time += time.perf_counter() - t1
            hstate = None
        else:
            F = GeneratorPoly(_from_hex(state["generator"]), ell)
            hstate = {"index": state["index"],
                      "vector": RnsVector.from_ints(basis, _from_hex(state["vector"]))}
        state = None
        report.generator_degree = F.degree
        report.valuation = F.valuation

        t2 = time.perf_counter()
        if ckpt is not None:
            ckpt.report = report.counts()
            ckpt.context["generator"] = _hex_list(F.coeffs)
            ckpt.done_before = sum(_attempt_iterations(report))
        w, t, scanned = kernel_scan(A, F, y, plan, checkpoint=ckpt, state=hstate, stats=stats)
        if ckpt is not None:
            ckpt.context.pop("generator", None)
        report.mksol_iterations += F.degree - F.valuation
        report.scan_iterations += scanned
        report.mksol_time += time.perf_counter() - t2
        report.spmv_count = stats["spmv"]
        report.reductions = stats["reductions"]

        if w is not None and check_kernel(A, w, basis):
            values = w.to_ints()
            report.kernel_state = t
            report.kernel_weight = sum(1 for v in values if v)
            report.total_time = time.perf_counter() - t_start
            return values, report
        report.failures.append("zero Horner states" if w is None else "not in kernel")
    report.total_time = time.perf_counter() - t_start
    raise SolverError("no kernel vector found (matrix may be non-singular)")


def _attempt_iterations(report):
    return (report.krylov_iterations, report.mksol_iterations)


def _max_row_norm(A):
    from .matrix import row_norms
    return row_norms(A).max() if A.n_rows else 1


# -- block krylov ------------------------------------------------------------------------

def block_krylov(A, m, n_blk, y_seeds, basis, plan=None, workers=None):
    """Terms t of the m x n_blk sequence x_u^T A^t y_v, x_u = e_u.

    Every column v is produced by an independent worker holding its own
    iterate; the workers share only the matrix and the basis.
    """
    if not (1 <= m <= MAX_BLOCK and 1 <= n_blk <= MAX_BLOCK):
        raise ValueError(f"blocking parameters must lie in [1, {MAX_BLOCK}]")
    if m > A.n_rows:
        raise ValueError("m exceeds the matrix dimension")
    plan = _plan_for(A, basis, plan)
    ys = [s if isinstance(s, RnsVector) else random_vector(basis, A.n_cols, s)
          for s in y_seeds]
    if len(ys) != n_blk:
        raise ValueError(f"expected {n_blk} y vectors, got {len(ys)}")
    length = block_sequence_length(A.n_rows, m, n_blk)
    ell = basis.ell

    def column(y):
        head = [v % ell for v in y.to_ints()[:m]]
        out = [head]
        it = DeferredIterator(A, y, plan)
        for _ in range(length - 1):
            it.step()
            out.append([it.coordinate(u) for u in range(m)])
        return out

    with ThreadPoolExecutor(max_workers=workers or n_blk) as pool:
        columns = list(pool.map(column, ys))
    terms = [[[columns[v][t][u] for v in range(n_blk)] for u in range(m)]
             for t in range(length)]
    return BlockSequence(m, n_blk, terms)


__all__ = [
    "ScalarSequence", "GeneratorPoly", "BlockSequence", "SolveReport", "SolverError", "Halted",
    "krylov", "berlekamp_massey", "mksol", "kernel_scan", "check_kernel", "solve",
    "block_krylov", "random_vector", "sequence_length", "block_sequence_length",
    "matrix_fingerprint", "load_checkpoint",
]
