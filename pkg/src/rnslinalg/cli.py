"""Command-line front end: ``rnslinalg <command> ...``."""

import argparse
import itertools
import json
import os
import sys

import numpy as np

from . import matrix as mx
from .matrix_io import MatrixFormatError, load_matrix, store_matrix
from .oracle import oracle_spmv_mod
from .params import ELL_217
from .rns import BasisError, build_basis
from .spmv import FORMATS, STRATEGIES, benchmark, make_plan, prepare, spmv
from .vector import RnsVector, batch_reduce
from .wiedemann import Halted, SolverError, check_kernel, solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VERIFY = 4
EXIT_SOLVER = 5
EXIT_HALTED = 6

WORKERS_ENV = "RNSLINALG_WORKERS"
KERNEL_HEADER = "# kernel mod {ell:x} dim {n}"


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------------

def parse_ell(text):
    """Hex modulus, or @path to a file holding it."""
    if text.startswith("@"):
        with open(text[1:]) as fh:
            text = fh.read()
    text = text.strip().lower()
    try:
        value = int(text[2:] if text.startswith("0x") else text, 16)
    except ValueError:
        raise UsageError(f"modulus must be hexadecimal, got {text!r}") from None
    if value < 3:
        raise UsageError("modulus must be an odd prime")
    return value


def default_workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def write_kernel(path, values, ell):
    lines = [KERNEL_HEADER.format(ell=ell, n=len(values))] + [format(v, "x") for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_kernel(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("# kernel mod "):
        raise UsageError(f"{path}: missing kernel header")
    head = lines[0].split()
    try:
        ell, n = int(head[3], 16), int(head[5])
        values = [int(x, 16) for x in lines[1:]]
    except (IndexError, ValueError):
        raise UsageError(f"{path}: malformed kernel file") from None
    if len(values) != n:
        raise UsageError(f"{path}: header says {n} coordinates, found {len(values)}")
    return ell, values


def _config(args):
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def emit(args, record, timing=None):
    """Print one JSON line (and append it to --report if given)."""
    out = {"command": args.command, "config": _config(args)}
    out.update(record)
    if timing is not None:
        out["timing"] = timing
    line = json.dumps(out, sort_keys=True)
    print(line)
    path = getattr(args, "report", None)
    if path:
        with open(path, "a") as fh:
            fh.write(line + "\n")


def _basis_for(args, m):
    r = int(mx.row_norms(m).max()) if m.n_rows else 1
    return build_basis(parse_ell(args.ell), r=max(r, 1), k=args.k, flavor=args.flavor)


# -- commands ----------------------------------------------------------------------------

def cmd_gen(args):
    m = mx.gen_ffs_like(args.n, args.row_weight, pct_pm1=args.pm1, max_coeff=args.max_coeff,
                        dense_cols=args.dense_cols, seed=args.seed)
    if args.singular:
        m = mx.make_singular(m, seed=args.seed)
    store_matrix(m, args.output, text=args.text or None)
    emit(args, {"result": {"n_rows": m.n_rows, "n_cols": m.n_cols, "nnz": m.nnz}})
    return EXIT_OK


def cmd_convert(args):
    m = load_matrix(args.input)
    result = {"nnz": m.nnz}
    if args.layout:
        basis = build_basis(ELL_217, r=max(1, int(mx.row_norms(m).max(initial=1))))
        plan = make_plan(m, basis, fmt=args.layout, compress=args.compress,
                         reorder=args.reorder, slice_size=args.slice_size)
        pm = prepare(m, plan)
        result["layout"] = type(pm).__name__
        if isinstance(pm, mx.EllMatrix):
            result["ell_width"] = pm.K
        elif isinstance(pm, mx.HybridMatrix):
            result["ell_width"] = pm.ell_part.K
            result["tail_nnz"] = pm.coo_tail.nnz
        elif isinstance(pm, mx.CompressedCsrMatrix):
            result["data_length"] = len(pm.data)
        m = pm.to_coo()
    store_matrix(m, args.output, text=args.text or None)
    emit(args, {"result": result})
    return EXIT_OK


def cmd_stats(args):
    m = load_matrix(args.input)
    st = mx.matrix_stats(m)
    rec = st.as_dict()
    if args.density:
        rec["col_density"] = list(st.col_density)
    emit(args, {"result": rec})
    return EXIT_OK


def _flag_sets(args):
    if args.sweep:
        return [dict(zip(("compress", "reorder", "balance"), bits))
                for bits in itertools.product((False, True), repeat=3)]
    return [{"compress": args.compress, "reorder": args.reorder, "balance": args.balance}]


def cmd_bench(args):
    m = load_matrix(args.input)
    basis = _basis_for(args, m)
    formats = FORMATS if args.formats == "all" else args.formats.split(",")
    for fmt in formats:
        if fmt not in FORMATS:
            raise UsageError(f"unknown format {fmt!r}")
        for flags in _flag_sets(args):
            if flags["compress"] and fmt != "csr":
                continue
            plan = make_plan(m, basis, fmt=fmt, workers=args.workers, strategy=args.strategy,
                             slice_size=args.slice_size, **flags)
            rep = benchmark(m, basis, plan, args.iterations, mp=args.mp)
            rec = rep.as_record(timing=False)
            timing = {k: v for k, v in rep.as_record().items() if k not in rec}
            emit(args, {"basis": basis.describe(), "result": rec}, timing)
    return EXIT_OK


def cmd_solve(args):
    m = load_matrix(args.input)
    ell = parse_ell(args.ell)
    try:
        values, rep = solve(
            m, ell, seed=args.seed, k=args.k, flavor=args.flavor, fmt=args.format,
            workers=args.workers, retries=args.retries, checkpoint=args.checkpoint,
            checkpoint_every=args.checkpoint_every, halt_after=args.halt_after,
            resume=args.resume)
    except Halted as exc:
        emit(args, {"result": {"halted": True, "iteration": exc.iteration}})
        print(str(exc), file=sys.stderr)
        return EXIT_HALTED
    except SolverError as exc:
        print(f"solve: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_kernel(args.output, values, ell)
    basis = build_basis(ell, r=max(1, int(mx.row_norms(m).max())), k=args.k, flavor=args.flavor)
    rec = rep.as_record(timing=False)
    timing = {k: v for k, v in rep.as_record().items() if k not in rec}
    emit(args, {"basis": basis.describe(), "result": rec}, timing)
    return EXIT_OK


def cmd_verify(args):
    m = load_matrix(args.input)
    ell, values = read_kernel(args.kernel)
    if args.ell and parse_ell(args.ell) != ell:
        raise UsageError("kernel file modulus differs from --ell")
    if len(values) != m.n_cols:
        print(f"verify: dimension mismatch ({len(values)} vs {m.n_cols})", file=sys.stderr)
        return EXIT_VERIFY
    if not any(v % ell for v in values):
        print("verify: zero vector", file=sys.stderr)
        emit(args, {"result": {"ok": False, "reason": "zero vector"}})
        return EXIT_VERIFY
    ok = check_kernel(m, values, ell)
    emit(args, {"result": {"ok": ok, "reason": None if ok else "not in kernel"}})
    if not ok:
        print("verify: vector is not in the kernel", file=sys.stderr)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_selftest(args):
    ell = parse_ell(args.ell)
    failures = 0
    checked = 0
    for i in range(args.count):
        rng = np.random.default_rng(args.seed + i)
        m = mx.gen_ffs_like(args.n, args.row_weight, seed=args.seed + i)
        r = int(mx.row_norms(m).max())
        basis = build_basis(ell, r=max(r, 1), k=args.k, flavor=args.flavor)
        values = [int(x) % ell for x in rng.integers(0, 1 << 62, size=m.n_cols)]
        src = RnsVector.from_ints(basis, values)
        expect = oracle_spmv_mod(m, values, ell)
        ref = None
        for fmt in FORMATS:
            plan = make_plan(m, basis, fmt=fmt, workers=args.workers)
            out = spmv(m, src, basis, plan, src_bound=basis.reduce_bound)
            got = [v % ell for v in batch_reduce(out).to_ints()]
            ref = out if ref is None else ref
            checked += 1
            if got != expect or out != ref:
                failures += 1
                print(f"selftest: mismatch on instance {i}, format {fmt}", file=sys.stderr)
    emit(args, {"result": {"checked": checked, "failures": failures}})
    return EXIT_OK if failures == 0 else EXIT_VERIFY


# -- parser ------------------------------------------------------------------------------

def _add_arith(p):
    p.add_argument("--ell", default=format(ELL_217, "x"),
                   help="prime modulus in hex, or @file (default: 217-bit test prime)")
    p.add_argument("--k", type=int, default=None, help="modulus width (64 integer, 52 float)")
    p.add_argument("--flavor", choices=("integer", "float"), default="integer")


def build_parser():
    ap = argparse.ArgumentParser(prog="rnslinalg",
                                 description="Exact sparse linear algebra over Z/lZ with RNS.")
    sub = ap.add_subparsers(dest="command", required=True)
    workers = dict(type=int, default=None,
                   help=f"worker threads (default: ${WORKERS_ENV} or 1)")

    p = sub.add_parser("gen", help="generate an FFS-like matrix")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--row-weight", type=float, default=100.0)
    p.add_argument("--pm1", type=float, default=0.927)
    p.add_argument("--max-coeff", type=int, default=32)
    p.add_argument("--dense-cols", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--singular", action="store_true", help="make one row dependent")
    p.add_argument("--text", action="store_true", help="write MatrixMarket text")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert", help="convert between file encodings and layouts")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--text", action="store_true")
    p.add_argument("--layout", choices=FORMATS)
    p.add_argument("--compress", action="store_true")
    p.add_argument("--reorder", action="store_true")
    p.add_argument("--slice-size", type=int, default=4)
    p.add_argument("--report")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="matrix statistics")
    p.add_argument("input")
    p.add_argument("--density", action="store_true", help="include per-column counts")
    p.add_argument("--report")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="SpMV throughput")
    p.add_argument("input")
    _add_arith(p)
    p.add_argument("--formats", default="all", help="comma-separated list or 'all'")
    p.add_argument("--sweep", action="store_true", help="all flag combinations")
    p.add_argument("--compress", action="store_true")
    p.add_argument("--reorder", action="store_true")
    p.add_argument("--balance", action="store_true")
    p.add_argument("--strategy", choices=STRATEGIES, default="scalar")
    p.add_argument("--slice-size", type=int, default=4)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--mp", action="store_true", help="also time the big-integer path")
    p.add_argument("--workers", **workers)
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("solve", help="find a kernel vector")
    p.add_argument("input")
    _add_arith(p)
    p.add_argument("--format", choices=FORMATS, default="csr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--retries", type=int, default=5)
    p.add_argument("--workers", **workers)
    p.add_argument("--checkpoint")
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--halt-after", type=int, default=None,
                   help="stop at the first checkpoint after this many iterations")
    p.add_argument("--resume")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check a kernel vector")
    p.add_argument("input")
    p.add_argument("kernel")
    p.add_argument("--ell", default=None)
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("selftest", help="oracle equivalence on generated matrices")
    _add_arith(p)
    p.add_argument("--count", type=int, default=3)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--row-weight", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", **workers)
    p.add_argument("--report")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if getattr(args, "workers", 0) is None:
            args.workers = default_workers()
        if getattr(args, "k", 0) is None:
            args.k = 52 if args.flavor == "float" else 64
        return args.func(args)
    except UsageError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BasisError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MatrixFormatError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
