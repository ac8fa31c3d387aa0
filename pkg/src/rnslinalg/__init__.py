"""Exact sparse linear algebra over Z/lZ using residue number system arithmetic."""

from .rns import RnsBasis, build_basis
from .vector import RnsVector
from .matrix import (
    CooMatrix,
    CsrMatrix,
    CompressedCsrMatrix,
    SlcooMatrix,
    EllMatrix,
    HybridMatrix,
    MatrixStats,
    gen_ffs_like,
    matrix_stats,
)
from .spmv import SpmvPlan, make_plan, spmv, spmv_iterate, benchmark
from .wiedemann import solve, krylov, berlekamp_massey, mksol, check_kernel, block_krylov

__version__ = "0.1.0"
