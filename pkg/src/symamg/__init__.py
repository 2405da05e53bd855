"""Symmetry-exploiting preconditioners (FSAI, AMG, LRCFSAI, LRCAMG, AMGS, AMGR)."""
import os

# TBB shipped in this image is too old for numba; the workqueue layer is always available.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .sparse import (  # noqa: E402
    BlockOperator,
    MultiVector,
    SparseMatrix,
    fused_block_apply,
    spmm,
    spmv,
    transpose,
    triple_product_rap,
)

__all__ = [
    "BlockOperator",
    "MultiVector",
    "SparseMatrix",
    "fused_block_apply",
    "spmm",
    "spmv",
    "transpose",
    "triple_product_rap",
]
__version__ = "0.1.0"
