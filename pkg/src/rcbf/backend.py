"""Backend selection for the QP hot kernel.

The compiled extension (rcbf._kernels, Cython) is preferred when it imported
successfully; the pure-numpy solver in rcbf.qp is the always-available
fallback and the reference implementation. Set RCBF_PURE_PYTHON=1 to force
the fallback (useful for benchmarking and debugging).

Both paths run the same dual active-set iteration with identical pivoting
and tie-breaking, so results agree to rounding error; the equivalence is
covered by tests and the `rcbf qp-bench` command reports both timings.
"""

from __future__ import annotations

import os

import numpy as np

from . import qp as _pure
from .qp import QpProblem, QpSolution

try:
    from . import _kernels
except ImportError:          # extension not built; pure path only
    _kernels = None

_FORCE_PURE = os.environ.get("RCBF_PURE_PYTHON", "") not in ("", "0")

HAVE_COMPILED = _kernels is not None
DEFAULT_BACKEND = "compiled" if (HAVE_COMPILED and not _FORCE_PURE) else "pure"

_STATUS = {0: "converged", 1: "infeasible", 2: "maxiter"}


def available_backends() -> tuple:
    return ("pure", "compiled") if HAVE_COMPILED else ("pure",)


def solve(prob: QpProblem, backend: str = "auto") -> QpSolution:
    """Solve prob on the requested backend ("auto", "pure" or "compiled")."""
    if backend == "auto":
        backend = DEFAULT_BACKEND
    if backend == "pure":
        return _pure.solve(prob)
    if backend != "compiled":
        raise ValueError(f"unknown backend {backend!r}")
    if _kernels is None:
        raise RuntimeError("compiled kernel not available")

    z, active, lam, code, iters = _kernels.solve_qp(
        np.ascontiguousarray(prob.q),
        np.ascontiguousarray(prob.G),
        np.ascontiguousarray(prob.h))
    if code == 1:
        return QpSolution(z=z, active_set=tuple(int(a) for a in active[:-1]),
                          multipliers=lam[:-1].copy(), status="infeasible",
                          kkt_residual=np.inf, iterations=iters,
                          certificate_rows=tuple(sorted(int(a) for a in active)))
    return _pure.certify(prob, active, iters)
