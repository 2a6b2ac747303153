"""Exact dense solver for the tiny strictly convex QP used by the safety
filter:

    min_z  0.5*||z||^2 + q'z    s.t.  G z <= h

Dual active-set iteration (Goldfarb-Idnani specialized to an identity
Hessian): start at the unconstrained optimum z = -q, repeatedly pull in the
most-violated constraint, taking full or partial (multiplier-blocking) steps
and dropping rows whose multiplier would go negative. Every iterate is the
exact minimizer subject to its working set, so the objective is
non-decreasing and the method terminates on a finite set of working sets.

The iteration maintains z = -q - G_A' lam_A and G_A z = h_A exactly, so the
multipliers come out of the step arithmetic; solutions are certified post-hoc
through their KKT residuals.

Infeasibility is detected when a violated row is linearly dependent on the
working set with non-positive combination weights (a Farkas certificate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-9          # constraint violation tolerance
DUAL_TOL = -1e-10        # multipliers may dip this far below zero
KKT_TOL = 1e-8           # certification threshold for status "optimal"
DEP_TOL = 1e-11          # relative threshold for linear dependence
MAX_ITER = 64            # defensive bound; termination is finite anyway
MAX_ROWS = 16


@dataclass(frozen=True)
class QpProblem:
    """min 0.5*||z||^2 + q'z s.t. G z <= h, with optional per-row labels."""

    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).ravel()
        G = np.asarray(self.G, dtype=np.float64).reshape(-1, q.size)
        h = np.asarray(self.h, dtype=np.float64).ravel()
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        if G.shape[0] != h.size:
            raise ValueError("G and h row counts differ")
        if G.shape[0] > MAX_ROWS:
            raise ValueError(f"at most {MAX_ROWS} rows supported")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(G))
                and np.all(np.isfinite(h))):
            raise ValueError("non-finite problem data")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.h.size

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=np.float64)
        return 0.5 * float(z @ z) + float(self.q @ z)


@dataclass(frozen=True)
class QpSolution:
    """Solver output plus certification data.

    multipliers is aligned with active_set; lambda_full() scatters it to one
    dual per constraint row. objective_trace records the objective after each
    outer iteration (non-decreasing for this dual method).
    """

    z: np.ndarray
    active_set: tuple
    multipliers: np.ndarray
    status: str                      # optimal | infeasible | degraded
    kkt_residual: float
    iterations: int
    objective_trace: tuple = ()
    certificate_rows: tuple = ()     # Farkas-style row set when infeasible

    def lambda_full(self, m: int) -> np.ndarray:
        lam = np.zeros(m)
        for idx, j in enumerate(self.active_set):
            lam[j] = self.multipliers[idx]
        return lam


@dataclass(frozen=True)
class KktReport:
    stationarity: float        # ||z + q + G'lam||_inf
    primal: float              # max(G z - h)
    dual: float                # min lam (>= 0 up to tolerance)
    complementarity: float     # max |lam * (G z - h)|
    max_residual: float


def kkt_check(prob: QpProblem, sol: QpSolution) -> KktReport:
    """Residuals of the four KKT conditions for a claimed-optimal solution."""
    lam = sol.lambda_full(prob.m)
    if prob.m:
        slack = prob.G @ sol.z - prob.h
        stat = float(np.max(np.abs(sol.z + prob.q + prob.G.T @ lam)))
        primal = float(np.max(slack))
        dual = float(np.min(lam))
        comp = float(np.max(np.abs(lam * slack)))
    else:
        stat = float(np.max(np.abs(sol.z + prob.q)))
        primal, dual, comp = 0.0, 0.0, 0.0
    max_res = max(stat, primal, -min(dual, 0.0), comp)
    return KktReport(stationarity=stat, primal=primal, dual=dual,
                     complementarity=comp, max_residual=max_res)


def _solve_gram(GA: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve (GA GA') x = rhs; returns (x, ok). Falls back to least squares."""
    M = GA @ GA.T
    try:
        return np.linalg.solve(M, rhs), True
    except np.linalg.LinAlgError:
        x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        return x, False


def certify(prob: QpProblem, active, iterations: int,
            objective_trace: tuple = ()) -> QpSolution:
    """Polish and certify a solution from its final active set.

    Re-solves the equality-constrained optimum for the active set with one
    round of iterative refinement (helps ill-conditioned working sets), then
    grades the result by its KKT residual.
    """
    active = tuple(int(a) for a in active)
    if active:
        GA = prob.G[list(active)]
        M = GA @ GA.T
        rhs = -(GA @ prob.q + prob.h[list(active)])
        lam, _ = _solve_gram(GA, rhs)
        corr, _ = _solve_gram(GA, rhs - M @ lam)
        lam = lam + corr
        z = -prob.q - GA.T @ lam
        lam_arr = np.asarray(lam, dtype=np.float64)
    else:
        z = -prob.q.copy()
        lam_arr = np.zeros(0)
    sol = QpSolution(z=z, active_set=active, multipliers=lam_arr,
                     status="optimal", kkt_residual=0.0, iterations=iterations,
                     objective_trace=objective_trace)
    res = kkt_check(prob, sol).max_residual
    status = "optimal" if res < KKT_TOL else "degraded"
    return QpSolution(z=z, active_set=active, multipliers=lam_arr,
                      status=status, kkt_residual=res, iterations=iterations,
                      objective_trace=objective_trace)


def solve(prob: QpProblem, max_iter: int = MAX_ITER) -> QpSolution:
    """Solve the QP exactly; see module docstring for the iteration."""
    q, G, h = prob.q, prob.G, prob.h
    m = prob.m

    z = -q.copy()
    active: list[int] = []
    lam: list[float] = []
    trace = [prob.objective(z)]
    iters = 0

    if m == 0:
        return QpSolution(z=z, active_set=(), multipliers=np.zeros(0),
                          status="optimal", kkt_residual=0.0, iterations=0,
                          objective_trace=tuple(trace))

    while iters < max_iter:
        iters += 1
        viol = G @ z - h
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol))          # ties resolve to the lowest index
        if viol[p] <= FEAS_TOL:
            break

        n_plus = G[p]
        scale = max(1.0, float(n_plus @ n_plus))
        theta_p = 0.0
        # Inner loop: partial (dual-blocking) steps until row p is satisfied.
        while True:
            if active:
                GA = G[active]
                r, _ = _solve_gram(GA, GA @ n_plus)
                d = -(n_plus - GA.T @ r)
            else:
                r = np.zeros(0)
                d = -n_plus

            denom = float(-(n_plus @ d))          # ||P n_plus||^2 >= 0
            cur = float(n_plus @ z - h[p])
            t_full = cur / denom if denom > DEP_TOL * scale else np.inf

            t_block = np.inf
            j_block = -1
            for k in range(len(active)):
                if r[k] > DEP_TOL:
                    tb = lam[k] / r[k]
                    if tb < t_block:
                        t_block, j_block = tb, k

            if not np.isfinite(t_full) and not np.isfinite(t_block):
                # Farkas certificate: n_plus = GA' r with r <= 0 while row p
                # is still violated -> no feasible point exists.
                return QpSolution(
                    z=z, active_set=tuple(active),
                    multipliers=np.array(lam), status="infeasible",
                    kkt_residual=np.inf, iterations=iters,
                    objective_trace=tuple(trace),
                    certificate_rows=tuple(sorted(set(active) | {p})))

            t = min(t_full, t_block)
            z = z + t * d
            for k in range(len(active)):
                lam[k] -= t * r[k]
            theta_p += t
            if t_block < t_full:
                del active[j_block]
                del lam[j_block]
                continue
            active.append(p)
            lam.append(theta_p)
            break

        trace.append(prob.objective(z))

    return certify(prob, active, iters, tuple(trace))
