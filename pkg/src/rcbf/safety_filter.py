"""Safety filter: turns an arbitrary tracking command u_r into a certified
collision-free command by solving a minimum-correction QP.

The filtered command decomposes as

    u_s     = u_r + u_f          (u_f = QP minimizer, smallest correction)
    u_final = u_s + Lg_b'        (additive barrier gain, norm <= 1)

The QP (decision variable z = u_f, objective 0.5*||z||^2):

    box rows:      u_min - u_r - gain <= z <= u_max - u_r - gain
                   (the final command, gain included, stays in the box)
    barrier row:   -Lg_b . z <= Lf_b + Lg_b . u_r + gamma*b^3 - margin

The barrier row constrains the pre-gain control u_s; the additive gain's
self-product ||Lg_b||^2 then rides on top of the certified decay rate. For
a disturbance bounded per-axis by d_bar the worst inner product is
-d_bar*||Lg_b||_1, which the self-product covers only when obstacle
directions do not cancel; `margin` = max(0, d_bar*||Lg_b||_1 - ||Lg_b||^2)
makes up the difference, so along the closed loop, for every admissible mu,

    db/dt = (Lf_b + Lg_b u_s) + ||Lg_b||^2 + Lg_b . mu >= -gamma*b^3

holds deterministically whenever the QP reports a zero-slack optimum.

A "paper_literal" constraint form is provided for comparison runs: it
reproduces the printed aggregate inequality

    -e_tilde' u_f <= e_hat + gamma*b^3 + e_tilde' u_r

verbatim (per-obstacle weighted rows summed, +1 self-product inside e_hat,
opposite row sign), scaled by exp(rho*min_i b_i) for overflow safety, which
leaves the feasible half-space unchanged.

When the QP is infeasible (box too tight for the demanded correction) it is
re-solved with a penalized nonnegative slack on the barrier row; the slack
magnitude is reported, never hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .barrier import BarrierEval, BarrierParams, lie_terms
from .dynamics import ControlCommand, SaturationLimits, State, saturate
from .qp import QpProblem, QpSolution

#: cap on the exp(rho*b_min) rescaling of the paper-literal row; beyond this
#: the row is astronomically slack and a clipped offset keeps arithmetic finite
_LITERAL_H_CAP = 1e30


@dataclass(frozen=True)
class FilterConfig:
    """Configuration of the safety filter.

    limits are the plant's true bounds; the QP box defaults to the box
    inscribed in the norm ball (u_norm_max/sqrt(3) per axis) so that QP-box
    feasibility implies norm feasibility. Set use_inscribed_box=False to use
    the literal per-axis box instead (comparison runs only; the norm bound is
    then not implied).
    """

    barrier: BarrierParams = field(default_factory=BarrierParams)
    limits: SaturationLimits = field(default_factory=SaturationLimits)
    constraint_form: str = "exact"          # "exact" | "paper_literal"
    slack_weight: float = 1e6
    enabled: bool = True
    use_inscribed_box: bool = True

    def __post_init__(self):
        if self.constraint_form not in ("exact", "paper_literal"):
            raise ValueError(f"unknown constraint form {self.constraint_form!r}")
        if self.slack_weight < 1e3:
            raise ValueError("slack_weight must be >= 1e3 to dominate ||u_f||^2")

    def qp_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.use_inscribed_box:
            a = self.limits.u_norm_max / math.sqrt(3.0)
            return np.full(3, -a), np.full(3, a)
        return self.limits.u_min.copy(), self.limits.u_max.copy()


@dataclass(frozen=True)
class FilterOutcome:
    """Full decomposition of one filtering step."""

    u_r: np.ndarray            # upstream command (acceleration part)
    u_f: np.ndarray            # minimal correction (QP minimizer)
    u_s: np.ndarray            # u_r + u_f: control from the filter
    u_final: np.ndarray        # u_s + gain: command sent to the plant
    gain: np.ndarray           # additive barrier gain Lg_b'
    b: float                   # composed barrier at the current state
    status: str                # optimal | infeasible | degraded | passthrough
    slack: float               # barrier-row relaxation used (0 when feasible)
    barrier_active: bool
    barrier_eval: BarrierEval | None = None
    qp: QpSolution | None = None


def disturbance_margin(Lg_b: np.ndarray, d_bar: float) -> float:
    """Shortfall of the gain's self-product against the worst disturbance.

    For ||mu||_inf <= d_bar the worst inner product is -d_bar*||Lg_b||_1,
    while the gain contributes +||Lg_b||^2; the row must cover the gap when
    the self-product alone is not enough (it always is for a single
    axis-aligned obstacle, but not where obstacle directions cancel).
    """
    l1 = float(np.sum(np.abs(Lg_b)))
    sq = float(Lg_b @ Lg_b)
    return max(0.0, d_bar * l1 - sq)


def _barrier_row_exact(ev: BarrierEval, u_r: np.ndarray, p: BarrierParams
                       ) -> tuple[np.ndarray, float]:
    rhs = (ev.Lf_b + float(ev.Lg_b @ u_r) + p.gamma * ev.b ** 3
           - disturbance_margin(ev.Lg_b, p.d_bar))
    return -ev.Lg_b, rhs

def _barrier_row_literal(ev: BarrierEval, u_r: np.ndarray, p: BarrierParams
                         ) -> tuple[np.ndarray, float]:
    # Shifted form of the printed inequality: multiply through by
    # exp(rho*b_min) > 0. w_shift = exp(-rho*(b_i - b_min)) stays in (0, 1].
    b_min = float(np.min(ev.b_i))
    w_shift = np.exp(-p.rho * (ev.b_i - b_min))
    unit = ev.dp_i / ev.dist[:, None]
    e_tilde_sum = w_shift @ unit
    e_hat = float(w_shift @ (ev.drift_i + 1.0))
    scale = math.exp(min(p.rho * b_min, math.log(_LITERAL_H_CAP)))
    rhs = e_hat + p.gamma * ev.b ** 3 * scale + float(e_tilde_sum @ u_r)
    return -e_tilde_sum, min(rhs, _LITERAL_H_CAP)


def assemble(s: State, obstacles, u_r, cfg: FilterConfig,
             ev: BarrierEval | None = None) -> QpProblem:
    """Build the filter QP for state s and upstream acceleration command u_r."""
    u_r = np.asarray(u_r, dtype=np.float64).reshape(3)
    lo, hi = cfg.qp_box()
    if len(obstacles) == 0:
        G = np.vstack([np.eye(3), -np.eye(3)])
        h = np.concatenate([hi - u_r, -(lo - u_r)])
        return QpProblem(q=np.zeros(3), G=G, h=h,
                         labels=("box-upper",) * 3 + ("box-lower",) * 3)
    if ev is None:
        ev = lie_terms(s, obstacles, cfg.barrier)
    gain = ev.gain
    if cfg.constraint_form == "exact":
        row, rhs = _barrier_row_exact(ev, u_r, cfg.barrier)
    else:
        row, rhs = _barrier_row_literal(ev, u_r, cfg.barrier)
    G = np.vstack([np.eye(3), -np.eye(3), row[None, :]])
    h = np.concatenate([hi - u_r - gain, -(lo - u_r - gain), [rhs]])
    return QpProblem(q=np.zeros(3), G=G, h=h,
                     labels=("box-upper",) * 3 + ("box-lower",) * 3 + ("barrier",))


def _solve_with_slack(prob: QpProblem, slack_weight: float
                      ) -> tuple[QpSolution, float]:
    """Re-solve with a nonnegative slack on the barrier row.

    Variables (z, s_tilde) with s_tilde = sqrt(w)*s so the penalized
    objective 0.5*||z||^2 + 0.5*w*s^2 keeps an identity Hessian.
    """
    sw = math.sqrt(slack_weight)
    n = prob.n
    rows = []
    h = []
    labels = list(prob.labels) + ("slack",)
    for i in range(prob.m):
        ext = np.zeros(n + 1)
        ext[:n] = prob.G[i]
        if prob.labels and prob.labels[i] == "barrier":
            ext[n] = -1.0 / sw
        rows.append(ext)
        h.append(prob.h[i])
    nonneg = np.zeros(n + 1)
    nonneg[n] = -1.0
    rows.append(nonneg)
    h.append(0.0)
    relaxed = QpProblem(q=np.zeros(n + 1), G=np.vstack(rows), h=np.array(h),
                        labels=tuple(labels))
    sol = backend.solve(relaxed)
    slack = float(sol.z[n]) / sw if sol.z.size > n else 0.0
    trimmed = replace(sol, z=sol.z[:n].copy())
    return trimmed, max(slack, 0.0)


def filter_command(s: State, obstacles, u_r, cfg: FilterConfig) -> FilterOutcome:
    """Apply the safety filter to the acceleration command u_r at state s."""
    u_r = np.asarray(u_r, dtype=np.float64).reshape(3)
    if not cfg.enabled:
        sat = saturate(ControlCommand(v_c=u_r), cfg.limits).v_c
        return FilterOutcome(u_r=u_r.copy(), u_f=np.zeros(3), u_s=u_r.copy(),
                             u_final=sat, gain=np.zeros(3), b=math.inf,
                             status="passthrough", slack=0.0,
                             barrier_active=False)

    ev = lie_terms(s, obstacles, cfg.barrier) if len(obstacles) else None
    prob = assemble(s, obstacles, u_r, cfg, ev=ev)
    sol = backend.solve(prob)
    slack = 0.0
    if sol.status == "infeasible":
        sol, slack = _solve_with_slack(prob, cfg.slack_weight)

    u_f = sol.z[:3]
    gain = ev.gain if ev is not None else np.zeros(3)
    u_s = u_r + u_f
    u_final = u_s + gain
    barrier_active = False
    if ev is not None:
        for idx, j in enumerate(sol.active_set):
            if j < len(prob.labels) and prob.labels[j] == "barrier" \
                    and sol.multipliers[idx] > 1e-10:
                barrier_active = True
    return FilterOutcome(u_r=u_r.copy(), u_f=u_f.copy(), u_s=u_s,
                         u_final=u_final, gain=gain.copy(),
                         b=ev.b if ev is not None else math.inf,
                         status=sol.status, slack=slack,
                         barrier_active=barrier_active or slack > 0,
                         barrier_eval=ev, qp=sol)
