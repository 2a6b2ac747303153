"""Collision barriers for spherical obstacles, their smooth composition, and
analytic Lie derivatives for the double-integrator translation model.

Per-obstacle barrier (braking-envelope form), with dp_i = p_i - p and
dv_i = v_i - v the relative position/velocity of obstacle i:

    b_i = sqrt(2*delta*(||dp_i|| - D_s)) + dp_i'dv_i / ||dp_i||

b_i >= 0 means the craft can still stop outside the safety shell D_s using a
braking deceleration of at most delta along the line of sight. Multiple
barriers compose through a smooth minimum:

    b = -(1/rho) * ln(sum_i exp(-rho*b_i))       (b <= min_i b_i)

Along the dynamics pdot = v, vdot = u + mu the composed barrier has

    db/dt = Lf_b + Lg_b (u + mu)

with Lg_b_i = -dp_i'/||dp_i|| per obstacle (differentiating b_i w.r.t. v),
and per-obstacle drift

    delta*(dp_i'dv_i)/(s_i*||dp_i||) + ||dv_i||^2/||dp_i||
        - (dp_i'dv_i)^2/||dp_i||^3,     s_i = sqrt(2*delta*(||dp_i||-D_s)),

both composed with the softmax weights exp(-rho*b_i)/e_bar.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import State, _vec3

#: floor for the radical argument ||dp|| - D_s once inside the safety shell
EPS_RADICAL = 1e-9
#: floor for the sqrt denominator in the drift term near the shell
EPS_SQRT_DEN = 1e-4
#: below this separation the geometry is meaningless
EPS_COINCIDENT = 1e-9


class DegenerateGeometryError(ValueError):
    """Craft and obstacle center (nearly) coincide; barrier undefined."""


@dataclass(frozen=True)
class Obstacle:
    """Sphere obstacle: center [m], physical radius [m], velocity [m/s]."""

    center: np.ndarray
    radius: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "velocity", _vec3(self.velocity))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class BarrierParams:
    """Parameters of the barrier construction.

    delta:  assumed maximum braking acceleration [m/s^2]. Kept below the
            worst-case per-axis authority of the filtered command
            (norm 5 inscribed box gives 5/sqrt(3) ~ 2.89 per axis) so the
            braking envelope the barrier promises is physically attainable
            in every direction even under the worst disturbance.
    d_s:    safety distance [m]; the protected shell around each obstacle.
    rho:    sharpness of the smooth-min composition. The composed barrier's
            curvature along trajectories grows with rho (a -rho*Var term
            from the log-sum-exp), so large rho makes the discrete-time
            barrier decay overshoot its continuous-time certificate between
            obstacles; 6 keeps that within ~0.2 barrier-units/s at dt=0.05
            while the min-gap ln(M)/rho stays small.
    gamma:  class-K coefficient in alpha(b) = gamma * b^3.
    d_bar:  disturbance bound used for robustness margins.
    """

    delta: float = 2.5
    d_s: float = 0.15
    rho: float = 6.0
    gamma: float = 1.0
    d_bar: float = 1.0

    def __post_init__(self):
        if min(self.delta, self.d_s, self.rho, self.gamma) <= 0:
            raise ValueError("delta, d_s, rho, gamma must be positive")
        if self.d_bar < 0:
            raise ValueError("d_bar must be >= 0")

    @property
    def iota_bar(self) -> float:
        """Margin of the disturbance-expanded set: (d_bar^2 / (4*gamma))^(1/3).

        Equilibrium of gamma*b^3 = d_bar^2/4, i.e. how far below zero the
        composed barrier can settle under the worst sustained disturbance.
        """
        return (self.d_bar ** 2 / (4.0 * self.gamma)) ** (1.0 / 3.0)


class Region(enum.Enum):
    """Location of a state relative to the safe set and its expansions."""

    INTERIOR = "interior"        # b > 0
    BOUNDARY = "boundary"        # b ~ 0
    EXPANDED = "expanded"        # -iota_bar <= b < 0 (reachable under disturbance)
    OUTSIDE = "outside"          # b < -iota_bar


@dataclass(frozen=True)
class BarrierEval:
    """All per-obstacle and composed barrier quantities at one state.

    Raw aggregates e_bar / e_hat / e_tilde follow the printed composition
    (e_hat includes the +1 gain self-product per obstacle); weights, drift
    and the composed Lie derivatives are computed in shifted (overflow-safe)
    form. ``near_singular`` flags evaluations inside or touching the shell,
    where the radical was floored and derivatives are degraded.
    """

    b_i: np.ndarray          # (M,) per-obstacle barriers
    b: float                 # composed barrier
    e_bar: float             # sum exp(-rho*b_i)
    e_hat: float             # sum exp(-rho*b_i) * (drift_i + 1)
    e_tilde: np.ndarray      # (M,3) rows exp(-rho*b_i) * dp_i'/||dp_i||
    weights: np.ndarray      # (M,) softmax weights exp(-rho*b_i)/e_bar
    drift_i: np.ndarray      # (M,) per-obstacle drift terms
    Lf_b: float              # composed drift Lie derivative
    Lg_b: np.ndarray         # (3,) composed control Lie derivative (row)
    gain: np.ndarray         # (3,) Lg_b transposed: the additive control term
    dp_i: np.ndarray         # (M,3) obstacle-center minus craft position
    dv_i: np.ndarray         # (M,3) obstacle velocity minus craft velocity
    dist: np.ndarray         # (M,) ||dp_i||
    near_singular: bool


def _geometry(s: State, obstacles) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(obstacles) == 0:
        raise ValueError("need at least one obstacle")
    centers = np.stack([o.center for o in obstacles])
    vels = np.stack([o.velocity for o in obstacles])
    dp = centers - s.p
    dv = vels - s.v
    dist = np.linalg.norm(dp, axis=1)
    if np.any(dist < EPS_COINCIDENT):
        i = int(np.argmin(dist))
        raise DegenerateGeometryError(
            f"craft coincides with obstacle {i} (separation {dist[i]:.3e} m)")
    return dp, dv, dist


def barrier_i(s: State, o: Obstacle, p: BarrierParams) -> float:
    """Single-obstacle barrier value; radical floored inside the shell."""
    ev = lie_terms(s, [o], p)
    return float(ev.b_i[0])


def compose(b_values, rho: float) -> float:
    """Smooth minimum -(1/rho)*ln(sum exp(-rho*b_i)), shifted for stability."""
    b_values = np.asarray(b_values, dtype=np.float64)
    if b_values.size == 0:
        raise ValueError("compose() needs a non-empty list of barrier values")
    m = float(np.min(b_values))
    return m - math.log(float(np.sum(np.exp(-rho * (b_values - m))))) / rho


def lie_terms(s: State, obstacles, p: BarrierParams) -> BarrierEval:
    """Evaluate all barriers and analytic Lie derivatives at state s."""
    dp, dv, dist = _geometry(s, obstacles)
    radial = np.einsum("ij,ij->i", dp, dv)          # dp_i'dv_i
    margin = dist - p.d_s
    near_singular = bool(np.any(margin <= EPS_RADICAL))
    s_i = np.sqrt(2.0 * p.delta * np.maximum(margin, EPS_RADICAL))
    b_i = s_i + radial / dist

    drift = (p.delta * radial / (np.maximum(s_i, EPS_SQRT_DEN) * dist)
             + np.einsum("ij,ij->i", dv, dv) / dist
             - radial ** 2 / dist ** 3)

    b_min = float(np.min(b_i))
    w_shift = np.exp(-p.rho * (b_i - b_min))        # in (0, 1], max term = 1
    w_sum = float(np.sum(w_shift))
    weights = w_shift / w_sum
    b = b_min - math.log(w_sum) / p.rho

    unit = dp / dist[:, None]
    Lg_b = -(weights @ unit)                        # convex combination of -unit rows
    Lf_b = float(weights @ drift)

    # Raw printed aggregates; may over/underflow for extreme b_i, by design.
    with np.errstate(over="ignore", under="ignore"):
        w_raw = np.exp(-p.rho * b_i)
        e_bar = float(np.sum(w_raw))
        e_hat = float(np.sum(w_raw * (drift + 1.0)))
        e_tilde = w_raw[:, None] * unit

    return BarrierEval(b_i=b_i, b=b, e_bar=e_bar, e_hat=e_hat, e_tilde=e_tilde,
                       weights=weights, drift_i=drift, Lf_b=Lf_b, Lg_b=Lg_b,
                       gain=Lg_b.copy(), dp_i=dp, dv_i=dv, dist=dist,
                       near_singular=near_singular)


def rcbf_gain(s: State, obstacles, p: BarrierParams) -> np.ndarray:
    """Additive control term Lg_b': softmax-weighted combination of the
    per-obstacle unit rows, pointing away from the dominant obstacle.
    Always has Euclidean norm <= 1."""
    return lie_terms(s, obstacles, p).gain


def classify(s: State, obstacles, p: BarrierParams, tol: float = 1e-9) -> Region:
    """Place the state relative to the safe set using the composed barrier."""
    b = lie_terms(s, obstacles, p).b
    if abs(b) <= tol:
        return Region.BOUNDARY
    if b > 0:
        return Region.INTERIOR
    if b >= -p.iota_bar:
        return Region.EXPANDED
    return Region.OUTSIDE
