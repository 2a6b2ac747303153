"""Reduced multicopter plant: translational double integrator plus a yaw-rate
integrator, driven by an acceleration command under additive input disturbance
and actuator saturation.

Discrete update (semi-implicit Euler, world frame):

    v+   = v + (v_c + mu) * dt
    p+   = p + v+ * dt
    yaw+ = wrap(yaw + w_c * dt)

The attitude loop is assumed to be closed by a low-level controller, so the
acceleration command v_c [m/s^2] and yaw-rate command w_c [rad/s] are the
plant inputs. mu is the (bounded) input disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % TWO_PI


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(3).copy()
    return v


@dataclass(frozen=True)
class State:
    """Flat multicopter state: position, velocity, yaw, and simulation time."""

    p: np.ndarray
    v: np.ndarray
    a_psi: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", _vec3(self.p))
        object.__setattr__(self, "v", _vec3(self.v))
        object.__setattr__(self, "a_psi", wrap_angle(float(self.a_psi)))
        object.__setattr__(self, "t", float(self.t))
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.v))
                and math.isfinite(self.a_psi) and math.isfinite(self.t)):
            raise ValueError(f"non-finite state: p={self.p}, v={self.v}, "
                             f"a_psi={self.a_psi}, t={self.t}")


@dataclass(frozen=True)
class ControlCommand:
    """Acceleration command v_c [m/s^2] and yaw-rate command w_c [rad/s]."""

    v_c: np.ndarray
    w_c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v_c", _vec3(self.v_c))
        object.__setattr__(self, "w_c", float(self.w_c))

    def as_array(self) -> np.ndarray:
        """Pack as the 4-vector [v_c, w_c] used by learned policies."""
        return np.concatenate([self.v_c, [self.w_c]])

    @classmethod
    def from_array(cls, a) -> "ControlCommand":
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return cls(v_c=a[:3], w_c=float(a[3]))


@dataclass(frozen=True)
class SaturationLimits:
    """Actuator bounds: per-axis box, Euclidean norm ball, and yaw-rate clamp.

    The default matches the simulated craft: |v_c| <= 5 m/s^2 per axis,
    ||v_c|| <= 5 m/s^2, |w_c| <= pi/3 rad/s.
    """

    u_min: np.ndarray = field(default_factory=lambda: np.full(3, -5.0))
    u_max: np.ndarray = field(default_factory=lambda: np.full(3, 5.0))
    u_norm_max: float = 5.0
    w_max: float = math.pi / 3.0

    def __post_init__(self):
        object.__setattr__(self, "u_min", _vec3(self.u_min))
        object.__setattr__(self, "u_max", _vec3(self.u_max))
        object.__setattr__(self, "u_norm_max", float(self.u_norm_max))
        object.__setattr__(self, "w_max", float(self.w_max))
        if not np.all(self.u_min < self.u_max):
            raise ValueError("u_min must be < u_max elementwise")
        if self.u_norm_max <= 0 or self.w_max <= 0:
            raise ValueError("u_norm_max and w_max must be positive")

    @classmethod
    def inscribed(cls, u_norm_max: float = 5.0, w_max: float = math.pi / 3.0
                  ) -> "SaturationLimits":
        """Box inscribed in the norm ball: box-feasible implies norm-feasible."""
        a = u_norm_max / math.sqrt(3.0)
        return cls(u_min=np.full(3, -a), u_max=np.full(3, a),
                   u_norm_max=u_norm_max, w_max=w_max)


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded additive input disturbance on the acceleration channel.

    kind "uniform": each component i.i.d. Unif[-d_bar, d_bar] per step.
    kind "constant": the fixed vector `value` (worst-case probing).
    kind "none": zero.
    """

    d_bar: float = 1.0
    kind: str = "uniform"
    value: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "d_bar", float(self.d_bar))
        object.__setattr__(self, "value", _vec3(self.value))
        if self.d_bar < 0:
            raise ValueError("d_bar must be >= 0")
        if self.kind not in ("uniform", "constant", "none"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "constant" and np.max(np.abs(self.value)) > self.d_bar + 1e-12:
            raise ValueError("constant disturbance exceeds d_bar")


def sample_disturbance(model: DisturbanceModel, rng: np.random.Generator) -> np.ndarray:
    """Draw one disturbance vector; always satisfies ||mu||_inf <= d_bar."""
    if model.kind == "none":
        return np.zeros(3)
    if model.kind == "constant":
        return model.value.copy()
    return rng.uniform(-model.d_bar, model.d_bar, size=3)


def saturate(c: ControlCommand, lim: SaturationLimits) -> ControlCommand:
    """Clip to the box, then scale radially onto the norm ball if needed.

    Idempotent, and the result satisfies both bounds exactly (radial scaling
    keeps a box-feasible point box-feasible because the box contains 0).
    """
    v = np.clip(c.v_c, lim.u_min, lim.u_max)
    n = float(np.linalg.norm(v))
    if n > lim.u_norm_max:
        v = v * (lim.u_norm_max / n)
    w = min(max(c.w_c, -lim.w_max), lim.w_max)
    return ControlCommand(v_c=v, w_c=w)


def step(s: State, c: ControlCommand, mu: np.ndarray, dt: float) -> State:
    """Advance the plant one step of length dt under command c and disturbance mu."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    mu = _vec3(mu)
    if not (np.all(np.isfinite(c.v_c)) and math.isfinite(c.w_c)
            and np.all(np.isfinite(mu))):
        raise ValueError(f"non-finite input: v_c={c.v_c}, w_c={c.w_c}, mu={mu}")
    v_next = s.v + (c.v_c + mu) * dt
    p_next = s.p + v_next * dt
    return State(p=p_next, v=v_next,
                 a_psi=wrap_angle(s.a_psi + c.w_c * dt),
                 t=s.t + dt)
