"""Figure-8 tracking environment: reference generation, reward/cost, the
three-sphere obstacle scene, mode-aware safety filtering inside the step
loop, and per-episode logging/metrics.

Reference trajectory (period 25 s):

    p_r(t) = [sin(2*pi*t/25), 0.5*sin(4*pi*t/25), 1]

with v_r and a_r by exact differentiation and the yaw reference facing the
direction of motion, a_psi_r = atan2(v_ry, v_rx).

Reward: r = exp(-1.8*(||p - p_r||^2 + wrap(a_psi - a_psi_r)^2)), in (0, 1].
Cost: 1 if any obstacle is closer than the safety distance D_s after the
step, else 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .barrier import BarrierParams, Obstacle, lie_terms
from .dynamics import (ControlCommand, DisturbanceModel, SaturationLimits,
                       State, sample_disturbance, saturate, step, wrap_angle)
from .safety_filter import FilterConfig, FilterOutcome, filter_command

DT = 0.05
EPISODE_STEPS = 500
PERIOD = 25.0

MODES = ("off", "post_filter", "learning_filter")

#: EpisodeLog CSV column order (fixed schema, header row included)
CSV_COLUMNS = (
    "t", "px", "py", "pz", "vx", "vy", "vz", "yaw",
    "prx", "pry", "prz", "vrx", "vry", "vrz", "yawr",
    "urx", "ury", "urz", "ufx", "ufy", "ufz", "ux", "uy", "uz", "wc",
    "b", "bmin", "dmin", "qp_status", "slack", "reward", "cost",
)


@dataclass(frozen=True)
class Reference:
    """Reference sample: position, velocity, feedforward acceleration, yaw."""

    p_r: np.ndarray
    v_r: np.ndarray
    a_r: np.ndarray
    a_psi_r: float


def reference(t: float) -> Reference:
    """Figure-8 reference at time t >= 0, differentiated analytically."""
    if t < 0:
        raise ValueError("reference time must be >= 0")
    w1 = 2.0 * math.pi / PERIOD
    w2 = 4.0 * math.pi / PERIOD
    p = np.array([math.sin(w1 * t), 0.5 * math.sin(w2 * t), 1.0])
    v = np.array([w1 * math.cos(w1 * t), 0.5 * w2 * math.cos(w2 * t), 0.0])
    a = np.array([-w1 * w1 * math.sin(w1 * t),
                  -0.5 * w2 * w2 * math.sin(w2 * t), 0.0])
    yaw = math.atan2(v[1], v[0])
    return Reference(p_r=p, v_r=v, a_r=a, a_psi_r=yaw)


def reward(s: State, ref: Reference) -> float:
    """exp(-1.8*(position error^2 + wrapped yaw error^2)); clamped positive."""
    yaw_err = wrap_angle(s.a_psi - ref.a_psi_r)
    e2 = float(np.sum((s.p - ref.p_r) ** 2)) + yaw_err ** 2
    return max(math.exp(-1.8 * e2), 1e-300)


@dataclass(frozen=True)
class Scene:
    """Obstacle layout plus the safety distance shared by all barriers."""

    obstacles: tuple
    d_s: float = 0.15
    name: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for o in self.obstacles:
            if o.radius >= self.d_s:
                raise ValueError(
                    f"obstacle radius {o.radius} must be < safety distance {self.d_s}")
        for i, a in enumerate(self.obstacles):
            for b in self.obstacles[i + 1:]:
                if float(np.linalg.norm(a.center - b.center)) <= 2 * self.d_s:
                    raise ValueError("obstacles closer than 2*D_s are not "
                                     "independently avoidable")


def default_scene() -> Scene:
    """Three static spheres of radius 0.1 m on the figure-8 path, D_s = 0.15 m."""
    return Scene(obstacles=(
        Obstacle(center=[1.0, 0.0, 1.0], radius=0.1),
        Obstacle(center=[0.5, math.sqrt(3.0) / 4.0, 1.0], radius=0.1),
        Obstacle(center=[-1.0, 0.0, 1.0], radius=0.1),
    ), d_s=0.15, name="three-sphere")


def empty_scene() -> Scene:
    return Scene(obstacles=(), d_s=0.15, name="empty")


@dataclass
class LogRow:
    """One post-step snapshot; column meanings follow CSV_COLUMNS."""

    t: float
    state: State
    ref: Reference
    u_r: np.ndarray
    u_f: np.ndarray
    u: np.ndarray
    w_c: float
    b: float
    b_min: float
    d_min: float
    qp_status: str
    slack: float
    reward: float
    cost: int


@dataclass
class EpisodeSummary:
    total_return: float
    total_cost: int
    ds_breaches: int          # steps with min distance < D_s
    radius_breaches: int      # steps with min distance < obstacle radius
    min_dist: float
    min_b: float
    rms_error_clear: float    # RMS tracking error over steps with all b_i > 1
    steps: int
    slack_steps: int


@dataclass
class EpisodeLog:
    rows: list = field(default_factory=list)
    scene: Scene | None = None

    def summarize(self) -> EpisodeSummary:
        return summarize(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(_format_row(r))
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _format_row(r: LogRow) -> list:
    s, ref = r.state, r.ref
    vals = ([r.t] + list(s.p) + list(s.v) + [s.a_psi]
            + list(ref.p_r) + list(ref.v_r) + [ref.a_psi_r]
            + list(r.u_r) + list(r.u_f) + list(r.u) + [r.w_c]
            + [r.b, r.b_min, r.d_min])
    return [_fmt(v) for v in vals] + [r.qp_status, _fmt(r.slack),
                                      _fmt(r.reward), str(r.cost)]


def summarize(log: EpisodeLog) -> EpisodeSummary:
    """Aggregate safety and tracking metrics; recomputable from the rows."""
    rows = log.rows
    radius = max((o.radius for o in log.scene.obstacles), default=0.0) \
        if log.scene else 0.0
    d_s = log.scene.d_s if log.scene else 0.15
    total_return = sum(r.reward for r in rows)
    total_cost = sum(r.cost for r in rows)
    ds_breaches = sum(1 for r in rows if r.d_min < d_s)
    radius_breaches = sum(1 for r in rows if r.d_min < radius)
    min_dist = min((r.d_min for r in rows), default=math.inf)
    min_b = min((r.b for r in rows), default=math.inf)
    clear = [float(np.linalg.norm(r.state.p - r.ref.p_r))
             for r in rows if r.b_min > 1.0]
    rms = math.sqrt(sum(e * e for e in clear) / len(clear)) if clear else 0.0
    slack_steps = sum(1 for r in rows if r.slack > 0)
    return EpisodeSummary(total_return=total_return, total_cost=total_cost,
                          ds_breaches=ds_breaches,
                          radius_breaches=radius_breaches,
                          min_dist=min_dist, min_b=min_b,
                          rms_error_clear=rms, steps=len(rows),
                          slack_steps=slack_steps)


class TrackingEnv:
    """Episodic figure-8 tracking with optional safety filtering.

    mode "off" passes commands straight to the plant (saturation only);
    "post_filter" and "learning_filter" both run the filter in the loop (they
    differ in how the upstream policy was trained, not in stepping).
    """

    def __init__(self, scene: Scene | None = None, mode: str = "post_filter",
                 filter_config: FilterConfig | None = None,
                 disturbance: DisturbanceModel | None = None,
                 limits: SaturationLimits | None = None,
                 dt: float = DT, horizon: int = EPISODE_STEPS,
                 start_offset=(0.0, 0.0, 0.0), reference_fn=reference):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.scene = scene if scene is not None else default_scene()
        self.mode = mode
        self.limits = limits if limits is not None else SaturationLimits()
        base = filter_config if filter_config is not None else FilterConfig()
        enabled = mode != "off" and len(self.scene.obstacles) > 0
        self.filter_config = replace(base, enabled=enabled, limits=self.limits)
        self.disturbance = disturbance if disturbance is not None \
            else DisturbanceModel()
        self.dt = dt
        self.horizon = horizon
        self.start_offset = np.asarray(start_offset, dtype=np.float64).reshape(3)
        self.reference_fn = reference_fn
        self.state: State | None = None
        self.log = EpisodeLog(scene=self.scene)
        self._rng = np.random.default_rng(0)
        self._step_count = 0
        self.qp_times_ns: list = []

    # -- episode control -------------------------------------------------

    def reset(self, seed: int = 0) -> np.ndarray:
        ref0 = self.reference_fn(0.0)
        self.state = State(p=ref0.p_r + self.start_offset, v=ref0.v_r,
                           a_psi=ref0.a_psi_r, t=0.0)
        self._rng = np.random.default_rng(seed)
        self.log = EpisodeLog(scene=self.scene)
        self._step_count = 0
        self.qp_times_ns = []
        return self.observe()

    def observe(self) -> np.ndarray:
        """14-vector [p, v, a_psi, p_r, v_r, a_psi_r] at the current time."""
        s = self.state
        ref = self.reference_fn(s.t)
        return np.concatenate([s.p, s.v, [s.a_psi],
                               ref.p_r, ref.v_r, [ref.a_psi_r]])

    def step(self, action) -> tuple[np.ndarray, float, int, bool, FilterOutcome]:
        """Filter (per mode), saturate, disturb, integrate, and log one step.

        action is a ControlCommand or the packed 4-vector [v_c, w_c].
        Returns (observation, reward, cost, done, filter outcome).
        """
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self._step_count >= self.horizon:
            raise RuntimeError("episode finished; call reset()")
        cmd = action if isinstance(action, ControlCommand) \
            else ControlCommand.from_array(action)

        cfg = self.filter_config
        import time as _time
        t0 = _time.perf_counter_ns()
        outcome = filter_command(self.state, self.scene.obstacles, cmd.v_c, cfg)
        self.qp_times_ns.append(_time.perf_counter_ns() - t0)

        final = saturate(ControlCommand(v_c=outcome.u_final, w_c=cmd.w_c),
                         self.limits)
        mu = sample_disturbance(self.disturbance, self._rng)
        self.state = step(self.state, final, mu, self.dt)
        self._step_count += 1

        ref = self.reference_fn(self.state.t)
        rew = reward(self.state, ref)
        if self.scene.obstacles:
            ev = lie_terms(self.state, self.scene.obstacles, cfg.barrier)
            d_min = float(np.min(ev.dist))
            b_post = ev.b
            b_min = float(np.min(ev.b_i))
        else:
            d_min, b_post, b_min = math.inf, math.inf, math.inf
        cost = 1 if d_min < self.scene.d_s else 0
        done = self._step_count >= self.horizon

        self.log.rows.append(LogRow(
            t=self.state.t, state=self.state, ref=ref,
            u_r=cmd.v_c.copy(), u_f=outcome.u_f.copy(),
            u=final.v_c.copy(), w_c=final.w_c,
            b=b_post, b_min=b_min, d_min=d_min,
            qp_status=outcome.status, slack=outcome.slack,
            reward=rew, cost=cost))
        return self.observe(), rew, cost, done, outcome
