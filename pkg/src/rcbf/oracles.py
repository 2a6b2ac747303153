"""Independent verification oracles: brute-force and first-principles
implementations used to cross-check the analytic/optimized code paths.

Nothing here shares code with the paths it checks: the grid and
projected-gradient oracles know only the QP data, and the flow-based finite
difference knows only the barrier value function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barrier import BarrierParams, Obstacle, lie_terms
from .dynamics import State
from .qp import QpProblem
from .safety_filter import FilterConfig, assemble


# -- projected gradient on the dual ----------------------------------------

#: projected-gradient stationarity below which the oracle certifies itself
PG_CONVERGED_TOL = 1e-6


def projected_gradient_objective(prob: QpProblem, iters: int = 100_000,
                                 step: float = 1e-3) -> tuple[float, float]:
    """Primal objective reached by projected gradient on the dual problem.

    The dual of min 0.5||z||^2 + q'z s.t. Gz <= h is
    min_{lam >= 0} 0.5 lam' (GG') lam + lam'(Gq + h); projection is a clip at
    zero. Rows are normalized first (an equivalent rescaling of each
    inequality) so the fixed step is stable. Primal recovery: z = -q - G'lam.
    Returns (objective, stationarity); the result certifies the optimum only
    when stationarity <= PG_CONVERGED_TOL (fixed-step PG stalls on
    near-degenerate active geometry, which it reports through this measure).
    """
    f, stat = batched_projected_gradient([prob], iters=iters, step=step)
    return float(f[0]), float(stat[0])


def batched_projected_gradient(probs, iters: int = 100_000,
                               step: float = 1e-3
                               ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized dual projected gradient; returns (objectives, stationarity).

    Stationarity is the norm of the final projected-gradient step divided by
    the step size: zero exactly at a dual optimum.
    """
    n = probs[0].n
    mmax = max(p.m for p in probs)
    B = len(probs)
    G = np.zeros((B, mmax, n))
    h = np.ones((B, mmax))          # padded rows: 0'z <= 1, never active
    q = np.zeros((B, n))
    for i, p in enumerate(probs):
        norms = np.linalg.norm(p.G, axis=1)
        norms = np.where(norms > 1e-12, norms, 1.0)
        G[i, :p.m] = p.G / norms[:, None]
        h[i, :p.m] = p.h / norms
        q[i] = p.q
    GG = np.einsum("bij,bkj->bik", G, G)
    c = np.einsum("bij,bj->bi", G, q) + h
    lam = np.zeros((B, mmax))
    for _ in range(iters):
        lam = np.maximum(0.0, lam - step * (np.einsum("bik,bk->bi", GG, lam) + c))
    stepped = np.maximum(0.0, lam - step * (np.einsum("bik,bk->bi", GG, lam) + c))
    stationarity = np.max(np.abs(stepped - lam), axis=1) / step
    z = -q - np.einsum("bij,bi->bj", G, lam)
    f = 0.5 * np.einsum("bj,bj->b", z, z) + np.einsum("bj,bj->b", q, z)
    return f, stationarity


# -- multiscale grid search -------------------------------------------------

@dataclass
class GridResult:
    objective: float
    z: np.ndarray
    resolution: float
    feasible_found: bool


def grid_search(prob: QpProblem, z_feasible: np.ndarray,
                resolution: float = 0.01, levels: int = 4) -> GridResult:
    """Coarse-to-fine grid minimization of the QP over its feasible set.

    z_feasible must satisfy the constraints (it bounds the search region:
    the minimizer is the projection of -q onto the feasible set, hence lies
    within ||z_feasible + q|| of -q). The final grid step is `resolution`.
    """
    z_feasible = np.asarray(z_feasible, dtype=np.float64)
    slackv = prob.G @ z_feasible - prob.h if prob.m else np.zeros(1)
    if prob.m and float(np.max(slackv)) > 1e-7:
        raise ValueError("z_feasible violates the constraints")
    radius = float(np.linalg.norm(z_feasible + prob.q)) + resolution
    center = -prob.q.copy()
    half = radius
    best_z = z_feasible.copy()
    best_f = prob.objective(z_feasible)
    found = True
    n = prob.n
    per_axis = 13                   # 13^3 = 2197 points per level
    for level in range(levels):
        axes = [np.linspace(center[d] - half, center[d] + half, per_axis)
                for d in range(n)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        feas = np.ones(mesh.shape[0], dtype=bool)
        if prob.m:
            feas = np.all(mesh @ prob.G.T - prob.h <= 1e-12, axis=1)
        if np.any(feas):
            pts = mesh[feas]
            f = 0.5 * np.einsum("ij,ij->i", pts, pts) + pts @ prob.q
            k = int(np.argmin(f))
            if f[k] < best_f:
                best_f = float(f[k])
                best_z = pts[k].copy()
        center = best_z.copy()
        spacing = 2 * half / (per_axis - 1)
        if spacing <= resolution:
            return GridResult(objective=best_f, z=best_z, resolution=spacing,
                              feasible_found=found)
        half = 1.5 * spacing
    spacing = 2 * half / (per_axis - 1)
    return GridResult(objective=best_f, z=best_z, resolution=max(spacing, resolution),
                      feasible_found=found)


def grid_tolerance(prob: QpProblem, z_opt: np.ndarray, resolution: float) -> float:
    """Objective gap attributable to grid resolution near the optimum."""
    grad = float(np.linalg.norm(z_opt + prob.q))
    cell = math.sqrt(prob.n) * resolution
    return grad * cell + 0.5 * cell * cell + 1e-9


# -- finite differences along the flow --------------------------------------

def barrier_flow_derivative_fd(s: State, obstacles, p: BarrierParams,
                               u: np.ndarray, dt: float = 1e-5,
                               scheme: str = "central") -> float:
    """d/dt of the composed barrier along the exact disturbance-free flow.

    Obstacles advance along their own velocities; the craft follows the
    double-integrator flow p + v t + u t^2 / 2. Knows nothing about the
    analytic Lie derivatives it is used to check.
    """
    u = np.asarray(u, dtype=np.float64)

    def b_at(tau: float) -> float:
        moved = [Obstacle(center=o.center + o.velocity * tau, radius=o.radius,
                          velocity=o.velocity) for o in obstacles]
        st = State(p=s.p + s.v * tau + 0.5 * u * tau * tau, v=s.v + u * tau,
                   a_psi=s.a_psi, t=s.t + max(tau, 0.0))
        return lie_terms(st, moved, p).b

    if scheme == "central":
        return (b_at(dt) - b_at(-dt)) / (2.0 * dt)
    return (b_at(dt) - b_at(0.0)) / dt


# -- random scene / filter-problem sampling ---------------------------------

def random_state_and_obstacles(rng: np.random.Generator, p: BarrierParams,
                               n_obstacles: int | None = None,
                               min_margin: float = 0.05,
                               speed: float = 2.0):
    """A craft state plus obstacles at physical distances, none degenerate."""
    m = int(n_obstacles if n_obstacles is not None else rng.integers(1, 4))
    pos = rng.uniform(-2.0, 2.0, size=3)
    vel = rng.uniform(-speed, speed, size=3)
    obstacles = []
    while len(obstacles) < m:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        dist = rng.uniform(p.d_s + min_margin, 3.0)
        center = pos + direction * dist
        obstacles.append(Obstacle(center=center, radius=p.d_s * 2 / 3,
                                  velocity=rng.uniform(-0.5, 0.5, size=3)
                                  if rng.random() < 0.3 else np.zeros(3)))
    return State(p=pos, v=vel, a_psi=0.0, t=0.0), obstacles


def sample_filter_problems(n: int, seed: int = 0,
                           cfg: FilterConfig | None = None,
                           feasible_only: bool = True):
    """Deterministic stream of filter QPs from random physical scenes."""
    from . import backend
    cfg = cfg if cfg is not None else FilterConfig()
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        s, obstacles = random_state_and_obstacles(rng, cfg.barrier)
        u_r = rng.uniform(-5.0, 5.0, size=3)
        prob = assemble(s, obstacles, u_r, cfg)
        if feasible_only and backend.solve(prob, "pure").status != "optimal":
            continue
        out.append(prob)
    return out


def certified_filter_problems(n: int, seed: int = 0,
                              cfg: FilterConfig | None = None,
                              batch: int | None = None):
    """Filter QPs on which the projected-gradient oracle certifies itself.

    Instances where fixed-step PG stalls (near-degenerate active geometry,
    self-reported via its stationarity measure; about 1% of random scenes)
    are replaced; every kept instance still gets the full grid-search and
    KKT cross-checks, which have no conditioning limitation. Returns
    (problems, pg_objectives).
    """
    kept: list = []
    objs: list = []
    round_seed = seed
    while len(kept) < n:
        want = n - len(kept)
        probs = sample_filter_problems(batch or max(want + 8, 32), round_seed,
                                       cfg=cfg)
        f, stat = batched_projected_gradient(probs)
        for p, fi, si in zip(probs, f, stat):
            if si <= PG_CONVERGED_TOL and len(kept) < n:
                kept.append(p)
                objs.append(float(fi))
        round_seed = round_seed * 2 + 12345
    return kept, np.array(objs)
