"""Upstream tracking controllers: a squashed-Gaussian MLP policy with value
critic (trained by PPO in rcbf.ppo) and a deterministic PD baseline.

The stochastic policy maps the 14-dim observation to a 4-dim command
[v_c, w_c]. The actor outputs mean and log-std per action dimension; samples
are squashed through tanh and scaled to [+-5]^3 m/s^2 and +-pi/3 rad/s, with
the exact Jacobian correction in the log-density.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .dynamics import ControlCommand, SaturationLimits, State, saturate, wrap_angle
from .env import Reference

OBS_DIM = 14
ACT_DIM = 4
HIDDEN = 128
LOGSTD_MIN = -5.0
LOGSTD_MAX = 2.0
CHECKPOINT_VERSION = 1

ACTION_SCALE = np.array([5.0, 5.0, 5.0, math.pi / 3.0])
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicyParams:
    """Actor (14 -> 128 -> 128 -> 8) and critic (14 -> 128 -> 128 -> 1)."""

    actor: list
    critic: list
    action_scale: np.ndarray = field(default_factory=lambda: ACTION_SCALE.copy())


def init_policy(seed: int, logstd_init: float = -0.5) -> PolicyParams:
    rng = np.random.default_rng(seed)
    final_bias = np.zeros(2 * ACT_DIM)
    final_bias[ACT_DIM:] = logstd_init
    actor = mlp.init_mlp([OBS_DIM, HIDDEN, HIDDEN, 2 * ACT_DIM], rng,
                         final_scale=0.01, final_bias=final_bias)
    critic = mlp.init_mlp([OBS_DIM, HIDDEN, HIDDEN, 1], rng, final_scale=1.0)
    return PolicyParams(actor=actor, critic=critic)


def actor_heads(pp: PolicyParams, obs: np.ndarray):
    """Forward the actor; returns (mean, log_std, clamp mask, cache)."""
    out, cache = mlp.forward(pp.actor, obs)
    mean = out[:, :ACT_DIM]
    raw = out[:, ACT_DIM:]
    log_std = np.clip(raw, LOGSTD_MIN, LOGSTD_MAX)
    inside = (raw > LOGSTD_MIN) & (raw < LOGSTD_MAX)
    return mean, log_std, inside, cache


def value(pp: PolicyParams, obs: np.ndarray) -> np.ndarray:
    out, _ = mlp.forward(pp.critic, obs)
    return out[:, 0]


def _log_prob_pieces(mean, log_std, pre_tanh, scale):
    """Log-density of the squashed sample, plus the Gaussian residuals needed
    for gradients. log(1 - tanh(y)^2) computed in the stable softplus form."""
    std = np.exp(log_std)
    zscore = (pre_tanh - mean) / std
    gauss = -0.5 * zscore ** 2 - log_std - 0.5 * LOG_2PI
    squash = 2.0 * (math.log(2.0) - pre_tanh - np.logaddexp(0.0, -2.0 * pre_tanh))
    log_prob = np.sum(gauss - np.log(scale) + squash, axis=-1)
    return log_prob, zscore, std


def log_prob(pp: PolicyParams, obs: np.ndarray, pre_tanh: np.ndarray) -> np.ndarray:
    """Log-density of previously sampled pre-squash actions under pp."""
    mean, log_std, _, _ = actor_heads(pp, np.atleast_2d(obs))
    lp, _, _ = _log_prob_pieces(mean, log_std, np.atleast_2d(pre_tanh),
                                pp.action_scale)
    return lp


def act(pp: PolicyParams, obs, deterministic: bool = False,
        rng: np.random.Generator | None = None):
    """Sample (or take the mean of) the policy at one observation.

    Returns (action 4-vector, log_prob). Raises on non-finite network output.
    """
    a, lp, _ = sample(pp, obs, deterministic=deterministic, rng=rng)
    return a[0], float(lp[0])


def sample(pp: PolicyParams, obs, deterministic: bool = False,
           rng: np.random.Generator | None = None):
    """Batched sampling; returns (actions, log_probs, pre_tanh)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    mean, log_std, _, _ = actor_heads(pp, obs)
    if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(log_std)):
        raise FloatingPointError(
            f"non-finite actor output: mean range "
            f"[{np.nanmin(mean)}, {np.nanmax(mean)}]")
    if deterministic:
        pre = mean.copy()
    else:
        if rng is None:
            raise ValueError("rng required for stochastic sampling")
        pre = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    action = pp.action_scale * np.tanh(pre)
    lp, _, _ = _log_prob_pieces(mean, log_std, pre, pp.action_scale)
    return action, lp, pre


def gae(rewards, values, dones, last_value: float, discount: float,
        lam: float, bootstrap_values=None):
    """Generalized advantage estimation over a (possibly multi-episode) span.

    dones marks transitions that ended an episode. A done transition takes
    its successor value from bootstrap_values[t] when given (time-limit
    truncation: the episode ended but the task continues, so the terminal
    state's value still counts) and 0 otherwise (true termination);
    last_value bootstraps the state after the final transition. Returns raw
    (un-normalized) advantages and the value targets.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = rewards.size
    adv = np.zeros(n)
    next_value = last_value
    acc = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            v_next = 0.0 if bootstrap_values is None else bootstrap_values[t]
            delta = rewards[t] + discount * v_next - values[t]
            acc = delta
        else:
            delta = rewards[t] + discount * next_value - values[t]
            acc = delta + discount * lam * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# -- deterministic PD baseline -------------------------------------------


@dataclass(frozen=True)
class PdGains:
    kp: float = 6.0
    kv: float = 5.0
    kpsi: float = 4.0


def pd_baseline(s: State, ref: Reference, gains: PdGains,
                limits: SaturationLimits | None = None) -> ControlCommand:
    """PD tracking law with acceleration feedforward, then saturation."""
    lim = limits if limits is not None else SaturationLimits()
    v_c = (gains.kp * (ref.p_r - s.p) + gains.kv * (ref.v_r - s.v) + ref.a_r)
    w_c = gains.kpsi * wrap_angle(ref.a_psi_r - s.a_psi)
    return saturate(ControlCommand(v_c=v_c, w_c=w_c), lim)


class PdController:
    """Controller-protocol wrapper around the PD law."""

    def __init__(self, gains: PdGains | None = None,
                 limits: SaturationLimits | None = None):
        self.gains = gains if gains is not None else PdGains()
        self.limits = limits if limits is not None else SaturationLimits()

    def action(self, obs, state: State, ref: Reference,
               rng: np.random.Generator) -> np.ndarray:
        return pd_baseline(state, ref, self.gains, self.limits).as_array()


class PolicyController:
    """Controller-protocol wrapper around a (possibly stochastic) policy."""

    def __init__(self, params: PolicyParams, deterministic: bool = True):
        self.params = params
        self.deterministic = deterministic

    def action(self, obs, state, ref, rng: np.random.Generator) -> np.ndarray:
        a, _ = act(self.params, obs, deterministic=self.deterministic, rng=rng)
        return a


# -- checkpoint I/O --------------------------------------------------------


def save_checkpoint(path: str, pp: PolicyParams, extra: dict | None = None):
    """Versioned npz blob: flat weight arrays plus a JSON shape header."""
    arrays = {}
    header = {"format_version": CHECKPOINT_VERSION,
              "actor_shapes": [[list(w.shape), list(b.shape)] for w, b in pp.actor],
              "critic_shapes": [[list(w.shape), list(b.shape)] for w, b in pp.critic],
              "action_scale": pp.action_scale.tolist(),
              "extra": extra or {}}
    for i, (w, b) in enumerate(pp.actor):
        arrays[f"actor_w{i}"] = w
        arrays[f"actor_b{i}"] = b
    for i, (w, b) in enumerate(pp.critic):
        arrays[f"critic_w{i}"] = w
        arrays[f"critic_b{i}"] = b
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> tuple[PolicyParams, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version "
                             f"{header['format_version']}")
        actor = [(data[f"actor_w{i}"], data[f"actor_b{i}"])
                 for i in range(len(header["actor_shapes"]))]
        critic = [(data[f"critic_w{i}"], data[f"critic_b{i}"])
                  for i in range(len(header["critic_shapes"]))]
    pp = PolicyParams(actor=actor, critic=critic,
                      action_scale=np.array(header["action_scale"]))
    return pp, header["extra"]
