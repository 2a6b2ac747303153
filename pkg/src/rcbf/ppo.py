"""On-policy training loop: clipped-surrogate policy gradient with a value
critic (GAE advantages), running against the figure-8 tracking environment.

Two training modes:
  post_filter:      the policy trains on the bare plant (no obstacles, filter
                    off); the safety filter is applied only at deployment.
  learning_filter:  obstacles present and the filter runs inside the training
                    loop, so every training step is already collision-free.

Updates use Adam on both networks with gradients accumulated by the
hand-written reverse pass in rcbf.mlp; the clipped-surrogate gradient flows
only through samples whose ratio is unclipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .dynamics import DisturbanceModel
from .env import TrackingEnv, default_scene, empty_scene
from .policy import (ACT_DIM, PolicyParams, _log_prob_pieces, actor_heads,
                     init_policy, gae, normalize_advantages, sample, value)


class TrainingDiverged(RuntimeError):
    """Raised when the return collapses below the floor after the grace period."""


@dataclass
class PpoConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    rollout: int = 2048            # update interval (steps between updates)
    epochs: int = 10
    minibatch: int = 256
    total_steps: int = 500_000
    seed: int = 0
    max_grad_norm: float = 0.5
    logstd_init: float = -2.0      # noise integrates twice to position; keep small
    divergence_floor: float = 0.5
    grace_episodes: int = 80

    def __post_init__(self):
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must be in (0, 1)")
        if not (0.0 < self.clip < 1.0):
            raise ValueError("clip must be in (0, 1)")


@dataclass
class UpdateDiagnostics:
    surrogate: float           # clipped surrogate objective (to maximize)
    critic_loss: float
    mean_abs_ratio_dev: float  # mean |ratio - 1| on the first minibatch
    clip_fraction: float
    skipped_minibatches: int


@dataclass
class TrainResult:
    params: PolicyParams
    curves: list               # (global_step, episode_return, episode_cost)
    diagnostics: list = field(default_factory=list)
    steps_run: int = 0


def _actor_minibatch_update(pp, opt, batch_idx, obs, pre_tanh, old_lp, adv,
                            cfg) -> tuple[float, float, float, bool]:
    o = obs[batch_idx]
    y = pre_tanh[batch_idx]
    a_hat = adv[batch_idx]
    lp_old = old_lp[batch_idx]
    B = o.shape[0]

    mean, log_std, inside, cache = actor_heads(pp, o)
    lp_new, zscore, std = _log_prob_pieces(mean, log_std, y, pp.action_scale)
    ratio = np.exp(lp_new - lp_old)
    surr1 = ratio * a_hat
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surr2 = clipped * a_hat
    objective = float(np.mean(np.minimum(surr1, surr2)))

    # descent on -objective; gradient only through the unclipped branch
    grad_mask = (surr1 <= surr2).astype(np.float64)
    dlp = -(a_hat * ratio * grad_mask) / B
    dmean = dlp[:, None] * (zscore / std)
    dlogstd = dlp[:, None] * (zscore ** 2 - 1.0) * inside
    dout = np.concatenate([dmean, dlogstd], axis=1)

    if not np.all(np.isfinite(dout)):
        return objective, float(np.mean(np.abs(ratio - 1.0))), 0.0, False
    grads = mlp.clip_grads(mlp.backward(pp.actor, cache, dout),
                           cfg.max_grad_norm)
    pp.actor = opt.step(pp.actor, grads)
    clip_frac = float(np.mean((np.abs(ratio - 1.0) > cfg.clip)))
    return objective, float(np.mean(np.abs(ratio - 1.0))), clip_frac, True


def _critic_minibatch_update(pp, opt, batch_idx, obs, returns, cfg
                             ) -> tuple[float, bool]:
    o = obs[batch_idx]
    targets = returns[batch_idx]
    out, cache = mlp.forward(pp.critic, o)
    v = out[:, 0]
    err = v - targets
    loss = float(np.mean(err ** 2))
    dout = (2.0 * err / err.size)[:, None]
    if not math.isfinite(loss):
        return loss, False
    grads = mlp.clip_grads(mlp.backward(pp.critic, cache, dout),
                           cfg.max_grad_norm)
    pp.critic = opt.step(pp.critic, grads)
    return loss, True


def ppo_update(pp: PolicyParams, batch: dict, cfg: PpoConfig,
               actor_opt: mlp.Adam, critic_opt: mlp.Adam
               ) -> UpdateDiagnostics:
    """Run cfg.epochs of minibatch updates on one on-policy batch.

    batch keys: obs (N,14), pre_tanh (N,4), log_prob (N,), adv (N,),
    returns (N,). Advantages are normalized here, per batch.
    """
    n = batch["obs"].shape[0]
    adv = normalize_advantages(batch["adv"])
    rng = np.random.default_rng(batch.get("shuffle_seed", 0))
    first_ratio_dev = None
    surrogate = 0.0
    critic_loss = 0.0
    clip_frac = 0.0
    skipped = 0
    count = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            s, rdev, cf, ok = _actor_minibatch_update(
                pp, actor_opt, idx, batch["obs"], batch["pre_tanh"],
                batch["log_prob"], adv, cfg)
            closs, ok2 = _critic_minibatch_update(
                pp, critic_opt, idx, batch["obs"], batch["returns"], cfg)
            if first_ratio_dev is None:
                first_ratio_dev = rdev
            surrogate, critic_loss, clip_frac = s, closs, cf
            skipped += (not ok) + (not ok2)
            count += 1
    return UpdateDiagnostics(surrogate=surrogate, critic_loss=critic_loss,
                             mean_abs_ratio_dev=first_ratio_dev or 0.0,
                             clip_fraction=clip_frac,
                             skipped_minibatches=skipped)


def make_training_env(mode: str) -> TrackingEnv:
    """Environment wired for the given training mode (no disturbance while
    training; disturbances are an evaluation-time stress)."""
    if mode == "post_filter":
        return TrackingEnv(scene=empty_scene(), mode="off",
                           disturbance=DisturbanceModel(kind="none"))
    if mode == "learning_filter":
        return TrackingEnv(scene=default_scene(), mode="learning_filter",
                           disturbance=DisturbanceModel(kind="none"))
    raise ValueError(f"unknown training mode {mode!r}")


def train(cfg: PpoConfig, mode: str, env: TrackingEnv | None = None,
          stop_fn=None, log_fn=None) -> TrainResult:
    """Algorithm loop: collect `rollout` steps, update, repeat to total_steps.

    stop_fn(result) may end training early (used by property-based checks);
    log_fn(cycle, result, diag) observes progress. Deterministic per seed.
    """
    env = env if env is not None else make_training_env(mode)
    rng = np.random.default_rng(cfg.seed)
    pp = init_policy(cfg.seed, logstd_init=cfg.logstd_init)
    actor_opt = mlp.Adam(pp.actor, cfg.actor_lr)
    critic_opt = mlp.Adam(pp.critic, cfg.critic_lr)

    result = TrainResult(params=pp, curves=[])
    if cfg.total_steps <= 0:
        return result

    episode = 0
    ep_return = 0.0
    ep_cost = 0
    obs = env.reset(seed=cfg.seed)
    global_step = 0

    while global_step < cfg.total_steps:
        n = min(cfg.rollout, cfg.total_steps - global_step)
        obs_buf = np.empty((n, obs.size))
        pre_buf = np.empty((n, ACT_DIM))
        lp_buf = np.empty(n)
        rew_buf = np.empty(n)
        done_buf = np.zeros(n, dtype=bool)
        terminal_obs: dict[int, np.ndarray] = {}
        for i in range(n):
            obs_buf[i] = obs
            action, lp, pre = sample(pp, obs, rng=rng)
            pre_buf[i] = pre[0]
            lp_buf[i] = lp[0]
            obs, rew, cost, done, _ = env.step(action[0])
            rew_buf[i] = rew
            done_buf[i] = done
            ep_return += rew
            ep_cost += cost
            global_step += 1
            if done:
                # horizon cut is a truncation: keep the terminal state's
                # value in the bootstrap, then start a fresh episode
                terminal_obs[i] = env.observe()
                result.curves.append((global_step, ep_return, ep_cost))
                episode += 1
                ep_return = 0.0
                ep_cost = 0
                obs = env.reset(seed=cfg.seed * 1_000_003 + episode)

        # Rewards live in (0, 1], so true values live in (0, 1/(1-discount)].
        # Projecting estimates onto that range stops the critic's off-track
        # extrapolation from feeding back into its own bootstrap targets.
        v_cap = 1.0 / (1.0 - cfg.discount)
        values = np.clip(value(pp, obs_buf), 0.0, v_cap)
        last_value = float(np.clip(value(pp, obs[None, :])[0], 0.0, v_cap))
        boot = np.zeros(n)
        if terminal_obs:
            idx = sorted(terminal_obs)
            boot[idx] = np.clip(
                value(pp, np.stack([terminal_obs[i] for i in idx])), 0.0, v_cap)
        adv, returns = gae(rew_buf, values, done_buf, last_value,
                           cfg.discount, cfg.gae_lambda,
                           bootstrap_values=boot)
        returns = np.clip(returns, 0.0, v_cap)
        batch = {"obs": obs_buf, "pre_tanh": pre_buf, "log_prob": lp_buf,
                 "adv": adv, "returns": returns,
                 "shuffle_seed": cfg.seed + global_step}
        diag = ppo_update(pp, batch, cfg, actor_opt, critic_opt)
        result.diagnostics.append(diag)
        result.steps_run = global_step
        if log_fn is not None:
            log_fn(global_step, result, diag)

        if episode >= cfg.grace_episodes:
            recent = [r for _, r, _ in result.curves[-10:]]
            if np.mean(recent) < cfg.divergence_floor:
                raise TrainingDiverged(
                    f"mean return {np.mean(recent):.3f} below floor "
                    f"{cfg.divergence_floor} after {episode} episodes")
        if stop_fn is not None and stop_fn(result):
            break

    result.params = pp
    return result
