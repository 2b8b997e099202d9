"""Proximal policy optimization with parameter sharing across agents.

Every autonomous vehicle acts through one central policy and contributes its
transitions to one shared batch; the per-step reward is the identical scalar
the environment hands to the whole fleet. Rollouts are collected stream-wise
per agent (an agent's stream ends when it leaves the network), advantages
come from GAE, and updates use the clipped surrogate objective.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .rlenv import Action


@dataclass(frozen=True)
class PpoHparams:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    rollout_steps: int = 4096
    value_weight: float = 0.5
    entropy_weight: float = 0.01
    iterations: int = 50

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


def gae_advantages(rewards, values, dones, bootstrap_value: float,
                   gamma: float, lam: float):
    """Generalized advantage estimation over one agent stream.

    delta_t = r_t + gamma*V(s_{t+1})*(1-done_t) - V(s_t), advantages the
    (gamma*lam)-discounted sum of deltas within the episode; value targets
    are advantages + V. Returns (advantages, value_targets).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = rewards.size
    next_values = np.append(values[1:], bootstrap_value)
    deltas = rewards + gamma * next_values * (1.0 - dones) - values
    adv = np.zeros(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        acc = deltas[t] + gamma * lam * (1.0 - dones[t]) * acc
        adv[t] = acc
    return adv, adv + values


def clipped_surrogate(logp_new, logp_old, advantage, clip_eps: float):
    """Pointwise PPO objective min(ratio*A, clip(ratio, 1±eps)*A)."""
    ratio = np.exp(np.asarray(logp_new) - np.asarray(logp_old))
    advantage = np.asarray(advantage)
    return np.minimum(ratio * advantage,
                      np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
                      * advantage)


class _Stream:
    """Per-agent transition buffer within one episode."""

    __slots__ = ("obs", "accel", "lane", "logp", "value", "reward", "done",
                 "bootstrap")

    def __init__(self):
        self.obs, self.accel, self.lane = [], [], []
        self.logp, self.value, self.reward, self.done = [], [], [], []
        self.bootstrap = 0.0


def collect_rollout(params: dict, env_factory, steps_target: int,
                    rng: np.random.Generator, hp: PpoHparams):
    """Run episodes until ``steps_target`` agent-transitions are gathered.

    Returns (batch dict of aligned arrays, list of episode returns).
    """
    cols = {k: [] for k in ("obs", "accel", "lane", "logp_old", "value",
                            "advantage", "value_target", "reward")}
    episode_returns = []
    total = 0
    while total < steps_target:
        env, obs = env_factory(int(rng.integers(0, 2 ** 31)))
        streams: dict[int, _Stream] = {}
        ep_return = 0.0
        done = False
        while not done and total < steps_target:
            actions, recs = {}, {}
            for i, o in obs.items():
                a, lane, lp, val = nn.sample_action(params, o, rng)
                actions[i] = Action(a, lane)
                recs[i] = (o, a, lane, lp, val)
            obs2, r, done, info = env.step(actions)
            ep_return += r
            collided = bool(info.get("collision"))
            for i, (o, a, lane, lp, val) in recs.items():
                s = streams.setdefault(i, _Stream())
                s.obs.append(o)
                s.accel.append(a)
                s.lane.append(lane)
                s.logp.append(lp)
                s.value.append(val)
                s.reward.append(r)
                vanished = i not in obs2
                s.done.append(vanished or collided)
                total += 1
            obs = obs2
        # Truncated streams bootstrap from the value of their last state.
        for i, s in streams.items():
            if not s.done[-1] and i in obs:
                s.bootstrap = nn.policy_forward(params, obs[i])[3]
        episode_returns.append(ep_return)
        for s in streams.values():
            adv, v_targ = gae_advantages(s.reward, s.value, s.done,
                                         s.bootstrap, hp.gamma, hp.lam)
            cols["obs"].extend(s.obs)
            cols["accel"].extend(s.accel)
            cols["lane"].extend(s.lane)
            cols["logp_old"].extend(s.logp)
            cols["value"].extend(s.value)
            cols["advantage"].extend(adv)
            cols["value_target"].extend(v_targ)
            cols["reward"].extend(s.reward)
    batch = {
        "obs": np.asarray(cols["obs"], dtype=np.float64),
        "accel": np.asarray(cols["accel"], dtype=np.float64),
        "lane": np.asarray(cols["lane"], dtype=np.int64),
        "logp_old": np.asarray(cols["logp_old"], dtype=np.float64),
        "advantage": np.asarray(cols["advantage"], dtype=np.float64),
        "value_target": np.asarray(cols["value_target"], dtype=np.float64),
        "reward": np.asarray(cols["reward"], dtype=np.float64),
    }
    return batch, episode_returns


def _normalize(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-8:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


def train(env_factory, hp: PpoHparams, seed: int, obs_dim: int = nn.OBS_DIM,
          log_path=None, checkpoint_path=None, callback=None,
          initial_params=None):
    """Full training loop; returns (params, per-iteration log rows).

    ``env_factory(seed) -> (env, initial observations)`` builds one episode
    environment; ``callback(iteration, row)`` may observe progress.
    ``initial_params`` continues from a warm start instead of fresh weights.
    """
    rng = np.random.default_rng(seed)
    params = initial_params or nn.init_params(seed, obs_dim=obs_dim)
    flat = nn.flatten(params)
    opt = nn.Adam(flat.size, lr=hp.learning_rate)
    log_rows = []
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mean_return", "mean_step_reward",
                         "loss", "value_mse", "entropy", "wall_s"])
    try:
        for it in range(hp.iterations):
            t0 = time.time()
            batch, returns = collect_rollout(params, env_factory,
                                             hp.rollout_steps, rng, hp)
            batch["advantage"] = _normalize(batch["advantage"])
            n = batch["obs"].shape[0]
            last_loss, last_stats = 0.0, {}
            for _ in range(hp.epochs):
                order = rng.permutation(n)
                for start in range(0, n, hp.minibatch_size):
                    idx = order[start:start + hp.minibatch_size]
                    mb = {k: batch[k][idx] for k in
                          ("obs", "accel", "lane", "logp_old", "advantage",
                           "value_target")}
                    loss, grads, stats = nn.loss_and_grad(
                        params, mb, hp.clip_eps, hp.value_weight,
                        hp.entropy_weight)
                    if not np.isfinite(loss):
                        raise FloatingPointError(
                            f"non-finite loss at iteration {it}")
                    flat = opt.step(nn.flatten(params),
                                    nn.grads_flatten(grads, params))
                    params = nn.unflatten(flat, params)
                    last_loss, last_stats = loss, stats
            row = {
                "iteration": it,
                "mean_return": float(np.mean(returns)),
                "mean_step_reward": float(batch["reward"].mean()),
                "loss": last_loss,
                "value_mse": last_stats.get("value_mse", 0.0),
                "entropy": last_stats.get("entropy", 0.0),
                "wall_s": time.time() - t0,
            }
            log_rows.append(row)
            if writer is not None:
                writer.writerow([row[k] for k in
                                 ("iteration", "mean_return",
                                  "mean_step_reward", "loss", "value_mse",
                                  "entropy", "wall_s")])
                fh.flush()
            if checkpoint_path is not None:
                nn.save_checkpoint(checkpoint_path, params)
            if callback is not None:
                callback(it, row)
    finally:
        if fh is not None:
            fh.close()
    return params, log_rows


def collect_demonstrations(env_factory, steps_target: int,
                           rng: np.random.Generator, gamma: float):
    """Rollouts where every agent takes the environment's baseline action.

    Returns a batch with the demonstrated accelerations and discounted
    rewards-to-go as value targets, for imitation pretraining.
    """
    obs_l, accel_l, targ_l = [], [], []
    total = 0
    while total < steps_target:
        env, obs = env_factory(int(rng.integers(0, 2 ** 31)))
        streams: dict[int, tuple[list, list, list]] = {}
        done = False
        while not done and total < steps_target:
            base = env.baseline_actions()
            actions = {i: Action(a, 0) for i, a in base.items()}
            recs = {i: (obs[i], base[i]) for i in obs}
            obs, r, done, _ = env.step(actions)
            for i, (o, a) in recs.items():
                s = streams.setdefault(i, ([], [], []))
                s[0].append(o)
                s[1].append(a)
                s[2].append(r)
                total += 1
        for o, a, rews in streams.values():
            acc = 0.0
            togo = [0.0] * len(rews)
            for t in range(len(rews) - 1, -1, -1):
                acc = rews[t] + gamma * acc
                togo[t] = acc
            obs_l.extend(o)
            accel_l.extend(a)
            targ_l.extend(togo)
    return {
        "obs": np.asarray(obs_l, dtype=np.float64),
        "accel": np.asarray(accel_l, dtype=np.float64),
        "lane": np.zeros(len(accel_l), dtype=np.int64),
        "advantage": np.ones(len(accel_l)),
        "value_target": np.asarray(targ_l, dtype=np.float64),
    }


def imitation_pretrain(params: dict, env_factory, hp: PpoHparams,
                       iterations: int, rng: np.random.Generator,
                       callback=None):
    """Warm-start the policy by behavior-cloning the baseline controller.

    Reuses the PPO loss: with logp_old recomputed from the current
    parameters per minibatch, the ratio is exactly 1 and the surrogate's
    gradient reduces to the log-likelihood gradient of the demonstrated
    action (advantage 1), while the value head regresses rewards-to-go.
    """
    flat = nn.flatten(params)
    opt = nn.Adam(flat.size, lr=hp.learning_rate)
    for it in range(iterations):
        batch = collect_demonstrations(env_factory, hp.rollout_steps, rng,
                                       hp.gamma)
        n = batch["obs"].shape[0]
        last = 0.0
        for _ in range(hp.epochs):
            order = rng.permutation(n)
            for start in range(0, n, hp.minibatch_size):
                idx = order[start:start + hp.minibatch_size]
                mb = {k: batch[k][idx] for k in
                      ("obs", "accel", "lane", "advantage", "value_target")}
                cache = nn.forward(params, mb["obs"])
                mb["logp_old"] = nn.log_prob(cache, mb["accel"], mb["lane"])
                loss, grads, _ = nn.loss_and_grad(
                    params, mb, hp.clip_eps, hp.value_weight,
                    hp.entropy_weight)
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite pretrain loss at iteration {it}")
                flat = opt.step(nn.flatten(params),
                                nn.grads_flatten(grads, params))
                params = nn.unflatten(flat, params)
                last = loss
        if callback is not None:
            callback(it, last)
    return params


def gradient_check(params: dict, batch: dict, clip_eps: float = 0.2,
                   value_weight: float = 0.5, entropy_weight: float = 0.01,
                   n_samples: int = 60, h: float = 1e-5,
                   seed: int = 0) -> float:
    """Max relative error between the analytic gradient and central finite
    differences over a random parameter subset."""
    if batch["obs"].shape[0] == 0:
        return 0.0
    _, grads, _ = nn.loss_and_grad(params, batch, clip_eps, value_weight,
                                   entropy_weight)
    analytic = nn.grads_flatten(grads, params)
    flat = nn.flatten(params)
    rng = np.random.default_rng(seed)
    idx = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
    worst = 0.0
    for i in idx:
        up = flat.copy()
        up[i] += h
        lo = flat.copy()
        lo[i] -= h
        f_up, _, _ = nn.loss_and_grad(nn.unflatten(up, params), batch,
                                      clip_eps, value_weight, entropy_weight)
        f_lo, _, _ = nn.loss_and_grad(nn.unflatten(lo, params), batch,
                                      clip_eps, value_weight, entropy_weight)
        numeric = (f_up - f_lo) / (2.0 * h)
        denom = max(1e-8, abs(analytic[i]) + abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
