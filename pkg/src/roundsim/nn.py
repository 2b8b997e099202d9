"""Actor-critic network in plain numpy with hand-derived gradients.

Architecture: two tanh hidden layers (64 units each) shared by three heads —
a tanh-squashed Gaussian mean for acceleration (state-independent learnable
log-std), a Bernoulli logit for lane changing, and a scalar state value.
The gradient of the full PPO loss is computed analytically in
``loss_and_grad`` and validated against finite differences by
``gradient_check`` in the ppo module.
"""
from __future__ import annotations

import json
import struct

import numpy as np

OBS_DIM = 10
HIDDEN = 64
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0

CHECKPOINT_MAGIC = b"RSPC"
CHECKPOINT_VERSION = 1

# Parameter layout: fixed order so flatten/unflatten round-trips exactly.
_PARAM_KEYS = ("W1", "b1", "W2", "b2", "Wm", "bm", "Wl", "bl", "Wv", "bv",
               "log_std")


def init_params(seed: int, obs_dim: int = OBS_DIM, hidden: int = HIDDEN,
                accel_low: float = -4.2939, accel_high: float = 1.7634) -> dict:
    """He-scaled hidden layers, small-output heads, zero log-std."""
    rng = np.random.default_rng(seed)

    def layer(n_in, n_out, scale):
        return rng.normal(0.0, scale / np.sqrt(n_in), size=(n_in, n_out))

    params = {
        "W1": layer(obs_dim, hidden, 1.0), "b1": np.zeros(hidden),
        "W2": layer(hidden, hidden, 1.0), "b2": np.zeros(hidden),
        # Bias the mean head so the initial policy outputs ~zero acceleration
        # (the feasible range is asymmetric, so tanh(0) would sit at its
        # midpoint, a systematic braking bias).
        "Wm": layer(hidden, 1, 0.01),
        "bm": np.array([np.arctanh((0.0 - (accel_high + accel_low) / 2.0)
                                   / ((accel_high - accel_low) / 2.0))]),
        "Wl": layer(hidden, 1, 0.01), "bl": np.zeros(1),
        "Wv": layer(hidden, 1, 1.0), "bv": np.zeros(1),
        "log_std": np.zeros(1),
        # architecture metadata rides along (not trained)
    }
    params["_arch"] = {"obs_dim": obs_dim, "hidden": hidden,
                       "accel_low": accel_low, "accel_high": accel_high}
    return params


def _accel_range(params):
    arch = params["_arch"]
    lo, hi = arch["accel_low"], arch["accel_high"]
    mid = (hi + lo) / 2.0
    half = (hi - lo) / 2.0
    return mid, half


def forward(params: dict, X: np.ndarray) -> dict:
    """Batched forward pass; returns a cache for backprop."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    z1 = X @ params["W1"] + params["b1"]
    h1 = np.tanh(z1)
    z2 = h1 @ params["W2"] + params["b2"]
    h2 = np.tanh(z2)
    raw_m = (h2 @ params["Wm"] + params["bm"])[:, 0]
    tanh_m = np.tanh(raw_m)
    mid, half = _accel_range(params)
    mean = mid + half * tanh_m
    logit = (h2 @ params["Wl"] + params["bl"])[:, 0]
    lane_p = 1.0 / (1.0 + np.exp(-logit))
    value = (h2 @ params["Wv"] + params["bv"])[:, 0]
    log_std = np.clip(params["log_std"][0], LOG_STD_MIN, LOG_STD_MAX)
    return {"X": X, "h1": h1, "h2": h2, "tanh_m": tanh_m, "mean": mean,
            "logit": logit, "lane_p": lane_p, "value": value,
            "log_std": log_std, "sigma": np.exp(log_std)}


def policy_forward(params: dict, obs) -> tuple[float, float, float, float]:
    """(accel_mean, accel_std, lane_prob, value) for one observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (params["_arch"]["obs_dim"],):
        raise ValueError(f"observation must have shape "
                         f"({params['_arch']['obs_dim']},)")
    for k in _PARAM_KEYS:
        if not np.all(np.isfinite(params[k])):
            raise ValueError(f"non-finite parameters in {k}")
    f = forward(params, obs[None, :])
    return (float(f["mean"][0]), float(f["sigma"]), float(f["lane_p"][0]),
            float(f["value"][0]))


_LOG_2PI = np.log(2.0 * np.pi)


def log_prob(cache: dict, accel: np.ndarray, lane: np.ndarray) -> np.ndarray:
    """Joint log-probability of the factorized (Gaussian, Bernoulli) action."""
    sigma = cache["sigma"]
    z = (np.asarray(accel) - cache["mean"]) / sigma
    lp_g = -0.5 * z * z - cache["log_std"] - 0.5 * _LOG_2PI
    p = np.clip(cache["lane_p"], 1e-12, 1.0 - 1e-12)
    lane = np.asarray(lane)
    lp_b = lane * np.log(p) + (1 - lane) * np.log(1.0 - p)
    return lp_g + lp_b


def entropy(cache: dict) -> np.ndarray:
    """Per-sample entropy of the factorized action distribution."""
    h_g = 0.5 * (1.0 + _LOG_2PI) + cache["log_std"]
    p = np.clip(cache["lane_p"], 1e-12, 1.0 - 1e-12)
    h_b = -p * np.log(p) - (1 - p) * np.log(1 - p)
    return h_g + h_b


def sample_action(params: dict, obs: np.ndarray, rng: np.random.Generator):
    """Sample (accel, lane) plus its log-prob and the state value."""
    f = forward(params, obs[None, :])
    accel = float(rng.normal(f["mean"][0], f["sigma"]))
    lane = int(rng.random() < f["lane_p"][0])
    lp = float(log_prob(f, np.array([accel]), np.array([lane]))[0])
    return accel, lane, lp, float(f["value"][0])


def loss_and_grad(params: dict, batch: dict, clip_eps: float,
                  value_weight: float, entropy_weight: float):
    """PPO loss (to MINIMIZE) and its analytic gradient.

    batch: obs [N, D], accel [N], lane [N], logp_old [N], advantage [N],
    value_target [N]. Loss = -surrogate + value_weight*MSE(V, target)
    - entropy_weight*H.
    """
    obs = batch["obs"]
    accel = batch["accel"]
    lane = batch["lane"]
    logp_old = batch["logp_old"]
    adv = batch["advantage"]
    v_target = batch["value_target"]
    n = obs.shape[0]

    f = forward(params, obs)
    lp = log_prob(f, accel, lane)
    ratio = np.exp(lp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr_un = ratio * adv
    surr_cl = clipped * adv
    surrogate = np.minimum(surr_un, surr_cl)
    ent = entropy(f)
    v_err = f["value"] - v_target
    loss = (-surrogate.mean() + value_weight * np.mean(v_err ** 2)
            - entropy_weight * ent.mean())

    # -- backward ----------------------------------------------------------
    # d(-surrogate)/dlogp: gradient flows only where the unclipped branch is
    # the active minimum.
    active = (surr_un <= surr_cl).astype(np.float64)
    d_lp = -(active * ratio * adv) / n

    sigma = f["sigma"]
    z = (accel - f["mean"]) / sigma
    # Gaussian head
    d_mean = d_lp * (z / sigma)
    d_logstd_policy = np.sum(d_lp * (z * z - 1.0))
    # Bernoulli head
    p = np.clip(f["lane_p"], 1e-12, 1.0 - 1e-12)
    d_logit = d_lp * (lane - p)
    # entropy: H_gauss depends on log_std only; H_bern on the logit.
    d_logstd_ent = -entropy_weight * 1.0  # d(-w*mean(H))/dlog_std summed
    logit_term = np.log1p(-p) - np.log(p)  # dH_b/dp * dp/dlogit = p(1-p)*...
    d_logit += -entropy_weight * (p * (1.0 - p) * logit_term) / n
    # value head
    d_value = value_weight * 2.0 * v_err / n

    mid, half = _accel_range(params)
    d_raw_m = d_mean * half * (1.0 - f["tanh_m"] ** 2)
    h2 = f["h2"]
    grads = {}
    grads["Wm"] = h2.T @ d_raw_m[:, None]
    grads["bm"] = np.array([d_raw_m.sum()])
    grads["Wl"] = h2.T @ d_logit[:, None]
    grads["bl"] = np.array([d_logit.sum()])
    grads["Wv"] = h2.T @ d_value[:, None]
    grads["bv"] = np.array([d_value.sum()])
    # log_std gradient vanishes outside the clamp range.
    raw_ls = params["log_std"][0]
    in_range = float(LOG_STD_MIN < raw_ls < LOG_STD_MAX)
    grads["log_std"] = np.array(
        [(d_logstd_policy + d_logstd_ent) * in_range])

    d_h2 = (d_raw_m[:, None] @ params["Wm"].T.reshape(1, -1)
            + d_logit[:, None] @ params["Wl"].T.reshape(1, -1)
            + d_value[:, None] @ params["Wv"].T.reshape(1, -1))
    d_z2 = d_h2 * (1.0 - h2 ** 2)
    grads["W2"] = f["h1"].T @ d_z2
    grads["b2"] = d_z2.sum(axis=0)
    d_h1 = d_z2 @ params["W2"].T
    d_z1 = d_h1 * (1.0 - f["h1"] ** 2)
    grads["W1"] = f["X"].T @ d_z1
    grads["b1"] = d_z1.sum(axis=0)
    stats = {"ratio_mean": float(ratio.mean()),
             "value_mse": float(np.mean(v_err ** 2)),
             "entropy": float(ent.mean())}
    return float(loss), grads, stats


# -- parameter flattening and Adam ------------------------------------------


def flatten(params: dict) -> np.ndarray:
    return np.concatenate([np.asarray(params[k], dtype=np.float64).ravel()
                           for k in _PARAM_KEYS])


def unflatten(flat: np.ndarray, template: dict) -> dict:
    out = {"_arch": dict(template["_arch"])}
    i = 0
    for k in _PARAM_KEYS:
        shape = np.asarray(template[k]).shape
        size = int(np.prod(shape)) if shape else 1
        out[k] = np.asarray(flat[i:i + size], dtype=np.float64).reshape(shape)
        i += size
    if i != flat.size:
        raise ValueError("flat parameter vector has wrong length")
    return out


class Adam:
    """Standard Adam on the flat parameter vector."""

    def __init__(self, size: int, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, flat_params: np.ndarray, flat_grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * flat_grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * flat_grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return flat_params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grads_flatten(grads: dict, template: dict) -> np.ndarray:
    return np.concatenate([np.asarray(grads[k], dtype=np.float64).ravel()
                           for k in _PARAM_KEYS])


# -- checkpoint format -------------------------------------------------------
#
# magic "RSPC" | uint32 version | uint32 header length | JSON architecture
# descriptor | flat little-endian float64 parameter array.


def save_checkpoint(path, params: dict) -> None:
    header = dict(params["_arch"])
    header["shapes"] = {k: list(np.asarray(params[k]).shape)
                        for k in _PARAM_KEYS}
    blob = json.dumps(header, sort_keys=True).encode()
    flat = flatten(params).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(flat.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a policy checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    template = {"_arch": {k: header[k] for k in
                          ("obs_dim", "hidden", "accel_low", "accel_high")}}
    for k in _PARAM_KEYS:
        template[k] = np.zeros(header["shapes"][k])
    return unflatten(flat, template)
