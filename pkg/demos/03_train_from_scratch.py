"""
Training a driving policy from scratch
======================================

A compact end-to-end training run: a single autonomous vehicle on an
empty straight road, rewarded purely for tracking the desired speed.
This is the smoke-scale version of the full recipe in
scripts/train_policy.py (which trains on the mixed-autonomy roundabout
with the combined velocity + consumption reward).
"""

from roundsim.microsim import AV
from roundsim.ppo import PpoHparams, train
from roundsim.rlenv import StraightRoadEnv


def make_env(seed):
    env = StraightRoadEnv(horizon=400)
    vid = env.add_vehicle(AV, lane=0, x=0.0, speed=0.0)
    return env, {vid: env.observation(vid)}


# Fifty iterations of PPO on this dense reward reach ~0.9 mean per-step
# reward (the vehicle accelerates to the desired speed and holds it).
hparams = PpoHparams(rollout_steps=2048, iterations=50, minibatch_size=256,
                     epochs=6, gamma=0.95, lam=0.9, entropy_weight=0.001)
params, log = train(make_env, hparams, seed=0,
                    log_path="smoke_training_log.csv",
                    checkpoint_path="smoke_policy.ckpt",
                    callback=lambda i, row: print(
                        f"iter {i:>3}  mean step reward "
                        f"{row['mean_step_reward']:.3f}"))

best = max(row["mean_step_reward"] for row in log)
print(f"\nbest mean per-step reward: {best:.3f}")
print("checkpoint written to smoke_policy.ckpt")
