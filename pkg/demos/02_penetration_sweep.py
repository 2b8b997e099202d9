"""
Sweeping the autonomous-vehicle penetration rate
================================================

Replay the core experiment: hold demand fixed, vary the fraction of
policy-driven vehicles from 0% to 100%, and watch crossing times and
normalized consumption/emission scores fall for *both* classes.

This demo runs a reduced sweep (shorter episodes, fewer seeds) so it
finishes in a few minutes; the shipped results were produced at full
scale with `roundsim sweep`.
"""

from roundsim import nn
from roundsim.config import ScenarioConfig
from roundsim.evaluate import sweep, trend_correlation

# The trained policy checkpoint drives every autonomous vehicle.
policy = nn.load_checkpoint("runs/roundabout/policy.ckpt")

config = ScenarioConfig(duration=900.0, warmup=300.0)
rows, episodes = sweep(config, policy,
                       penetrations=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
                       seeds=(0, 1),
                       out_dir="sweep_demo",
                       progress=lambda p, s, m: print(
                           f"  penetration {p:.1f} seed {s}: "
                           f"{m.completed_total} vehicles, "
                           f"{m.collisions} collisions"))

# One row per (penetration, class); the CSV and three plots are in
# sweep_demo/.
print(f"\n{'p':>4} {'class':>5} {'cross [s]':>10} {'consumption':>12}")
for r in rows:
    print(f"{r['penetration']:>4.1f} {r['class']:>5} "
          f"{r['mu_cross_s']:>10.2f} {r['consumption_score']:>12.3f}")

# The claim under test is ordinal: more automation, faster and cleaner.
for kind in ("HV", "AV"):
    rho_t = trend_correlation(rows, kind, "mu_cross_s")
    rho_c = trend_correlation(rows, kind, "consumption_score")
    print(f"\n{kind}: Spearman(penetration, crossing time) = {rho_t:+.2f}")
    print(f"{kind}: Spearman(penetration, consumption)   = {rho_c:+.2f}")
