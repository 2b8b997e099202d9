"""Driver-parameter calibration against queue-length measurements.

Simulates queue formation under candidate car-following/gap-acceptance
parameters and minimizes a squared discrepancy between simulated and
measured per-slot queue statistics (4 legs x 6 ten-minute slots, mean and
max queue length). The search is derivative-free: Latin-hypercube seeding
over the 7-parameter box, then coordinate descent with step halving.

Real field measurements are not shipped; a synthetic target generator and
a measurement CSV format (columns: leg, slot, mean_queue, max_queue) let
either synthetic or real data drive the loop.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import microsim as ms
from .config import DriverParams, ScenarioConfig
from .network import build_roundabout

N_LEGS = 4
N_SLOTS = 6
SLOT_LENGTH = 600.0

# The calibratable parameters and their search box.
PARAM_BOUNDS = {
    "accel_max": (0.5, 4.0),
    "decel_max": (1.0, 8.0),
    "headway_tau": (0.5, 3.0),
    "reaction_period": (0.1, 2.0),
    "gap_accept_time": (0.5, 4.0),
    "impatience": (0.0, 0.5),
    "crossing_gap": (0.5, 4.0),
}
PARAM_NAMES = tuple(PARAM_BOUNDS)


@dataclass(frozen=True)
class QueueMeasurement:
    """mean[leg][slot], max[leg][slot] queue lengths in vehicles."""

    mean: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        m, x = np.asarray(self.mean), np.asarray(self.max)
        if m.shape != (N_LEGS, N_SLOTS) or x.shape != (N_LEGS, N_SLOTS):
            raise ValueError(f"expected shape {(N_LEGS, N_SLOTS)}")
        if np.any(m < -1e-12) or np.any(x + 1e-9 < m):
            raise ValueError("need max >= mean >= 0 per cell")

    def __eq__(self, other):
        return (isinstance(other, QueueMeasurement)
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.max, other.max))


@dataclass(frozen=True)
class ParamSpace:
    bounds: dict  # name -> (low, high)

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if not lo < hi:
                raise ValueError(f"{name}: lower bound must be below upper")


DEFAULT_SPACE = ParamSpace(dict(PARAM_BOUNDS))


def measure_queues(state: ms.SimState, net, driver: DriverParams,
                   config: ScenarioConfig,
                   slot_length: float = SLOT_LENGTH) -> QueueMeasurement:
    """Run ``state`` forward 6 slots, sampling per-leg queue lengths.

    Queue on a leg at an instant = vehicles on its approach slower than the
    configured threshold. Per slot: time-average and peak.
    """
    dt = config.dt
    steps_per_slot = int(round(slot_length / dt))
    mean = np.zeros((N_LEGS, N_SLOTS))
    peak = np.zeros((N_LEGS, N_SLOTS))
    for slot in range(N_SLOTS):
        sums = np.zeros(N_LEGS)
        for _ in range(steps_per_slot):
            ms.step(state, net, {}, driver, config, halt_on_collision=True)
            counts = queue_lengths(state, config)
            sums += counts
            np.maximum(peak[:, slot], counts, out=peak[:, slot])
        mean[:, slot] = sums / steps_per_slot
    return QueueMeasurement(mean=mean, max=peak)


def queue_lengths(state: ms.SimState, config: ScenarioConfig) -> np.ndarray:
    """Instantaneous queue length (stopped vehicles on the approach) per leg."""
    counts = np.zeros(N_LEGS)
    thr = config.queue_speed_threshold
    for v in state.vehicles.values():
        seg = v.segment
        if seg[0] == "a" and v.speed < thr:
            counts[seg[1]] += 1
    return counts


def queue_cost(measured: QueueMeasurement,
               simulated: QueueMeasurement) -> float:
    """Sum over cells of (mean_sim-mean_meas)^2 + (max_sim-max_meas)^2."""
    dm = simulated.mean - measured.mean
    dx = simulated.max - measured.max
    return float(np.sum(dm * dm) + np.sum(dx * dx))


def simulate_queues(driver: DriverParams, config: ScenarioConfig,
                    seed: int,
                    slot_length: float = SLOT_LENGTH) -> QueueMeasurement:
    """Fresh HV-only run of 6 slots under the given driver parameters."""
    cfg = replace(config, penetration=0.0, seed=seed)
    net = build_roundabout(cfg)
    state = ms.make_state(seed)
    return measure_queues(state, net, driver, cfg, slot_length=slot_length)


def synthetic_target(config: ScenarioConfig, seed: int = 0,
                     driver: DriverParams | None = None,
                     slot_length: float = SLOT_LENGTH) -> QueueMeasurement:
    """Target generated by the simulator itself under known parameters."""
    return simulate_queues(driver or config.driver, config, seed,
                           slot_length=slot_length)


def _vector_to_params(base: DriverParams, names, x) -> DriverParams:
    return replace(base, **{n: float(v) for n, v in zip(names, x)})


def calibrate(space: ParamSpace, target: QueueMeasurement,
              config: ScenarioConfig, budget: int, seed: int = 0,
              slot_length: float = SLOT_LENGTH, progress=None):
    """Box search: Latin-hypercube seeding, then coordinate halving descent.

    Each candidate is scored with one fixed-seed simulation; failures score
    +inf. Returns (best DriverParams, trace) where ``trace`` is the
    monotone non-increasing best-cost-so-far sequence, one entry per
    evaluation.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    from scipy.stats import qmc

    names = tuple(space.bounds)
    lo = np.array([space.bounds[n][0] for n in names])
    hi = np.array([space.bounds[n][1] for n in names])
    base = config.driver

    evaluations = 0
    best_x, best_cost = None, math.inf
    trace: list[float] = []

    def score(x) -> float:
        nonlocal evaluations, best_x, best_cost
        evaluations += 1
        try:
            sim = simulate_queues(_vector_to_params(base, names, x),
                                  config, seed, slot_length=slot_length)
            cost = queue_cost(target, sim)
        except Exception:
            cost = math.inf
        if cost < best_cost:
            best_cost, best_x = cost, np.array(x)
        trace.append(best_cost)
        if progress is not None:
            progress(evaluations, cost, best_cost)
        return cost

    n_seed = max(1, min(budget // 4, 32))
    sampler = qmc.LatinHypercube(d=len(names), seed=seed)
    for row in qmc.scale(sampler.random(n_seed), lo, hi):
        if evaluations >= budget:
            break
        score(row)

    if best_x is None:  # every seed sample failed; fall back to the midpoint
        best_x = (lo + hi) / 2.0

    # Coordinate descent around the incumbent, halving the step on failure.
    steps = (hi - lo) / 4.0
    while evaluations < budget and np.any(steps > 1e-3 * (hi - lo)):
        improved = False
        for d in range(len(names)):
            for sign in (+1.0, -1.0):
                if evaluations >= budget:
                    break
                x = best_x.copy()
                x[d] = np.clip(x[d] + sign * steps[d], lo[d], hi[d])
                if np.isclose(x[d], best_x[d]):
                    continue
                prev = best_cost
                if score(x) < prev:
                    improved = True
                    break
        if not improved:
            steps /= 2.0
    return _vector_to_params(base, names, best_x), trace


# -- measurement file format -------------------------------------------------

def write_measurement_csv(m: QueueMeasurement, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["leg", "slot", "mean_queue", "max_queue"])
        for leg in range(N_LEGS):
            for slot in range(N_SLOTS):
                w.writerow([leg, slot, m.mean[leg, slot], m.max[leg, slot]])


def read_measurement_csv(path) -> QueueMeasurement:
    mean = np.zeros((N_LEGS, N_SLOTS))
    peak = np.zeros((N_LEGS, N_SLOTS))
    seen = set()
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            leg, slot = int(rec["leg"]), int(rec["slot"])
            if not (0 <= leg < N_LEGS and 0 <= slot < N_SLOTS):
                raise ValueError(f"cell ({leg}, {slot}) out of range")
            mean[leg, slot] = float(rec["mean_queue"])
            peak[leg, slot] = float(rec["max_queue"])
            seen.add((leg, slot))
    if len(seen) != N_LEGS * N_SLOTS:
        raise ValueError("measurement file must cover all 4x6 cells")
    return QueueMeasurement(mean=mean, max=peak)
