"""Penetration-rate experiments over full simulated hours.

Runs episodes at a given autonomous-vehicle penetration, measures per-class
mean crossing time and min-max normalized consumption/emission scores, and
sweeps penetration 0..1 across seeds, emitting a CSV table and one plot per
metric. Absolute values depend on the car-following and emission surrogates;
the experiments target ordinal claims (trends across penetration), which is
why the sweep reports rank correlations rather than decimals.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import microsim as ms
from . import nn
from .config import ScenarioConfig
from .microsim import AV, HV, SimState
from .network import build_roundabout
from .rlenv import build_observation

METRIC_COLUMNS = ("penetration", "class", "n", "mu_cross_s",
                  "consumption_score", "emission_score", "collisions")

_QUANTITY_ATTR = {"fuel": "fuel_total", "co2": "co2_total"}


@dataclass(frozen=True)
class ClassMetrics:
    n: int
    mu_cross_s: float | None
    consumption_score: float | None
    emission_score: float | None


@dataclass(frozen=True)
class EpisodeMetrics:
    penetration: float
    seed: int
    classes: dict  # kind -> ClassMetrics, only kinds with n > 0 present
    collisions: int
    completed_total: int


def crossing_time(completed, class_filter: str | None = None) -> float | None:
    """Mean t_out - t_in over the (optionally class-filtered) vehicles.

    Returns None for an empty class: an absent value, not zero.
    """
    times = [v.t_out - v.t_in for v in completed
             if class_filter is None or v.kind == class_filter]
    if not times:
        return None
    return float(np.mean(times))


def normalized_scores(completed, quantity: str) -> dict[str, float]:
    """Per-class mean of min-max normalized per-vehicle totals.

    The min and max are taken over ALL vehicles in the scenario (the best
    and worst performer regardless of class); a degenerate scenario where
    every vehicle has the same total maps everyone to 0.
    """
    attr = _QUANTITY_ATTR.get(quantity)
    if attr is None:
        raise ValueError(f"quantity must be one of {sorted(_QUANTITY_ATTR)}")
    vehicles = list(completed)
    if not vehicles:
        raise ValueError("normalized_scores requires at least one vehicle")
    totals = np.array([getattr(v, attr) for v in vehicles], dtype=np.float64)
    lo, hi = totals.min(), totals.max()
    if hi - lo < 1e-12:
        scores = np.zeros(totals.size)
    else:
        scores = (totals - lo) / (hi - lo)
    out: dict[str, list[float]] = {}
    for v, s in zip(vehicles, scores):
        out.setdefault(v.kind, []).append(float(s))
    return {k: float(np.mean(v)) for k, v in out.items()}


def _policy_accels(params, state: SimState, net, av_ids, x_max, a_max):
    """Deterministic (mean) policy accelerations for the living AV fleet."""
    if not av_ids:
        return {}
    index = ms._build_index(net, state.vehicles.values())
    X = np.stack([build_observation(state, net, i, x_max, a_max, index=index)
                  for i in av_ids])
    f = nn.forward(params, X)
    return {i: float(m) for i, m in zip(av_ids, f["mean"])}


def run_episode(config: ScenarioConfig, policy: dict | None = None,
                seed: int | None = None) -> EpisodeMetrics:
    """One warmup + full-duration run; metrics exclude the warmup.

    Collisions are logged and the vehicles halted; the episode always runs
    to completion (evaluation measures the system as-is). Deterministic per
    (config, policy, seed).
    """
    if config.penetration > 0.0 and policy is None:
        raise ValueError("a policy is required when penetration > 0")
    if seed is None:
        seed = config.seed
    cfg = replace(config, seed=seed)
    net = build_roundabout(cfg)
    state = ms.make_state(seed)
    x_max = max(
        (l0.approach_length
         + ((l1.exit_coordinate - l0.entry_coordinate) % net.ring_length
            or net.ring_length)
         + l1.exit_length)
        for l0 in net.legs for l1 in net.legs if l0.id != l1.id)
    a_max = cfg.driver.decel_max
    n_steps = int(round((cfg.warmup + cfg.duration) / cfg.dt))
    for _ in range(n_steps):
        av_ids = [v.id for v in state.vehicles.values() if v.kind == AV]
        accels = (_policy_accels(policy, state, net, av_ids, x_max, a_max)
                  if policy is not None else {})
        ms.step(state, net, accels, cfg.driver, cfg, halt_on_collision=True)
    measured = [v for v in state.completed
                if v.t_in is not None and v.t_out is not None
                and v.t_in >= cfg.warmup]
    classes: dict[str, ClassMetrics] = {}
    if measured:
        cons = normalized_scores(measured, "fuel")
        emis = normalized_scores(measured, "co2")
        for kind in (HV, AV):
            n = sum(1 for v in measured if v.kind == kind)
            if n == 0:
                continue
            classes[kind] = ClassMetrics(
                n=n,
                mu_cross_s=crossing_time(measured, kind),
                consumption_score=cons[kind],
                emission_score=emis[kind])
    collisions = sum(1 for ev in state.collision_log if ev.t >= cfg.warmup)
    return EpisodeMetrics(penetration=cfg.penetration, seed=seed,
                          classes=classes, collisions=collisions,
                          completed_total=len(measured))


DEFAULT_PENETRATIONS = tuple(round(0.1 * i, 1) for i in range(11))


def sweep(config: ScenarioConfig, policy: dict | None,
          penetrations=DEFAULT_PENETRATIONS, seeds=(0, 1, 2, 3, 4),
          out_dir=None, progress=None):
    """Penetration sweep: one aggregated row per (penetration, class).

    Returns (rows, episodes). Rows carry exactly the CSV columns, values
    averaged over seeds; ``episodes`` holds every per-seed EpisodeMetrics
    (or an Exception for a failed cell — failures never abort the sweep).
    When ``out_dir`` is given, writes sweep.csv and one plot per metric.
    """
    episodes: list = []
    rows = []
    for p in penetrations:
        cfg = replace(config, penetration=float(p))
        cell = []
        for s in seeds:
            try:
                m = run_episode(cfg, policy if p > 0 else None, seed=s)
            except Exception as exc:  # propagate per cell, keep sweeping
                episodes.append(exc)
                continue
            episodes.append(m)
            cell.append(m)
            if progress is not None:
                progress(p, s, m)
        for kind in (HV, AV):
            per_seed = [m.classes[kind] for m in cell if kind in m.classes]
            if not per_seed:
                continue
            rows.append({
                "penetration": float(p),
                "class": kind,
                "n": float(np.mean([c.n for c in per_seed])),
                "mu_cross_s": float(np.mean([c.mu_cross_s for c in per_seed])),
                "consumption_score": float(np.mean(
                    [c.consumption_score for c in per_seed])),
                "emission_score": float(np.mean(
                    [c.emission_score for c in per_seed])),
                "collisions": float(np.mean(
                    [m.collisions for m in cell])),
            })
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        write_sweep_csv(rows, os.path.join(out_dir, "sweep.csv"))
        plot_sweep(rows, out_dir)
    return rows, episodes


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r[k] for k in METRIC_COLUMNS])


def read_sweep_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({
                "penetration": float(rec["penetration"]),
                "class": rec["class"],
                "n": float(rec["n"]),
                "mu_cross_s": float(rec["mu_cross_s"]),
                "consumption_score": float(rec["consumption_score"]),
                "emission_score": float(rec["emission_score"]),
                "collisions": float(rec["collisions"]),
            })
    return rows


_PLOT_METRICS = (("mu_cross_s", "mean crossing time [s]", "crossing_time"),
                 ("consumption_score", "consumption score", "consumption"),
                 ("emission_score", "emission score", "emission"))


def plot_sweep(rows, out_dir) -> list[str]:
    """One line plot per metric versus penetration; returns written paths."""
    import os

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for key, label, stem in _PLOT_METRICS:
        fig, ax = plt.subplots(figsize=(6, 4))
        for kind in (HV, AV):
            pts = sorted((r["penetration"], r[key]) for r in rows
                         if r["class"] == kind)
            if pts:
                ax.plot([p for p, _ in pts], [y for _, y in pts],
                        marker="o", label=kind)
        ax.set_xlabel("AV penetration")
        ax.set_ylabel(label)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def trend_correlation(rows, kind: str, key: str) -> float:
    """Spearman rank correlation between penetration and a metric column."""
    from scipy.stats import spearmanr

    pts = [(r["penetration"], r[key]) for r in rows if r["class"] == kind]
    if len(pts) < 3:
        raise ValueError("need at least 3 sweep points for a correlation")
    rho = spearmanr([p for p, _ in pts], [y for _, y in pts]).statistic
    return float(rho)
