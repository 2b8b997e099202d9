"""Command-line entry point: ``roundsim {sweep, calibrate, serve}``.

The subcommands wrap the library operations; everything they do is equally
available programmatically (see demos/).
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import ScenarioConfig, load_scenario


def _load_config(path) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return load_scenario(path)


def _parse_penetrations(text: str):
    """'0..1:0.1' range syntax or a comma list like '0,0.5,1'."""
    if ".." in text:
        span, _, step = text.partition(":")
        lo, _, hi = span.partition("..")
        lo, hi, step = float(lo), float(hi), float(step or 0.1)
        out, x = [], lo
        while x <= hi + 1e-9:
            out.append(round(x, 10))
            x += step
        return out
    return [float(tok) for tok in text.split(",") if tok]


def cmd_sweep(args) -> int:
    from . import nn
    from .evaluate import sweep

    config = _load_config(args.scenario)
    policy = nn.load_checkpoint(args.policy) if args.policy else None
    penetrations = _parse_penetrations(args.penetrations)
    if policy is None and any(p > 0 for p in penetrations):
        print("error: --policy is required for nonzero penetrations",
              file=sys.stderr)
        return 2

    def progress(p, s, m):
        print(f"penetration {p:.1f} seed {s}: "
              f"{m.completed_total} vehicles, {m.collisions} collisions",
              flush=True)

    rows, _ = sweep(config, policy, penetrations=penetrations,
                    seeds=range(args.seeds), out_dir=args.out,
                    progress=progress)
    print(f"wrote {args.out}/sweep.csv ({len(rows)} rows) and plots")
    return 0


def cmd_calibrate(args) -> int:
    from dataclasses import asdict

    from .calibrate import (DEFAULT_SPACE, calibrate, read_measurement_csv,
                            synthetic_target)

    config = _load_config(args.scenario)
    if args.target:
        target = read_measurement_csv(args.target)
    else:
        print("no --target given: generating a synthetic target from the "
              "configured driver parameters", flush=True)
        target = synthetic_target(config, seed=args.seed + 1)
    best, trace = calibrate(DEFAULT_SPACE, target, config,
                            budget=args.budget, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump({"params": asdict(best), "final_cost": trace[-1],
                   "evaluations": len(trace)}, fh, indent=2)
    print(f"best cost {trace[-1]:.4f} after {len(trace)} evaluations; "
          f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import asyncio

    from . import nn
    from .bridge import BridgeConfig, SessionStore, serve

    config = _load_config(args.scenario)
    policy = nn.load_checkpoint(args.policy) if args.policy else None
    order = tuple(float(tok) / 100.0
                  for tok in args.scenario_order.split(","))
    bridge = BridgeConfig(scenario_penetrations=order, port=args.port,
                          host=args.host,
                          scenario_duration=args.scenario_duration)
    store = SessionStore(path=args.record)
    print(f"serving on ws://{bridge.host}:{bridge.port} "
          f"(scenarios {args.scenario_order}% AVs)", flush=True)
    try:
        asyncio.run(serve(config, policy, bridge, store=store))
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roundsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="penetration-rate experiment sweep")
    sw.add_argument("--scenario", help="scenario JSON file (default config)")
    sw.add_argument("--policy", help="policy checkpoint file")
    sw.add_argument("--penetrations", default="0..1:0.1")
    sw.add_argument("--seeds", type=int, default=5)
    sw.add_argument("--out", default="sweep_out")
    sw.set_defaults(func=cmd_sweep)

    ca = sub.add_parser("calibrate", help="driver-parameter calibration")
    ca.add_argument("--scenario", help="scenario JSON file (default config)")
    ca.add_argument("--target", help="measurement CSV (leg,slot,mean,max)")
    ca.add_argument("--budget", type=int, default=500)
    ca.add_argument("--seed", type=int, default=0)
    ca.add_argument("--out", default="params.json")
    ca.set_defaults(func=cmd_calibrate)

    se = sub.add_parser("serve", help="real-time driving websocket server")
    se.add_argument("--scenario", help="scenario JSON file (default config)")
    se.add_argument("--policy", help="policy checkpoint file")
    se.add_argument("--host", default="127.0.0.1")
    se.add_argument("--port", type=int, default=8765)
    se.add_argument("--scenario-order", default="20,80",
                    help="comma list of AV percentages, in session order")
    se.add_argument("--scenario-duration", type=float, default=300.0)
    se.add_argument("--record", help="JSONL file for survey records")
    se.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
