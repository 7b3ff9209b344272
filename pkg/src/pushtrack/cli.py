"""Command-line harness: simulate, estimate, evaluate, characterize-noise, benchmark.

Scenarios are given by builtin name (see `pushtrack simulate --list`) or by a
YAML file path.  Outputs land in --out as CSV/YAML files.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .harness import (
    benchmark_smoother,
    identify_covariances,
    normality_report,
    rmse,
    run_scenario,
    write_covariances_yaml,
    write_residuals_csv,
    write_trajectory_csv,
)
from .scenarios import builtin_names, load_scenario
from .sensor_sim import render_tactile, render_visual
from .scenarios import build_ground_truth, build_occlusion


def _add_common(p):
    p.add_argument("--scenario", default="fig5-default",
                   help="builtin scenario name or YAML path (default: fig5-default)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")


def _load(args):
    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn = scn.with_seed(args.seed)
    return scn


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    if args.list:
        print("\n".join(builtin_names()))
        return 0
    scn = _load(args)
    out = _outdir(args)
    gt_log = build_ground_truth(scn)
    occ = build_occlusion(scn, gt_log)
    noise = scn.noise_spec()
    visual = render_visual(gt_log, noise, occ, scn.rates["visual"])
    tactile = render_tactile(gt_log, noise, scn.rates["tactile"])

    with open(out / "gt.csv", "w") as fh:
        fh.write("t,x,y,theta\n")
        rate = scn.rates["estimator"]
        for k in range(int(math.floor(gt_log.t_end * rate + 1e-9)) + 1):
            t = k / rate
            p = gt_log.pose_at(t)
            fh.write(f"{t!r},{p.x!r},{p.y!r},{p.theta!r}\n")
    with open(out / "visual.csv", "w") as fh:
        fh.write("t,x,y,theta,available\n")
        for s in visual:
            fh.write(f"{float(s.t)!r},{s.pose.x!r},{s.pose.y!r},{s.pose.theta!r},{int(s.available)}\n")
    with open(out / "tactile.csv", "w") as fh:
        nf = len(tactile[0].fingers) if tactile else 0
        cols = ["t"] + [f"f{j}_{c}" for j in range(nf) for c in ("fx", "fy", "px", "py", "contact")]
        fh.write(",".join(cols) + "\n")
        for s in tactile:
            row = [repr(s.t)]
            for fg in s.fingers:
                row += [repr(float(fg.force[0])), repr(float(fg.force[1])),
                        repr(float(fg.position[0])), repr(float(fg.position[1])),
                        str(int(fg.contact))]
            fh.write(",".join(row) + "\n")
    scn.to_yaml(out / "scenario_resolved.yaml")
    print(f"simulated {gt_log.t_end:.2f} s ({len(gt_log.segments)} segments) -> {out}")
    return 0


def cmd_estimate(args):
    scn = _load(args)
    if args.estimator != "all":
        scn.estimators = (args.estimator,)
    if args.window is not None:
        scn.smoother = dict(scn.smoother)
        scn.smoother["window"] = args.window
    out = _outdir(args)
    streams = None
    if args.replay:
        from .harness import load_streams

        streams = load_streams(out)
    report = run_scenario(scn, streams=streams)
    write_trajectory_csv(out / "trajectory.csv", report)
    with open(out / "report.yaml", "w") as fh:
        yaml.safe_dump(report.summary(), fh, sort_keys=True)
    for m, r in sorted(report.rmse.items()):
        print(f"{m:>9}: trans {r['trans_rmse_mm']:6.2f} +/- {r['trans_std_mm']:5.2f} mm   "
              f"rot {r['rot_rmse_deg']:5.2f} +/- {r['rot_std_deg']:4.2f} deg   "
              f"(mean step {report.timing[m]['mean_ms']:.3f} ms)")
    return 0


def cmd_evaluate(args):
    path = Path(args.out) / "trajectory.csv"
    if not path.exists():
        print(f"no trajectory.csv under {args.out}; run `pushtrack estimate` first", file=sys.stderr)
        return 1
    rows = {}
    with open(path) as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["method"], []).append(rec)
    for method, recs in sorted(rows.items()):
        est = np.array([[float(r["est_x"]), float(r["est_y"]), float(r["est_theta"])] for r in recs])
        gt = np.array([[float(r["gt_x"]), float(r["gt_y"]), float(r["gt_theta"])] for r in recs])
        r = rmse(est, gt)
        print(f"{method:>9}: trans {r['trans_rmse_mm']:6.2f} +/- {r['trans_std_mm']:5.2f} mm   "
              f"rot {r['rot_rmse_deg']:5.2f} +/- {r['rot_std_deg']:4.2f} deg")
    return 0


def cmd_characterize(args):
    scn = _load(args)
    out = _outdir(args)
    covs, res = identify_covariances(scn)
    write_covariances_yaml(out / "covariances.yaml", covs)
    write_residuals_csv(out / "residuals.csv", res)
    normality = {}
    for kind in sorted(res):
        r = res[kind]["r"]
        if len(r) >= 30:
            axes = normality_report(r)
            normality[kind] = [
                {"axis": a["axis"], "mu": a["mu"], "sigma": a["sigma"],
                 "ks_stat": a["ks_stat"], "ks_pass": a["ks_pass"]}
                for a in axes
            ]
    with open(out / "normality.yaml", "w") as fh:
        yaml.safe_dump(normality, fh, sort_keys=True)
    print(f"identified covariances -> {out/'covariances.yaml'}")
    for kind, axes in sorted(normality.items()):
        flags = ", ".join(f"axis{a['axis']}: KS {'pass' if a['ks_pass'] else 'FAIL'}" for a in axes)
        print(f"  {kind}: {flags}")
    return 0


def cmd_benchmark(args):
    scn = _load(args)
    stats = benchmark_smoother(scn, window=args.window)
    out = _outdir(args)
    with open(out / "benchmark.yaml", "w") as fh:
        yaml.safe_dump(stats, fh, sort_keys=True)
    print(f"window {stats['window']}: mean {stats['mean_ms']:.3f} ms, "
          f"std {stats['std_ms']:.3f} ms, p99 {stats['p99_ms']:.3f} ms, "
          f"max {stats['max_ms']:.3f} ms over {stats['n_steps']} steps")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pushtrack",
                                 description="Tactile-visual planar push tracking harness")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate ground truth and sensor streams")
    _add_common(p)
    p.add_argument("--list", action="store_true", help="list builtin scenarios and exit")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("estimate", help="run estimators on a scenario")
    _add_common(p)
    p.add_argument("--estimator", choices=["smoother", "ekf", "baseline", "all"], default="all")
    p.add_argument("--window", type=int, default=None, help="smoother window length")
    p.add_argument("--replay", action="store_true",
                   help="replay sensor streams from --out (written by `simulate`) instead of re-simulating")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("evaluate", help="recompute RMSE from a trajectory.csv")
    p.add_argument("--out", default="out", help="directory holding trajectory.csv")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("characterize-noise", help="identify covariances from ground truth")
    _add_common(p)
    p.set_defaults(fn=cmd_characterize)

    p = sub.add_parser("benchmark", help="time smoother updates on a scenario")
    _add_common(p)
    p.add_argument("--window", type=int, default=None, help="smoother window length")
    p.set_defaults(fn=cmd_benchmark)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
