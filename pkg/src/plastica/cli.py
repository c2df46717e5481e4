"""Command line front end: ``plastica <command> --scenario <file> --out <dir>``.

Every command writes into ``<out>/<command>/``. The directory is assembled
in a staging directory and renamed into place only when the run succeeds,
so a failed run never leaves partial artifacts. ``manifest.json`` lists the
sha256 of every file written.

Exit codes: 0 success, 1 scenario error, 2 numeric failure, 3 a check failed.
"""

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io, plotting
from .attractor import (forward_attracting_set, forward_attraction_check, invariance_defect,
                        pullback_attractor_estimate)
from .checks import (check_C4, check_dissipativity_A2, check_dissipativity_preservation,
                     check_growth_C2, check_smoothness, check_symmetry_potential)
from .errors import PlasticaError, ScenarioError
from .plastic_field import save_snapshot
from .scenario import (build_initial_field, build_rule, build_source, build_stimulus,
                       load_scenario)
from .stimulus import double_well_potential, save_path, stationary_moments
from .trajectory import (check_velocity_bound, field_velocity_envelope, fit_velocity_bound,
                         integrate_trajectory, save_trajectory, velocity_magnitude_series)

COMMANDS = ("simulate", "pullback", "forward", "check", "stimulus")
ENV_OUT = "PLASTICA_OUT"
ENV_THREADS = "PLASTICA_THREADS"
MAX_SAVED_SNAPSHOTS = 11


class CheckFailed(Exception):
    exit_code = 3


# --------------------------------------------------------------------------
# Commands. Each takes (scenario, run directory, threads) and returns a dict
# summary that ends up in manifest.json.


def run_stimulus(s, out, threads):
    path = build_stimulus(s)
    save_path(path, out / "stimulus.csv")
    v = path.values
    stats = {"n_nodes": int(len(v)), "mean": v.mean(axis=0).tolist(),
             "variance": v.var(axis=0).tolist(), "min": v.min(axis=0).tolist(),
             "max": v.max(axis=0).tolist()}
    density = None
    if s.stimulus.kind == "sde" and s.stimulus.drift == "double_well":
        mom = stationary_moments(double_well_potential, s.stimulus.diffusion)
        stats["stationary"] = {"mean": mom[1], "variance": mom[2] - mom[1] ** 2}
        u = np.linspace(-2.5, 2.5, 401)
        w = np.exp(2.0 * double_well_potential(u) / s.stimulus.diffusion ** 2)
        density = (u, w / np.trapezoid(w, u))
    io.write_json(out / "stimulus_stats.json", stats)
    plotting.plot_stimulus(path, out / "stimulus.png", density)
    plotting.gnuplot_script(out / "stimulus.gp", "stimulus_gp.png",
                            [("stimulus.csv", 1, j + 2, f"eta_{j + 1}") for j in range(path.m)],
                            ylabel="eta")
    return stats


def _saved_snapshot_indices(n):
    if n <= MAX_SAVED_SNAPSHOTS:
        return list(range(n))
    return sorted(set(np.linspace(0, n - 1, MAX_SAVED_SNAPSHOTS).round().astype(int).tolist()))


def run_simulate(s, out, threads):
    tw = s.time
    path = None
    if s.dynamics.kind == "plastic":
        path = build_stimulus(s)
        save_path(path, out / "stimulus.csv")
    src, snaps = build_source(s, path, with_snapshots=True)
    rule = build_rule(s) if s.rule is not None else None
    if snaps:
        (out / "snapshots").mkdir()
        for i in _saved_snapshot_indices(len(snaps)):
            save_snapshot(snaps[i], out / "snapshots" / f"field_{i:05d}.csv", rule)
    if not s.initial_conditions:
        raise ScenarioError("simulate needs at least one entry in initial_conditions")
    trajs, speeds, files = [], [], []
    for k, x0 in enumerate(s.initial_conditions):
        tr = integrate_trajectory(src, x0, tw.t_start, tw.t_end, tw.dt_traj, on_exit="stop",
                                  provenance={"scenario": s.id, "x0": list(x0),
                                              "source": src.name, "seed": s.seed})
        name = f"trajectory_{k:03d}.csv"
        save_trajectory(tr, out / name, {"dt": tw.dt_traj, "t0": tw.t_start, "t1": tw.t_end})
        trajs.append(tr)
        files.append(name)
        speeds.append(velocity_magnitude_series(tr, src))
    summary = {"trajectories": [{"file": f, "status": t.status, "final": t.final.tolist(),
                                 "t_final": float(t.times[-1])} for f, t in zip(files, trajs)]}
    bound_C = None
    if s.velocity is not None:
        summary["velocity"] = _velocity_report(s, snaps, trajs, speeds)
        bound_C = summary["velocity"]["C"]
        io.write_json(out / "velocity_report.json", summary["velocity"])
        for f, tr, v in zip(files, trajs, speeds):
            io.write_matrix(out / f.replace("trajectory", "speed"), ["t", "speed"], [tr.times, v])
    plotting.plot_trajectories(trajs, out / "trajectories.png",
                               speeds if s.velocity is not None else None, bound_C)
    plotting.gnuplot_script(out / "trajectories.gp", "trajectories_gp.png",
                            [(f, 1, 2, f) for f in files], ylabel="x")
    return summary


def _velocity_report(s, snaps, trajs, speeds):
    v = s.velocity
    if snaps:
        # plastic fields: C from the field-wide speed envelope on the fit window
        C = field_velocity_envelope(snaps, v.fit_window)
        per = [check_velocity_bound(tr.times, sp, C, v.check_window)
               for tr, sp in zip(trajs, speeds)]
        method = "field-envelope"
    else:
        per = [fit_velocity_bound(tr.times, sp, v.fit_window, v.check_window)
               for tr, sp in zip(trajs, speeds)]
        C = max(p["C"] for p in per)
        method = "trajectory-max"
    worst = max(p["violation_fraction"] for p in per)
    return {"method": method, "C": C, "fit_window": v.fit_window,
            "check_window": v.check_window, "per_trajectory": per,
            "max_violation_fraction": worst, "passed": bool(worst <= v.max_violation)}


def run_pullback(s, out, threads):
    p = s.pullback
    if p is None:
        raise ScenarioError("pullback needs a [pullback] block")
    src = build_source(s)
    sweep = pullback_attractor_estimate(src, p.B_star, p.target_t, p.t0_sequence, p.cloud_n,
                                        p.eps, p.dt, threads=threads, seed=s.seed)
    sweep.save_csv(out / "pullback_sweep.csv")
    sweep.final.save(out / "pullback_attractor.json")
    plotting.plot_sweep(sweep, out / "pullback.png")
    plotting.gnuplot_script(out / "pullback.gp", "pullback_gp.png",
                            [("pullback_sweep.csv", 1, 4, "hausdorff gap")], xlabel="t0",
                            ylabel="gap")
    summary = {"converged": sweep.converged, "convergence_rule": "heuristic: two consecutive gaps <= eps",
               "converged_at": sweep.converged_at,
               "n_boxes": sweep.final.n_boxes, "eps": p.eps,
               "hausdorff_gaps": [None if np.isnan(g) else g for g in sweep.hausdorff_gaps]}
    io.write_json(out / "pullback_summary.json", summary)
    return summary


def run_forward(s, out, threads):
    fw = s.forward
    if fw is None:
        raise ScenarioError("forward needs a [forward] block")
    src = build_source(s)
    omega = forward_attracting_set(src, fw.B_star, fw.t0_list, fw.tau_burn, fw.t_end,
                                   fw.cloud_n, fw.eps, fw.dt, fw.sample_every,
                                   threads=threads, seed=s.seed)
    parts = omega.meta.pop("parts")
    omega.save(out / "forward_attracting_set.json")
    t_mid = (fw.tau_burn + fw.t_end) / 2.0
    defect = invariance_defect(src, omega, fw.tau_burn, t_mid, fw.dt)
    attraction = forward_attraction_check(src, omega.points, fw.test_radii, min(fw.t0_list),
                                          fw.t_end, fw.eps, fw.dt, threads=threads)
    report = {"n_boxes": omega.n_boxes, "monotone": omega.meta["monotone"],
              "shrink_ok": [p.meta["shrink_ok"] for p in parts],
              "invariance_defect": {"t_from": fw.tau_burn, "t_to": t_mid, "distance": defect},
              "attraction": [dict(r, radius=rad) for r, rad in zip(attraction, fw.test_radii)]}
    io.write_json(out / "forward_report.json", report)
    rows = [(r["radius"], t, d) for r in report["attraction"] for t, d in r["series"]]
    io.write_table(out / "attraction_series.csv", ["radius", "t", "distance"], rows)
    plotting.plot_set(omega, out / "forward_attracting_set.png",
                      f"forward attracting set, t0 in {fw.t0_list}")
    plotting.gnuplot_script(out / "forward.gp", "forward_gp.png",
                            [("attraction_series.csv", 2, 3, "distance")], ylabel="distance")
    return {k: report[k] for k in ("n_boxes", "monotone", "shrink_ok")}


def _check_source(s):
    if s.dynamics.kind == "plastic":
        src = build_source(s)
        return src, src.dim
    return build_source(s), s.dimension


def run_check(s, out, threads):
    c = s.checks
    if c is None:
        raise ScenarioError("check needs a [checks] block")
    reports = []
    tw = s.time
    src = None
    for name in c.run:
        if name in ("A1", "A2") and src is None:
            src, dim = _check_source(s)
        if name == "A2":
            rep = check_dissipativity_A2(src, s.R_star, c.n_samples, tuple(c.times),
                                         c.tolerance, dim=dim, seed=s.seed)
        elif name == "A1":
            pts = np.random.default_rng(s.seed).uniform(-s.R_star, s.R_star, (64, dim))
            rep = check_smoothness("A1", lambda X: src(X, c.times[0]), pts)
        elif name in ("C2", "C4"):
            rule = build_rule(s)
            fn = check_growth_C2 if name == "C2" else check_C4
            kw = {"n_samples": c.n_samples, "a_radius": c.a_radius, "seed": s.seed,
                  "t_range": (tw.t_start, tw.t_end)}
            if name == "C4":
                rep = fn(rule.as_c(), s.dimension, s.R_star, tolerance=c.tolerance, **kw)
            else:
                rep = fn(rule.as_c(), s.dimension, **kw)
        elif name == "symmetry":
            if s.dimension < 2:
                raise ScenarioError("the symmetry check needs dimension >= 2")
            rule = build_rule(s)
            rep = check_symmetry_potential(build_initial_field(s, rule), c.tolerance)
        elif name == "preservation":
            if s.grid is None:
                raise ScenarioError("the preservation check needs a [grid] block")
            rule = build_rule(s)
            a0 = build_initial_field(s, rule)
            rep = check_dissipativity_preservation(rule, a0, build_stimulus(s), tw.t_end,
                                                   s.R_star, tw.dt_field, c.n_times,
                                                   c.n_samples, c.tolerance)
        rep.save(out / f"check_{name}.json")
        reports.append(rep)
    summary = {"checks": [{"name": r.name, "passed": r.passed, "worst": r.worst_value}
                          for r in reports],
               "all_passed": all(r.passed for r in reports)}
    io.write_json(out / "checks_summary.json", summary)
    rows = [(r.name, int(r.passed), float(r.worst_value), r.tolerance) for r in reports]
    io.write_table(out / "checks_summary.csv", ["name", "passed", "worst", "tolerance"], rows)
    return summary


RUNNERS = {"simulate": run_simulate, "pullback": run_pullback, "forward": run_forward,
           "check": run_check, "stimulus": run_stimulus}


# --------------------------------------------------------------------------
# Driver


def _parser():
    p = argparse.ArgumentParser(prog="plastica", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"plastica {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", required=True,
                        help="scenario file (TOML or JSON) or a bundled scenario name")
        sp.add_argument("--out", help=f"output directory (env {ENV_OUT}, then scenario)")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--threads", type=int, help=f"worker threads (env {ENV_THREADS})")
    return p


def _threads(arg):
    if arg is not None:
        return max(1, arg)
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ScenarioError(f"{ENV_THREADS}={env!r} is not an integer") from None
    return 1


def _manifest(run_dir, command, s, summary):
    files = sorted(p for p in run_dir.rglob("*") if p.is_file())
    return {"command": command, "scenario": s.id, "seed": s.seed, "version": __version__,
            "summary": summary,
            "files": {str(p.relative_to(run_dir)): io.sha256(p) for p in files}}


def execute(command, scenario, out_dir, seed=None, threads=1):
    """Run one command and return (exit code, run directory or None, summary)."""
    s = load_scenario(scenario)
    if seed is not None:
        s = replace(s, seed=seed)
    out_dir = Path(out_dir if out_dir is not None else
                   os.environ.get(ENV_OUT) or s.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    final = out_dir / command
    stage = out_dir / f".{command}.staging-{os.getpid()}"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir()
    code = 0
    try:
        (stage / "resolved_scenario.json").write_text(s.dumps())
        summary = RUNNERS[command](s, stage, threads)
        if command == "check" and not summary["all_passed"]:
            code = CheckFailed.exit_code
        if command == "simulate" and not summary.get("velocity", {}).get("passed", True):
            code = CheckFailed.exit_code
        io.write_json(stage / "manifest.json",
                      _manifest(stage, command, s, _plain(summary)) | {"exit_code": code})
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    stage.rename(final)
    return code, final, summary


def _plain(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist")
                                 else str(o)))


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        code, final, _ = execute(args.command, args.scenario, args.out, args.seed, threads)
    except ScenarioError as exc:
        print(f"plastica: scenario error: {exc}", file=sys.stderr)
        return exc.exit_code
    except PlasticaError as exc:
        print(f"plastica: numeric failure: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FloatingPointError, OverflowError) as exc:
        print(f"plastica: numeric failure: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: wrote {final}" + (" (check failed)" if code == 3 else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
