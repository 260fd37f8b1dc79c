"""Seeded experiment harness and solver front end.

Every emitted file starts with ``# key=value`` header lines carrying the
full configuration and seed; re-running a command with the same arguments
reproduces every output byte for byte.  The one exception is ``timing.csv``
from ``ota-compare``, which records wall-clock measurements and is
documented as outside the determinism guarantee.

Exit codes: 0 success, 2 configuration error, 3 instance-file error,
4 safety guard tripped.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import casestudies as cs
from . import plotting, sga, streetnet
from .errors import (
    CvarmaxError,
    GenerationError,
    GuardError,
    InstanceFormatError,
    ParameterError,
    UnreachableError,
)
from .risk import RiskParams, estimate_cvar, required_samples, substream

DEFAULT_ALPHA_GRID = (0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
OTA_SCALES = ((3, 2), (6, 4), (12, 5))
OTA_GAMMAS = (0.3, 0.5, 0.7)
OTA_MODES = ("offline", "ota-street", "all-step")
GOLDEN_CITY = {"rows": 5, "cols": 5, "seed": 7, "diagonal_prob": 0.25}


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: dict, columns: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        for key in sorted(header):
            fh.write(f"# {key}={header[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GuardError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(4)
        except (InstanceFormatError, GenerationError, UnreachableError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except (ParameterError, CvarmaxError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _parse_grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParameterError(f"bad alpha grid {text!r}: {exc}") from exc
    if not values or any(not 0 < a <= 1 for a in values):
        raise ParameterError(f"alpha grid values must be in (0, 1], got {text!r}")
    return values


def _resolve_ns(ns, eps, delta_conf, gamma_cap: float) -> tuple[int, float]:
    """Scenario count and the certificate sampling error it carries."""
    if ns is not None:
        return int(ns), 0.0
    if eps is None or delta_conf is None:
        raise ParameterError("give --ns, or both --eps and --delta-conf")
    return required_samples(gamma_cap, eps, delta_conf), float(eps)


@click.group()
def main() -> None:
    """Risk-aware submodular maximization toolkit."""


# ---------------------------------------------------------------------------
# instance generation


@main.command("gen-instance")
@click.option("--family", type=click.Choice(["mod", "coverage"]), required=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--demands", type=int, default=4, show_default=True)
@click.option("--vehicles", type=int, default=6, show_default=True)
@click.option("--width", type=int, default=20, show_default=True)
@click.option("--height", type=int, default=20, show_default=True)
@click.option("--candidates", type=int, default=8, show_default=True)
@click.option("--budget", type=int, default=4, show_default=True)
@click.option("--obstacles", type=str, default=None, help="JSON list of [x,y,w,h] rectangles")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guarded
def gen_instance(family, seed, demands, vehicles, width, height, candidates, budget, obstacles, out):
    """Generate a study instance file."""
    if family == "mod":
        inst = cs.mod_generate(demands, vehicles, seed)
    else:
        if obstacles is None:
            rects = cs.DEFAULT_OBSTACLES_20X20
        else:
            try:
                rects = json.loads(obstacles)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"bad --obstacles JSON: {exc}") from exc
        inst = cs.coverage_generate(width, height, rects, candidates, seed, budget=budget)
    cs.save_instance(inst, out)
    click.echo(f"wrote {out}")


@main.command("gen-city")
@click.option("--rows", type=int, default=5, show_default=True)
@click.option("--cols", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--diagonal-prob", type=float, default=0.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guarded
def gen_city(rows, cols, seed, diagonal_prob, out):
    """Generate a synthetic street network file."""
    net = streetnet.synth_city(rows, cols, seed, diagonal_prob=diagonal_prob)
    streetnet.save_network(net, out)
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# solve


def _instance_pieces(inst, n_scenarios: int, table_seed):
    if isinstance(inst, cs.ModInstance):
        gamma = cs.mod_gamma(inst)
        table = cs.mod_scenario_table(inst, n_scenarios, table_seed)
    else:
        gamma = float(inst.free_count)
        table = cs.coverage_scenario_table(inst, n_scenarios, table_seed)
    return gamma, table


@main.command("solve")
@click.argument("instance_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--ns", type=int, default=None, help="scenario count (or use --eps/--delta-conf)")
@click.option("--eps", type=float, default=None)
@click.option("--delta-conf", type=float, default=None)
@click.option("--gamma-cap", type=float, default=None, help="threshold cap (default: instance rule)")
@click.option("--delta-step", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=None, help="scenario seed (default: instance seed)")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guarded
def solve(instance_file, alpha, ns, eps, delta_conf, gamma_cap, delta_step, seed, out):
    """Run the solver on an instance file and write the solution JSON."""
    inst = cs.load_instance(instance_file)
    default_gamma, _ = _instance_pieces(inst, 1, seed)
    gamma = default_gamma if gamma_cap is None else float(gamma_cap)
    n_scenarios, cert_eps = _resolve_ns(ns, eps, delta_conf, gamma)
    _, table = _instance_pieces(inst, n_scenarios, seed)
    ground = inst.ground_set()
    matroid = inst.matroid()
    params = RiskParams(alpha=alpha, gamma_cap=gamma, delta_step=delta_step)
    result = sga.sga_solve(table, matroid, ground, params)
    k_mean = sga.mean_value_curvature(table, ground).value
    cert = sga.certificate(result, k_mean, params, epsilon=cert_eps)
    doc = {
        "schema": "sga-solution-v1",
        "config": {
            "instance": str(instance_file),
            "alpha": alpha,
            "n_scenarios": n_scenarios,
            "gamma_cap": gamma,
            "delta_step": delta_step,
            "seed": table.seed,
            "epsilon": cert_eps,
        },
        "result": {
            "selected": list(result.selected),
            "selected_labels": [ground.label(s) for s in result.selected],
            "tau": result.tau_g,
            "h_value": result.h_value,
            "eval_count": result.eval_count,
            "trace": [
                {"tau": tp.tau, "h_value": tp.h_value, "selected": list(tp.members)}
                for tp in result.trace
            ],
        },
        "certificate": {
            "k_f": cert.k_f,
            "additive_term": cert.additive_term,
            "delta_step": cert.delta_step,
            "epsilon": cert.epsilon,
            "gamma_cap": cert.gamma_cap,
            "alpha": cert.alpha,
            "optimum_upper_bound": cert.optimum_upper_bound,
        },
    }
    Path(out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# offline studies


def _study_outputs(inst, table, ground, matroid, gamma, alphas, delta_step, out_dir, header):
    k_mean = sga.mean_value_curvature(table, ground).value
    summary_rows = []
    trace_rows = []
    sample_rows = []
    additive_rows = []
    traces_fig = {}
    samples_fig = {}
    results = {}
    for alpha in alphas:
        params = RiskParams(alpha=alpha, gamma_cap=gamma, delta_step=delta_step)
        result = sga.sga_solve(table, matroid, ground, params)
        cert = sga.certificate(result, k_mean, params, epsilon=0.0)
        results[alpha] = result
        labels = ";".join(ground.label(s) for s in result.selected)
        summary_rows.append(
            (alpha, result.tau_g, result.h_value, k_mean, cert.additive_term,
             cert.optimum_upper_bound, result.eval_count, labels)
        )
        additive_rows.append((alpha, k_mean, cert.additive_term))
        for tp in result.trace:
            trace_rows.append(
                (alpha, tp.tau, tp.h_value, len(tp.members),
                 ";".join(ground.label(s) for s in tp.members))
            )
        values, _ = table.outcomes(result.selected)
        for k, v in enumerate(values):
            sample_rows.append((alpha, k, float(v)))
        traces_fig[alpha] = (
            [tp.tau for tp in result.trace],
            [tp.h_value for tp in result.trace],
        )
        samples_fig[alpha] = list(map(float, values))

    _write_csv(out_dir / "h_vs_alpha.csv", {**header, "file_schema": "h-vs-alpha-v1"},
               ["alpha", "tau", "h_value", "k_f", "additive_term",
                "optimum_upper_bound", "eval_count", "selected"],
               summary_rows)
    _write_csv(out_dir / "h_trace.csv", {**header, "file_schema": "h-trace-v1"},
               ["alpha", "tau", "h_value", "set_size", "selected"], trace_rows)
    _write_csv(out_dir / "utility_samples.csv", {**header, "file_schema": "utility-samples-v1"},
               ["alpha", "scenario", "utility"], sample_rows)
    _write_csv(out_dir / "additive_term.csv", {**header, "file_schema": "additive-term-v1"},
               ["alpha", "k_f", "additive_term"], additive_rows)

    plotting.plot_h_vs_alpha(alphas, [r[2] for r in summary_rows], out_dir / "h_vs_alpha.png")
    plot_alphas = [a for a in (0.01, 0.1, 0.5, 1.0) if a in traces_fig] or list(alphas[:4])
    plotting.plot_h_traces({a: traces_fig[a] for a in plot_alphas}, out_dir / "h_trace.png")
    hist_alphas = [a for a in (0.1, 1.0) if a in samples_fig] or list(alphas[:2])
    plotting.plot_utility_hist({a: samples_fig[a] for a in hist_alphas},
                               out_dir / "utility_hist.png")
    plotting.plot_additive_term(alphas, [r[2] for r in additive_rows],
                                out_dir / "additive_term.png")
    return results


def _study_command(family, instance, seed, table_seed, alpha_grid, ns, delta_step, out):
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    alphas = _parse_grid(alpha_grid)
    if instance is not None:
        inst = cs.load_instance(instance)
    elif family == "mod":
        inst = cs.mod_generate(4, 6, seed)
    else:
        inst = cs.coverage_generate(20, 20, cs.DEFAULT_OBSTACLES_20X20, 8, seed, budget=4)
    gamma, table = _instance_pieces(inst, ns, table_seed)
    ground = inst.ground_set()
    matroid = inst.matroid()
    header = {
        "command": f"{family}-offline" if family == "mod" else family,
        "instance_seed": inst.seed,
        "table_seed": table.seed,
        "n_scenarios": ns,
        "gamma_cap": _fmt(gamma),
        "delta_step": _fmt(delta_step),
        "alpha_grid": ",".join(_fmt(a) for a in alphas),
    }
    results = _study_outputs(inst, table, ground, matroid, gamma, alphas,
                             delta_step, out_dir, header)
    return inst, table, ground, header, results, out_dir


@main.command("mod-offline")
@click.option("--instance", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=1, show_default=True, help="instance seed when generating")
@click.option("--table-seed", type=int, default=None, help="scenario seed (default: instance seed)")
@click.option("--alpha-grid", type=str, default=",".join(map(str, DEFAULT_ALPHA_GRID)), show_default=True)
@click.option("--ns", type=int, default=1000, show_default=True)
@click.option("--delta-step", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guarded
def mod_offline(instance, seed, table_seed, alpha_grid, ns, delta_step, out):
    """Assignment study: solve across a risk-level grid and report tables/figures."""
    _study_command("mod", instance, seed, table_seed, alpha_grid, ns, delta_step, out)
    click.echo(f"wrote report to {out}")


@main.command("coverage")
@click.option("--instance", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=3, show_default=True, help="instance seed when generating")
@click.option("--table-seed", type=int, default=None, help="scenario seed (default: instance seed)")
@click.option("--alpha-grid", type=str, default=",".join(map(str, DEFAULT_ALPHA_GRID)), show_default=True)
@click.option("--ns", type=int, default=1000, show_default=True)
@click.option("--delta-step", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guarded
def coverage(instance, seed, table_seed, alpha_grid, ns, delta_step, out):
    """Coverage study: per-sensor report plus risk-level comparison of selections."""
    inst, table, ground, header, results, out_dir = _study_command(
        "coverage", instance, seed, table_seed, alpha_grid, ns, delta_step, out
    )
    cand_rows = [
        (i, inst.candidates[i][0], inst.candidates[i][1],
         len(inst.footprints[i]), inst.success_prob[i])
        for i in range(inst.n_candidates)
    ]
    _write_csv(out_dir / "candidates.csv", {**header, "file_schema": "candidates-v1"},
               ["sensor", "x", "y", "footprint_cells", "success_prob"], cand_rows)

    compare = [a for a in (0.1, 1.0) if a in results]
    sel_rows = []
    selections = {}
    for alpha in compare:
        members = results[alpha].selected
        values, _ = table.outcomes(members)
        est = estimate_cvar(values, 0.1)
        sel_rows.append(
            (alpha, ";".join(ground.label(s) for s in members),
             float(np.mean(values)), est.cvar)
        )
        selections[f"alpha={alpha:g}"] = list(members)
    _write_csv(out_dir / "selections.csv", {**header, "file_schema": "selections-v1"},
               ["alpha", "selected", "mean_utility", "cvar_0.1"], sel_rows)
    if selections:
        plotting.plot_coverage_map(inst, selections, out_dir / "coverage_map.png")
    click.echo(f"wrote report to {out}")


# ---------------------------------------------------------------------------
# dispatch comparison


def _default_city() -> streetnet.StreetNetwork:
    return streetnet.synth_city(
        GOLDEN_CITY["rows"], GOLDEN_CITY["cols"], GOLDEN_CITY["seed"],
        diagonal_prob=GOLDEN_CITY["diagonal_prob"],
    )


def place_fleet(net: streetnet.StreetNetwork, n_vehicles: int, n_demands: int, seed: int):
    """Distinct vehicle and demand nodes, deterministic in the seed."""
    total = n_vehicles + n_demands
    if total > net.n_nodes:
        raise ParameterError(f"{total} placements exceed {net.n_nodes} nodes")
    rng = substream(seed, "placement", n_vehicles, n_demands)
    picks = rng.choice(net.n_nodes, size=total, replace=False)
    return [int(v) for v in picks[:n_vehicles]], [int(d) for d in picks[n_vehicles:]]


def run_ota_compare(net, scales, gammas, seeds, base_seed, alpha, ns, grid_points):
    """All (scale, mode, seed) episodes; returns result rows and timing rows."""
    rows = []
    timing = []
    for r, n in scales:
        vehicles, demands = place_fleet(net, r, n, base_seed)
        scale = f"{r}/{n}"
        mode_list = [("offline", None)] + [("ota-street", g) for g in gammas] + [("all-step", None)]
        for mode, gamma in mode_list:
            for trial in range(seeds):
                episode_seed = base_seed * 100003 + trial
                run = streetnet.ota_run(
                    net, vehicles, demands,
                    mode=mode,
                    seed=episode_seed,
                    alpha=alpha,
                    gamma_trigger=0.5 if gamma is None else gamma,
                    n_scenarios=ns,
                    grid_points=grid_points,
                )
                label = mode if gamma is None else f"{mode}({gamma:g})"
                rows.append((scale, label, "" if gamma is None else gamma, trial,
                             run.arrival_time, run.assignment_count, len(run.step_intervals)))
                timing.append((scale, label, trial, run.wall_time))
    return rows, timing


@main.command("ota-compare")
@click.option("--city", type=click.Path(exists=True, dir_okay=False), default=None,
              help="street network file (default: built-in 5x5 city)")
@click.option("--seed", type=int, default=149, show_default=True)
@click.option("--seeds", "n_seeds", type=int, default=10, show_default=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--gamma-trigger", "gammas", type=str, default="0.3,0.5,0.7", show_default=True)
@click.option("--scales", type=str, default="3/2,6/4,12/5", show_default=True)
@click.option("--ns", type=int, default=128, show_default=True)
@click.option("--grid-points", type=int, default=32, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guarded
def ota_compare(city, seed, n_seeds, alpha, gammas, scales, ns, grid_points, out):
    """Compare dispatch modes on a street network across seeds and scales.

    Wall-clock measurements go to timing.csv, which is excluded from the
    byte-identical rerun guarantee; all other outputs are deterministic.
    """
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = _default_city() if city is None else streetnet.load_network(city)
    try:
        scale_list = [tuple(int(v) for v in s.split("/")) for s in scales.split(",")]
        gamma_list = [float(g) for g in gammas.split(",")]
    except ValueError as exc:
        raise ParameterError(f"bad --scales or --gamma-trigger: {exc}") from exc
    header = {
        "command": "ota-compare",
        "seed": seed,
        "seeds": n_seeds,
        "alpha": _fmt(alpha),
        "gammas": gammas,
        "scales": scales,
        "n_scenarios": ns,
        "grid_points": grid_points,
        "city": "builtin-5x5" if city is None else str(city),
    }
    rows, timing = run_ota_compare(net, scale_list, gamma_list, n_seeds, seed,
                                   alpha, ns, grid_points)
    _write_csv(out_dir / "ota_results.csv", {**header, "file_schema": "ota-results-v1"},
               ["scale", "mode", "gamma", "seed", "arrival_time", "assignment_count", "steps"],
               rows)

    summary = {}
    for scale, label, _gamma, _trial, arrival, count, _steps in rows:
        summary.setdefault((scale, label), []).append((arrival, count))
    summary_rows = [
        (scale, label,
         float(np.mean([a for a, _ in vals])),
         float(np.mean([c for _, c in vals])))
        for (scale, label), vals in sorted(summary.items())
    ]
    _write_csv(out_dir / "ota_summary.csv", {**header, "file_schema": "ota-summary-v1"},
               ["scale", "mode", "mean_arrival_time", "mean_assignment_count"], summary_rows)
    _write_csv(out_dir / "timing.csv",
               {**header, "file_schema": "ota-timing-v1",
                "determinism": "excluded (wall-clock measurements)"},
               ["scale", "mode", "seed", "wall_time_s"], timing)

    scale_names = [f"{r}/{n}" for r, n in scale_list]
    labels = sorted({label for _, label in summary})
    means = {(s, l): (arr, cnt) for s, l, arr, cnt in summary_rows}
    arrival_series = {
        l: [means.get((s, l), (0.0, 0.0))[0] for s in scale_names] for l in labels
    }
    count_series = {
        l: [means.get((s, l), (0.0, 0.0))[1] for s in scale_names] for l in labels
    }
    plotting.plot_ota_compare(scale_names, arrival_series, out_dir / "ota_arrival.png",
                              ylabel="mean arrival time (s)")
    plotting.plot_ota_compare(scale_names, count_series, out_dir / "ota_assignments.png",
                              ylabel="mean assignment count")
    click.echo(f"wrote report to {out}")


if __name__ == "__main__":
    main()
