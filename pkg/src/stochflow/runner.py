"""Experiment runner: dispatches a parsed config to the numerical layers
and writes reproducible CSV reports plus a JSON manifest.

Floats are formatted with the shortest round-trip decimal representation
and rows are assembled in a fixed order, so reruns of the same config
produce bitwise-identical CSVs at any worker count. Path-level work (the
limit and moments experiments) fans out to a process pool; workers return
per-path payloads that the parent combines in path-index order.
"""

from __future__ import annotations

import json
import multiprocessing
import time
from pathlib import Path

import numpy as np

from . import __version__
from .coeffs import check_assumptions
from .config import (
    ExperimentConfig,
    config_to_dict,
    default_box,
    field_from_config,
    measure_from_config,
)
from .errors import ConfigError
from .families import scale_diffusion, shift_drift
from .flow import integrate_flow, integrate_jacobian
from .grids import SpatialGrid
from .inverse import invert_flow
from .limits import path_distances, strong_limit_run
from .noise import generate_noise
from .norms import moment_estimate, weighted_holder_report
from .spde import solve_spde_bar, solve_spde_characteristics


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _grid(cfg: ExperimentConfig, dim: int) -> SpatialGrid:
    box, step = default_box(cfg, dim)
    return SpatialGrid(box, step)


def _points(cfg: ExperimentConfig, dim: int) -> np.ndarray:
    if cfg.points is not None:
        pts = np.asarray(cfg.points, dtype=float)
        if pts.shape[1] != dim:
            raise ConfigError(f"points: dimension {pts.shape[1]} != family dimension {dim}")
        return pts
    return _grid(cfg, dim).nodes()


def _output_times(times: np.ndarray, count: int = 9) -> np.ndarray:
    if len(times) <= count:
        return times
    idx = np.unique(np.round(np.linspace(0, len(times) - 1, count)).astype(int))
    return times[idx]


def _run_simulate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    field = field_from_config(cfg)
    measure = measure_from_config(cfg)
    pts = _points(cfg, field.dim)
    rows = []
    for path_index in range(cfg.paths):
        noise = generate_noise(
            measure, field.brownian_count, cfg.window_s, cfg.window_t_end,
            cfg.base_steps, cfg.seed, path_index,
        )
        flow = integrate_flow(field, measure, noise, pts, cfg.scheme)
        for k, t in enumerate(flow.times):
            for j in range(len(pts)):
                rows.append([path_index, t, j, *flow.states[k, j]])
    header = ["path", "time", "point", *[f"x{i}" for i in range(field.dim)]]
    return [_write_csv(out / "simulate.csv", header, rows)]


def _run_invert(cfg: ExperimentConfig, out: Path) -> list[Path]:
    field = field_from_config(cfg)
    measure = measure_from_config(cfg)
    pts = _points(cfg, field.dim)
    rows = []
    for path_index in range(cfg.paths):
        noise = generate_noise(
            measure, field.brownian_count, cfg.window_s, cfg.window_t_end,
            cfg.base_steps, cfg.seed, path_index,
        )
        flow = integrate_flow(field, measure, noise, pts, cfg.scheme)
        times = _output_times(flow.times)
        inv = invert_flow(field, measure, flow, pts, tol=cfg.invert_tol, times=times)
        for k, t in enumerate(inv.times):
            for j in range(len(pts)):
                rows.append(
                    [path_index, t, j, *pts[j], *inv.values[k, j], inv.residuals[k, j]]
                )
    d = field.dim
    header = [
        "path", "time", "point",
        *[f"y{i}" for i in range(d)],
        *[f"inv{i}" for i in range(d)],
        "residual",
    ]
    return [_write_csv(out / "invert.csv", header, rows)]


def _run_spde(cfg: ExperimentConfig, out: Path, bar: bool) -> list[Path]:
    field = field_from_config(cfg)
    grid = _grid(cfg, field.dim)
    solver = solve_spde_bar if bar else solve_spde_characteristics
    tol = cfg.invert_tol if cfg.invert_tol is not None else 1e-9
    rows = []
    for path_index in range(cfg.paths):
        noise = generate_noise(
            measure_from_config(cfg), field.brownian_count, cfg.window_s,
            cfg.window_t_end, cfg.base_steps, cfg.seed, path_index,
        )
        times = _output_times(noise.grid.times)
        sol = solver(
            field, noise, cfg.window_s, cfg.window_t_end, grid, tol=tol, times=times
        )
        nodes = grid.nodes()
        for k, t in enumerate(sol.times):
            for j in range(len(nodes)):
                rows.append([path_index, t, j, *nodes[j], *sol.values[k, j]])
    d = field.dim
    header = [
        "path", "time", "node",
        *[f"x{i}" for i in range(d)],
        *[f"u{i}" for i in range(d)],
    ]
    name = "spde_bar.csv" if bar else "spde.csv"
    return [_write_csv(out / name, header, rows)]


def _run_partition(cfg: ExperimentConfig, out: Path) -> list[Path]:
    from .spde import partition_expansion

    field = field_from_config(cfg)
    x = cfg.points[0] if cfg.points else tuple([0.0] * field.dim)
    noise = generate_noise(
        measure_from_config(cfg), field.brownian_count, cfg.window_s,
        cfg.window_t_end, cfg.base_steps, cfg.seed, 0,
    )
    report = partition_expansion(
        field, noise, cfg.window_s, cfg.window_t_end, np.asarray(x, dtype=float),
        cfg.partition_m, cfg.partition_fd_step, cfg.partition_quad_order,
        scheme=cfg.scheme,
    )
    d = field.dim
    rows = [
        [n, report.partition_times[n],
         *report.a_terms[n], *report.c_terms[n], *report.d_terms[n]]
        for n in range(report.partition_size)
    ]
    header = ["n", "t_n",
              *[f"a{i}" for i in range(d)],
              *[f"c{i}" for i in range(d)],
              *[f"d{i}" for i in range(d)]]
    p1 = _write_csv(out / "partition.csv", header, rows)
    summary_header = [
        "m", *[f"lhs{i}" for i in range(d)],
        *[f"sum_a{i}" for i in range(d)],
        *[f"sum_c{i}" for i in range(d)],
        *[f"sum_d{i}" for i in range(d)],
        "identity_residual", "claim1_residual", "claim2_residual", "claim3_residual",
    ]
    summary = [[
        report.partition_size, *report.lhs, *report.sum_a, *report.sum_c, *report.sum_d,
        report.identity_residual,
        report.claim_residuals["part1"],
        report.claim_residuals["part2"],
        report.claim_residuals["part3"],
    ]]
    p2 = _write_csv(out / "partition_summary.csv", summary_header, summary)
    return [p1, p2]


def limit_sequence(cfg: ExperimentConfig, field):
    if cfg.limit_perturbation == "drift_shift":
        return [shift_drift(field, 1.0 / n) for n in cfg.limit_n_values]
    return [scale_diffusion(field, 1.0 + 1.0 / n) for n in cfg.limit_n_values]


def _limit_one_path(cfg: ExperimentConfig, path_index: int) -> dict:
    field = field_from_config(cfg)
    measure = measure_from_config(cfg)
    fields_n = limit_sequence(cfg, field)
    grid = _grid(cfg, field.dim)
    noise = generate_noise(
        measure, field.brownian_count, cfg.window_s, cfg.window_t_end,
        cfg.base_steps, cfg.seed, path_index,
    )
    times = _output_times(noise.grid.times)
    return path_distances(
        fields_n, field, measure, noise, grid, cfg.epsilon, cfg.beta_prime,
        cfg.scheme, report_times=times, invert_tol=cfg.invert_tol,
    )


def _moments_one_path(cfg: ExperimentConfig, path_index: int) -> dict:
    field = field_from_config(cfg)
    measure = measure_from_config(cfg)
    grid = _grid(cfg, field.dim)
    noise = generate_noise(
        measure, field.brownian_count, cfg.window_s, cfg.window_t_end,
        cfg.base_steps, cfg.seed, path_index,
    )
    flow = integrate_flow(field, measure, noise, grid.nodes(), cfg.scheme)
    flow = integrate_jacobian(field, flow)
    report = weighted_holder_report(flow, grid, cfg.epsilon, cfg.beta_prime)
    return {"value": report.sup_weighted_value, "grad": report.grad_holder_weighted}


_PATH_WORKERS = {"limit": _limit_one_path, "moments": _moments_one_path}


def _pool_worker(args):
    from .config import config_from_dict

    kind, cfg_dict, indices = args
    cfg = config_from_dict(cfg_dict)
    fn = _PATH_WORKERS[kind]
    return [fn(cfg, i) for i in indices]


def _map_paths(cfg: ExperimentConfig, kind: str, workers: int) -> list[dict]:
    indices = list(range(cfg.paths))
    if workers <= 1 or cfg.paths == 1:
        fn = _PATH_WORKERS[kind]
        return [fn(cfg, i) for i in indices]
    chunks = np.array_split(indices, min(workers, len(indices)))
    jobs = [(kind, config_to_dict(cfg), [int(i) for i in chunk]) for chunk in chunks if len(chunk)]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=len(jobs)) as pool:
        parts = pool.map(_pool_worker, jobs)
    return [payload for part in parts for payload in part]


def _run_limit(cfg: ExperimentConfig, out: Path, workers: int) -> list[Path]:
    field = field_from_config(cfg)
    measure = measure_from_config(cfg)
    fields_n = limit_sequence(cfg, field)
    box, step = default_box(cfg, field.dim)
    path_results = _map_paths(cfg, "limit", workers)
    report = strong_limit_run(
        fields_n, field, measure, cfg.epsilon, cfg.beta_prime, cfg.p, cfg.paths,
        cfg.seed, box, step, cfg.window_s, cfg.window_t_end, cfg.base_steps,
        ns=cfg.limit_n_values, scheme=cfg.scheme, invert_tol=cfg.invert_tol,
        path_results=path_results,
    )
    header = [
        "n", "coeff_distance",
        "flow_distance_value", "flow_ci95",
        "inverse_distance_value", "inverse_ci95",
        "flow_distance_grad", "flow_grad_ci95",
        "inverse_distance_grad", "inverse_grad_ci95",
    ]
    rows = [
        [row.n, row.coeff.total,
         row.flow_distance_value, row.flow_value_ci95,
         row.inverse_distance_value, row.inverse_value_ci95,
         row.flow_distance_grad, row.flow_grad_ci95,
         row.inverse_distance_grad, row.inverse_grad_ci95]
        for row in report.rows
    ]
    return [_write_csv(out / "limit.csv", header, rows)]


def _run_moments(cfg: ExperimentConfig, out: Path, workers: int) -> list[Path]:
    payloads = _map_paths(cfg, "moments", workers)
    rows = []
    for quantity in ("value", "grad"):
        series = [p[quantity] for p in payloads]
        if any(v is None for v in series):
            continue
        if len(series) >= 2:
            est = moment_estimate(series, cfg.p)
            rows.append([quantity, cfg.p, est.mean, est.ci95, len(series)])
        else:
            rows.append([quantity, cfg.p, float(series[0]) ** cfg.p, 0.0, 1])
    header = ["quantity", "p", "mean", "ci95", "paths"]
    return [_write_csv(out / "moments.csv", header, rows)]


def _run_assumptions(cfg: ExperimentConfig, out: Path) -> list[Path]:
    field = field_from_config(cfg)
    measure = measure_from_config(cfg)
    box, step = default_box(cfg, field.dim)
    report = check_assumptions(field, measure, box, step, times=(cfg.window_s,))
    rows = [[c.name, c.grid_sup, c.bound, c.satisfied] for c in report.checks]
    rows.append(["overall", 0.0, 0.0, report.overall])
    header = ["name", "grid_sup", "bound", "satisfied"]
    return [_write_csv(out / "assumptions.csv", header, rows)]


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> dict:
    """Run one experiment; returns a manifest dict (also written to disk).

    A failed bound check is a result, not an error: the run still exits
    cleanly with the report rows. Library errors propagate to the caller.
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    if cfg.kind == "simulate":
        files = _run_simulate(cfg, out)
    elif cfg.kind == "invert":
        files = _run_invert(cfg, out)
    elif cfg.kind == "spde":
        files = _run_spde(cfg, out, bar=False)
    elif cfg.kind == "spde_bar":
        files = _run_spde(cfg, out, bar=True)
    elif cfg.kind == "partition":
        files = _run_partition(cfg, out)
    elif cfg.kind == "limit":
        files = _run_limit(cfg, out, workers)
    elif cfg.kind == "moments":
        files = _run_moments(cfg, out, workers)
    elif cfg.kind == "assumptions":
        files = _run_assumptions(cfg, out)
    else:  # pragma: no cover - config validation rejects unknown kinds
        raise ConfigError(f"kind: unknown experiment {cfg.kind!r}")
    manifest = {
        "config": config_to_dict(cfg),
        "version": __version__,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "workers": workers,
        "wall_time_s": time.monotonic() - started,
        "outputs": sorted(p.name for p in files),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
