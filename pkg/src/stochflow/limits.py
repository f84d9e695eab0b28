"""Strong-limit harness: couples a sequence of coefficient fields to a
limit field under common random numbers and measures the decay of the
weighted sup / Hölder distances of their flows and inverse flows.

One noise record per path index drives every field in the sequence, so a
distributional limit becomes a pathwise difference of simulated arrays;
identical fields therefore report exactly zero distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coeffs import CoefficientField, MarkMeasure, evaluate
from .errors import DimensionMismatch
from .flow import integrate_flow, integrate_jacobian
from .grids import SpatialGrid
from .inverse import inverse_gradient, invert_flow
from .noise import generate_noise
from .norms import GridFunction, grid_sup, holder_norm, holder_seminorm, weight


@dataclass(frozen=True)
class CoefficientDistance:
    """Grid-sup estimates of the convergence-hypothesis quantities."""

    drift_sup: float  # sup r1^-1 |b_n - b|
    drift_grad_holder: float  # |grad b_n - grad b| in the Hölder norm
    sigma_holder: float  # |r1^-1 (sigma_n - sigma)| in the Hölder norm
    sigma_grad_sup: float  # sup |grad sigma_n - grad sigma|
    jump_sup: float  # max over atoms of the per-atom K distance
    jump_square_integral: float  # sum_k rate_k K_k^2

    @property
    def total(self) -> float:
        return (
            self.drift_sup
            + self.drift_grad_holder
            + self.sigma_holder
            + self.sigma_grad_sup
            + self.jump_sup
            + self.jump_square_integral
        )


def coefficient_distance(
    field_n: CoefficientField,
    field: CoefficientField,
    box,
    grid_step: float,
    t_samples: Sequence[float] = (0.0,),
    measure: MarkMeasure | None = None,
) -> CoefficientDistance:
    """Hypothesis quantities between a sequence member and the limit field,
    estimated as grid sups over the box and maximized over sampled times."""
    if (field_n.dim, field_n.brownian_count) != (field.dim, field.brownian_count):
        raise DimensionMismatch("fields disagree on (dim, brownian_count)")
    grid = SpatialGrid(box, grid_step)
    nodes = grid.nodes()
    w = weight(nodes, -1.0)
    order = min(field.regularity.beta - 1.0, 2.0)

    drift_sup = grad_holder = sig_holder = sig_grad_sup = 0.0
    jump_sup = jump_sq = 0.0
    for t in t_samples:
        va = evaluate(field_n, t, nodes)
        vb = evaluate(field, t, nodes)
        db = va.b - vb.b
        drift_sup = max(drift_sup, float((w * np.linalg.norm(db, axis=1)).max()))
        grad_holder = max(
            grad_holder, holder_norm(GridFunction(grid, va.grad_b - vb.grad_b), order)
        )
        dsig = w[:, None, None] * (va.sigma - vb.sigma)
        sig_holder = max(sig_holder, holder_norm(GridFunction(grid, dsig), order))
        dgs = va.grad_sigma - vb.grad_sigma
        sig_grad_sup = max(sig_grad_sup, grid_sup(GridFunction(grid, dgs)))
        if measure is not None and measure.atoms:
            k_vals = []
            for z, _rate in measure.atoms:
                ha = np.asarray(field_n.jump(t, nodes, z), dtype=float)
                hb = np.asarray(field.jump(t, nodes, z), dtype=float)
                ga = np.asarray(field_n.jump_grad(t, nodes, z), dtype=float)
                gb = np.asarray(field.jump_grad(t, nodes, z), dtype=float)
                k = float((w * np.linalg.norm(ha - hb, axis=1)).max())
                k += holder_norm(GridFunction(grid, ga - gb), order)
                k_vals.append(k)
            k_arr = np.asarray(k_vals)
            jump_sup = max(jump_sup, float(k_arr.max()))
            jump_sq = max(jump_sq, float(np.sum(measure.rates * k_arr**2)))
    return CoefficientDistance(
        drift_sup=drift_sup,
        drift_grad_holder=grad_holder,
        sigma_holder=sig_holder,
        sigma_grad_sup=sig_grad_sup,
        jump_sup=jump_sup,
        jump_square_integral=jump_sq,
    )


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    coeff: CoefficientDistance
    flow_distance_value: float
    flow_value_ci95: float
    flow_distance_grad: float
    flow_grad_ci95: float
    inverse_distance_value: float
    inverse_value_ci95: float
    inverse_distance_grad: float
    inverse_grad_ci95: float


@dataclass(frozen=True)
class ConvergenceReport:
    rows: tuple[ConvergenceRow, ...]
    epsilon: float
    beta_prime: float
    p: float
    paths: int
    box: tuple
    grid_step: float


def _mean_ci(per_path: np.ndarray, p: float) -> tuple[float, float]:
    powered = per_path**p
    mean = float(powered.mean())
    if len(powered) < 2:
        return mean, 0.0
    return mean, float(1.96 * powered.std(ddof=1) / math.sqrt(len(powered)))


def _weighted_sup_diff(states_n, states, w_val) -> float:
    gap = np.linalg.norm(states_n - states, axis=2)  # (k, N)
    return float((w_val[None, :] * gap).max())


def _weighted_grad_holder_diff(jac_n, jac, w_grad, grid, beta_prime, indices) -> float:
    worst = 0.0
    for k in indices:
        g = GridFunction(grid, w_grad[:, None, None] * (jac_n[k] - jac[k]))
        v = grid_sup(g)
        if beta_prime > 1.0:
            v += holder_seminorm(g, beta_prime - 1.0)
        worst = max(worst, v)
    return worst


def path_distances(
    fields_n: Sequence[CoefficientField],
    field: CoefficientField,
    measure: MarkMeasure,
    noise,
    grid: SpatialGrid,
    epsilon: float,
    beta_prime: float,
    scheme: str = "euler",
    report_times=None,
    invert_tol: float | None = None,
) -> dict[str, np.ndarray]:
    """Distances between each sequence member and the limit field along one
    shared noise record. Returns arrays indexed like ``fields_n``."""
    nodes = grid.nodes()
    w_val = weight(nodes, -(1.0 + epsilon))
    w_grad = weight(nodes, -epsilon)
    times = noise.grid.times if report_times is None else np.asarray(report_times, float)
    t_idx = [noise.grid.index_of(float(t)) for t in times]

    base_flow = integrate_flow(field, measure, noise, nodes, scheme)
    base_flow = integrate_jacobian(field, base_flow)
    base_inv = invert_flow(field, measure, base_flow, nodes, tol=invert_tol, times=times)
    base_inv = inverse_gradient(base_flow, base_inv)

    out = {key: np.empty(len(fields_n)) for key in
           ("flow_value", "flow_grad", "inverse_value", "inverse_grad")}
    for j, fn in enumerate(fields_n):
        flow_n = integrate_flow(fn, measure, noise, nodes, scheme)
        flow_n = integrate_jacobian(fn, flow_n)
        inv_n = invert_flow(fn, measure, flow_n, nodes, tol=invert_tol, times=times)
        inv_n = inverse_gradient(flow_n, inv_n)
        out["flow_value"][j] = _weighted_sup_diff(flow_n.states, base_flow.states, w_val)
        out["flow_grad"][j] = _weighted_grad_holder_diff(
            flow_n.jacobians, base_flow.jacobians, w_grad, grid, beta_prime, t_idx
        )
        out["inverse_value"][j] = _weighted_sup_diff(inv_n.values, base_inv.values, w_val)
        out["inverse_grad"][j] = _weighted_grad_holder_diff(
            inv_n.gradients, base_inv.gradients, w_grad, grid, beta_prime,
            range(len(times)),
        )
    return out


def strong_limit_run(
    fields_n: Sequence[CoefficientField],
    field: CoefficientField,
    measure: MarkMeasure,
    epsilon: float,
    beta_prime: float,
    p: float,
    paths: int,
    seed: int,
    box,
    grid_step: float,
    s: float,
    t_end: float,
    base_steps: int = 64,
    ns: Sequence[int] | None = None,
    scheme: str = "euler",
    report_times=None,
    invert_tol: float | None = None,
    path_results: Sequence[dict] | None = None,
) -> ConvergenceReport:
    """Monte Carlo estimate of the flow / inverse-flow distance decay.

    For every path index one noise record is generated and reused for the
    limit field and the whole sequence (common random numbers); the
    reported distances are means of the p-th powers of the per-path
    weighted sups with normal-approximation 95% half-widths.
    ``path_results`` can inject per-path distances computed elsewhere (the
    experiment runner uses this to fan paths out to worker processes).
    """
    grid = SpatialGrid(box, grid_step)
    ns = list(ns) if ns is not None else list(range(1, len(fields_n) + 1))
    if len(ns) != len(fields_n):
        raise ValueError("ns must be parallel to fields_n")
    if path_results is None:
        path_results = []
        for path_index in range(paths):
            noise = generate_noise(
                measure, field.brownian_count, s, t_end, base_steps, seed, path_index
            )
            path_results.append(
                path_distances(
                    fields_n, field, measure, noise, grid, epsilon, beta_prime,
                    scheme, report_times, invert_tol,
                )
            )

    rows = []
    for j, n in enumerate(ns):
        coeff = coefficient_distance(
            fields_n[j], field, box, grid_step, t_samples=(s,), measure=measure
        )
        stats = {}
        for key in ("flow_value", "flow_grad", "inverse_value", "inverse_grad"):
            per_path = np.array([r[key][j] for r in path_results])
            stats[key] = _mean_ci(per_path, p)
        rows.append(
            ConvergenceRow(
                n=int(n),
                coeff=coeff,
                flow_distance_value=stats["flow_value"][0],
                flow_value_ci95=stats["flow_value"][1],
                flow_distance_grad=stats["flow_grad"][0],
                flow_grad_ci95=stats["flow_grad"][1],
                inverse_distance_value=stats["inverse_value"][0],
                inverse_value_ci95=stats["inverse_value"][1],
                inverse_distance_grad=stats["inverse_grad"][0],
                inverse_grad_ci95=stats["inverse_grad"][1],
            )
        )
    return ConvergenceReport(
        rows=tuple(rows),
        epsilon=float(epsilon),
        beta_prime=float(beta_prime),
        p=float(p),
        paths=int(paths),
        box=grid.box,
        grid_step=float(grid_step),
    )
