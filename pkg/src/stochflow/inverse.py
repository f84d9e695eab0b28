"""Numerical inversion of the flow map and the Stratonovich inverse-flow
SDE cross-check.

The flow map over one noise realization is a composition of near-identity
step maps (small-time Euler or closed-form steps) and jump maps
x + H(t, x, z). It is inverted stepwise, backward in time: each continuous
step by damped fixed-point iteration with a Newton fallback, each jump by
the contraction/Newton scheme for x + H(x, z) = y. A full-path Newton
polish with the propagated Jacobian then pushes residuals below the
requested tolerance, and every stored residual |X_t(x*) - y| is certified
by forward re-integration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .coeffs import CoefficientField, EMPTY_MEASURE, MarkMeasure, as_points, compensator_drift
from .errors import (
    JumpFieldRejected,
    NoConvergence,
    NonFiniteState,
    SingularJacobian,
    SingularJumpJacobian,
)
from .flow import FlowPath, _atom_mark, _euler_increment, integrate_flow
from .noise import NoiseRecord

MAX_FIXED_POINT = 200
MAX_NEWTON = 50
MAX_POLISH = 12
_DET_FLOOR = 1e-12


@dataclass(frozen=True)
class InversePath:
    """Preimages of a query batch at selected grid times.

    ``values[k]`` approximates the spatial inverse of the flow map at
    ``times[k]`` evaluated at the query points; ``residuals[k]`` certifies
    |X_t(value) - query| from forward re-integration.
    """

    times: np.ndarray  # (k,)
    query_points: np.ndarray  # (q, d)
    values: np.ndarray  # (k, q, d)
    residuals: np.ndarray  # (k, q)
    tol: float
    gradients: np.ndarray | None = None  # (k, q, d, d)


def invert_jump_map(
    field: CoefficientField,
    t: float,
    z,
    y,
    tol: float = 1e-12,
) -> np.ndarray:
    """Solve x + H(t, x, z) = y.

    Fixed-point iteration x <- y - H(t, x, z) (a contraction while
    |grad H| <= eta), with step halving when the residual grows, then a
    Newton polish through (I + grad H).
    """
    pts, single = as_points(y, field.dim)
    x = pts.copy()

    def residual(v):
        return v + np.asarray(field.jump(t, v, z), dtype=float) - pts

    res = residual(x)
    res_norm = np.linalg.norm(res, axis=1)
    for _ in range(MAX_FIXED_POINT):
        if res_norm.max() <= tol:
            break
        proposal = pts - np.asarray(field.jump(t, x, z), dtype=float)
        step = proposal - x
        cand = x + step
        cand_res = residual(cand)
        cand_norm = np.linalg.norm(cand_res, axis=1)
        worse = cand_norm > res_norm
        while worse.any() and np.abs(step[worse]).max() > 1e-16:
            step[worse] *= 0.5
            cand = x + step
            cand_res = residual(cand)
            cand_norm = np.linalg.norm(cand_res, axis=1)
            worse = cand_norm > res_norm
        if np.abs(cand - x).max() <= 1e-16 and cand_norm.max() > tol:
            break  # stalled; hand over to Newton
        x, res, res_norm = cand, cand_res, cand_norm

    for _ in range(MAX_NEWTON):
        if res_norm.max() <= tol:
            break
        jac = np.eye(field.dim) + np.asarray(field.jump_grad(t, x, z), dtype=float)
        dets = np.linalg.det(jac)
        if np.any(np.abs(dets) < _DET_FLOOR):
            raise SingularJumpJacobian("near-singular I + grad H in Newton step")
        x = x - np.linalg.solve(jac, res[..., None])[..., 0]
        res = residual(x)
        res_norm = np.linalg.norm(res, axis=1)
    if res_norm.max() > tol:
        raise NoConvergence(
            f"jump-map inversion stalled at residual {res_norm.max():.3e}"
        )
    return x[0] if single else x


def _invert_continuous_step(field, measure, t0, t1, dw, y, scheme):
    """Invert one continuous step map x -> x + phi(t0, x) of the flow."""
    if scheme == "exact":
        return np.asarray(field.exact.inverse_step(t0, t1, y, dw), dtype=float)
    dt = t1 - t0

    def phi(v):
        return _euler_increment(field, measure, t0, v, dt, dw)

    x = y.copy()
    res = phi(x)  # residual of x + phi(x) - y at the start (x = y)
    res = x + res - y
    res_norm = np.linalg.norm(res, axis=1)
    for _ in range(MAX_FIXED_POINT):
        if res_norm.max() <= 1e-14 * (1.0 + np.abs(y).max()):
            return x
        cand = y - phi(x)
        step = cand - x
        cand_res = cand + phi(cand) - y
        cand_norm = np.linalg.norm(cand_res, axis=1)
        worse = cand_norm > res_norm
        tries = 0
        while worse.any() and tries < 30:
            step[worse] *= 0.5
            cand = x + step
            cand_res = cand + phi(cand) - y
            cand_norm = np.linalg.norm(cand_res, axis=1)
            worse = cand_norm > res_norm
            tries += 1
        if tries >= 30 or np.abs(cand - x).max() <= 1e-16:
            break
        x, res_norm = cand, cand_norm

    # Newton on x + phi(x) = y
    for _ in range(MAX_NEWTON):
        res = x + phi(x) - y
        res_norm = np.linalg.norm(res, axis=1)
        if res_norm.max() <= 1e-14 * (1.0 + np.abs(y).max()):
            return x
        a = np.asarray(field.drift_grad(t0, x), dtype=float)
        if field.has_jump and measure.atoms:
            for z, rate in measure.atoms:
                a = a - rate * np.asarray(field.jump_grad(t0, x, z), dtype=float)
        g = np.asarray(field.diffusion_grad(t0, x), dtype=float)
        jac = np.eye(field.dim) + a * dt + np.einsum("nmij,m->nij", g, dw)
        dets = np.linalg.det(jac)
        if np.any(np.abs(dets) < _DET_FLOOR):
            raise NoConvergence("singular step Jacobian; refine the time step")
        x = x - np.linalg.solve(jac, res[..., None])[..., 0]
    res_norm = np.linalg.norm(x + phi(x) - y, axis=1)
    if res_norm.max() > 1e-10 * (1.0 + np.abs(y).max()):
        raise NoConvergence(
            "per-step inversion did not converge; the step map is not a "
            "contraction - refine the time step"
        )
    return x


def preimage_at(
    field: CoefficientField,
    measure: MarkMeasure,
    noise: NoiseRecord,
    grid_index: int,
    points,
    scheme: str = "euler",
    jump_tol: float = 1e-13,
) -> np.ndarray:
    """Backward-compose the inverted step maps from ``grid_index`` to the
    start of the grid; returns candidate preimages of ``points``."""
    pts, _ = as_points(points, field.dim)
    times = noise.grid.times
    y = pts.copy()
    for i in range(grid_index, 0, -1):
        atom = noise.grid.jump_atoms.get(i)
        if atom is not None:
            z = _atom_mark(measure, atom)
            y = invert_jump_map(field, times[i], z, y, tol=jump_tol)
        y = _invert_continuous_step(
            field, measure, times[i - 1], times[i], noise.increments[i - 1], y, scheme
        )
        if not np.isfinite(y).all():
            raise NonFiniteState("backward composition produced non-finite points")
    return y


def _stacked_forward(field, measure, noise, blocks, time_indices, scheme, with_jacobian=False):
    """Integrate the stacked candidate blocks forward once; read off block k
    at its own target time. Returns per-block states (and Jacobians)."""
    sizes = [len(b) for b in blocks]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    x = np.concatenate(blocks, axis=0)
    d = field.dim
    u = np.broadcast_to(np.eye(d), (len(x), d, d)).copy() if with_jacobian else None
    out_states = [None] * len(blocks)
    out_jacs = [None] * len(blocks) if with_jacobian else None
    times = noise.grid.times

    def snapshot(idx):
        for k, ti in enumerate(time_indices):
            if ti == idx:
                out_states[k] = x[offsets[k] : offsets[k + 1]].copy()
                if with_jacobian:
                    out_jacs[k] = u[offsets[k] : offsets[k + 1]].copy()

    snapshot(0)
    last = max(time_indices)
    for i in range(last):
        t0, t1 = times[i], times[i + 1]
        dw = noise.increments[i]
        if scheme == "exact":
            if with_jacobian:
                j_step = np.asarray(field.exact.step_jacobian(t0, t1, x, dw), dtype=float)
                u = j_step @ u
            x = np.asarray(field.exact.step(t0, t1, x, dw), dtype=float)
        else:
            if with_jacobian:
                a = np.asarray(field.drift_grad(t0, x), dtype=float)
                g = np.asarray(field.diffusion_grad(t0, x), dtype=float)
                m_step = a * (t1 - t0) + np.einsum("nmij,m->nij", g, dw)
                if field.has_jump and measure.atoms:
                    for z, rate in measure.atoms:
                        m_step -= (
                            rate
                            * (t1 - t0)
                            * np.asarray(field.jump_grad(t0, x, z), dtype=float)
                        )
                u = u + m_step @ u
            x = x + _euler_increment(field, measure, t0, x, t1 - t0, dw)
        atom = noise.grid.jump_atoms.get(i + 1)
        if atom is not None:
            z = _atom_mark(measure, atom)
            if with_jacobian:
                gh = np.asarray(field.jump_grad(t1, x, z), dtype=float)
                u = (np.eye(d) + gh) @ u
            x = x + np.asarray(field.jump(t1, x, z), dtype=float)
        snapshot(i + 1)
    return out_states, out_jacs


def invert_flow(
    field: CoefficientField,
    measure: MarkMeasure,
    flow: FlowPath,
    query_points,
    tol: float | None = None,
    times=None,
) -> InversePath:
    """Invert the flow map at the requested grid times for a query batch.

    Backward stepwise composition produces the candidates; residuals are
    certified by one stacked forward integration, and rows above tolerance
    get a full-path Newton polish with the propagated Jacobian.
    """
    if tol is None:
        tol = 1e-10 if flow.scheme == "exact" else 1e-8
    queries, _ = as_points(query_points, field.dim)
    grid = flow.noise.grid
    if times is None:
        time_indices = list(range(len(grid.times)))
    else:
        time_indices = [grid.index_of(t) for t in times]
    out_times = grid.times[time_indices]

    blocks = [
        preimage_at(field, measure, flow.noise, idx, queries, flow.scheme)
        for idx in time_indices
    ]
    fwd, _ = _stacked_forward(field, measure, flow.noise, blocks, time_indices, flow.scheme)
    residuals = [np.linalg.norm(f - queries, axis=1) for f in fwd]

    for _ in range(MAX_POLISH):
        bad = [k for k in range(len(blocks)) if residuals[k].max() > tol]
        if not bad:
            break
        bad_blocks = [blocks[k] for k in bad]
        bad_idx = [time_indices[k] for k in bad]
        states, jacs = _stacked_forward(
            field, measure, flow.noise, bad_blocks, bad_idx, flow.scheme, with_jacobian=True
        )
        for pos, k in enumerate(bad):
            res_vec = states[pos] - queries
            u = jacs[pos]
            dets = np.linalg.det(u)
            if np.any(np.abs(dets) < _DET_FLOOR):
                raise SingularJacobian("flow Jacobian singular during Newton polish")
            step = np.linalg.solve(u, res_vec[..., None])[..., 0]
            mask = residuals[k] > tol
            newb = blocks[k].copy()
            newb[mask] -= step[mask]
            blocks[k] = newb
        fwd_new, _ = _stacked_forward(
            field, measure, flow.noise, [blocks[k] for k in bad], bad_idx, flow.scheme
        )
        for pos, k in enumerate(bad):
            residuals[k] = np.linalg.norm(fwd_new[pos] - queries, axis=1)

    worst = max(r.max() for r in residuals)
    if worst > tol:
        raise NoConvergence(
            f"flow inversion residual {worst:.3e} above tolerance {tol:.1e}"
        )
    return InversePath(
        times=out_times,
        query_points=queries,
        values=np.stack(blocks),
        residuals=np.stack(residuals),
        tol=float(tol),
    )


def inverse_gradient(flow: FlowPath, inverse: InversePath) -> InversePath:
    """Fill gradients via the chain rule: the spatial gradient of the
    inverse map equals the matrix inverse of the Jacobian flow started from
    the preimage point (re-propagated along each query's trajectory)."""
    field, measure = flow.field, flow.measure
    grid = flow.noise.grid
    time_indices = [grid.index_of(t) for t in inverse.times]
    blocks = [inverse.values[k] for k in range(len(time_indices))]
    _, jacs = _stacked_forward(
        field, measure, flow.noise, blocks, time_indices, flow.scheme, with_jacobian=True
    )
    grads = np.empty((len(time_indices),) + jacs[0].shape)
    for k, u in enumerate(jacs):
        dets = np.linalg.det(u)
        if np.any(np.abs(dets) < _DET_FLOOR):
            raise SingularJacobian("|det grad X| < 1e-12 along the inverse path")
        grads[k] = np.linalg.inv(u)
    return replace(inverse, gradients=grads)


def _ubar_prefix(field, noise, upto, points):
    """Inverse-Jacobian field [grad Y_t]^-1 at grid index ``upto`` for paths
    started at ``points`` (jump-free Euler transport)."""
    x = points.copy()
    d = field.dim
    ub = np.broadcast_to(np.eye(d), (len(x), d, d)).copy()
    times = noise.grid.times
    for i in range(upto):
        t0, t1 = times[i], times[i + 1]
        dt = t1 - t0
        dw = noise.increments[i]
        a = np.asarray(field.drift_grad(t0, x), dtype=float)
        g = np.asarray(field.diffusion_grad(t0, x), dtype=float)
        gg = np.einsum("nmij,nmjk->nik", g, g)
        gdw = np.einsum("nmij,m->nij", g, dw)
        ub = ub + ub @ (gg - a) * dt - ub @ gdw
        x = x + _euler_increment(field, EMPTY_MEASURE, t0, x, dt, dw)
    return ub


def integrate_inverse_sde_stratonovich(
    field: CoefficientField,
    noise: NoiseRecord,
    query_points,
) -> InversePath:
    """Integrate the inverse-flow SDE in Stratonovich form (jump-free
    fields): dZ = -U(Z) b*(x) dt - U(Z) sigma(x) o dw, with U the
    inverse-Jacobian field re-propagated from the start for the current
    preimage estimate and b* the Stratonovich-corrected drift
    b - (1/2) sigma^{j rho} d_j sigma^{i rho}.

    Stepped with the Euler-Heun midpoint rule; residuals are certified by
    forward re-integration and the recorded tolerance is their maximum.
    """
    if field.has_jump:
        raise JumpFieldRejected("the Stratonovich inverse route needs H = 0")
    queries, _ = as_points(query_points, field.dim)
    times = noise.grid.times
    k = len(times)

    # coefficients frozen at the query points: the inverse-flow SDE carries
    # b and sigma evaluated at the fixed spatial argument
    sigma_q = np.asarray(field.diffusion(0.0, queries), dtype=float)
    gs_q = np.asarray(field.diffusion_grad(0.0, queries), dtype=float)
    b_q = np.asarray(field.drift(0.0, queries), dtype=float)
    b_strat = b_q - 0.5 * np.einsum("njr,nrij->ni", sigma_q, gs_q)

    z = queries.copy()
    values = np.empty((k, len(queries), field.dim))
    values[0] = z
    for i in range(k - 1):
        dt = times[i + 1] - times[i]
        dw = noise.increments[i]
        noise_vec = np.einsum("ndm,m->nd", sigma_q, dw)
        u0 = _ubar_prefix(field, noise, i, z)
        drift0 = -np.einsum("nij,nj->ni", u0, b_strat)
        diff0 = -np.einsum("nij,nj->ni", u0, noise_vec)
        z_pred = z + drift0 * dt + diff0
        u1 = _ubar_prefix(field, noise, i + 1, z_pred)
        drift1 = -np.einsum("nij,nj->ni", u1, b_strat)
        diff1 = -np.einsum("nij,nj->ni", u1, noise_vec)
        z = z + 0.5 * (drift0 + drift1) * dt + 0.5 * (diff0 + diff1)
        if not np.isfinite(z).all():
            raise NonFiniteState("Stratonovich inverse path blew up")
        values[i + 1] = z

    blocks = [values[i] for i in range(k)]
    fwd, _ = _stacked_forward(field, EMPTY_MEASURE, noise, blocks, list(range(k)), "euler")
    residuals = np.stack([np.linalg.norm(f - queries, axis=1) for f in fwd])
    return InversePath(
        times=times.copy(),
        query_points=queries,
        values=values,
        residuals=residuals,
        tol=float(residuals.max()),
    )
