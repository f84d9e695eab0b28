"""Degenerate linear parabolic SPDEs solved by stochastic characteristics.

The solution of the transport-type SPDE with corrected first-order drift is
represented pathwise as the spatial inverse of the forward flow; sampling
the solution on a grid therefore amounts to inverting the flow map at the
grid nodes. The companion ("bar") equation with the opposite first-order
sign is solved through the flow of (-corrected drift, -diffusion).

``partition_expansion`` reproduces, numerically and per noise realization,
the time-partition Taylor identity behind that representation: the
telescoped increments split into three exactly computable term families
whose partition sums converge to explicit time integrals along the path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .coeffs import CoefficientField, EMPTY_MEASURE, as_points
from .errors import JumpFieldRejected, OutOfGrid
from .families import bar_field
from .flow import integrate_flow
from .grids import SpatialGrid
from .inverse import invert_flow, preimage_at
from .noise import NoiseRecord, restrict


@dataclass(frozen=True)
class SpdeSolution:
    """Random field u_t(x) sampled on a space-time grid for one noise
    realization; u at the start time is the identity."""

    grid: SpatialGrid
    times: np.ndarray  # (k,)
    values: np.ndarray  # (k, N, d)
    noise: NoiseRecord
    variant: str  # "inverse_flow_spde" | "bar_spde"
    start: float
    tol: float


def _default_scheme(field: CoefficientField) -> str:
    return "exact" if field.exact is not None else "euler"


def solve_spde_characteristics(
    field: CoefficientField,
    noise: NoiseRecord,
    s: float,
    t_end: float,
    spatial_grid: SpatialGrid,
    tol: float = 1e-10,
    times=None,
    scheme: str | None = None,
) -> SpdeSolution:
    """Sample the SPDE solution u_t on the grid as the inverse flow.

    The forward flow is integrated from ``s`` over the noise and inverted at
    each output time onto the grid nodes; the recorded inversion residuals
    certify the values to ``tol``.
    """
    if field.has_jump:
        raise JumpFieldRejected("stochastic characteristics need a jump-free field")
    scheme = scheme or _default_scheme(field)
    sub = restrict(noise, s, t_end)
    nodes = spatial_grid.nodes()
    flow = integrate_flow(field, EMPTY_MEASURE, sub, nodes, scheme)
    inv = invert_flow(field, EMPTY_MEASURE, flow, nodes, tol=tol, times=times)
    return SpdeSolution(
        grid=spatial_grid,
        times=inv.times,
        values=inv.values,
        noise=sub,
        variant="inverse_flow_spde",
        start=float(s),
        tol=float(tol),
    )


def solve_spde_bar(
    field: CoefficientField,
    noise: NoiseRecord,
    s: float,
    t_end: float,
    spatial_grid: SpatialGrid,
    tol: float = 1e-10,
    times=None,
    scheme: str | None = None,
) -> SpdeSolution:
    """Solve the companion SPDE (uncorrected first-order term, opposite
    sign) through the derived field with drift -(b - sigma grad sigma) and
    diffusion -sigma."""
    derived = bar_field(field)
    sol = solve_spde_characteristics(
        derived, noise, s, t_end, spatial_grid, tol=tol, times=times, scheme=scheme
    )
    return SpdeSolution(
        grid=sol.grid,
        times=sol.times,
        values=sol.values,
        noise=sol.noise,
        variant="bar_spde",
        start=sol.start,
        tol=sol.tol,
    )


def ito_wentzell_check(
    solution: SpdeSolution,
    field: CoefficientField,
    noise: NoiseRecord,
    probe_points=None,
    scheme: str | None = None,
) -> float:
    """Composition residual sup |u_t(Y_t(x)) - x| over probes and stored
    times, with u evaluated by multilinear interpolation on the solution
    grid; certifies that the sampled field composes with the forward flow
    to the identity."""
    scheme = scheme or _default_scheme(field)
    if probe_points is None:
        probes = solution.grid.nodes()
    else:
        probes, _ = as_points(probe_points, field.dim)
    sub = restrict(noise, solution.start, float(solution.times[-1]))
    flow = integrate_flow(field, EMPTY_MEASURE, sub, probes, scheme)
    axes = solution.grid.axes()
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    worst = 0.0
    for k, t in enumerate(solution.times):
        idx = sub.grid.index_of(float(t))
        y = flow.states[idx]
        if np.any(y < lo - 1e-12) or np.any(y > hi + 1e-12):
            raise OutOfGrid(
                "flow left the solution box; enlarge the box and resolve"
            )
        lattice = solution.grid.reshape(solution.values[k])
        interp = RegularGridInterpolator(axes, lattice, method="linear")
        u_at_y = interp(np.clip(y, lo, hi))
        worst = max(worst, float(np.linalg.norm(u_at_y - probes, axis=1).max()))
    return worst


def _stencil_offsets(d: int):
    """Central-difference stencil: center, +/- h along each axis, and the
    four corner shifts per axis pair (for mixed second derivatives)."""
    offs = [tuple([0] * d)]
    singles: dict[tuple[int, int], int] = {}
    for i in range(d):
        for sign in (1, -1):
            o = [0] * d
            o[i] = sign
            singles[(i, sign)] = len(offs)
            offs.append(tuple(o))
    pairs: dict[tuple[int, int, int, int], int] = {}
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1, -1):
                for sj in (1, -1):
                    o = [0] * d
                    o[i] = si
                    o[j] = sj
                    pairs[(i, j, si, sj)] = len(offs)
                    offs.append(tuple(o))
    return np.asarray(offs, dtype=float), singles, pairs


def _grad_from_stencil(vals: np.ndarray, singles, h: float, d: int) -> np.ndarray:
    """(B, n_off, d) stencil values -> gradients (B, d, d), entry [l, j]."""
    cols = [
        (vals[:, singles[(j, 1)]] - vals[:, singles[(j, -1)]]) / (2 * h)
        for j in range(d)
    ]
    return np.stack(cols, axis=-1)


def _hess_from_stencil(vals: np.ndarray, singles, pairs, h: float, d: int) -> np.ndarray:
    """(B, n_off, d) stencil values -> second derivatives (B, d, d, d),
    entry [l, i, j] = d_ij u^l."""
    b = vals.shape[0]
    hess = np.zeros((b, d, d, d))
    for i in range(d):
        hess[:, :, i, i] = (
            vals[:, singles[(i, 1)]] - 2 * vals[:, 0] + vals[:, singles[(i, -1)]]
        ) / (h * h)
    for i in range(d):
        for j in range(i + 1, d):
            mixed = (
                vals[:, pairs[(i, j, 1, 1)]]
                - vals[:, pairs[(i, j, 1, -1)]]
                - vals[:, pairs[(i, j, -1, 1)]]
                + vals[:, pairs[(i, j, -1, -1)]]
            ) / (4 * h * h)
            hess[:, :, i, j] = mixed
            hess[:, :, j, i] = mixed
    return hess


@dataclass(frozen=True)
class PartitionReport:
    """Partition sums of the three Taylor term families, the exact
    telescoped left-hand side, and the quadrature values of their limits
    along the same path."""

    partition_size: int
    partition_times: np.ndarray  # (M+1,)
    a_terms: np.ndarray  # (M, d)
    c_terms: np.ndarray
    d_terms: np.ndarray
    lhs: np.ndarray  # (d,)
    claim_targets: dict[str, np.ndarray]
    claim_residuals: dict[str, float]

    @property
    def sum_a(self) -> np.ndarray:
        return self.a_terms.sum(axis=0)

    @property
    def sum_c(self) -> np.ndarray:
        return self.c_terms.sum(axis=0)

    @property
    def sum_d(self) -> np.ndarray:
        return self.d_terms.sum(axis=0)

    @property
    def identity_residual(self) -> float:
        return float(np.linalg.norm(self.lhs - (self.sum_a + self.sum_c + self.sum_d)))


def partition_expansion(
    field: CoefficientField,
    noise: NoiseRecord,
    s: float,
    t_end: float,
    x,
    partition_size: int,
    fd_step: float = 1e-3,
    quad_order: int = 8,
    scheme: str | None = None,
) -> PartitionReport:
    """Evaluate the partition expansion of u = (inverse flow) at one point.

    For each partition cell [t_n, t_n+1] the three term families are

        A_n = grad u_{t_n}(x) D_n_vec - D_n_vec' Theta_n(x) D_n_vec
        C_n = (grad u_{t_n+1}(x) - grad u_{t_n}(x)) D_n_vec
        D_n = -D_n_vec' ThetaTilde_n(x) D_n_vec

    with D_n_vec = x - Y_{t_n+1}(t_n, x), Theta_n the (1-theta)-weighted
    Gauss-Legendre average of the second derivatives of u_{t_n} along the
    segment from x to Y_{t_n+1}(t_n, x), and ThetaTilde_n ("theta_D") the
    same average applied to u_{t_n+1} - u_{t_n}.  Their sum telescopes to
    u_t(x) - x exactly; the report also quadratures the three limit values
    along the same noise path (part 2's limit is zero).

    u and its derivatives are sampled by direct stepwise inversion at the
    stencil points (central differences with step ``fd_step``).
    """
    if field.has_jump:
        raise JumpFieldRejected("the partition expansion needs a jump-free field")
    m_part = int(partition_size)
    if m_part < 2 or m_part & (m_part - 1):
        raise ValueError("partition size must be a power of two >= 2")
    scheme = scheme or _default_scheme(field)
    fine = restrict(noise, s, t_end)
    k_fine = fine.grid.interval_count
    if k_fine % m_part:
        raise ValueError(
            f"noise grid ({k_fine} intervals) does not refine the partition ({m_part})"
        )
    stride = k_fine // m_part
    d = field.dim
    pt = np.asarray(x, dtype=float).reshape(d)
    h = float(fd_step)
    times = fine.grid.times
    part_idx = [n * stride for n in range(m_part + 1)]
    part_times = times[part_idx]

    # per-cell flow endpoints Y_{t_n+1}(t_n, x)
    y_seg = np.empty((m_part, d))
    for n in range(m_part):
        seg = restrict(fine, part_times[n], part_times[n + 1])
        y_seg[n] = integrate_flow(field, EMPTY_MEASURE, seg, pt[None, :], scheme).states[-1][0]

    xi, wq = np.polynomial.legendre.leggauss(int(quad_order))
    theta = 0.5 * (xi + 1.0)
    wq = 0.5 * wq
    quad_pts = pt[None, None, :] + theta[None, :, None] * (y_seg[:, None, :] - pt)

    offs, singles, pairs = _stencil_offsets(d)
    n_off = len(offs)
    g = len(theta)

    grads_x = np.empty((m_part + 1, d, d))
    u_x = np.empty((m_part + 1, d))
    hess_own = np.empty((m_part, g, d, d, d))  # u_{t_n} at segment-n points
    hess_next = np.empty((m_part, g, d, d, d))  # u_{t_n+1} at segment-n points

    for n in range(m_part + 1):
        base = [pt[None, :]]
        if n < m_part:
            base.append(quad_pts[n])
        if n >= 1:
            base.append(quad_pts[n - 1])
        base_arr = np.concatenate(base, axis=0)
        stencil = (base_arr[:, None, :] + h * offs[None, :, :]).reshape(-1, d)
        u_vals = preimage_at(field, EMPTY_MEASURE, fine, part_idx[n], stencil, scheme)
        u_vals = u_vals.reshape(len(base_arr), n_off, d)
        u_x[n] = u_vals[0, 0]
        grads_x[n] = _grad_from_stencil(u_vals[:1], singles, h, d)[0]
        cursor = 1
        if n < m_part:
            hess_own[n] = _hess_from_stencil(u_vals[cursor : cursor + g], singles, pairs, h, d)
            cursor += g
        if n >= 1:
            hess_next[n - 1] = _hess_from_stencil(
                u_vals[cursor : cursor + g], singles, pairs, h, d
            )

    weights = wq * (1.0 - theta)
    a_terms = np.empty((m_part, d))
    c_terms = np.empty((m_part, d))
    d_terms = np.empty((m_part, d))
    for n in range(m_part):
        delta = pt - y_seg[n]
        theta_a = np.einsum("g,glij->lij", weights, hess_own[n])
        theta_d = np.einsum("g,glij->lij", weights, hess_next[n] - hess_own[n])
        a_terms[n] = grads_x[n] @ delta - np.einsum("i,lij,j->l", delta, theta_a, delta)
        c_terms[n] = (grads_x[n + 1] - grads_x[n]) @ delta
        d_terms[n] = -np.einsum("i,lij,j->l", delta, theta_d, delta)
    lhs = u_x[m_part] - pt

    # limits of the three sums: time integrals along the same path, with
    # derivatives of u at the fixed point x on the fine grid
    stencil_x = pt[None, :] + h * offs
    grad_fine = np.empty((k_fine + 1, d, d))
    hess_fine = np.empty((k_fine + 1, d, d, d))
    for i in range(k_fine + 1):
        u_vals = preimage_at(field, EMPTY_MEASURE, fine, i, stencil_x, scheme)
        u_vals = u_vals[None, :, :]
        grad_fine[i] = _grad_from_stencil(u_vals, singles, h, d)[0]
        hess_fine[i] = _hess_from_stencil(u_vals, singles, pairs, h, d)[0]

    a_core = np.empty((k_fine + 1, d))
    c_core = np.empty((k_fine + 1, d))
    dw_coef = np.empty((k_fine + 1, d, field.brownian_count))
    for i, t in enumerate(times):
        sig = np.asarray(field.diffusion(t, pt[None, :]), dtype=float)[0]  # (d, m)
        b = np.asarray(field.drift(t, pt[None, :]), dtype=float)[0]
        gs = np.asarray(field.diffusion_grad(t, pt[None, :]), dtype=float)[0]  # (m, d, d)
        ssq = sig @ sig.T  # (d, d): sigma^{i rho} sigma^{j rho}
        sgs = np.einsum("jr,rij->i", sig, gs)  # sigma^{j rho} d_j sigma^{i rho}
        a_core[i] = 0.5 * np.einsum("ij,lij->l", ssq, hess_fine[i]) + grad_fine[i] @ b
        c_core[i] = grad_fine[i] @ sgs + np.einsum("ij,lij->l", ssq, hess_fine[i])
        dw_coef[i] = np.einsum("ir,li->lr", sig, grad_fine[i])

    dr_a = np.trapezoid(a_core, times, axis=0)
    dw_a = np.einsum("klr,kr->l", dw_coef[:-1], fine.increments)
    target_a = -dr_a - dw_a
    target_c = np.trapezoid(c_core, times, axis=0)
    target_d = np.zeros(d)

    sum_a = a_terms.sum(axis=0)
    sum_c = c_terms.sum(axis=0)
    sum_d = d_terms.sum(axis=0)
    targets = {"part1": target_a, "part2": target_d, "part3": target_c}
    residuals = {
        "part1": float(np.linalg.norm(sum_a - target_a)),
        "part2": float(np.linalg.norm(sum_d - target_d)),
        "part3": float(np.linalg.norm(sum_c - target_c)),
    }
    return PartitionReport(
        partition_size=m_part,
        partition_times=part_times.copy(),
        a_terms=a_terms,
        c_terms=c_terms,
        d_terms=d_terms,
        lhs=lhs,
        claim_targets=targets,
        claim_residuals=residuals,
    )
