"""Weighted Hölder norms, Sobolev-type double-integral functionals, and
Monte Carlo moment summaries of flow paths sampled on spatial grids.

All estimators work on lattice samples. Hölder seminorms are estimated over
node pairs (by default pairs at most 8 grid steps and distance < 1 apart),
so they are lower bounds of the true seminorms; a failed bound check is a
genuine violation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, GridTooCoarse, MissingGradient, NonFiniteValue
from .grids import SpatialGrid


def weight(x, power: float):
    """Polynomial weight (1 + |x|^2)^(power/2).

    ``x`` may be a scalar, a point of shape (d,), or a batch (..., d); the
    component axis is the last one.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        sq = x * x
    else:
        sq = np.sum(x * x, axis=-1)
    return (1.0 + sq) ** (power / 2.0)


@dataclass(frozen=True)
class GridFunction:
    """Vector- or matrix-valued samples on the nodes of a SpatialGrid.

    ``values`` has shape (N, *component_shape) with N = grid.node_count,
    nodes enumerated in the grid's C order.
    """

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != self.grid.node_count:
            raise DimensionMismatch(
                f"expected {self.grid.node_count} node values, got {vals.shape[0]}"
            )
        if not np.isfinite(vals).all():
            raise NonFiniteValue("grid function holds non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def component_shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]


def _comp_norm(values: np.ndarray, lattice_ndim: int) -> np.ndarray:
    """Euclidean (Frobenius) norm over the component axes."""
    comp_axes = tuple(range(lattice_ndim, values.ndim))
    if not comp_axes:
        return np.abs(values)
    return np.sqrt(np.sum(values * values, axis=comp_axes))


def _lattice(f: GridFunction) -> np.ndarray:
    return f.values.reshape(f.grid.shape + f.values.shape[1:])


def _slice_to_box(f: GridFunction, box) -> GridFunction:
    """Restrict a grid function to the sub-lattice inside ``box``."""
    if box is None:
        return f
    axes = f.grid.axes()
    if len(box) != f.grid.dim:
        raise DimensionMismatch("sub-box dimension does not match the grid")
    lattice = _lattice(f)
    sub_box = []
    index = []
    for ax, (lo, hi) in zip(axes, box):
        sel = np.where((ax >= lo - 1e-12) & (ax <= hi + 1e-12))[0]
        if sel.size < 2:
            raise GridTooCoarse("sub-box holds fewer than 2 grid nodes per axis")
        index.append(slice(sel[0], sel[-1] + 1))
        sub_box.append((ax[sel[0]], ax[sel[-1]]))
    sub = lattice[tuple(index)]
    grid = SpatialGrid(tuple(sub_box), f.grid.step)
    return GridFunction(grid, sub.reshape((-1,) + f.values.shape[1:]))


def grid_sup(f: GridFunction) -> float:
    """Sup over nodes of the pointwise Euclidean/Frobenius norm."""
    return float(_comp_norm(f.values, 1).max())


def _offsets(dim: int, max_steps: int):
    out = []
    for off in itertools.product(range(-max_steps, max_steps + 1), repeat=dim):
        if all(o == 0 for o in off):
            continue
        # keep one representative of each +/- pair
        first = next(o for o in off if o != 0)
        if first > 0:
            out.append(off)
    return out


def holder_seminorm(
    f: GridFunction,
    alpha: float,
    max_steps: int | None = 8,
    max_distance: float | None = 1.0,
) -> float:
    """Grid estimate of sup_{x != y} |f(x)-f(y)| / |x-y|^alpha.

    With the defaults the sup runs over node pairs at most ``max_steps`` grid
    steps and distance < ``max_distance`` apart.  ``max_steps=None`` uses all
    node pairs (chunked), ``max_distance=None`` drops the distance cap.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("Hölder exponent must lie in (0, 1]")
    h = f.grid.step
    if max_steps is not None:
        lattice = _lattice(f)
        shape = f.grid.shape
        best = 0.0
        for off in _offsets(f.grid.dim, max_steps):
            dist = h * math.sqrt(sum(o * o for o in off))
            if max_distance is not None and dist >= max_distance:
                continue
            src = tuple(
                slice(max(0, -o), n - max(0, o)) for o, n in zip(off, shape)
            )
            dst = tuple(
                slice(max(0, o), n - max(0, -o)) for o, n in zip(off, shape)
            )
            diff = lattice[dst] - lattice[src]
            if diff.size == 0:
                continue
            gap = _comp_norm(diff, f.grid.dim).max()
            best = max(best, float(gap) / dist**alpha)
        return best

    nodes = f.grid.nodes()
    flat = f.values.reshape(len(nodes), -1)
    best = 0.0
    chunk = max(1, int(2**22 // max(1, len(nodes))))
    for start in range(0, len(nodes), chunk):
        stop = min(len(nodes), start + chunk)
        d2 = np.sum((nodes[start:stop, None, :] - nodes[None, :, :]) ** 2, axis=-1)
        dist = np.sqrt(d2)
        gap = np.sqrt(np.sum((flat[start:stop, None, :] - flat[None, :, :]) ** 2, axis=-1))
        mask = dist > h / 4
        if max_distance is not None:
            mask &= dist < max_distance
        if mask.any():
            ratio = gap[mask] / dist[mask] ** alpha
            best = max(best, float(ratio.max()))
    return best


def _grad_components(f: GridFunction) -> list[GridFunction]:
    """First partial derivatives by central differences (2nd-order edges)."""
    if min(f.grid.shape) < 3:
        raise GridTooCoarse("need at least 3 nodes per axis for derivatives")
    lattice = _lattice(f)
    out = []
    for axis in range(f.grid.dim):
        g = np.gradient(lattice, f.grid.step, axis=axis, edge_order=2)
        out.append(GridFunction(f.grid, g.reshape((-1,) + f.values.shape[1:])))
    return out


def holder_norm(
    f: GridFunction,
    beta: float,
    box=None,
    max_steps: int | None = 8,
    max_distance: float | None = 1.0,
) -> float:
    """Hölder norm |f|_beta of order beta in (0, 2] estimated on the grid.

    For beta <= 1 this is sup|f| + [f]_beta; for beta in (1, 2] the first
    derivatives (central differences) contribute their sups and the
    (beta-1)-seminorm.
    """
    if not 0.0 < beta <= 2.0:
        raise ValueError("supported Hölder orders lie in (0, 2]")
    f = _slice_to_box(f, box)
    if min(f.grid.shape) < 3:
        raise GridTooCoarse("need at least 3 nodes per axis")
    if beta <= 1.0:
        return grid_sup(f) + holder_seminorm(f, beta, max_steps, max_distance)
    total = grid_sup(f)
    frac = beta - 1.0
    for g in _grad_components(f):
        total += grid_sup(g) + holder_seminorm(g, frac, max_steps, max_distance)
    return total


def _trapezoid_weights(grid: SpatialGrid) -> np.ndarray:
    """Per-node quadrature weights (product trapezoid rule), flat order."""
    parts = []
    for n in grid.shape:
        w = np.full(n, grid.step)
        w[0] *= 0.5
        w[-1] *= 0.5
        parts.append(w)
    mesh = np.meshgrid(*parts, indexing="ij")
    return np.prod(np.stack(mesh), axis=0).ravel()


def sobolev_functional(
    f: GridFunction,
    delta: float,
    p: float,
    box=None,
    full_norm: bool = False,
) -> float:
    """Double-integral smoothness functional

        ( integral over Q x Q of |f(x)-f(y)|^p / |x-y|^(2d+delta p) )^(1/p)

    by a product quadrature over node pairs; pairs closer than half a grid
    step (the diagonal cell) are excluded and contribute 0. With
    ``full_norm=True`` the whole-space variant is returned instead: the
    L^p mass of f is added and the pair sum is restricted to |x-y| < 1.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if p < 1.0:
        raise ValueError("p must be >= 1")
    f = _slice_to_box(f, box)
    if min(f.grid.shape) < 3:
        raise GridTooCoarse("need at least 3 nodes per axis")
    d = f.grid.dim
    h = f.grid.step
    nodes = f.grid.nodes()
    flat = f.values.reshape(len(nodes), -1)
    w = _trapezoid_weights(f.grid)
    expo = 2 * d + delta * p
    total = 0.0
    chunk = max(1, int(2**22 // max(1, len(nodes))))
    for start in range(0, len(nodes), chunk):
        stop = min(len(nodes), start + chunk)
        d2 = np.sum((nodes[start:stop, None, :] - nodes[None, :, :]) ** 2, axis=-1)
        dist = np.sqrt(d2)
        mask = dist >= h / 2
        if full_norm:
            mask &= dist < 1.0
        gap = np.sqrt(np.sum((flat[start:stop, None, :] - flat[None, :, :]) ** 2, axis=-1))
        kernel = np.zeros_like(dist)
        kernel[mask] = gap[mask] ** p / dist[mask] ** expo
        total += float(np.einsum("i,ij,j->", w[start:stop], kernel, w))
    if full_norm:
        total += float(np.sum(w * _comp_norm(flat, 1) ** p))
    return total ** (1.0 / p)


@dataclass(frozen=True)
class WeightedHolderReport:
    """Per-time and overall weighted Hölder statistics of one path.

    ``sup_weighted_value`` estimates sup_t sup_x r1(x)^-(1+eps) |X_t(x)|;
    ``grad_holder_weighted`` estimates sup_t |r1^-eps grad X_t|_{beta'-1}
    (None when the path carries no gradients).
    """

    epsilon: float
    beta_prime: float
    box: tuple
    step: float
    times: np.ndarray
    value_per_time: np.ndarray
    grad_per_time: np.ndarray | None

    @property
    def sup_weighted_value(self) -> float:
        return float(self.value_per_time.max())

    @property
    def grad_holder_weighted(self) -> float | None:
        if self.grad_per_time is None:
            return None
        return float(self.grad_per_time.max())


def _path_samples(path):
    """(times, states, gradients) from a FlowPath or an InversePath."""
    if hasattr(path, "states"):
        return np.asarray(path.times), path.states, path.jacobians
    if hasattr(path, "values"):
        return np.asarray(path.times), path.values, path.gradients
    raise TypeError("expected a FlowPath or an InversePath")


def weighted_holder_report(
    path,
    grid: SpatialGrid,
    epsilon: float,
    beta_prime: float = 1.0,
    require_gradient: bool = False,
    max_steps: int | None = 8,
    max_distance: float | None = 1.0,
) -> WeightedHolderReport:
    """Weighted sup / Hölder statistics of a path sampled on ``grid``.

    The path's points must be exactly the grid nodes (same order). For
    beta_prime = 1 the gradient part is the weighted sup of the Jacobian;
    for beta_prime in (1, 2] the (beta_prime - 1)-Hölder seminorm of the
    weighted Jacobian is added.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 1.0 <= beta_prime <= 2.0:
        raise ValueError("beta_prime must lie in [1, 2]")
    times, states, grads = _path_samples(path)
    if states.shape[1] != grid.node_count:
        raise DimensionMismatch("path batch does not match the grid nodes")
    if require_gradient and grads is None:
        raise MissingGradient("path carries no gradients for the requested report")
    nodes = grid.nodes()
    w_val = weight(nodes, -(1.0 + epsilon))
    w_grad = weight(nodes, -epsilon)

    value_per_time = (w_val[None, :] * _comp_norm(states, 2)).max(axis=1)

    grad_per_time = None
    if grads is not None:
        out = np.empty(len(times))
        for k in range(len(times)):
            g = GridFunction(grid, w_grad[:, None, None] * grads[k])
            out[k] = grid_sup(g)
            if beta_prime > 1.0:
                out[k] += holder_seminorm(g, beta_prime - 1.0, max_steps, max_distance)
        grad_per_time = out

    return WeightedHolderReport(
        epsilon=epsilon,
        beta_prime=beta_prime,
        box=grid.box,
        step=grid.step,
        times=np.asarray(times, dtype=float),
        value_per_time=np.asarray(value_per_time, dtype=float),
        grad_per_time=grad_per_time,
    )


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    ci95: float
    count: int
    p: float
    quantity: str


def moment_estimate(reports: Sequence, p: float, quantity: str = "value") -> MomentEstimate:
    """Sample mean of (report quantity)^p with a normal 95% half-width.

    ``reports`` is a list of WeightedHolderReport (quantity "value" or
    "grad") or a plain sequence of nonnegative floats.
    """
    if p < 1.0:
        raise ValueError("p must be >= 1")
    vals = []
    for r in reports:
        if isinstance(r, WeightedHolderReport):
            v = r.sup_weighted_value if quantity == "value" else r.grad_holder_weighted
            if v is None:
                raise MissingGradient("report lacks the gradient quantity")
            vals.append(v)
        else:
            vals.append(float(r))
    if len(vals) < 2:
        raise ValueError("need at least 2 reports")
    powered = np.asarray(vals, dtype=float) ** p
    mean = float(powered.mean())
    ci95 = float(1.96 * powered.std(ddof=1) / math.sqrt(len(powered)))
    return MomentEstimate(mean=mean, ci95=ci95, count=len(powered), p=p, quantity=quantity)
