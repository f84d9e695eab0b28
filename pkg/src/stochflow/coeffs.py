"""Coefficient fields (drift, diffusion, jump), mark measures, the corrected
drift, the jump compensator, and numerical verification of the regularity
bounds the simulation layer relies on.

A coefficient field packages vectorized maps

    drift(t, x)            -> (n, d)
    diffusion(t, x)        -> (n, d, m)
    jump(t, x, z)          -> (n, d)
    drift_grad(t, x)       -> (n, d, d)      entry [i, j] = d_j b^i
    diffusion_grad(t, x)   -> (n, m, d, d)   entry [r, i, j] = d_j sigma^{i r}
    jump_grad(t, x, z)     -> (n, d, d)

where x is a batch of points of shape (n, d). Fields are immutable and safe
to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import (
    MissingDerivative,
    NonFiniteValue,
    SingularJumpJacobian,
    UnknownMark,
)
from .grids import SpatialGrid
from .norms import GridFunction, holder_norm, weight

Mark = Any


def as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Promote a single point to a (1, d) batch; report whether it was single."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"point has dimension {arr.shape[0]}, field has {dim}")
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise ValueError(f"expected shape (d,) or (n, {dim}), got {arr.shape}")


@dataclass(frozen=True)
class Regularity:
    """Regularity metadata: Hölder order beta > 1 of the coefficients, the
    coefficient bound n0, and the jump-invertibility constants (eta, n_kappa)."""

    beta: float
    n0: float
    eta: float
    n_kappa: float

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if not self.n0 > 0:
            raise ValueError("n0 must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.n_kappa > 0:
            raise ValueError("n_kappa must be positive")


@dataclass(frozen=True)
class MarkMeasure:
    """Finite discrete jump intensity measure: atoms (mark, rate) with all
    rates strictly positive."""

    atoms: tuple[tuple[Mark, float], ...]

    def __post_init__(self):
        atoms = tuple((z, float(rate)) for z, rate in self.atoms)
        for z, rate in atoms:
            if not (np.isfinite(rate) and rate > 0):
                raise ValueError(f"atom rate must be positive and finite, got {rate}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def total_rate(self) -> float:
        return float(sum(rate for _, rate in self.atoms))

    @property
    def rates(self) -> np.ndarray:
        return np.array([rate for _, rate in self.atoms], dtype=float)

    @property
    def marks(self) -> tuple[Mark, ...]:
        return tuple(z for z, _ in self.atoms)

    def index_of(self, z: Mark) -> int:
        for k, (mark, _) in enumerate(self.atoms):
            if mark == z:
                return k
        raise UnknownMark(f"mark {z!r} is not an atom of the measure")


EMPTY_MEASURE = MarkMeasure(())


@dataclass(frozen=True)
class ExactScheme:
    """Closed-form one-step maps of the continuous part of a field, exact
    given the realized Brownian increment of the step."""

    step: Callable[[float, float, np.ndarray, np.ndarray], np.ndarray]
    inverse_step: Callable[[float, float, np.ndarray, np.ndarray], np.ndarray]
    step_jacobian: Callable[[float, float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientField:
    dim: int
    brownian_count: int
    drift: Callable
    diffusion: Callable
    jump: Callable
    drift_grad: Callable | None
    diffusion_grad: Callable | None
    jump_grad: Callable | None
    regularity: Regularity
    second_derivs: Mapping[str, Callable] | None = None
    exact: ExactScheme | None = None
    has_jump: bool = False
    measure: MarkMeasure | None = None
    bar_factory: Callable[[], "CoefficientField"] | None = None
    family_name: str = "custom"
    family_params: Mapping[str, Any] = dc_field(default_factory=dict)

    @property
    def label(self) -> str:
        params = ",".join(f"{k}={v}" for k, v in self.family_params.items())
        return f"{self.family_name}({params})"


def _zeros_map(dim: int, shape_fn):
    def fn(t, x, *_args):
        pts, _ = as_points(x, dim)
        return np.zeros(shape_fn(len(pts)))

    return fn


def fd_vector_gradient(fn, dim: int, h: float = 1e-5):
    """Central-difference gradient of a vectorized map (t, x[, z]) -> (n, k...)."""

    def grad(t, x, *args):
        pts, _ = as_points(x, dim)
        cols = []
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = h
            cols.append((fn(t, pts + e, *args) - fn(t, pts - e, *args)) / (2 * h))
        # stack along a trailing axis: (n, k..., d)
        return np.stack(cols, axis=-1)

    return grad


def build_field(
    dim: int,
    brownian_count: int,
    drift=None,
    diffusion=None,
    jump=None,
    drift_grad=None,
    diffusion_grad=None,
    jump_grad=None,
    regularity: Regularity | None = None,
    second_derivs=None,
    exact: ExactScheme | None = None,
    measure: MarkMeasure | None = None,
    bar_factory=None,
    family_name: str = "custom",
    family_params: Mapping[str, Any] | None = None,
    fd_step: float = 1e-5,
) -> CoefficientField:
    """Assemble a field, filling missing maps with zeros and missing
    gradients with central finite differences of the value maps."""
    if dim < 1 or brownian_count < 1:
        raise ValueError("dim and brownian_count must be positive")
    has_jump = jump is not None
    drift = drift or _zeros_map(dim, lambda n: (n, dim))
    diffusion = diffusion or _zeros_map(dim, lambda n: (n, dim, brownian_count))
    jump = jump or _zeros_map(dim, lambda n: (n, dim))
    if drift_grad is None:
        drift_grad = fd_vector_gradient(drift, dim, fd_step)
    if diffusion_grad is None:
        raw = fd_vector_gradient(diffusion, dim, fd_step)  # (n, d, m, d)
        diffusion_grad = lambda t, x, _raw=raw: np.swapaxes(_raw(t, x), 1, 2)
    if jump_grad is None:
        jump_grad = fd_vector_gradient(jump, dim, fd_step)
    regularity = regularity or Regularity(beta=2.0, n0=1.0, eta=0.5, n_kappa=4.0)
    return CoefficientField(
        dim=dim,
        brownian_count=brownian_count,
        drift=drift,
        diffusion=diffusion,
        jump=jump,
        drift_grad=drift_grad,
        diffusion_grad=diffusion_grad,
        jump_grad=jump_grad,
        regularity=regularity,
        second_derivs=second_derivs,
        exact=exact,
        has_jump=has_jump,
        measure=measure,
        bar_factory=bar_factory,
        family_name=family_name,
        family_params=dict(family_params or {}),
    )


@dataclass(frozen=True)
class FieldValues:
    b: np.ndarray
    sigma: np.ndarray
    grad_b: np.ndarray
    grad_sigma: np.ndarray


@dataclass(frozen=True)
class JumpValues:
    h: np.ndarray
    grad_h: np.ndarray


def _check_finite(name: str, arr: np.ndarray):
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{name} returned non-finite values")


def evaluate(field: CoefficientField, t: float, x) -> FieldValues:
    """Evaluate drift, diffusion, and their gradients at (t, x)."""
    pts, single = as_points(x, field.dim)
    if not np.isfinite(pts).all():
        raise NonFiniteValue("evaluation point is not finite")
    b = np.asarray(field.drift(t, pts), dtype=float)
    _check_finite("drift", b)
    sigma = np.asarray(field.diffusion(t, pts), dtype=float)
    _check_finite("diffusion", sigma)
    gb = np.asarray(field.drift_grad(t, pts), dtype=float)
    _check_finite("drift_grad", gb)
    gs = np.asarray(field.diffusion_grad(t, pts), dtype=float)
    _check_finite("diffusion_grad", gs)
    if single:
        return FieldValues(b[0], sigma[0], gb[0], gs[0])
    return FieldValues(b, sigma, gb, gs)


def eval_jump(field: CoefficientField, t: float, x, z: Mark) -> JumpValues:
    """Evaluate the jump map H and its spatial gradient at (t, x, z)."""
    if field.measure is not None:
        field.measure.index_of(z)  # raises UnknownMark
    pts, single = as_points(x, field.dim)
    h = np.asarray(field.jump(t, pts, z), dtype=float)
    gh = np.asarray(field.jump_grad(t, pts, z), dtype=float)
    _check_finite("jump", h)
    _check_finite("jump_grad", gh)
    if single:
        return JumpValues(h[0], gh[0])
    return JumpValues(h, gh)


def hat_drift(field: CoefficientField, t: float, x) -> np.ndarray:
    """Corrected drift b - sigma^{j rho} d_j sigma^{i rho} (componentwise in i)."""
    if field.diffusion_grad is None:
        raise MissingDerivative("field lacks diffusion_grad")
    pts, single = as_points(x, field.dim)
    b = np.asarray(field.drift(t, pts), dtype=float)
    sigma = np.asarray(field.diffusion(t, pts), dtype=float)  # (n, d, m)
    gs = np.asarray(field.diffusion_grad(t, pts), dtype=float)  # (n, m, d, d)
    corr = np.einsum("njr,nrij->ni", sigma, gs)
    out = b - corr
    return out[0] if single else out


def compensator_drift(field: CoefficientField, measure: MarkMeasure, t: float, x) -> np.ndarray:
    """Mean jump drift sum_k rate_k H(t, x, z_k); the drift removed when the
    compensated jump integral is realized as raw jumps."""
    pts, single = as_points(x, field.dim)
    out = np.zeros_like(pts)
    for z, rate in measure.atoms:
        out += rate * np.asarray(field.jump(t, pts, z), dtype=float)
    return out[0] if single else out


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    grid_sup: float
    bound: float
    satisfied: bool


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]
    overall: bool
    box: tuple
    grid_step: float
    times: tuple[float, ...]

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _op_norms(mats: np.ndarray) -> np.ndarray:
    """Operator 2-norms of a stack of matrices (..., d, d)."""
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


def check_assumptions(
    field: CoefficientField,
    measure: MarkMeasure,
    box,
    grid_step: float,
    times: Sequence[float] = (0.0,),
) -> AssumptionReport:
    """Grid-supremum verification of the coefficient bounds.

    Estimates, over the lattice on ``box`` and the sampled times, the
    weighted sups |r1^-1 b|_0 and |r1^-1 sigma|_0, the Hölder norms
    |grad b|_{beta-1} and |grad sigma|_{beta-1} (order clamped to 2), the
    per-atom jump bounds K(z) with their rate-weighted square sum, and the
    inverse-jump-Jacobian bound where |grad H| exceeds eta.  Hölder
    seminorms use grid pairs, so every estimate is a lower bound.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    grid = SpatialGrid(box, grid_step)
    nodes = grid.nodes()
    reg = field.regularity
    holder_order = min(reg.beta - 1.0, 2.0)
    w = weight(nodes, -1.0)

    b_sup = sig_sup = gb_holder = gsig_holder = 0.0
    k_atoms = np.zeros(max(1, len(measure.atoms)))
    kappa_sup = 0.0
    for t in times:
        vals = evaluate(field, t, nodes)
        b_sup = max(b_sup, float((w * np.linalg.norm(vals.b, axis=1)).max()))
        sig_sup = max(
            sig_sup,
            float((w * np.sqrt(np.sum(vals.sigma**2, axis=(1, 2)))).max()),
        )
        gb_holder = max(gb_holder, holder_norm(GridFunction(grid, vals.grad_b), holder_order))
        gsig_holder = max(
            gsig_holder, holder_norm(GridFunction(grid, vals.grad_sigma), holder_order)
        )
        for k, (z, _rate) in enumerate(measure.atoms):
            jv = eval_jump(field, t, nodes, z)
            k_val = float((w * np.linalg.norm(jv.h, axis=1)).max())
            k_val += holder_norm(GridFunction(grid, jv.grad_h), holder_order)
            k_atoms[k] = max(k_atoms[k], k_val)
            gnorm = _op_norms(jv.grad_h)
            mask = gnorm > reg.eta
            if mask.any():
                mats = np.eye(field.dim) + jv.grad_h[mask]
                dets = np.linalg.det(mats)
                if np.any(np.abs(dets) < 1e-14):
                    raise SingularJumpJacobian(
                        f"det(I + grad H) vanished on the grid for atom {z!r}"
                    )
                kappa_sup = max(kappa_sup, float(_op_norms(np.linalg.inv(mats)).max()))

    coeff_sum = b_sup + gb_holder + sig_sup + gsig_holder
    checks = [
        AssumptionCheck("drift_weighted_sup", b_sup, reg.n0, b_sup <= reg.n0),
        AssumptionCheck("drift_grad_holder", gb_holder, reg.n0, gb_holder <= reg.n0),
        AssumptionCheck("diffusion_weighted_sup", sig_sup, reg.n0, sig_sup <= reg.n0),
        AssumptionCheck("diffusion_grad_holder", gsig_holder, reg.n0, gsig_holder <= reg.n0),
        AssumptionCheck("coefficient_sum", coeff_sum, reg.n0, coeff_sum <= reg.n0),
    ]
    if len(measure.atoms) > 0:
        rates = measure.rates
        jump_total = float(k_atoms[: len(rates)].max() + np.sum(rates * k_atoms[: len(rates)] ** 2))
    else:
        jump_total = 0.0
    checks.append(AssumptionCheck("jump_k_bound", jump_total, reg.n0, jump_total <= reg.n0))
    checks.append(
        AssumptionCheck("jump_jacobian_inverse", kappa_sup, reg.n_kappa, kappa_sup <= reg.n_kappa)
    )
    checks = tuple(checks)
    return AssumptionReport(
        checks=checks,
        overall=all(c.satisfied for c in checks),
        box=grid.box,
        grid_step=grid_step,
        times=tuple(float(t) for t in times),
    )
