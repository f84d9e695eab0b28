"""Built-in coefficient families with analytic gradients and, where a
closed-form flow exists, exact one-step schemes usable as test oracles.

Shipped families:

    zero          everything vanishes; the flow is the identity
    const         constant drift c, no noise, no jumps
    gbm           d=1 geometric Brownian motion: b = mu x, sigma = nu x
    affine        b = A x + c with constant diffusion matrix B
    rot           d=2 rigid rotation drift, deterministic
    linjump       pure jump H(t, x, z) = scale * z * x (componentwise)
    sinjump       pure jump H(t, x, z) = amplitude * z * sin(x) (componentwise)

``with_jump`` grafts a jump family onto a continuous one. Exact schemes are
provided when the per-step flow is a measurable function of the Brownian
increment alone: gbm, const, rot, zero, and affine with A = 0 or B = 0.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .coeffs import (
    CoefficientField,
    ExactScheme,
    MarkMeasure,
    Regularity,
    as_points,
    build_field,
    hat_drift,
)


def zero(dim: int = 1, brownian_count: int = 1) -> CoefficientField:
    field = build_field(
        dim,
        brownian_count,
        regularity=Regularity(beta=3.0, n0=1.0, eta=0.5, n_kappa=4.0),
        exact=ExactScheme(
            step=lambda t0, t1, x, dw: x.copy(),
            inverse_step=lambda t0, t1, y, dw: y.copy(),
            step_jacobian=lambda t0, t1, x, dw: np.eye(x.shape[-1]),
        ),
        family_name="zero",
        family_params={"dim": dim, "brownian_count": brownian_count},
    )
    return _attach_bar(field, lambda: zero(dim, brownian_count))


def const(shift, brownian_count: int = 1) -> CoefficientField:
    c = np.atleast_1d(np.asarray(shift, dtype=float))
    d = len(c)

    def drift(t, x):
        pts, _ = as_points(x, d)
        return np.broadcast_to(c, pts.shape).copy()

    exact = ExactScheme(
        step=lambda t0, t1, x, dw: x + (t1 - t0) * c,
        inverse_step=lambda t0, t1, y, dw: y - (t1 - t0) * c,
        step_jacobian=lambda t0, t1, x, dw: np.eye(d),
    )
    norm_c = float(np.linalg.norm(c))
    field = build_field(
        d,
        brownian_count,
        drift=drift,
        drift_grad=lambda t, x: np.zeros((len(as_points(x, d)[0]), d, d)),
        regularity=Regularity(beta=3.0, n0=max(norm_c, 1e-9), eta=0.5, n_kappa=4.0),
        exact=exact,
        family_name="const",
        family_params={"shift": tuple(c.tolist()), "brownian_count": brownian_count},
    )
    return _attach_bar(field, lambda: const(-c, brownian_count))


def gbm(mu: float, nu: float) -> CoefficientField:
    mu, nu = float(mu), float(nu)

    def drift(t, x):
        pts, _ = as_points(x, 1)
        return mu * pts

    def diffusion(t, x):
        pts, _ = as_points(x, 1)
        return nu * pts[:, :, None]

    def drift_grad(t, x):
        pts, _ = as_points(x, 1)
        return np.full((len(pts), 1, 1), mu)

    def diffusion_grad(t, x):
        pts, _ = as_points(x, 1)
        return np.full((len(pts), 1, 1, 1), nu)

    def _factor(t0, t1, dw):
        return np.exp((mu - 0.5 * nu * nu) * (t1 - t0) + nu * dw[0])

    exact = ExactScheme(
        step=lambda t0, t1, x, dw: x * _factor(t0, t1, dw),
        inverse_step=lambda t0, t1, y, dw: y / _factor(t0, t1, dw),
        step_jacobian=lambda t0, t1, x, dw: np.array([[_factor(t0, t1, dw)]]),
    )
    second = {
        "diffusion_hess": lambda t, x: np.zeros((len(as_points(x, 1)[0]), 1, 1, 1, 1)),
        "drift_hess": lambda t, x: np.zeros((len(as_points(x, 1)[0]), 1, 1, 1)),
    }
    field = build_field(
        1,
        1,
        drift=drift,
        diffusion=diffusion,
        drift_grad=drift_grad,
        diffusion_grad=diffusion_grad,
        second_derivs=second,
        regularity=Regularity(
            beta=3.0, n0=2 * (abs(mu) + abs(nu)) + 1e-9, eta=0.5, n_kappa=4.0
        ),
        exact=exact,
        family_name="gbm",
        family_params={"mu": mu, "nu": nu},
    )
    # flow of (-hat b, -sigma) for the companion SPDE: again a GBM
    return _attach_bar(field, lambda: gbm(nu * nu - mu, -nu))


def affine(matrix, shift=None, noise=None) -> CoefficientField:
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = a.shape[0]
    if a.shape != (d, d):
        raise ValueError("drift matrix must be square")
    c = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    if noise is None:
        b_mat = np.zeros((d, 1))
    else:
        b_mat = np.asarray(noise, dtype=float)
        if b_mat.ndim == 1:
            b_mat = b_mat[:, None]
    m = b_mat.shape[1]

    def drift(t, x):
        pts, _ = as_points(x, d)
        return pts @ a.T + c

    def diffusion(t, x):
        pts, _ = as_points(x, d)
        return np.broadcast_to(b_mat, (len(pts), d, m)).copy()

    def drift_grad(t, x):
        pts, _ = as_points(x, d)
        return np.broadcast_to(a, (len(pts), d, d)).copy()

    def diffusion_grad(t, x):
        pts, _ = as_points(x, d)
        return np.zeros((len(pts), m, d, d))

    exact = None
    if not b_mat.any():
        cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

        def _maps(dt):
            if dt not in cache:
                aug = np.zeros((d + 1, d + 1))
                aug[:d, :d] = a * dt
                aug[:d, d] = c * dt
                e = expm(aug)
                cache[dt] = (e[:d, :d].copy(), e[:d, d].copy())
            return cache[dt]

        def _step(t0, t1, x, dw):
            e, f = _maps(t1 - t0)
            return x @ e.T + f

        def _inverse(t0, t1, y, dw):
            e, f = _maps(t1 - t0)
            return np.linalg.solve(e, (y - f).T).T

        exact = ExactScheme(
            step=_step,
            inverse_step=_inverse,
            step_jacobian=lambda t0, t1, x, dw: _maps(t1 - t0)[0],
        )
    elif not a.any():
        exact = ExactScheme(
            step=lambda t0, t1, x, dw: x + (t1 - t0) * c + b_mat @ dw,
            inverse_step=lambda t0, t1, y, dw: y - (t1 - t0) * c - b_mat @ dw,
            step_jacobian=lambda t0, t1, x, dw: np.eye(d),
        )

    op_a = float(np.linalg.norm(a, 2)) if a.any() else 0.0
    n0 = 2 * op_a + float(np.linalg.norm(c)) + 2 * float(np.linalg.norm(b_mat)) + 1e-9
    field = build_field(
        d,
        m,
        drift=drift,
        diffusion=diffusion,
        drift_grad=drift_grad,
        diffusion_grad=diffusion_grad,
        second_derivs={
            "drift_hess": lambda t, x: np.zeros((len(as_points(x, d)[0]), d, d, d)),
            "diffusion_hess": lambda t, x: np.zeros((len(as_points(x, d)[0]), m, d, d, d)),
        },
        regularity=Regularity(beta=3.0, n0=n0, eta=0.5, n_kappa=4.0),
        exact=exact,
        family_name="affine",
        family_params={
            "matrix": tuple(map(tuple, a.tolist())),
            "shift": tuple(c.tolist()),
            "noise": tuple(map(tuple, b_mat.tolist())),
        },
    )
    # sigma is constant, so the corrected drift equals the drift
    return _attach_bar(field, lambda: affine(-a, -c, -b_mat))


def rot(omega: float = 1.0) -> CoefficientField:
    omega = float(omega)
    gen = omega * np.array([[0.0, -1.0], [1.0, 0.0]])

    def drift(t, x):
        pts, _ = as_points(x, 2)
        return pts @ gen.T

    def drift_grad(t, x):
        pts, _ = as_points(x, 2)
        return np.broadcast_to(gen, (len(pts), 2, 2)).copy()

    def _rotation(theta):
        co, si = np.cos(theta), np.sin(theta)
        return np.array([[co, -si], [si, co]])

    exact = ExactScheme(
        step=lambda t0, t1, x, dw: x @ _rotation(omega * (t1 - t0)).T,
        inverse_step=lambda t0, t1, y, dw: y @ _rotation(-omega * (t1 - t0)).T,
        step_jacobian=lambda t0, t1, x, dw: _rotation(omega * (t1 - t0)),
    )
    field = build_field(
        2,
        1,
        drift=drift,
        drift_grad=drift_grad,
        regularity=Regularity(beta=3.0, n0=2 * abs(omega) + 1e-9, eta=0.5, n_kappa=4.0),
        exact=exact,
        family_name="rot",
        family_params={"omega": omega},
    )
    return _attach_bar(field, lambda: rot(-omega))


def linjump(scale: float, dim: int = 1) -> CoefficientField:
    """Linear mark-scaled jumps H(t, x, z) = scale * z * x; no continuous part."""
    scale = float(scale)

    def jump(t, x, z):
        pts, _ = as_points(x, dim)
        return scale * float(z) * pts

    def jump_grad(t, x, z):
        pts, _ = as_points(x, dim)
        return np.broadcast_to(scale * float(z) * np.eye(dim), (len(pts), dim, dim)).copy()

    return build_field(
        dim,
        1,
        jump=jump,
        jump_grad=jump_grad,
        regularity=Regularity(
            beta=3.0, n0=max(4 * abs(scale), 1e-9), eta=0.5, n_kappa=4.0
        ),
        family_name="linjump",
        family_params={"scale": scale, "dim": dim},
    )


def sinjump(amplitude: float, dim: int = 1) -> CoefficientField:
    """Bounded jumps H(t, x, z) = amplitude * z * sin(x), componentwise."""
    amplitude = float(amplitude)

    def jump(t, x, z):
        pts, _ = as_points(x, dim)
        return amplitude * float(z) * np.sin(pts)

    def jump_grad(t, x, z):
        pts, _ = as_points(x, dim)
        out = np.zeros((len(pts), dim, dim))
        idx = np.arange(dim)
        out[:, idx, idx] = amplitude * float(z) * np.cos(pts)
        return out

    return build_field(
        dim,
        1,
        jump=jump,
        jump_grad=jump_grad,
        regularity=Regularity(
            beta=3.0, n0=max(4 * abs(amplitude), 1e-9), eta=0.5, n_kappa=4.0
        ),
        family_name="sinjump",
        family_params={"amplitude": amplitude, "dim": dim},
    )


def with_jump(
    base: CoefficientField, jump_part: CoefficientField, measure: MarkMeasure | None = None
) -> CoefficientField:
    """Continuous part from ``base``, jump part from ``jump_part``."""
    if base.dim != jump_part.dim:
        raise ValueError("base and jump families disagree on the dimension")
    rb, rj = base.regularity, jump_part.regularity
    return build_field(
        base.dim,
        base.brownian_count,
        drift=base.drift,
        diffusion=base.diffusion,
        jump=jump_part.jump,
        drift_grad=base.drift_grad,
        diffusion_grad=base.diffusion_grad,
        jump_grad=jump_part.jump_grad,
        second_derivs=base.second_derivs,
        regularity=Regularity(
            beta=min(rb.beta, rj.beta),
            n0=rb.n0 + rj.n0,
            eta=rj.eta,
            n_kappa=rj.n_kappa,
        ),
        measure=measure,
        family_name=f"{base.family_name}+{jump_part.family_name}",
        family_params={**base.family_params},
    )


def _attach_bar(field: CoefficientField, factory) -> CoefficientField:
    import dataclasses

    return dataclasses.replace(field, bar_factory=factory)


def bar_field(field: CoefficientField) -> CoefficientField:
    """Field generating the companion flow: drift -hat b, diffusion -sigma.

    Families with a closed-form companion return it (keeping their exact
    scheme); otherwise the field is assembled generically with
    finite-difference gradients for the corrected drift.
    """
    if field.has_jump:
        raise ValueError("companion construction requires a jump-free field")
    if field.bar_factory is not None:
        return field.bar_factory()

    d, m = field.dim, field.brownian_count

    def drift(t, x):
        return -hat_drift(field, t, x)

    def diffusion(t, x):
        return -np.asarray(field.diffusion(t, x), dtype=float)

    def diffusion_grad(t, x):
        return -np.asarray(field.diffusion_grad(t, x), dtype=float)

    return build_field(
        d,
        m,
        drift=drift,
        diffusion=diffusion,
        diffusion_grad=diffusion_grad,
        regularity=field.regularity,
        family_name=f"bar[{field.family_name}]",
        family_params=dict(field.family_params),
    )


def shift_drift(field: CoefficientField, delta: float) -> CoefficientField:
    """Field with drift b + delta * (1, ..., 1); used by the limit harness."""
    delta = float(delta)
    if field.family_name == "zero":
        return const(np.full(field.dim, delta), field.brownian_count)
    if field.family_name == "const":
        c = np.asarray(field.family_params["shift"], dtype=float)
        return const(c + delta, field.brownian_count)
    offset = np.full(field.dim, delta)

    def drift(t, x):
        return np.asarray(field.drift(t, x), dtype=float) + offset

    return build_field(
        field.dim,
        field.brownian_count,
        drift=drift,
        diffusion=field.diffusion,
        jump=field.jump if field.has_jump else None,
        drift_grad=field.drift_grad,
        diffusion_grad=field.diffusion_grad,
        jump_grad=field.jump_grad if field.has_jump else None,
        regularity=Regularity(
            field.regularity.beta,
            field.regularity.n0 + abs(delta) * np.sqrt(field.dim),
            field.regularity.eta,
            field.regularity.n_kappa,
        ),
        measure=field.measure,
        family_name=f"{field.family_name}+shift",
        family_params={**field.family_params, "shift_delta": delta},
    )


def scale_diffusion(field: CoefficientField, factor: float) -> CoefficientField:
    """Field with diffusion scaled by ``factor``; used by the limit harness."""
    factor = float(factor)
    if field.family_name == "gbm":
        return gbm(field.family_params["mu"], factor * field.family_params["nu"])
    if field.family_name == "affine":
        p = field.family_params
        return affine(
            np.asarray(p["matrix"]), np.asarray(p["shift"]), factor * np.asarray(p["noise"])
        )

    def diffusion(t, x):
        return factor * np.asarray(field.diffusion(t, x), dtype=float)

    def diffusion_grad(t, x):
        return factor * np.asarray(field.diffusion_grad(t, x), dtype=float)

    return build_field(
        field.dim,
        field.brownian_count,
        drift=field.drift,
        diffusion=diffusion,
        jump=field.jump if field.has_jump else None,
        drift_grad=field.drift_grad,
        diffusion_grad=diffusion_grad,
        jump_grad=field.jump_grad if field.has_jump else None,
        regularity=Regularity(
            field.regularity.beta,
            field.regularity.n0 * max(1.0, abs(factor)),
            field.regularity.eta,
            field.regularity.n_kappa,
        ),
        measure=field.measure,
        family_name=f"{field.family_name}*scale",
        family_params={**field.family_params, "sigma_factor": factor},
    )


FAMILY_BUILDERS = {
    "zero": zero,
    "const": const,
    "gbm": gbm,
    "affine": affine,
    "rot": rot,
    "linjump": linjump,
    "sinjump": sinjump,
}

JUMP_FAMILIES = ("linjump", "sinjump")
