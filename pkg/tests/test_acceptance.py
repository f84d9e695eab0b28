"""Acceptance suite: every criterion at its stated tolerance, one
pass/fail line per criterion (run pytest with -s to see them)."""

import math
import time

import numpy as np
import pytest

from stochflow import families as fam
from stochflow.coeffs import EMPTY_MEASURE, MarkMeasure, build_field, hat_drift
from stochflow.config import parse_config
from stochflow.flow import (
    integrate_flow,
    integrate_inverse_jacobian,
    integrate_jacobian,
)
from stochflow.grids import SpatialGrid
from stochflow.inverse import invert_flow
from stochflow.limits import strong_limit_run
from stochflow.noise import coarsen, generate_noise
from stochflow.norms import (
    GridFunction,
    holder_seminorm,
    moment_estimate,
    sobolev_functional,
    weighted_holder_report,
)
from stochflow.runner import run_experiment
from stochflow.spde import (
    ito_wentzell_check,
    partition_expansion,
    solve_spde_bar,
    solve_spde_characteristics,
)

GBM = fam.gbm(0.1, 0.2)


class _verdict:
    def __init__(self, label):
        self.label = label

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        print(f"[acceptance] {self.label}: {status}")
        return False


def brownian(noise):
    return np.concatenate([[0.0], np.cumsum(noise.increments[:, 0])])


def test_c01_closed_form_flow_oracle_and_strong_order():
    with _verdict("C1 closed-form flow oracle + Euler strong order 1/2"):
        started = time.monotonic()
        # exact-family simulation against the closed form, per path
        for pi in range(100):
            nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 64, seed=7, path_index=pi)
            x0 = np.array([[2.0], [0.5], [-1.0]])
            flow = integrate_flow(GBM, EMPTY_MEASURE, nz, x0, "exact")
            oracle = x0[None, :, 0] * np.exp(
                0.08 * nz.grid.times[:, None] + 0.2 * brownian(nz)[:, None]
            )
            rel = np.abs(flow.states[:, :, 0] - oracle) / np.abs(oracle)
            assert rel.max() <= 1e-12
        # Euler strong error against the oracle drops by ~2 when dt -> dt/4
        coarse_err, fine_err = [], []
        for pi in range(1000):
            master = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 256, seed=11, path_index=pi)
            oracle_t = 2.0 * math.exp(0.08 + 0.2 * master.increments[:, 0].sum())
            run_c = integrate_flow(
                GBM, EMPTY_MEASURE, coarsen(master, 4), np.array([[2.0]]), "euler"
            )
            run_f = integrate_flow(GBM, EMPTY_MEASURE, master, np.array([[2.0]]), "euler")
            coarse_err.append(abs(run_c.states[-1, 0, 0] - oracle_t))
            fine_err.append(abs(run_f.states[-1, 0, 0] - oracle_t))
        ratio = np.mean(coarse_err) / np.mean(fine_err)
        assert 1.6 <= ratio <= 2.6
        assert time.monotonic() - started < 30.0


def test_c02_inversion_round_trip():
    with _verdict("C2 inversion round trip with jumps (1e3 points, 100 times)"):
        started = time.monotonic()
        measure = MarkMeasure(((1.0, 2.0),))
        lin1 = np.linspace(0.5, 3.0, 1000)[:, None]
        g2 = np.linspace(-2.0, 2.0, 40)
        grid2 = np.stack(np.meshgrid(g2, g2[:25]), axis=-1).reshape(-1, 2)[:1000]
        cases = [
            (fam.with_jump(GBM, fam.linjump(-0.5), measure), lin1, 5),
            (
                fam.with_jump(
                    fam.affine(
                        np.array([[-0.3, 0.2], [0.1, -0.4]]),
                        [0.1, -0.2],
                        np.array([[0.3], [0.2]]),
                    ),
                    fam.linjump(-0.5, dim=2),
                    measure,
                ),
                grid2,
                6,
            ),
            (fam.with_jump(fam.rot(1.0), fam.linjump(-0.5, dim=2), measure), grid2, 6),
        ]
        for field, queries, seed in cases:
            nz = generate_noise(measure, 1, 0.0, 1.0, 99, seed=seed)
            flow = integrate_flow(field, measure, nz, queries, "euler")
            times = flow.times[:100]
            inv = invert_flow(field, measure, flow, queries, tol=1e-8, times=times)
            assert len(inv.times) == 100
            assert inv.residuals.max() <= 1e-8
        assert time.monotonic() - started < 60.0


def test_c03_jacobian_fidelity():
    with _verdict("C3 Jacobian vs finite differences; exact jump factors"):
        fd_step = 1e-4
        cases = [
            (GBM, np.array([[1.5]])),
            (
                fam.affine(
                    np.array([[-0.3, 0.2], [0.1, -0.4]]),
                    [0.1, -0.2],
                    np.array([[0.3], [0.2]]),
                ),
                np.array([[0.7, -0.4]]),
            ),
        ]
        for field, x0 in cases:
            nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 0.5, 500, seed=5)  # dt = 1e-3
            flow = integrate_flow(field, EMPTY_MEASURE, nz, x0, "euler")
            flow = integrate_jacobian(field, flow)
            d = field.dim
            fd = np.empty((len(nz.grid.times), d, d))
            for j in range(d):
                e = np.zeros(d)
                e[j] = fd_step
                hi = integrate_flow(field, EMPTY_MEASURE, nz, x0 + e, "euler")
                lo = integrate_flow(field, EMPTY_MEASURE, nz, x0 - e, "euler")
                fd[:, :, j] = (hi.states[:, 0] - lo.states[:, 0]) / (2 * fd_step)
            gap = np.abs(flow.jacobians[:, 0] - fd).max()
            assert gap <= 5e-3 * (1.0 + np.abs(flow.jacobians).max())
        # pure-jump paths: the jump updates are exact matrix inverses
        balanced = MarkMeasure(((1.0, 2.0), (-1.0, 2.0)))
        lin = fam.linjump(-0.5)
        for pi in range(10):
            nz = generate_noise(balanced, 1, 0.0, 1.0, 8, seed=3, path_index=pi)
            flow = integrate_flow(lin, balanced, nz, np.array([[1.0], [-2.0]]), "euler")
            flow = integrate_jacobian(lin, flow)
            flow = integrate_inverse_jacobian(lin, flow)
            prod = flow.jacobians @ flow.inverse_jacobians
            assert np.abs(prod - np.eye(1)).max() <= 1e-12


def test_c04_inverse_jacobian_refinement_order():
    with _verdict("C4 product identity error order >= 0.4 under dt -> dt/4"):
        orders = []
        for pi in range(100):
            master = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 256, seed=23, path_index=pi)
            errs = []
            for fac in (4, 1):
                nz = coarsen(master, fac)
                flow = integrate_flow(GBM, EMPTY_MEASURE, nz, np.array([[1.5]]), "euler")
                flow = integrate_jacobian(GBM, flow)
                flow = integrate_inverse_jacobian(GBM, flow)
                errs.append(np.abs(flow.jacobians @ flow.inverse_jacobians - 1.0).max())
            orders.append(math.log(errs[0] / errs[1]) / math.log(4))
        assert np.median(orders) >= 0.4


def test_c05_spde_representation():
    with _verdict("C5 SPDE by characteristics: closed forms + composition check"):
        nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 256, seed=31)
        grid = SpatialGrid(((-5.0, 5.0),), 1e-2)
        times = nz.grid.times[::32]
        sol = solve_spde_characteristics(GBM, nz, 0.0, 1.0, grid, tol=1e-10, times=times)
        w = brownian(nz)
        nodes = grid.nodes()[:, 0]
        worst = 0.0
        for k, t in enumerate(sol.times):
            idx = nz.grid.index_of(float(t))
            oracle = nodes * np.exp(-0.08 * t - 0.2 * w[idx])
            worst = max(worst, np.abs(sol.values[k, :, 0] - oracle).max())
        assert worst <= 1e-10
        # constant sigma: u = x - w exactly
        additive = fam.affine(np.zeros((1, 1)), None, np.array([[1.0]]))
        sol2 = solve_spde_characteristics(additive, nz, 0.0, 1.0, grid, times=times)
        worst2 = 0.0
        for k, t in enumerate(sol2.times):
            idx = nz.grid.index_of(float(t))
            worst2 = max(worst2, np.abs(sol2.values[k, :, 0] - (nodes - w[idx])).max())
        assert worst2 <= 1e-12
        probes = np.linspace(-1.0, 1.0, 41)[:, None]
        assert ito_wentzell_check(sol, GBM, nz, probes) <= 1e-3


def test_c06_corrected_drift():
    with _verdict("C6 corrected drift: mirror identity + finite-difference check"):
        nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 64, seed=23)
        grid = SpatialGrid(((-2.0, 2.0),), 0.25)
        additive = fam.affine(np.zeros((1, 1)), None, np.array([[1.0]]))
        u = solve_spde_characteristics(additive, nz, 0.0, 1.0, grid)
        ub = solve_spde_bar(additive, nz, 0.0, 1.0, grid)
        assert np.abs(u.values + ub.values - 2 * grid.nodes()[None]).max() <= 1e-12
        # hat drift of GBM through finite-difference diffusion gradients
        fd_gbm = build_field(
            1,
            1,
            drift=lambda t, x: 0.1 * x,
            diffusion=lambda t, x: 0.2 * x[:, :, None],
        )
        xs = np.linspace(-3, 3, 41)[:, None]
        got = hat_drift(fd_gbm, 0.0, xs)
        assert np.abs(got - (0.1 - 0.04) * xs).max() <= 1e-6


def test_c07_partition_identity_and_claims():
    with _verdict("C7 partition identity (1e-6) + claim residual decay"):
        ode = fam.affine(np.array([[1.0]]))
        nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 256, seed=1)
        rep = partition_expansion(ode, nz, 0.0, 1.0, np.array([1.0]), 64, fd_step=1e-3)
        assert rep.identity_residual <= 1e-6
        medians = []
        for m_part in (4, 16, 64):
            residuals = []
            for pi in range(30):
                nzg = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 256, seed=8, path_index=pi)
                r = partition_expansion(GBM, nzg, 0.0, 1.0, np.array([1.0]), m_part)
                residuals.append(r.claim_residuals["part1"])
            medians.append(float(np.median(residuals)))
        for a, b in zip(medians, medians[1:]):
            assert 1.3 <= a / b <= 4.0


def test_c08_strong_limit():
    with _verdict("C8 strong limit: exact 1/n rows + decreasing GBM sequence"):
        started = time.monotonic()
        base = fam.zero()
        ns = (1, 2, 4, 8, 16)
        fields_n = [fam.shift_drift(base, 1.0 / n) for n in ns]
        rep = strong_limit_run(
            fields_n, base, EMPTY_MEASURE, epsilon=1.0, beta_prime=1.0, p=1.0,
            paths=4, seed=3, box=((-1.0, 1.0),), grid_step=0.5, s=0.0, t_end=1.0,
            base_steps=16, ns=ns,
        )
        for row in rep.rows:
            assert row.flow_distance_value == 1.0 / row.n  # T = 1
            assert row.flow_value_ci95 == 0.0
        gbm_seq = [fam.scale_diffusion(GBM, 1.0 + 1.0 / n) for n in ns]
        rep2 = strong_limit_run(
            gbm_seq, GBM, EMPTY_MEASURE, epsilon=1.0, beta_prime=1.0, p=2.0,
            paths=1000, seed=5, box=((-2.0, 2.0),), grid_step=0.5, s=0.0, t_end=1.0,
            base_steps=32, ns=ns, scheme="exact", report_times=np.linspace(0, 1, 9),
        )
        vals = [row.flow_distance_value for row in rep2.rows]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert time.monotonic() - started < 300.0


def test_c09_appendix_functionals():
    with _verdict("C9 smoothness functional oracle + embedding ratio bound"):
        g = SpatialGrid(((0.0, 1.0),), 2**-12)
        f = GridFunction(g, g.nodes()[:, 0][:, None])
        assert sobolev_functional(f, 0.25, 2.0) == pytest.approx(
            math.sqrt(8 / 3), rel=0.01
        )
        gq = SpatialGrid(((0.0, 1.0),), 2**-8)
        x = gq.nodes()[:, 0]
        funcs = [
            x, x**2, x**3, np.sin(2 * np.pi * x), np.cos(2 * np.pi * x),
            np.sin(4 * np.pi * x), np.cos(4 * np.pi * x), np.sin(6 * np.pi * x),
            np.exp(x) - 1, np.exp(-x), np.tanh(5 * (x - 0.5)), np.sqrt(x + 0.2),
            np.log(x + 0.5), x * (1 - x), np.sin(np.pi * x) ** 2, 1 / (1 + x**2),
            np.exp(-10 * (x - 0.5) ** 2), np.arctan(3 * x), np.cosh(x) - 1,
            x**4 - x,
        ]
        ratios = []
        for fv in funcs:
            gf = GridFunction(gq, fv[:, None])
            semi = holder_seminorm(gf, 0.25, max_steps=None, max_distance=None)
            ratios.append(semi / sobolev_functional(gf, 0.25, 2.0))
        ratios = np.asarray(ratios)
        assert ratios.max() <= 5 * np.median(ratios)


def test_c10_moment_estimates_box_stability():
    with _verdict("C10 weighted moment estimate stable under box growth"):
        means = []
        for box in (((-10.0, 10.0),), ((-20.0, 20.0),)):
            grid = SpatialGrid(box, 0.5)
            sups = []
            for pi in range(200):
                nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 32, seed=71, path_index=pi)
                flow = integrate_flow(GBM, EMPTY_MEASURE, nz, grid.nodes(), "exact")
                rep = weighted_holder_report(flow, grid, epsilon=1.0)
                sups.append(rep.sup_weighted_value)
            est = moment_estimate(sups, p=2.0)
            assert np.isfinite(est.mean)
            means.append(est.mean)
        assert abs(means[1] - means[0]) <= 0.10 * means[0]


def test_c11_determinism_across_workers(tmp_path):
    with _verdict("C11 bitwise-identical reruns at worker counts 1 and 8"):
        limit_cfg = parse_config(
            """\
kind: limit
family: {name: gbm, params: {mu: 0.1, nu: 0.2}}
window: {s: 0.0, t_end: 1.0}
base_steps: 16
scheme: exact
space: {box: [[-1.0, 1.0]], grid_step: 0.5}
paths: 24
seed: 5
limit: {n_values: [1, 2, 4], perturbation: sigma_scale}
"""
        )
        run_experiment(limit_cfg, out_dir=tmp_path / "w1", workers=1)
        run_experiment(limit_cfg, out_dir=tmp_path / "w8", workers=8)
        run_experiment(limit_cfg, out_dir=tmp_path / "w1b", workers=1)
        ref = (tmp_path / "w1" / "limit.csv").read_bytes()
        assert (tmp_path / "w8" / "limit.csv").read_bytes() == ref
        assert (tmp_path / "w1b" / "limit.csv").read_bytes() == ref

        moments_cfg = parse_config(
            """\
kind: moments
family: {name: gbm, params: {mu: 0.1, nu: 0.2}}
window: {s: 0.0, t_end: 1.0}
base_steps: 16
scheme: exact
space: {box: [[-2.0, 2.0]], grid_step: 0.5}
paths: 16
seed: 6
"""
        )
        run_experiment(moments_cfg, out_dir=tmp_path / "m1", workers=1)
        run_experiment(moments_cfg, out_dir=tmp_path / "m8", workers=8)
        assert (tmp_path / "m1" / "moments.csv").read_bytes() == (
            tmp_path / "m8" / "moments.csv"
        ).read_bytes()
