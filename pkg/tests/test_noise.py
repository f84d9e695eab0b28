"""Noise generation: determinism, jump statistics, grid refinement."""

import math

import numpy as np
import pytest

from stochflow.coeffs import EMPTY_MEASURE, MarkMeasure
from stochflow.errors import InvalidInterval
from stochflow.noise import (
    coarsen,
    generate_noise,
    jump_adapted_grid,
    restrict,
    uniform_grid,
)

RATE2 = MarkMeasure(((1.0, 2.0),))


def test_empty_measure_uniform_grid():
    nz = generate_noise(EMPTY_MEASURE, 2, 0.0, 1.0, 8, seed=1)
    assert len(nz.jump_events) == 0
    np.testing.assert_allclose(nz.grid.times, np.linspace(0, 1, 9))
    assert nz.increments.shape == (8, 2)


def test_same_seed_bitwise_identical():
    a = generate_noise(RATE2, 3, 0.0, 2.0, 16, seed=9, path_index=4)
    b = generate_noise(RATE2, 3, 0.0, 2.0, 16, seed=9, path_index=4)
    assert np.array_equal(a.increments, b.increments)
    assert np.array_equal(a.grid.times, b.grid.times)
    assert a.jump_events == b.jump_events


def test_distinct_paths_differ():
    a = generate_noise(RATE2, 1, 0.0, 1.0, 4, seed=9, path_index=0)
    b = generate_noise(RATE2, 1, 0.0, 1.0, 4, seed=9, path_index=1)
    assert not np.array_equal(a.increments, b.increments)


def test_invalid_interval():
    with pytest.raises(InvalidInterval):
        generate_noise(EMPTY_MEASURE, 1, 1.0, 1.0, 4, seed=0)


def test_jump_events_inside_window_and_grid_flags():
    for pi in range(50):
        nz = generate_noise(RATE2, 1, 0.5, 1.5, 4, seed=3, path_index=pi)
        for t, atom in nz.jump_events:
            assert 0.5 < t <= 1.5
            idx = nz.grid.index_of(t)
            assert nz.grid.jump_atoms[idx] == atom
        assert len(nz.jump_events) == len(nz.grid.jump_atoms)


def test_poisson_jump_count_mean():
    # Monte Carlo oracle: mean jump count over regenerations, rate 2, window 1
    counts = [
        len(generate_noise(RATE2, 1, 0.0, 1.0, 1, seed=42, path_index=i).jump_events)
        for i in range(100_000)
    ]
    assert np.mean(counts) == pytest.approx(2.0, abs=0.05)


def test_atom_frequencies_match_rates():
    measure = MarkMeasure(((1.0, 0.5), (-1.0, 1.5)))
    hits = [0, 0]
    for i in range(4000):
        nz = generate_noise(measure, 1, 0.0, 1.0, 1, seed=5, path_index=i)
        for _, atom in nz.jump_events:
            hits[atom] += 1
    frac = hits[0] / max(1, sum(hits))
    assert frac == pytest.approx(0.25, abs=0.03)


def test_substream_independence_surrogate():
    a = np.array(
        [generate_noise(EMPTY_MEASURE, 1, 0, 1, 1, seed=1, path_index=i).increments[0, 0]
         for i in range(10_000)]
    )
    b = np.array(
        [generate_noise(EMPTY_MEASURE, 1, 0, 1, 1, seed=1, path_index=i + 10_000).increments[0, 0]
         for i in range(10_000)]
    )
    assert abs(np.corrcoef(a, b)[0, 1]) <= 0.05


def test_refined_increments_preserve_variance():
    # summed increments over the jump-refined grid carry the window variance
    totals = np.array(
        [generate_noise(RATE2, 1, 0.0, 1.0, 1, seed=77, path_index=i).increments[:, 0].sum()
         for i in range(100_000)]
    )
    assert np.var(totals) == pytest.approx(1.0, rel=0.02)


def test_increment_variance_matches_interval_length():
    nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 2.0, 4, seed=0)
    draws = np.array(
        [generate_noise(EMPTY_MEASURE, 1, 0.0, 2.0, 4, seed=0, path_index=i).increments[:, 0]
         for i in range(20_000)]
    )
    dt = np.diff(nz.grid.times)
    np.testing.assert_allclose(draws.var(axis=0), dt, rtol=0.05)


def test_jump_adapted_grid_no_jumps():
    base = uniform_grid(0.0, 1.0, 4)
    out = jump_adapted_grid(base, [])
    np.testing.assert_array_equal(out.times, base.times)


def test_jump_adapted_grid_coincident_point():
    base = uniform_grid(0.0, 1.0, 2)
    out = jump_adapted_grid(base, [0.5], [3])
    assert len(out.times) == len(base.times)
    assert out.jump_atoms == {1: 3}


def test_jump_adapted_grid_inserts_point():
    base = uniform_grid(0.0, 1.0, 2)
    out = jump_adapted_grid(base, [0.25])
    np.testing.assert_allclose(out.times, [0.0, 0.25, 0.5, 1.0])
    assert out.jump_atoms == {1: 0}


def test_restrict_preserves_increments():
    nz = generate_noise(RATE2, 2, 0.0, 1.0, 8, seed=13)
    mid = nz.grid.times[len(nz.grid.times) // 2]
    left = restrict(nz, 0.0, float(mid))
    right = restrict(nz, float(mid), 1.0)
    np.testing.assert_array_equal(
        np.vstack([left.increments, right.increments]), nz.increments
    )
    assert len(left.grid.jump_atoms) + len(right.grid.jump_atoms) == len(nz.grid.jump_atoms)


def test_coarsen_sums_increments():
    nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, 8, seed=2)
    c = coarsen(nz, 4)
    assert c.grid.interval_count == 2
    np.testing.assert_allclose(c.increments[0, 0], nz.increments[:4, 0].sum())
    with pytest.raises(ValueError):
        coarsen(nz, 3)


def test_coarsen_rejects_jumpy_grids():
    nz = generate_noise(RATE2, 1, 0.0, 4.0, 8, seed=3)
    assert nz.grid.jump_atoms  # rate 2 on a window of 4: jumps essentially sure
    with pytest.raises(ValueError):
        coarsen(nz, 2)


def test_expected_sup_of_brownian_motion():
    # reflection-principle oracle: E sup_{t<=1} w_t = sqrt(2/pi)
    paths, steps = 20_000, 16_384
    sups = np.empty(paths)
    for i in range(paths):
        nz = generate_noise(EMPTY_MEASURE, 1, 0.0, 1.0, steps, seed=99, path_index=i)
        sups[i] = max(0.0, np.cumsum(nz.increments[:, 0]).max())
    assert sups.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=0.01)
