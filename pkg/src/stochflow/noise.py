"""Deterministic generation of driving noise: Brownian increments on a
jump-adapted time grid plus the jump events of a finite-activity mark
measure.

Reproducibility contract: a record is a pure function of
(measure, m, s, t, base_steps, seed, path_index). Each (seed, path_index)
pair keys an independent Philox substream, and draws are consumed in a
fixed order: jump count, jump times, jump atoms, then Brownian increments
interval by interval on the refined grid. The same noise therefore drives
any coefficient field, which is what common-random-number coupling needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import MarkMeasure
from .errors import InvalidInterval

_TIME_ATOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times; some points flagged as jump times.

    ``jump_atoms`` maps a grid index to the atom index of the jump landing
    at that time.
    """

    times: np.ndarray
    jump_atoms: dict[int, int]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.isfinite(times).all() or not (np.diff(times) > 0).all():
            raise ValueError("grid times must be finite and strictly increasing")
        for idx in self.jump_atoms:
            if not 0 < idx < len(times):
                raise ValueError("jump flags must point at interior or final grid points")
        times.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "jump_atoms", dict(self.jump_atoms))

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    @property
    def interval_count(self) -> int:
        return len(self.times) - 1

    def index_of(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t))
        for k in (idx - 1, idx, idx + 1):
            if 0 <= k < len(self.times) and abs(self.times[k] - t) <= _TIME_ATOL * max(
                1.0, abs(t)
            ):
                return k
        raise ValueError(f"time {t} is not a grid point")


def uniform_grid(s: float, t: float, steps: int) -> TimeGrid:
    if t <= s:
        raise InvalidInterval(f"need t > s, got [{s}, {t}]")
    if steps < 1:
        raise ValueError("need at least one step")
    return TimeGrid(np.linspace(s, t, steps + 1), {})


def jump_adapted_grid(base: TimeGrid, jump_times, atom_indices=None) -> TimeGrid:
    """Union of the base grid and the jump times; on coincidence the point
    is kept once with the jump flag winning."""
    jump_times = np.asarray(jump_times, dtype=float)
    if len(jump_times) == 0:
        return TimeGrid(base.times, base.jump_atoms)
    if atom_indices is None:
        atom_indices = np.zeros(len(jump_times), dtype=int)
    atom_indices = np.asarray(atom_indices, dtype=int)
    if np.any(jump_times <= base.start) or np.any(jump_times > base.end + _TIME_ATOL):
        raise ValueError("jump times must lie inside (s, t]")

    old = base.times
    tol = _TIME_ATOL * np.maximum(1.0, np.abs(jump_times))
    pos = np.searchsorted(old, jump_times)
    hit_here = (pos < len(old)) & (np.abs(old[np.minimum(pos, len(old) - 1)] - jump_times) <= tol)
    hit_prev = (~hit_here) & (pos > 0) & (np.abs(old[pos - 1] - jump_times) <= tol)
    fresh = ~hit_here & ~hit_prev

    merged = np.sort(np.concatenate([old, jump_times[fresh]]))
    # map old grid indices and jump times onto the merged grid
    old_at = np.searchsorted(merged, old)
    flags = {int(old_at[k]): v for k, v in base.jump_atoms.items()}
    snap = np.where(hit_here, np.minimum(pos, len(old) - 1), pos - 1)
    for jt, atom, snapped, is_fresh in zip(jump_times, atom_indices, snap, fresh):
        if is_fresh:
            idx = int(np.searchsorted(merged, jt))
        else:
            idx = int(old_at[snapped])
        flags[idx] = int(atom)
    return TimeGrid(merged, flags)


@dataclass(frozen=True)
class NoiseRecord:
    """One realization of the driving noise on a jump-adapted grid."""

    grid: TimeGrid
    increments: np.ndarray  # (interval_count, m)
    jump_events: tuple[tuple[float, int], ...]  # (time, atom index), ordered
    seed: int
    path_index: int

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape[0] != self.grid.interval_count:
            raise ValueError("one increment row per grid interval required")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "jump_events", tuple(self.jump_events))

    @property
    def brownian_count(self) -> int:
        return self.increments.shape[1]


def _stream(seed: int, path_index: int) -> np.random.Generator:
    entropy = (int(seed) % (2**63), int(path_index) % (2**63))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def generate_noise(
    measure: MarkMeasure,
    m: int,
    s: float,
    t: float,
    base_steps: int,
    seed: int,
    path_index: int = 0,
) -> NoiseRecord:
    """Draw one noise realization for the window [s, t].

    The jump count is Poisson(total_rate * (t - s)); conditioned on the
    count, jump times are iid uniform on (s, t] and atoms are drawn with
    probabilities proportional to their rates. The base uniform grid is
    refined by the jump times and Brownian increments are drawn per refined
    interval with variance equal to the interval length.
    """
    if t <= s:
        raise InvalidInterval(f"need t > s, got [{s}, {t}]")
    if m < 1:
        raise ValueError("need at least one Brownian component")
    rng = _stream(seed, path_index)
    base = uniform_grid(s, t, base_steps)

    events: list[tuple[float, int]] = []
    if measure.total_rate > 0:
        count = int(rng.poisson(measure.total_rate * (t - s)))
        jump_times = s + (t - s) * (1.0 - rng.random(count))
        order = np.argsort(jump_times)
        jump_times = jump_times[order]
        cumulative = np.cumsum(measure.rates) / measure.total_rate
        atoms = np.searchsorted(cumulative, rng.random(count), side="right")[order]
        atoms = np.minimum(atoms, len(measure.atoms) - 1)
        events = [(float(jt), int(a)) for jt, a in zip(jump_times, atoms)]
        grid = jump_adapted_grid(base, jump_times, atoms)
    else:
        grid = base

    dt = np.diff(grid.times)
    increments = rng.standard_normal((len(dt), m)) * np.sqrt(dt)[:, None]
    return NoiseRecord(
        grid=grid,
        increments=increments,
        jump_events=tuple(events),
        seed=int(seed),
        path_index=int(path_index),
    )


def restrict(noise: NoiseRecord, a: float, b: float) -> NoiseRecord:
    """Sub-record on [a, b]; both endpoints must be grid points."""
    ia = noise.grid.index_of(a)
    ib = noise.grid.index_of(b)
    if ib <= ia:
        raise InvalidInterval(f"need b > a on the grid, got [{a}, {b}]")
    flags = {
        k - ia: v for k, v in noise.grid.jump_atoms.items() if ia < k <= ib
    }
    grid = TimeGrid(noise.grid.times[ia : ib + 1].copy(), flags)
    events = tuple(ev for ev in noise.jump_events if a < ev[0] <= b + _TIME_ATOL)
    return NoiseRecord(
        grid=grid,
        increments=noise.increments[ia:ib].copy(),
        jump_events=events,
        seed=noise.seed,
        path_index=noise.path_index,
    )


def coarsen(noise: NoiseRecord, factor: int) -> NoiseRecord:
    """Merge consecutive intervals in groups of ``factor`` (jump-free grids
    only); Brownian increments are summed, which preserves the path law."""
    if factor == 1:
        return noise
    if noise.grid.jump_atoms:
        raise ValueError("cannot coarsen a grid holding jump times")
    n = noise.grid.interval_count
    if n % factor != 0:
        raise ValueError(f"{n} intervals do not split into groups of {factor}")
    times = noise.grid.times[::factor].copy()
    inc = noise.increments.reshape(n // factor, factor, -1).sum(axis=1)
    return NoiseRecord(
        grid=TimeGrid(times, {}),
        increments=inc,
        jump_events=(),
        seed=noise.seed,
        path_index=noise.path_index,
    )
