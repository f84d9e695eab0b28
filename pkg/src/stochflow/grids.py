"""Regular spatial grids used by the norm estimators and the SPDE layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooCoarse

Box = tuple[tuple[float, float], ...]


def _normalize_box(box) -> Box:
    out = tuple((float(lo), float(hi)) for lo, hi in box)
    for lo, hi in out:
        if not (np.isfinite(lo) and np.isfinite(hi) and hi >= lo):
            raise ValueError(f"invalid box side ({lo}, {hi})")
    return out


@dataclass(frozen=True)
class SpatialGrid:
    """Axis-aligned lattice: product of intervals sampled with uniform step.

    Node coordinates along axis k are ``lo_k + i*step`` for
    ``i = 0..n_k-1`` with ``n_k = round((hi_k - lo_k)/step) + 1``; the box is
    required to be (nearly) commensurate with the step.
    """

    box: Box
    step: float
    _axes: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "box", _normalize_box(self.box))
        if not (self.step > 0 and np.isfinite(self.step)):
            raise ValueError("grid step must be positive and finite")
        axes = []
        for lo, hi in self.box:
            n = int(round((hi - lo) / self.step)) + 1
            if n < 1:
                raise GridTooCoarse(f"axis [{lo}, {hi}] holds no nodes at step {self.step}")
            if abs(lo + (n - 1) * self.step - hi) > 1e-9 * max(1.0, abs(hi - lo)):
                raise ValueError("box side is not a multiple of the grid step")
            axes.append(lo + self.step * np.arange(n))
        object.__setattr__(self, "_axes", tuple(axes))

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self._axes)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> tuple[np.ndarray, ...]:
        return self._axes

    def nodes(self) -> np.ndarray:
        """All lattice nodes as an (N, d) array in C (row-major) order."""
        mesh = np.meshgrid(*self._axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def reshape(self, flat_values: np.ndarray) -> np.ndarray:
        """Reshape flat node-indexed values back onto the lattice."""
        return np.asarray(flat_values).reshape(self.shape + np.shape(flat_values)[1:])
