"""Exception hierarchy for the stochflow package.

Every error raised by the numerical layers derives from ``StochflowError``,
so callers (and the CLI runner) can distinguish library failures from
programming errors.
"""


class StochflowError(Exception):
    """Base class for all stochflow errors."""


class NonFiniteValue(StochflowError):
    """A coefficient map returned NaN or infinity."""


class UnknownMark(StochflowError):
    """A jump mark is not an atom of the bound mark measure."""


class MissingDerivative(StochflowError):
    """An operation needs a derivative map the field does not provide."""


class SingularJumpJacobian(StochflowError):
    """det(I + grad H) vanished where the jump map must be invertible."""


class NonFiniteState(StochflowError):
    """A simulated state blew up (step too coarse or assumptions violated)."""


class NoConvergence(StochflowError):
    """An inversion iteration exhausted its budget without converging."""


class SingularJacobian(StochflowError):
    """The propagated Jacobian is numerically singular."""


class JumpFieldRejected(StochflowError):
    """An operation restricted to jump-free fields received one with jumps."""


class MissingGradient(StochflowError):
    """A report needs stored gradients that the path does not carry."""


class GridTooCoarse(StochflowError):
    """A spatial grid has too few nodes for the requested stencil."""


class DimensionMismatch(StochflowError):
    """Two fields (or a field and data) disagree on dimensions."""


class InvalidInterval(StochflowError):
    """A time interval with t_end <= t_start was requested."""


class OutOfGrid(StochflowError):
    """A trajectory left the spatial box of a gridded solution."""


class ConfigError(StochflowError):
    """An experiment config failed validation; message names the key path."""
