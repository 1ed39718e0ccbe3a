"""Exception hierarchy.

Mathematical negative results (no homoclinic orbit, integrable map, ...) are
*not* exceptions: they are reported in certificates. Exceptions signal that an
operation could not produce its result.
"""


class NonintError(Exception):
    """Base class for all errors raised by this package."""


class InputError(NonintError, ValueError):
    """Malformed input: dimension mismatch, bad file, invalid parameter."""


class OrbitError(NonintError):
    """An orbit could not be continued (e.g. Newton inversion failed)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NotFoundError(NonintError):
    """An iterative search (fixed point, root) did not converge."""


class DegeneracyError(NonintError):
    """A Newton matrix or similar linear system is singular."""


class HyperbolicityError(NonintError):
    """A multiplier has modulus equal to one within tolerance."""


class ResonanceError(NonintError):
    """A multiplicative resonance was detected where none is allowed."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class InternalResonanceError(ResonanceError):
    """Small divisor in the homological equation of a chart."""

    def __init__(self, message, exponent=None, index=None):
        super().__init__(message, witness=exponent)
        self.exponent = exponent
        self.index = index


class NotAGraphError(NonintError):
    """Manifold samples fold over the requested domain."""


class DomainError(NonintError):
    """A requested point lies outside the region where a construction is valid."""

    def __init__(self, message, minimal_index=None):
        super().__init__(message)
        self.minimal_index = minimal_index


class PeelingError(NonintError):
    """Extrapolation error bar exceeded tolerance at some peeling level."""

    def __init__(self, message, stage=None, level=None):
        super().__init__(message)
        self.stage = stage
        self.level = level


class GenerationError(NonintError):
    """Could not generate a parameter meeting its constraints."""
