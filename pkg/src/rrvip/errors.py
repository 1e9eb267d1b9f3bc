"""Exception types shared across the package.

The CLI maps these to exit codes: ParameterError -> 2, DivergenceError -> 3,
InvariantViolation -> 4.
"""

from __future__ import annotations

import numpy as np


class ParameterError(ValueError):
    """Invalid argument or configuration."""


class DegenerateProblemError(RuntimeError):
    """Problem has no usable exact solution (singular/ill-conditioned mean matrix)."""


class UnsupportedProblemError(RuntimeError):
    """Operation requires structure (affine components, known constants) the problem lacks."""


class NonContractiveError(RuntimeError):
    """Mean epoch map has spectral radius >= 1; no stationary mean exists."""


class EnumerationGuardError(RuntimeError):
    """Requested exhaustive enumeration exceeds the configured size guard."""


class NotConvergedError(RuntimeError):
    """Monte Carlo tail is still trending; plateau estimate would be biased."""


class InvariantViolation(AssertionError):
    """A checked lemma/invariant failed on a concrete instance."""


class DivergenceError(RuntimeError):
    """Iterates left the finite range; carries the last finite iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
