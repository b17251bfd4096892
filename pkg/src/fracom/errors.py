"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    """A precondition on an input was violated."""


class NumericalFailure(ArithmeticError):
    """A computation produced non-finite values or failed to factorize.

    ``index`` is the grid node (or step) where the failure was detected, when known.
    """

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"{message} (node {index})"
        super().__init__(message)
        self.index = index


def first_nonfinite(values) -> int | None:
    import numpy as np

    bad = np.flatnonzero(~np.isfinite(np.asarray(values)))
    return int(bad[0]) if bad.size else None
