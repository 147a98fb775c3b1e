"""Shared exception types.

The CLI maps these onto exit codes: anything derived from InputError is a
usage/input problem (exit 2), every other IalsError is a runtime failure
(exit 1).
"""


class IalsError(Exception):
    """Base class for all errors raised by this package."""


class InputError(IalsError):
    """Bad user input: malformed files, impossible parameters, missing data."""


class DimensionMismatch(InputError):
    """A model and a split (or two models) disagree on matrix dimensions."""
