# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
Errors - The exception hierarchy raised by the numerical core. Boundary code
(config, file formats, CLI) reports failures as
:py:class:`Left <pyella.either.Left>` values instead and only converts them to
these exceptions when it has to.
"""

from typing import Dict


class SpoofTraceError(Exception):
    """
    Base class of every error raised by this library
    """


class DimensionError(SpoofTraceError):
    """
    Raised when tensor shapes do not line up for the requested operation
    """


class StatisticsError(SpoofTraceError):
    """
    Raised when batch statistics cannot be estimated, e.g. batchnorm over a
    single value
    """


class NumericError(SpoofTraceError):
    """
    Raised when a computation produces or receives non-finite values
    """


class TrainingAborted(NumericError):
    """
    Raised when a training step produces a non-finite loss. Carries the
    iteration and the loss components of the failing step.
    """

    def __init__(self, iteration: int, components: Dict[str, float]):
        self.iteration = iteration
        self.components = dict(components)

        details = ", ".join(f"{name}={value!r}" for name, value in components.items())
        super().__init__(f"non-finite loss at iteration {iteration}: {details}")


class DegenerateGeometryError(SpoofTraceError):
    """
    Raised when landmarks cannot be triangulated, e.g. all points collinear
    """


class DomainError(SpoofTraceError):
    """
    Raised when the input lies outside the domain of an operation, e.g. a
    metric over records of a single class
    """
