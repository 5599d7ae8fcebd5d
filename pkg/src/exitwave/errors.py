"""Exception hierarchy.

`DataError` subclasses signal bad inputs (files, parameters, physics
preconditions); the CLI maps them to exit code 2.
"""


class ExitWaveError(Exception):
    """Base class for all package errors."""


class DataError(ExitWaveError, ValueError):
    """Invalid input data or violated physical precondition."""


# crystal
class CifError(DataError):
    def __init__(self, message, token=None, line=None):
        self.token = token
        self.line = line
        where = []
        if token is not None:
            where.append(f"token {token!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class MissingCellParameter(CifError):
    pass


class MalformedLoop(CifError):
    pass


class UnknownElementSymbol(CifError):
    pass


class UnsupportedCif(CifError):
    pass


class DegenerateZoneAxis(DataError):
    pass


class EmptyBlock(DataError):
    pass


class NonPositiveSliceThickness(DataError):
    pass


# potential
class NonPositiveVoltage(DataError):
    pass


class NonPositiveArgument(DataError):
    pass


class UnknownElement(DataError):
    pass


class ZeroRadius(DataError):
    pass


class TableFormatError(DataError):
    pass


# multislice / optics
class GridMismatch(DataError):
    pass


class InvalidGrid(DataError):
    pass


class IncompatibleTiling(DataError):
    pass


class ExtinctionResonance(DataError):
    pass


class InvalidAberration(DataError):
    pass


# holography
class CarrierOffLattice(DataError):
    pass


class CarrierOutsideBand(DataError):
    pass


class SidebandOverlap(DataError):
    pass


class BadCount(DataError):
    pass


class EmptySeries(DataError):
    pass


# recon-math
class NegativeAmplitude(DataError):
    pass


class ZeroVector(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NegativeLoss(DataError):
    pass


class BadIteration(DataError):
    pass


# dataset
class BadConfig(DataError):
    pass


class UnknownGroupKey(DataError):
    pass


class CropOutOfBounds(DataError):
    pass


class WaveFileError(DataError):
    pass
