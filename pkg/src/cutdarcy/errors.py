"""Exception types raised by the solver pipeline."""


class CutDarcyError(Exception):
    """Base class for all package errors."""


class DegenerateCell(CutDarcyError):
    pass


class InvalidDimensions(CutDarcyError):
    pass


class OrphanCutCell(CutDarcyError):
    def __init__(self, cell):
        super().__init__(f"cut cell {cell} has no facet path to an interior cell")
        self.cell = cell


class SingularMap(CutDarcyError):
    pass


class Singular(CutDarcyError):
    """Raised when a factorisation hits a zero pivot."""

    def __init__(self, pivot=None, msg=None):
        super().__init__(msg or f"matrix is singular (pivot {pivot})")
        self.pivot = pivot


class MissingBoundaryData(CutDarcyError):
    pass


class ConstraintInapplicable(CutDarcyError):
    pass


class SingularMass(CutDarcyError):
    pass


class InsufficientData(CutDarcyError):
    pass


class ConfigError(CutDarcyError):
    def __init__(self, msg, line=None, col=None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(where + msg)
        self.line = line
        self.col = col
