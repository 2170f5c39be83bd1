# errors.py


class CGEError(Exception):
    """Base class for every error raised by the fitting library"""

    def context(self):
        """Extra fields for the machine-readable error record"""
        return {}


class ConfigError(CGEError):
    pass


class DomainError(CGEError):
    """Response value outside the support of the family"""


class NumericUnderflowError(CGEError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index

    def context(self):
        return {'index': self.index}


class LoadError(CGEError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column

    def context(self):
        return {'row': self.row, 'column': self.column}


class RankDeficiencyError(CGEError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column

    def context(self):
        return {'column': self.column}


class NoProgressError(CGEError):
    """Step halving exhausted without an ascent step"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def context(self):
        return {'diagnostics': self.diagnostics}


class EstimationError(CGEError):
    pass


class FitAbortedError(EstimationError):
    def __init__(self, message, sweep=None, block=None):
        super().__init__(message)
        self.sweep = sweep
        self.block = block

    def context(self):
        return {'sweep': self.sweep, 'block': self.block}


class PredictionError(CGEError):
    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level

    def context(self):
        return {'level': self.level}


class SimulationError(CGEError):
    pass
