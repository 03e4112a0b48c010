"""Exception hierarchy shared by all modules."""


class RedcError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RedcError, ValueError):
    pass


class ShapeError(RedcError, ValueError):
    pass


class InfeasibleDegree(RedcError):
    """A sampled degree admits no factorization d = d' * d'' with d' <= m, d'' <= k."""


class ResampleLimit(RedcError):
    pass


class InconsistentSymbol(RedcError):
    """A symbol reduced to degree zero but its block is not zero."""


class IncompleteDecode(RedcError):
    pass


class EmptyValidSet(RedcError):
    pass


class InsufficientCapacity(RedcError):
    pass


class UnstableQueue(RedcError):
    pass


class Infeasible(RedcError):
    pass


class NoFeasibleStrategy(RedcError):
    pass


class ConfigError(RedcError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class SaturationAbort(RedcError):
    pass


class UnknownFigure(RedcError, KeyError):
    pass
