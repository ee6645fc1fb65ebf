class InvalidInputError(ValueError):
    pass


class AmbiguousLabelError(ValueError):
    """Raised when eigenvectors cannot be assigned unique basis labels.

    ``pair`` holds the two offending level indices (or labels).
    """

    def __init__(self, message, pair):
        super().__init__(message)
        self.pair = pair


class ConvergenceError(RuntimeError):
    pass


class QueryBudgetExceeded(RuntimeError):
    pass


class ConfigError(InvalidInputError):
    """Bad or incomplete configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
