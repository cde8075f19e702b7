"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameter or configuration value."""


class GraphFormatError(ValueError):
    """A graph, feature, community, or query file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NodeRangeError(GraphFormatError):
    """A node id falls outside the declared node range."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but numerically unusable."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class ContractError(RuntimeError):
    """An operation was called outside of its contract."""


class StageError(RuntimeError):
    """A pipeline stage failed; wraps the original exception."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
