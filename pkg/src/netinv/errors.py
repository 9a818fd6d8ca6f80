"""Error taxonomy shared across the package."""


class NetinvError(Exception):
    pass


class ShapeError(NetinvError):
    """Tensor dimensions incompatible with the requested operation."""


class ContractError(NetinvError):
    """An API precondition or internal contract was violated."""


class DomainError(NetinvError):
    """Argument value outside its documented domain."""


class FormatError(NetinvError):
    """Malformed on-disk data (bad magic, truncation, CRC mismatch)."""


class ConfigError(NetinvError):
    """Invalid run configuration; message lists every offending key."""


class ConvergenceError(NetinvError):
    """Iterative routine failed to converge within its iteration budget."""

    def __init__(self, msg, iterations=None):
        super().__init__(msg)
        self.iterations = iterations


class DivergenceError(NetinvError):
    """Training collapsed below chance level; carries a diagnostic report."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report
