"""Exception types shared across the toolkit."""


class SpmdsError(Exception):
    """Base class for all toolkit errors."""


class TopologyError(SpmdsError):
    """Network input is not a tree rooted at the slack node."""


class DivergenceError(SpmdsError):
    """An iterative numerical procedure failed to converge."""


class CoverageError(SpmdsError):
    """A grouping plan cannot cover all constraint rows."""


class InfeasibleError(SpmdsError):
    """A local feasible set is empty for the given data."""


class OracleError(SpmdsError):
    """A reference solver failed to reach the requested accuracy."""
