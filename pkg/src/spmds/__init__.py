"""Two-facet scalable decentralized optimization toolkit.

Reduces the constraint dimension of networked multi-agent problems by
clustering agents and assigning each group a fixed-size constraint-row
subset, then solves the coupled problem with a shrunken primal-multi-dual
subgradient engine.  Ships an EV valley-filling scenario on radial feeders
and a traffic congestion scenario, with full-dimension baselines and
analytic operation-count reporting.
"""

from .errors import (
    CoverageError,
    DivergenceError,
    InfeasibleError,
    OracleError,
    SpmdsError,
    TopologyError,
)

__all__ = [
    "CoverageError",
    "DivergenceError",
    "InfeasibleError",
    "OracleError",
    "SpmdsError",
    "TopologyError",
]

__version__ = "0.1.0"
