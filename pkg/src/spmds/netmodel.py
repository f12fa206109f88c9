"""Radial distribution network model.

Holds the feeder topology, builds the voltage-to-power sensitivity matrices
from root-path intersections, evaluates the linearized power flow, and
provides a nonlinear branch-flow sweep used as an accuracy oracle for the
linearization.

Conventions: node 0 is the slack bus and is never stored explicitly; nodes
are numbered 1..n and arrays are indexed by ``node_id - 1``.  Impedances are
in ohm, powers in watt / var, and voltages are handled as squared magnitudes
in volt^2.  Reporting in per unit divides magnitudes by the slack voltage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import DivergenceError, TopologyError


@dataclass(frozen=True)
class RadialNetwork:
    """Radial feeder given as a parent array.

    ``parent[i]`` is the upstream node of node ``i + 1`` (0 means the slack
    bus), ``line_resistance[i]`` / ``line_reactance[i]`` describe the line
    from node ``i + 1`` to its parent.
    """

    parent: np.ndarray
    line_resistance: np.ndarray
    line_reactance: np.ndarray
    slack_voltage: float

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=int)
        r = np.asarray(self.line_resistance, dtype=float)
        x = np.asarray(self.line_reactance, dtype=float)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "line_resistance", r)
        object.__setattr__(self, "line_reactance", x)
        n = parent.size
        if r.shape != (n,) or x.shape != (n,):
            raise TopologyError("parent, resistance and reactance lengths differ")
        if n == 0:
            raise TopologyError("network must contain at least one node")
        if self.slack_voltage <= 0:
            raise TopologyError("slack voltage must be positive")
        if np.any(r < 0) or np.any(x < 0):
            raise TopologyError("line impedances must be nonnegative")
        if np.any(parent < 0) or np.any(parent > n):
            raise TopologyError("parent ids must lie in 0..n")
        # Every node must reach the slack bus without revisiting a node.
        for node in range(1, n + 1):
            seen = set()
            cur = node
            while cur != 0:
                if cur in seen:
                    raise TopologyError(f"cycle detected at node {node}")
                seen.add(cur)
                cur = int(parent[cur - 1])
                if len(seen) > n:
                    raise TopologyError(f"node {node} does not reach the slack bus")

    @property
    def node_count(self) -> int:
        return self.parent.size

    def children(self, node: int) -> list[int]:
        """Ids of the nodes directly downstream of ``node`` (0 = slack)."""
        return [i + 1 for i in range(self.node_count) if self.parent[i] == node]

    def root_path(self, node: int) -> list[int]:
        """Line ids (= downstream node ids) on the path from ``node`` to the slack."""
        path = []
        cur = node
        while cur != 0:
            path.append(cur)
            cur = int(self.parent[cur - 1])
        return path

    def depth_order(self) -> list[int]:
        """Node ids sorted by increasing distance (in hops) from the slack."""
        depth = {0: 0}
        out = []
        for node in range(1, self.node_count + 1):
            d = len(self.root_path(node))
            depth[node] = d
            out.append(node)
        out.sort(key=lambda v: depth[v])
        return out


@dataclass(frozen=True)
class SensitivityMatrices:
    """Symmetric nonnegative matrices mapping nodal power to squared-voltage drop."""

    R: np.ndarray
    X: np.ndarray


@dataclass(frozen=True)
class LoadProfile:
    """Per-node consumption at one time index (positive = load)."""

    P: np.ndarray
    Q: np.ndarray
    T: int = 0

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        if self.P.shape != self.Q.shape:
            raise ValueError("P and Q lengths differ")


def build_sensitivity(net: RadialNetwork) -> SensitivityMatrices:
    """Entry (i, j) is the impedance of the common root path of nodes i and j.

    Computed by intersecting the root paths explicitly; tests check the
    result against the path-incidence product ``B diag(r) B^T``.
    """
    n = net.node_count
    paths = [frozenset(net.root_path(i + 1)) for i in range(n)]
    r = net.line_resistance
    x = net.line_reactance
    R = np.zeros((n, n))
    X = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            shared = paths[i] & paths[j]
            rsum = sum(r[e - 1] for e in shared)
            xsum = sum(x[e - 1] for e in shared)
            R[i, j] = R[j, i] = rsum
            X[i, j] = X[j, i] = xsum
    return SensitivityMatrices(R=R, X=X)


def lindistflow_voltages(
    net: RadialNetwork, sens: SensitivityMatrices, load: LoadProfile
) -> np.ndarray:
    """Squared voltage magnitudes under the loss-free linearized branch flow.

    Returns ``V0^2 * 1 - 2 R P - 2 X Q`` (volt^2).
    """
    n = net.node_count
    if load.P.shape != (n,):
        raise ValueError(f"load length {load.P.shape} does not match n={n}")
    v0sq = net.slack_voltage**2
    return v0sq * np.ones(n) - 2.0 * sens.R @ load.P - 2.0 * sens.X @ load.Q


def distflow_solve(
    net: RadialNetwork,
    load: LoadProfile,
    tol: float = 1e-10,
    max_sweeps: int = 200,
) -> np.ndarray:
    """Squared voltages from the full branch equations including loss terms.

    Backward-forward sweep from a flat start: the backward pass accumulates
    branch flows (plus the I^2 losses of the previous sweep), the forward
    pass propagates voltage drops from the slack bus.  Stops when the
    relative squared-voltage update falls below ``tol``.

    Raises
    ------
    DivergenceError
        If the sweep does not settle within ``max_sweeps`` or a squared
        voltage becomes nonpositive (overloaded feeder).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = net.node_count
    if load.P.shape != (n,):
        raise ValueError(f"load length {load.P.shape} does not match n={n}")
    v0sq = net.slack_voltage**2
    order = net.depth_order()
    children = {node: net.children(node) for node in range(0, n + 1)}
    r = net.line_resistance
    x = net.line_reactance

    v2 = np.full(n, v0sq)
    i2 = np.zeros(n)
    for _ in range(max_sweeps):
        # backward: accumulate branch flows, re-injecting previous-sweep losses
        p_br = np.zeros(n)
        q_br = np.zeros(n)
        for node in reversed(order):
            k = node - 1
            p_br[k] = load.P[k] + r[k] * i2[k]
            q_br[k] = load.Q[k] + x[k] * i2[k]
            for c in children[node]:
                p_br[k] += p_br[c - 1]
                q_br[k] += q_br[c - 1]
        # forward: drop voltages from the slack bus down the tree
        v2_new = np.empty(n)
        for node in order:
            k = node - 1
            up = v0sq if net.parent[k] == 0 else v2_new[int(net.parent[k]) - 1]
            v2_new[k] = up - 2.0 * (r[k] * p_br[k] + x[k] * q_br[k]) + (
                r[k] ** 2 + x[k] ** 2
            ) * i2[k]
        if np.any(v2_new <= 0):
            raise DivergenceError("squared voltage collapsed; feeder overloaded")
        residual = float(np.max(np.abs(v2_new - v2)) / v0sq)
        v2 = v2_new
        sending = np.array(
            [v0sq if net.parent[k] == 0 else v2[int(net.parent[k]) - 1] for k in range(n)]
        )
        i2 = (p_br**2 + q_br**2) / sending
        if residual < tol:
            return v2
    raise DivergenceError(f"no fixed point after {max_sweeps} sweeps")


def voltages_pu(squared_volts: np.ndarray, slack_voltage: float) -> np.ndarray:
    """Per-unit voltage magnitudes from squared volt^2 values."""
    return np.sqrt(np.maximum(squared_volts, 0.0)) / slack_voltage


def load_network(path: str | Path) -> RadialNetwork:
    """Read a feeder description from a YAML document.

    Schema::

        slack_voltage_v: 4160.0
        nodes:
          - {id: 1, parent: 0, r_ohm: 0.04, x_ohm: 0.08}
          ...

    Node ids must be exactly 1..n; the loader rejects cyclic or disconnected
    parent relations.
    """
    doc = yaml.safe_load(Path(path).read_text())
    try:
        nodes = doc["nodes"]
        v0 = float(doc["slack_voltage_v"])
    except (KeyError, TypeError) as exc:
        raise TopologyError(f"malformed network file {path}: {exc}") from exc
    ids = sorted(int(row["id"]) for row in nodes)
    n = len(nodes)
    if ids != list(range(1, n + 1)):
        raise TopologyError("node ids must be exactly 1..n")
    parent = np.zeros(n, dtype=int)
    r = np.zeros(n)
    x = np.zeros(n)
    for row in nodes:
        k = int(row["id"]) - 1
        parent[k] = int(row["parent"])
        r[k] = float(row["r_ohm"])
        x[k] = float(row["x_ohm"])
    return RadialNetwork(
        parent=parent, line_resistance=r, line_reactance=x, slack_voltage=v0
    )


def save_network(net: RadialNetwork, path: str | Path) -> None:
    """Write a feeder to the YAML schema understood by :func:`load_network`."""
    doc = {
        "slack_voltage_v": float(net.slack_voltage),
        "nodes": [
            {
                "id": i + 1,
                "parent": int(net.parent[i]),
                "r_ohm": float(net.line_resistance[i]),
                "x_ohm": float(net.line_reactance[i]),
            }
            for i in range(net.node_count)
        ],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))
