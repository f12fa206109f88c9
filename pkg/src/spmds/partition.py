"""Agent grouping and constraint-row subset selection.

Agents (network nodes) are clustered by the similarity of their sensitivity
columns; each group is then assigned a fixed-size subset of constraint rows
(its voltage sub-vector).  All subsets have the uniform size ``H = n - d``
and their union must cover every row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import CoverageError

__all__ = [
    "ClusterResult",
    "GroupingPlan",
    "kmeans_cluster",
    "max_reduction",
    "select_subsets",
    "block_subsets",
    "greedy_subsets",
    "load_plan",
    "save_plan",
]


@dataclass(frozen=True)
class ClusterResult:
    """Outcome of one Lloyd run: centers are columns of shape (m, r)."""

    centers: np.ndarray
    assignment: np.ndarray
    objective: float
    objective_per_sweep: tuple[float, ...]


@dataclass(frozen=True)
class GroupingPlan:
    """Group membership plus per-group constraint-row subsets.

    ``membership[i]`` is the 0-based group of agent ``i + 1`` (for the feeder
    scenarios agents are the network nodes); ``subset_rows[s]`` lists the
    1-based constraint rows monitored by group ``s``, each of the uniform
    length ``n_rows - d``.
    """

    r: int
    membership: np.ndarray
    subset_rows: tuple[tuple[int, ...], ...]
    d: int
    n_rows: int

    def __post_init__(self):
        object.__setattr__(self, "membership", np.asarray(self.membership, dtype=int))
        object.__setattr__(
            self, "subset_rows", tuple(tuple(int(j) for j in rows) for rows in self.subset_rows)
        )
        if self.r < 1:
            raise CoverageError("group count must be at least 1")
        if len(self.subset_rows) != self.r:
            raise CoverageError("one row subset required per group")
        h = self.n_rows - self.d
        for rows in self.subset_rows:
            if len(rows) != h:
                raise CoverageError(
                    f"every subset must have exactly {h} rows, got {len(rows)}"
                )
            if any(not 1 <= j <= self.n_rows for j in rows):
                raise CoverageError("subset row id outside 1..n_rows")
        covered = set().union(*[set(rows) for rows in self.subset_rows])
        if covered != set(range(1, self.n_rows + 1)):
            raise CoverageError("row subsets do not cover all constraint rows")
        if self.membership.min() < 0 or self.membership.max() >= self.r:
            raise CoverageError("membership ids out of range")

    @property
    def subset_size(self) -> int:
        return self.n_rows - self.d

    @property
    def n_agents(self) -> int:
        return self.membership.size

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.membership, minlength=self.r)

    def members(self, group: int) -> np.ndarray:
        """0-based agent indices belonging to ``group``."""
        return np.flatnonzero(self.membership == group)


def kmeans_cluster(
    columns: np.ndarray,
    r: int,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 0.0,
) -> ClusterResult:
    """Lloyd iteration over the columns of ``columns`` (shape (m, n)).

    Seeding is k-means++ driven by ``seed``; assignment ties break toward the
    lowest center index; an emptied center is reseeded from the point
    farthest from its current center.  The recorded per-sweep objective is
    nonincreasing.
    """
    cols = np.asarray(columns, dtype=float)
    if cols.ndim != 2 or cols.shape[1] == 0:
        raise ValueError("columns must be a nonempty (m, n) matrix")
    n = cols.shape[1]
    if not 1 <= r <= n:
        raise ValueError(f"r must lie in [1, {n}]")
    pts = cols.T  # one row per point
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((r, cols.shape[0]))
    first = int(rng.integers(n))
    centers[0] = pts[first]
    closest = np.sum((pts - centers[0]) ** 2, axis=1)
    for k in range(1, r):
        total = closest.sum()
        if total <= 0:
            centers[k] = pts[int(rng.integers(n))]
            continue
        probs = closest / total
        centers[k] = pts[int(rng.choice(n, p=probs))]
        closest = np.minimum(closest, np.sum((pts - centers[k]) ** 2, axis=1))

    assignment = np.zeros(n, dtype=int)
    sweep_objectives: list[float] = []
    for _ in range(max_iters):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assignment = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        for k in range(r):
            mask = assignment == k
            if not np.any(mask):
                far = int(np.argmax(np.min(d2, axis=1)))
                centers[k] = pts[far]
                assignment[far] = k
                mask = assignment == k
            centers[k] = pts[mask].mean(axis=0)
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        objective = float(d2[np.arange(n), assignment].sum())
        if sweep_objectives and sweep_objectives[-1] - objective <= tol:
            sweep_objectives.append(objective)
            break
        sweep_objectives.append(objective)
    return ClusterResult(
        centers=centers.T.copy(),
        assignment=assignment,
        objective=sweep_objectives[-1],
        objective_per_sweep=tuple(sweep_objectives),
    )


def best_of_seeds(
    columns: np.ndarray, r: int, seeds: range | list[int], max_iters: int = 300
) -> ClusterResult:
    """Lowest-objective Lloyd run over several seeds (local optima differ)."""
    best = None
    for seed in seeds:
        res = kmeans_cluster(columns, r, seed=seed, max_iters=max_iters)
        if best is None or res.objective < best.objective:
            best = res
    assert best is not None
    return best


def max_reduction(n: int, r: int) -> int:
    """Largest dimension reduction that still lets r uniform subsets cover n rows.

    ``d = n - ceil(n / r)``; the returned value satisfies ``r (n - d) >= n``
    while ``d + 1`` would not.
    """
    if not 1 <= r <= n:
        raise ValueError(f"r must lie in [1, {n}]")
    return n - math.ceil(n / r)


def _ordered_groups(membership: np.ndarray, r: int) -> list[int]:
    """Groups sorted by their smallest member node id."""
    mins = []
    for s in range(r):
        members = np.flatnonzero(membership == s)
        if members.size == 0:
            raise CoverageError(f"group {s} has no members")
        mins.append((int(members.min()), s))
    return [s for _, s in sorted(mins)]


def block_subsets(
    membership: np.ndarray, d: int, n_rows: int | None = None
) -> tuple[tuple[int, ...], ...]:
    """Consecutive uniform row blocks, one per group in member-id order.

    Block ``s`` covers rows ``s*H + 1 .. s*H + H``; the last block is anchored
    to the end of the row range, which makes the final two subsets overlap by
    ``r*H - n`` rows whenever the cover is not exact.
    """
    membership = np.asarray(membership, dtype=int)
    n = membership.size if n_rows is None else int(n_rows)
    r = int(membership.max()) + 1
    h = n - d
    if r * h < n:
        raise CoverageError(f"r*(n-d) = {r * h} cannot cover {n} rows")
    order = _ordered_groups(membership, r)
    blocks: dict[int, tuple[int, ...]] = {}
    for pos, group in enumerate(order):
        start = pos * h + 1
        if start + h - 1 > n:
            start = n - h + 1
        blocks[group] = tuple(range(start, start + h))
    return tuple(blocks[s] for s in range(r))


def greedy_subsets(
    membership: np.ndarray, sens_matrix: np.ndarray, d: int
) -> tuple[tuple[int, ...], ...]:
    """Per-group top rows by summed member-column sensitivity, then coverage repair.

    Each group independently claims the ``H`` rows where its member columns
    carry the most mass (overlap allowed).  Any row left uncovered is swapped
    into the group most sensitive to it, evicting that group's lowest-scoring
    row that remains covered elsewhere.
    """
    membership = np.asarray(membership, dtype=int)
    sens = np.asarray(sens_matrix, dtype=float)
    n = sens.shape[0]
    r = int(membership.max()) + 1
    h = n - d
    if r * h < n:
        raise CoverageError(f"r*(n-d) = {r * h} cannot cover {n} rows")
    scores = np.zeros((r, n))  # scores[s, j]: mass of group s columns on row j
    for s in range(r):
        cols = np.flatnonzero(membership == s)
        scores[s] = sens[:, cols].sum(axis=1)
    subsets: list[set[int]] = []
    for s in range(r):
        top = np.argsort(-scores[s], kind="stable")[:h]
        subsets.append({int(j) + 1 for j in top})

    def coverage(row: int) -> int:
        return sum(row in sub for sub in subsets)

    uncovered = [j for j in range(1, n + 1) if coverage(j) == 0]
    for row in uncovered:
        by_score = sorted(range(r), key=lambda s: (-scores[s, row - 1], s))
        for s in by_score:
            droppable = [t for t in subsets[s] if coverage(t) >= 2]
            if not droppable:
                continue
            drop = min(droppable, key=lambda t: (scores[s, t - 1], -t))
            subsets[s].remove(drop)
            subsets[s].add(row)
            break
        else:  # unreachable when r*h >= n: some row is always multiply covered
            raise CoverageError(f"cannot repair coverage for row {row}")
    return tuple(tuple(sorted(sub)) for sub in subsets)


def select_subsets(
    cluster: ClusterResult | np.ndarray,
    sens_matrix: np.ndarray,
    d: int,
    rule: str = "blocks",
) -> GroupingPlan:
    """Build a GroupingPlan from a clustering and a sensitivity matrix.

    ``rule="blocks"`` partitions the row range into consecutive uniform
    blocks handed to the groups in node-id order (the published reference
    selection for the bundled feeders); ``rule="greedy"`` assigns each group
    the rows its members are most sensitive to, with a coverage repair pass.
    """
    membership = (
        cluster.assignment if isinstance(cluster, ClusterResult) else np.asarray(cluster)
    )
    membership = np.asarray(membership, dtype=int)
    n = np.asarray(sens_matrix).shape[0]
    r = int(membership.max()) + 1
    if rule == "blocks":
        rows = block_subsets(membership, d, n_rows=n)
    elif rule == "greedy":
        rows = greedy_subsets(membership, np.asarray(sens_matrix), d)
    else:
        raise ValueError(f"unknown subset rule {rule!r}")
    return GroupingPlan(r=r, membership=membership, subset_rows=rows, d=d, n_rows=n)


def save_plan(plan: GroupingPlan, path: str | Path) -> None:
    """Serialize a plan to YAML (1-based member ids, group ids 1..r)."""
    doc = {
        "n_agents": int(plan.n_agents),
        "n_rows": int(plan.n_rows),
        "dimension_reduction": int(plan.d),
        "groups": [
            {
                "id": s + 1,
                "members": [int(i) + 1 for i in plan.members(s)],
                "subset_rows": [int(j) for j in plan.subset_rows[s]],
            }
            for s in range(plan.r)
        ],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_plan(path: str | Path) -> GroupingPlan:
    doc = yaml.safe_load(Path(path).read_text())
    n = int(doc["n_rows"])
    d = int(doc["dimension_reduction"])
    groups = doc["groups"]
    n_agents = int(doc.get("n_agents", n))
    membership = np.full(n_agents, -1, dtype=int)
    rows = []
    for g in sorted(groups, key=lambda g: int(g["id"])):
        s = int(g["id"]) - 1
        for member in g["members"]:
            membership[int(member) - 1] = s
        rows.append(tuple(int(j) for j in g["subset_rows"]))
    if np.any(membership < 0):
        raise CoverageError("plan file leaves some agents without a group")
    return GroupingPlan(
        r=len(groups), membership=membership, subset_rows=tuple(rows), d=d, n_rows=n
    )
