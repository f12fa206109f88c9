"""Coupled-problem interface consumed by the subgradient engines.

A problem couples ``v`` agents, each owning a decision block of ``K`` slots
in ``[0, 1]``-like local sets, through a smooth objective and the affine
constraint ``Y_b + D @ U <= 0`` applied slot by slot, where ``D`` is a
nonnegative (n_rows, v) matrix and ``Y_b`` an (n_rows, K) offset.  A
:class:`~spmds.partition.GroupingPlan` attaches each agent to one of ``r``
groups and gives every group a uniform subset of constraint rows; the
machinery for reduced constraint maps, per-group impact weights, and dual
ascent directions lives here so concrete scenarios only supply the
objective, its gradient, and the local projection.

Shapes used throughout: primal ``U`` is (v, K); each group's dual block is
(H, K) with ``H = n_rows - d``; stacked vectors order slot blocks
consecutively (column-major flattening of the (H, K) arrays).
"""

from __future__ import annotations

import abc

import numpy as np

from .partition import GroupingPlan

DUAL_CAP_DEFAULT = 1e12  # finite box keeping the dual projection well defined


class CoupledProblem(abc.ABC):
    """Base class wiring a grouping plan to the affine network constraint."""

    def __init__(
        self,
        constraint_matrix: np.ndarray,
        constraint_offset: np.ndarray,
        plan: GroupingPlan,
        dual_cap: float = DUAL_CAP_DEFAULT,
    ):
        D = np.asarray(constraint_matrix, dtype=float)
        Yb = np.asarray(constraint_offset, dtype=float)
        if Yb.ndim == 1:
            Yb = Yb[:, None]
        if D.ndim != 2 or Yb.shape[0] != D.shape[0]:
            raise ValueError("constraint matrix and offset row counts differ")
        if np.any(D < 0):
            raise ValueError("constraint matrix must be nonnegative")
        if plan.n_rows != D.shape[0]:
            raise ValueError("plan row count does not match constraint matrix")
        if plan.n_agents != D.shape[1]:
            raise ValueError("plan agent count does not match constraint matrix")
        self.constraint_matrix = D
        self.constraint_offset = Yb
        self.plan = plan
        self.dual_cap = float(dual_cap)
        # per-group 0-based row indices and member indices
        self._rows = [np.asarray(rows, dtype=int) - 1 for rows in plan.subset_rows]
        self._members = [plan.members(s) for s in range(plan.r)]
        self._reduced = [D[rows] for rows in self._rows]  # (H, v) per group

    # -- dimensions -------------------------------------------------------
    @property
    def n_agents(self) -> int:
        return self.constraint_matrix.shape[1]

    @property
    def n_rows(self) -> int:
        return self.constraint_matrix.shape[0]

    @property
    def block_size(self) -> int:
        return self.constraint_offset.shape[1]

    @property
    def subset_size(self) -> int:
        return self.plan.subset_size

    # -- scenario-specific surface ----------------------------------------
    @abc.abstractmethod
    def objective(self, U: np.ndarray) -> float: ...

    @abc.abstractmethod
    def smooth_gradient(self, U: np.ndarray) -> np.ndarray:
        """Gradient of the smooth objective, agent block i in row i."""

    @abc.abstractmethod
    def project_local(self, U: np.ndarray) -> np.ndarray:
        """Euclidean projection of every agent block onto its local set."""

    @abc.abstractmethod
    def initial_primal(self) -> np.ndarray: ...

    def smooth_gradient_lipschitz(self) -> float:
        """Lipschitz bound on the smooth gradient, used by the certificate."""
        raise NotImplementedError

    # -- reduced constraint machinery --------------------------------------
    def offset_by_group(self) -> list[np.ndarray]:
        """Per-group (H, K) restriction of the constraint offset."""
        return [self.constraint_offset[rows] for rows in self._rows]

    def group_drop(self, U: np.ndarray, s: int) -> np.ndarray:
        """(H, K) constraint load of group ``s`` members on its own rows."""
        members = self._members[s]
        return self._reduced[s][:, members] @ U[members]

    def total_drop(self, U: np.ndarray, s: int) -> np.ndarray:
        """(H, K) constraint load of all agents on group ``s`` rows."""
        return self._reduced[s] @ U

    def omegas(self, U: np.ndarray) -> np.ndarray:
        """(r, H, K) per-group share of total constraint impact.

        Elementwise ratio of own-group load to all-agent load on the group's
        rows; entries where nothing loads the row are set to 1.
        """
        out = np.empty((self.plan.r, self.subset_size, self.block_size))
        for s in range(self.plan.r):
            num = self.group_drop(U, s)
            den = self.total_drop(U, s)
            out[s] = np.divide(num, den, out=np.ones_like(num), where=den > 0)
        return out

    def dual_directions(
        self, U: np.ndarray, pool=None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Reduced dual ascent directions and the weights used.

        Returns ``(dirs, omegas)`` where ``dirs[s] = omega_s * Y_bs +
        (own-group load)``, the impact-weighted value of the reduced
        constraint at ``U``.  Group blocks are independent; ``pool`` may
        evaluate them concurrently (results are assembled positionally, so
        the outcome does not depend on execution order).
        """
        r, h, k = self.plan.r, self.subset_size, self.block_size
        dirs = np.empty((r, h, k))
        omegas = np.empty((r, h, k))

        def one(s: int):
            own = self.group_drop(U, s)
            den = self.total_drop(U, s)
            om = np.divide(own, den, out=np.ones_like(own), where=den > 0)
            return om, om * self.constraint_offset[self._rows[s]] + own

        results = pool.map(one, range(r)) if pool is not None else map(one, range(r))
        for s, (om, direction) in enumerate(results):
            omegas[s] = om
            dirs[s] = direction
        return dirs, omegas

    def reduced_coupling(self, lam_e: np.ndarray) -> np.ndarray:
        """(v, K) primal dual-pressure term from the broadcast dual.

        Agent ``i`` in group ``s`` receives ``D_red_s[:, i]^T @ lam_e`` where
        ``lam_e`` is the (H, K) sum of all group duals.
        """
        out = np.empty((self.n_agents, self.block_size))
        for s in range(self.plan.r):
            members = self._members[s]
            out[members] = (lam_e.T @ self._reduced[s][:, members]).T
        return out

    def full_coupling(self, lam: np.ndarray) -> np.ndarray:
        """(v, K) primal dual-pressure for a full-dimension dual (n_rows, K)."""
        return (lam.T @ self.constraint_matrix).T

    def full_violation(self, U: np.ndarray) -> np.ndarray:
        """(n_rows, K) value of the full constraint; nonpositive is feasible."""
        return self.constraint_offset + self.constraint_matrix @ U

    def max_violation(self, U: np.ndarray) -> float:
        return float(self.full_violation(U).max())

    def constraint_row_norm_max(self) -> float:
        """Largest 2-norm over the reduced constraint rows (all groups)."""
        return max(
            float(np.linalg.norm(red, axis=1).max()) for red in self._reduced
        )
