"""EV valley-filling scenario on a radial feeder.

Each EV owns a normalized charging-rate profile over a fixed horizon and
must hit an exact energy target; the fleet couples through the aggregate
demand curve (whose squared norm is the objective) and through the nodal
voltage floor expressed with the feeder's sensitivity matrices.  The
scenario is packaged as a :class:`~spmds.coupled.CoupledProblem` so the
subgradient engines can run it unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.interpolate import PchipInterpolator

from .coupled import DUAL_CAP_DEFAULT, CoupledProblem
from .errors import InfeasibleError
from .netmodel import RadialNetwork, SensitivityMatrices
from .partition import GroupingPlan

# Overnight demand shape: (hour, fraction of peak), evening peak to morning
# rebound.  Hours continue past 24 into the next day.
VALLEY_ANCHORS = (
    (19.0, 0.95),
    (21.0, 1.00),
    (24.0, 0.72),
    (27.0, 0.45),
    (29.0, 0.50),
    (32.0, 0.80),
)


@dataclass(frozen=True)
class EV:
    """One charger: attachment node, rating, efficiency, remaining energy (J)."""

    node: int
    pmax: float
    eta: float
    energy_need: float

    def __post_init__(self):
        if self.pmax <= 0:
            raise ValueError("maximum charging power must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("charging efficiency must lie in (0, 1]")
        if self.energy_need < 0:
            raise ValueError("energy need must be nonnegative")

    def max_slot_energy(self, dt: float) -> float:
        """Energy delivered by one full-rate slot of length ``dt`` seconds."""
        return self.eta * dt * self.pmax


@dataclass(frozen=True)
class Horizon:
    """Fixed service window of ``K`` slots of ``dt`` seconds each."""

    K: int
    dt: float
    start: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("horizon needs at least one slot")
        if self.dt <= 0:
            raise ValueError("slot length must be positive")


def required_slot_sum(ev: EV, horizon: Horizon) -> float:
    """Sum of normalized rates that exactly meets the EV's energy need."""
    return ev.energy_need / ev.max_slot_energy(horizon.dt)


class ValleyFillingProblem(CoupledProblem):
    """Valley-filling fleet dispatch under a nodal voltage floor.

    Objective: ``0.5 * ||P_b + sum_i pmax_i U_i||^2 + 0.5 * rho * ||U||^2``
    where ``P_b`` is the aggregate baseline (W) per slot.  Constraint rows are
    the feeder nodes; the constraint matrix column of EV ``i`` is twice the
    resistance-sensitivity column of its node scaled by its rating, and the
    offset encodes how far each nodal squared voltage sits above the floor
    under baseline load alone.
    """

    def __init__(
        self,
        network: RadialNetwork,
        sens: SensitivityMatrices,
        plan: GroupingPlan,
        evs: list[EV],
        horizon: Horizon,
        baseline_nodal_p: np.ndarray,
        baseline_nodal_q: np.ndarray | None = None,
        rho: float = 0.0,
        vmin_pu: float = 0.954,
        dual_cap: float = DUAL_CAP_DEFAULT,
    ):
        n = network.node_count
        pb_nodal = np.asarray(baseline_nodal_p, dtype=float)
        if pb_nodal.shape != (n, horizon.K):
            raise ValueError("nodal baseline must have shape (n, K)")
        qb_nodal = (
            np.zeros_like(pb_nodal)
            if baseline_nodal_q is None
            else np.asarray(baseline_nodal_q, dtype=float)
        )
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        for idx, ev in enumerate(evs):
            if not 1 <= ev.node <= n:
                raise ValueError(f"EV {idx + 1} attached to unknown node {ev.node}")
            s = required_slot_sum(ev, horizon)
            if s > horizon.K:
                raise InfeasibleError(
                    f"EV {idx + 1} at node {ev.node} needs {s:.2f} full-rate "
                    f"slots but the horizon has only {horizon.K}"
                )

        pmax = np.array([ev.pmax for ev in evs])
        nodes = np.array([ev.node - 1 for ev in evs])
        D = 2.0 * sens.R[:, nodes] * pmax[None, :]

        v0sq = network.slack_voltage**2
        v_b = 2.0 * sens.R @ pb_nodal + 2.0 * sens.X @ qb_nodal  # (n, K)
        v_c = v0sq - v_b
        y_b = vmin_pu**2 * v0sq - v_c

        # chargers inherit their node's group; the plan's membership is nodal
        ev_plan = GroupingPlan(
            r=plan.r,
            membership=plan.membership[nodes],
            subset_rows=plan.subset_rows,
            d=plan.d,
            n_rows=plan.n_rows,
        )
        super().__init__(D, y_b, ev_plan, dual_cap=dual_cap)
        self.node_plan = plan
        self.network = network
        self.sens = sens
        self.evs = list(evs)
        self.horizon = horizon
        self.pmax = pmax
        self.rho = float(rho)
        self.vmin_pu = float(vmin_pu)
        self.baseline_nodal_p = pb_nodal
        self.baseline_nodal_q = qb_nodal
        self.baseline_aggregate = pb_nodal.sum(axis=0)  # (K,) watts
        self.slot_sums = np.array([required_slot_sum(ev, horizon) for ev in evs])
        self.baseline_voltage_sq = v_c  # (n, K) squared volts

    # -- objective --------------------------------------------------------
    def total_load(self, U: np.ndarray) -> np.ndarray:
        """(K,) aggregate demand in watts: baseline plus fleet charging."""
        return self.baseline_aggregate + self.pmax @ U

    def objective(self, U: np.ndarray) -> float:
        quad = 0.5 * float(np.sum(self.total_load(U) ** 2))
        return quad + 0.5 * self.rho * float(np.sum(U**2))

    def smooth_gradient(self, U: np.ndarray) -> np.ndarray:
        return np.outer(self.pmax, self.total_load(U)) + self.rho * U

    def smooth_gradient_lipschitz(self) -> float:
        # analysis constant n*K*max(pmax^2); the max ranges over every agent
        return self.n_rows * self.block_size * float(np.max(self.pmax**2))

    # -- local feasible sets ------------------------------------------------
    def project_local(self, U: np.ndarray) -> np.ndarray:
        """Project every EV row onto ``{0 <= u <= 1, sum(u) = slot_sum}``.

        Box-clipped shift ``clip(u + theta, 0, 1)`` with the scalar shift
        found by bisection; the energy equality holds to far better than
        1e-10 relative.
        """
        return project_box_energy(U, self.slot_sums)

    def initial_primal(self) -> np.ndarray:
        """Feasible start: each EV spreads its energy uniformly."""
        return self.project_local(np.zeros((self.n_agents, self.block_size)))

    # -- reporting ----------------------------------------------------------
    def voltage_violation(self, U: np.ndarray) -> np.ndarray:
        """(n, K) voltage-floor slack in volt^2; nonpositive means satisfied."""
        return self.full_violation(U)

    def voltages_pu(self, U: np.ndarray) -> np.ndarray:
        """(n, K) per-unit voltage magnitudes under baseline plus charging."""
        v_sq = self.baseline_voltage_sq - self.constraint_matrix @ U
        return np.sqrt(np.maximum(v_sq, 0.0)) / self.network.slack_voltage

    def energy_residuals(self, U: np.ndarray) -> np.ndarray:
        """Relative energy-equality mismatch per EV."""
        got = U.sum(axis=1)
        return (got - self.slot_sums) / np.maximum(self.slot_sums, 1.0)


def project_box_energy(Z: np.ndarray, slot_sums: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``Z`` onto its box-plus-budget set.

    Solves ``min ||u - z||`` s.t. ``0 <= u <= 1`` and ``sum(u) = s`` for each
    row via bisection on the shift of ``clip(z + theta, 0, 1)``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    s = np.broadcast_to(np.asarray(slot_sums, dtype=float), (Z.shape[0],))
    K = Z.shape[1]
    if np.any(s < 0) or np.any(s > K):
        bad = int(np.flatnonzero((s < 0) | (s > K))[0])
        raise InfeasibleError(
            f"energy target {s[bad]:.4f} slots outside [0, {K}] for agent {bad + 1}"
        )
    lo = -Z.max(axis=1) - 1.0
    hi = 1.0 - Z.min(axis=1) + 1.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        g = np.clip(Z + mid[:, None], 0.0, 1.0).sum(axis=1) - s
        too_low = g < 0
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    theta = 0.5 * (lo + hi)
    return np.clip(Z + theta[:, None], 0.0, 1.0)


def stack_horizon(
    problem: ValleyFillingProblem,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Materialize the stacked per-EV reduced blocks and per-group offsets.

    Returns ``(blocks, offsets)`` where ``blocks[i]`` is the (H*K, K)
    block-diagonal matrix repeating EV ``i``'s reduced constraint column once
    per slot, and ``offsets[s]`` is group ``s``'s stacked (H*K,) offset.
    Slot blocks are consecutive (column-major flattening of (H, K) arrays).
    The engines use the factored forms; this view exists for inspection and
    tests of the stacking itself.
    """
    plan = problem.plan
    h, k = problem.subset_size, problem.block_size
    blocks = []
    for i in range(problem.n_agents):
        rows = np.asarray(plan.subset_rows[plan.membership[i]], dtype=int) - 1
        col = problem.constraint_matrix[rows, i]
        block = np.zeros((h * k, k))
        for t in range(k):
            block[t * h : (t + 1) * h, t] = col
        blocks.append(block)
    offsets = [off.flatten(order="F") for off in problem.offset_by_group()]
    return blocks, offsets


def valley_baseline(
    horizon: Horizon,
    peak_w: float,
    start_hour: float = 19.0,
    anchors=VALLEY_ANCHORS,
) -> np.ndarray:
    """(K,) synthetic overnight demand curve in watts.

    Monotone cubic interpolation through the anchor fractions of ``peak_w``,
    sampled at slot midpoints from ``start_hour``.
    """
    hours, fracs = zip(*anchors)
    shape = PchipInterpolator(np.asarray(hours), np.asarray(fracs))
    t = start_hour + (np.arange(horizon.K) + 0.5) * horizon.dt / 3600.0
    return peak_w * shape(np.clip(t, hours[0], hours[-1]))


def spread_baseline(
    total_w: np.ndarray, weights: np.ndarray, power_factor: float = 0.95
) -> tuple[np.ndarray, np.ndarray]:
    """Distribute an aggregate curve over nodes; returns nodal (P, Q)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative and not all zero")
    w = w / w.sum()
    p_nodal = np.outer(w, np.asarray(total_w, dtype=float))
    q_nodal = p_nodal * np.tan(np.arccos(power_factor))
    return p_nodal, q_nodal


def uncontrolled_profile(problem: ValleyFillingProblem) -> np.ndarray:
    """Plug-in-and-charge counterfactual: full rate from the first slot.

    Each EV charges at rate 1 until its energy need is met, with one
    fractional slot at the boundary.
    """
    U = np.zeros((problem.n_agents, problem.block_size))
    for i, s in enumerate(problem.slot_sums):
        full = int(np.floor(s))
        U[i, :full] = 1.0
        if full < problem.block_size:
            U[i, full] = s - full
    return U


def sample_fleet(
    nodes: list[int],
    evs_per_node: int,
    rng: np.random.Generator,
    pmax_w: float = 6600.0,
    eta: float = 0.9,
    soc_need_range: tuple[float, float] = (0.2, 0.6),
    capacity_j: float = 40.0 * 3.6e6,
) -> list[EV]:
    """Fleet with seeded uniform state-of-charge needs at the given nodes."""
    lo, hi = soc_need_range
    evs = []
    for node in nodes:
        for _ in range(evs_per_node):
            frac = float(rng.uniform(lo, hi))
            evs.append(
                EV(node=node, pmax=pmax_w, eta=eta, energy_need=frac * capacity_j)
            )
    return evs


def save_fleet(evs: list[EV], path: str | Path, capacity_j: float | None = None) -> None:
    """Write a fleet listing; needs are stored as fractions of ``capacity_j``."""
    cap = capacity_j if capacity_j is not None else max(ev.energy_need for ev in evs)
    rows = [
        {
            "node": int(ev.node),
            "pmax_kw": float(ev.pmax / 1e3),
            "eta": float(ev.eta),
            "soc_need_fraction": float(ev.energy_need / cap),
            "capacity_kwh": float(cap / 3.6e6),
        }
        for ev in evs
    ]
    Path(path).write_text(yaml.safe_dump({"evs": rows}, sort_keys=False))


def load_fleet(path: str | Path) -> list[EV]:
    doc = yaml.safe_load(Path(path).read_text())
    evs = []
    for row in doc["evs"]:
        cap_j = float(row["capacity_kwh"]) * 3.6e6
        evs.append(
            EV(
                node=int(row["node"]),
                pmax=float(row["pmax_kw"]) * 1e3,
                eta=float(row["eta"]),
                energy_need=float(row["soc_need_fraction"]) * cap_j,
            )
        )
    return evs
