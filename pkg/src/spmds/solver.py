"""Shrunken primal-multi-dual subgradient engine and full-dimension baselines.

The reduced-dimension engine keeps one dual block per agent group, each
living on that group's constraint-row subset; agents download only the
elementwise sum of the blocks.  One round runs

1. broadcast ``lambda_e = sum_s lambda_s`` from the previous round,
2. every agent takes a shrunken projected descent step on its own block
   using the smooth gradient plus the reduced dual pressure,
3. every group takes a shrunken projected ascent step on its dual block
   using the impact-weighted value of its reduced constraint at the new
   primal point.

The shrunken projection ``P(P(tau*x - step*g) / tau)`` pulls iterates toward
the interior of the feasible set; with ``tau = 1`` it reduces to an ordinary
projected step.  Two baselines operate on the full constraint: one with the
same shrunken projections and a single full-dimension dual, and a
regularized variant that subtracts ``kappa * lambda`` from the dual ascent
direction (converging to a biased point) with plain projections.

Progress is measured by ``eps = ||U+ - U|| + sum_s ||lambda_s+ - lambda_s||``
and the loop stops when it falls below a tolerance.  A parameter certificate
evaluates the contraction constants of the engine's Lyapunov analysis, and a
monitor reports the Lyapunov value against a reference solution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .coupled import CoupledProblem
from .errors import DivergenceError

ALGORITHMS = ("spmds", "spds", "rpds")


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes, shrink factors and stopping rule for all engines.

    ``alpha`` may be a scalar or one step per agent; ``beta`` and ``tau_l``
    may be scalars or one value per group.  ``rho`` mirrors the quadratic
    regularization weight of the objective and only feeds the certificate.
    ``dual_cap`` overrides the problem's dual box bound when set.
    """

    alpha: float | np.ndarray
    beta: float | np.ndarray
    tau_u: float = 1.0
    tau_l: float | np.ndarray = 1.0
    rho: float = 0.0
    eps0: float = 1e-6
    max_iters: int = 1000
    dual_cap: float | None = None
    kappa: float = 0.1
    stale_omega: bool = False

    def __post_init__(self):
        # zero steps are admitted so the identity round is expressible
        if np.any(np.asarray(self.alpha) < 0) or np.any(np.asarray(self.beta) < 0):
            raise ValueError("step sizes must be nonnegative")
        for tau in (self.tau_u, self.tau_l):
            arr = np.asarray(tau)
            if np.any(arr <= 0) or np.any(arr > 1):
                raise ValueError("shrink parameters must lie in (0, 1]")
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def alpha_vec(self, v: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.alpha, dtype=float), (v,)).copy()

    def beta_vec(self, r: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.beta, dtype=float), (r,)).copy()

    def tau_l_vec(self, r: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.tau_l, dtype=float), (r,)).copy()


@dataclass(frozen=True)
class IterationState:
    """Primal block, per-group dual blocks, and bookkeeping for one round."""

    U: np.ndarray  # (v, K)
    lams: np.ndarray  # (r, H, K); full-dimension engines use (1, n, K)
    omegas: np.ndarray  # weights used in the round that produced this state
    iteration: int = 0
    eps: float = float("inf")

    @property
    def lambda_e(self) -> np.ndarray:
        return self.lams.sum(axis=0)


def initial_state(problem: CoupledProblem, algorithm: str = "spmds") -> IterationState:
    """Zero duals and the problem's initial primal point."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    U0 = problem.initial_primal()
    if algorithm == "spmds":
        shape = (problem.plan.r, problem.subset_size, problem.block_size)
    else:
        shape = (1, problem.n_rows, problem.block_size)
    return IterationState(
        U=U0, lams=np.zeros(shape), omegas=np.ones(shape), iteration=0
    )


def shrunken_projection(project, tau: float, point: np.ndarray) -> np.ndarray:
    """Double projection ``P(P(point) / tau)`` of a pre-shrunk argument."""
    return project(project(point) / tau)


def convergence_eps(prev: IterationState, new: IterationState) -> float:
    """Primal displacement plus the sum of dual block displacements."""
    eps = float(np.linalg.norm(new.U - prev.U))
    for s in range(prev.lams.shape[0]):
        eps += float(np.linalg.norm(new.lams[s] - prev.lams[s]))
    return eps


def _dual_project(cap: float):
    def project(z: np.ndarray) -> np.ndarray:
        return np.clip(z, 0.0, cap)

    return project


def compute_omegas(state: IterationState, problem: CoupledProblem) -> np.ndarray:
    """Per-group impact weights at the state's primal point."""
    return problem.omegas(state.U)


def spmds_step(
    state: IterationState,
    problem: CoupledProblem,
    config: SolverConfig,
    pool=None,
) -> IterationState:
    """One reduced-dimension round: broadcast, primal descent, dual ascent.

    Agents use the previous round's broadcast dual; the group duals then
    ascend along the impact-weighted reduced constraint evaluated at the new
    primal block (set ``stale_omega`` to weight with the pre-update block).
    """
    v, r = problem.n_agents, problem.plan.r
    alpha = config.alpha_vec(v)[:, None]
    beta = config.beta_vec(r)[:, None, None]
    tau_l = config.tau_l_vec(r)[:, None, None]
    cap = problem.dual_cap if config.dual_cap is None else config.dual_cap
    proj_d = _dual_project(cap)

    lam_e = state.lambda_e
    grad = problem.smooth_gradient(state.U) + problem.reduced_coupling(lam_e)
    z = config.tau_u * state.U - alpha * grad
    U_new = shrunken_projection(problem.project_local, config.tau_u, z)

    omega_point = state.U if config.stale_omega else U_new
    dirs, omegas = problem.dual_directions(omega_point, pool=pool)
    if config.stale_omega:
        # weights frozen pre-update; the constraint load still uses the new block
        own_new = np.stack([problem.group_drop(U_new, s) for s in range(r)])
        offs = np.stack(problem.offset_by_group())
        dirs = omegas * offs + own_new
    zl = tau_l * state.lams + beta * dirs
    lams_new = proj_d(proj_d(zl) / tau_l)

    new = IterationState(
        U=U_new, lams=lams_new, omegas=omegas, iteration=state.iteration + 1
    )
    return replace(new, eps=convergence_eps(state, new))


def _full_dim_step(
    state: IterationState,
    problem: CoupledProblem,
    config: SolverConfig,
    regularized: bool,
) -> IterationState:
    """Single full-dimension dual; shrunken projections unless regularized."""
    v = problem.n_agents
    alpha = config.alpha_vec(v)[:, None]
    beta = float(np.min(config.beta_vec(1)))
    cap = problem.dual_cap if config.dual_cap is None else config.dual_cap
    proj_d = _dual_project(cap)
    tau_u = 1.0 if regularized else config.tau_u
    tau_l = 1.0 if regularized else float(np.min(config.tau_l_vec(1)))

    lam = state.lams[0]
    grad = problem.smooth_gradient(state.U) + problem.full_coupling(lam)
    z = tau_u * state.U - alpha * grad
    U_new = shrunken_projection(problem.project_local, tau_u, z)

    direction = problem.full_violation(U_new)
    if regularized:
        direction = direction - config.kappa * lam
    zl = tau_l * lam + beta * direction
    lam_new = proj_d(proj_d(zl) / tau_l)

    new = IterationState(
        U=U_new,
        lams=lam_new[None],
        omegas=np.ones_like(lam_new[None]),
        iteration=state.iteration + 1,
    )
    return replace(new, eps=convergence_eps(state, new))


def spds_step(
    state: IterationState, problem: CoupledProblem, config: SolverConfig
) -> IterationState:
    """Full-dimension baseline with shrunken projections."""
    return _full_dim_step(state, problem, config, regularized=False)


def rpds_step(
    state: IterationState, problem: CoupledProblem, config: SolverConfig
) -> IterationState:
    """Regularized full-dimension baseline: plain projections, ``-kappa*lam``
    added to the dual ascent direction (reconstruction of the cited method)."""
    return _full_dim_step(state, problem, config, regularized=True)


_STEPS = {"spmds": spmds_step, "spds": spds_step, "rpds": rpds_step}


@dataclass
class RunTrace:
    """Per-iteration record of a solver run plus the final state."""

    algorithm: str
    columns: dict[str, list[float]] = field(default_factory=dict)
    state: IterationState | None = None
    converged: bool = False

    def append(self, **values):
        for key, val in values.items():
            self.columns.setdefault(key, []).append(val)

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()), []))

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name])

    def write_csv(self, path, include_wall: bool = True) -> None:
        names = [c for c in self.columns if include_wall or c != "wall_ms"]
        lines = [",".join(names)]
        for k in range(len(self)):
            lines.append(",".join(_format_cell(self.columns[c][k]) for c in names))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def run(
    problem: CoupledProblem,
    config: SolverConfig,
    algorithm: str = "spmds",
    monitors: dict[str, callable] | None = None,
    start: IterationState | None = None,
    threads: int = 1,
) -> RunTrace:
    """Iterate one engine until ``eps < eps0`` or the iteration budget ends.

    ``monitors`` maps extra trace-column names to callables evaluated on each
    new state.  With ``max_iters = 0`` the trace is empty and the returned
    state is the initial one.  ``threads > 1`` evaluates the independent
    per-group dual blocks concurrently; results are identical to the serial
    path.
    """
    if algorithm not in _STEPS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    step = _STEPS[algorithm]
    state = initial_state(problem, algorithm) if start is None else start
    trace = RunTrace(algorithm=algorithm, state=state)
    pool = None
    if threads > 1 and algorithm == "spmds":
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=threads)
    try:
        for _ in range(config.max_iters):
            t0 = time.perf_counter()
            if pool is not None:
                state = spmds_step(state, problem, config, pool=pool)
            else:
                state = step(state, problem, config)
            wall_ms = (time.perf_counter() - t0) * 1e3
            row = {
                "iter": state.iteration,
                "eps": state.eps,
                "objective": problem.objective(state.U),
                "max_violation": problem.max_violation(state.U),
            }
            for name, fn in (monitors or {}).items():
                row[name] = float(fn(state))
            row["wall_ms"] = wall_ms
            trace.append(**row)
            trace.state = state
            if state.eps < config.eps0:
                trace.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return trace


# -- parameter certificate ---------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    """Contraction constants of the engine's Lyapunov analysis.

    ``feasible`` requires positive strong-monotonicity margins and
    ``mu_lower < 1``; the coefficients ``A`` and ``B`` are evaluated at the
    midpoint of the admissible interval ``(mu_lower, 1)`` and are negative for
    every feasible certificate.  With distinct primal and dual shrink factors
    the analysis additionally needs the smaller-to-larger shrink ratio to
    exceed ``mu``; the bundled checks use equal factors, for which the
    condition is void.
    """

    M: float
    N: float
    Psi: float
    mu_lower: float
    L_phi: float
    L_gradG: float
    L_d: float
    F_U: float
    F_lambda: float
    A: float
    B: float
    feasible: bool


def certificate(problem: CoupledProblem, config: SolverConfig) -> Certificate:
    """Evaluate the convergence certificate for the reduced-dimension engine.

    Heterogeneous step sizes are handled by evaluating every constant at its
    worst corner of ``[alpha_min, alpha_max] x [beta_min, beta_max]``.
    Infeasibility (nonpositive margins or ``mu_lower >= 1``) is reported in
    the ``feasible`` flag, not raised.
    """
    alphas = config.alpha_vec(problem.n_agents)
    betas = config.beta_vec(problem.plan.r)
    tau_ls = config.tau_l_vec(problem.plan.r)
    tau_u = float(config.tau_u)
    tau_l_lo, tau_l_hi = float(tau_ls.min()), float(tau_ls.max())
    a_lo, a_hi = float(alphas.min()), float(alphas.max())
    b_lo, b_hi = float(betas.min()), float(betas.max())
    if a_lo <= 0 or b_lo <= 0:
        raise ValueError("certificate needs strictly positive step sizes")
    rho = float(config.rho)
    r = problem.plan.r
    hk = problem.subset_size * problem.block_size

    L_gradG = float(problem.smooth_gradient_lipschitz())
    L_d = hk * problem.constraint_row_norm_max()

    def corners(fn):
        return [fn(a, b, t) for a in (a_lo, a_hi) for b in (b_lo, b_hi)
                for t in (tau_l_lo, tau_l_hi)]

    M = max(corners(lambda a, b, t: a * a * b * b / tau_u**2 - b * b))
    N = max(corners(lambda a, b, t: a * a * b * b / t**2 - a * a))
    Psi = max(corners(lambda a, b, t: max(a * a * b * b / tau_u**2, a * a * b * b / t**2)))
    L_U = max(
        rho + abs(1.0 - tau_u / a) + L_gradG + r * L_d for a in (a_lo, a_hi)
    )
    L_lam = max(
        abs(1.0 - t / b) + L_d for b in (b_lo, b_hi) for t in (tau_l_lo, tau_l_hi)
    )
    L_phi = float(np.hypot(L_U, L_lam))
    F_U = rho + (a_lo - tau_u) / a_lo
    F_lambda = (b_lo - tau_l_hi) / b_lo

    if F_U > 0 and F_lambda > 0:
        mu_lower = max(
            (M + Psi * L_phi**2) / (2 * Psi * F_U),
            (N + Psi * L_phi**2) / (2 * Psi * F_lambda),
        )
    else:
        mu_lower = float("inf")
    feasible = F_U > 0 and F_lambda > 0 and mu_lower < 1.0
    mu = (mu_lower + 1.0) / 2.0 if np.isfinite(mu_lower) else float("inf")
    if np.isfinite(mu):
        A = M + Psi * L_phi**2 - 2 * mu * Psi * F_U
        B = N + Psi * L_phi**2 - 2 * mu * Psi * F_lambda
    else:
        A = B = float("inf")
    return Certificate(
        M=M, N=N, Psi=Psi, mu_lower=mu_lower, L_phi=L_phi, L_gradG=L_gradG,
        L_d=L_d, F_U=F_U, F_lambda=F_lambda, A=A, B=B, feasible=feasible,
    )


def lyapunov(
    state: IterationState,
    reference: IterationState,
    alpha: float,
    beta: float,
) -> float:
    """``beta^2 ||U - U*||^2 + alpha^2 sum_s ||lambda_s - lambda_s*||^2``."""
    val = beta**2 * float(np.sum((state.U - reference.U) ** 2))
    val += alpha**2 * float(np.sum((state.lams - reference.lams) ** 2))
    return val


def lyapunov_monitor(reference: IterationState, alpha: float, beta: float):
    """Monitor callable for :func:`run` measuring against a fixed reference."""

    def monitor(state: IterationState) -> float:
        return lyapunov(state, reference, alpha, beta)

    return monitor


def tune_step_sizes(
    problem: CoupledProblem,
    config: SolverConfig,
    algorithm: str = "spmds",
    grow: float = 2.0,
    probe_iters: int = 40,
    max_rounds: int = 12,
) -> SolverConfig:
    """Geometrically grow both step sizes until divergence, then back off.

    A probe run diverges when its displacement measure grows over the probe
    window (or turns non-finite); the last step sizes before the detector
    fired are returned.
    """
    good = config
    for _ in range(max_rounds):
        candidate = replace(
            good,
            alpha=np.asarray(good.alpha) * grow,
            beta=np.asarray(good.beta) * grow,
        )
        probe = replace(candidate, max_iters=probe_iters, eps0=1e-300)
        try:
            trace = run(problem, probe, algorithm)
        except (FloatingPointError, DivergenceError):
            return good
        eps = trace.column("eps")
        if not np.all(np.isfinite(eps)):
            return good
        window = max(2, probe_iters // 4)
        if eps[-window:].mean() > eps[:window].mean():
            return good
        good = candidate
    return good
