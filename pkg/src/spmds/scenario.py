"""Scenario files: ingestion, validation, and problem assembly.

A scenario is a YAML document selecting either the EV feeder pipeline or a
traffic instance, with grouping parameters, solver settings, and one seed
that drives every random choice (clustering restarts and fleet sampling).
Relative paths inside a scenario resolve against the scenario file's
directory.  The full schema is documented in the repository README.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import fleet as fleet_mod
from . import netmodel, partition, traffic
from .coupled import DUAL_CAP_DEFAULT
from .errors import SpmdsError
from .fleet import Horizon, ValleyFillingProblem
from .solver import SolverConfig

KMEANS_RESTARTS = 16


def data_path(name: str) -> Path:
    """Path to a bundled data file (feeders, reference scenarios)."""
    return Path(importlib.resources.files("spmds") / "data" / name)


@dataclass
class ScenarioConfig:
    """Parsed scenario document plus its base directory."""

    kind: str
    raw: dict
    base_dir: Path
    seed: int = 0
    solver: dict = field(default_factory=dict)

    def resolve(self, name: str) -> Path:
        """Resolve a file reference against the scenario directory, falling
        back to the bundled data directory."""
        p = Path(name)
        if p.is_absolute():
            return p
        local = self.base_dir / p
        if local.exists():
            return local
        bundled = data_path(name)
        if bundled.exists():
            return bundled
        raise SpmdsError(f"referenced file not found: {name}")


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict) or "kind" not in doc:
        raise SpmdsError(f"scenario {path} must be a mapping with a 'kind' key")
    kind = str(doc["kind"])
    if kind not in ("ev", "traffic"):
        raise SpmdsError(f"unknown scenario kind {kind!r}")
    cfg = ScenarioConfig(
        kind=kind,
        raw=doc,
        base_dir=path.parent,
        seed=int(doc.get("seed", 0)),
        solver=dict(doc.get("solver", {})),
    )
    if kind == "ev":
        grouping = doc.get("grouping", {})
        if "plan" not in grouping and int(grouping.get("r", 1)) < 1:
            raise SpmdsError("grouping.r must be at least 1")
    return cfg


def solver_config(cfg: ScenarioConfig, **overrides) -> SolverConfig:
    """SolverConfig from the scenario's solver block plus CLI overrides."""
    merged = dict(cfg.solver)
    merged.pop("algorithm", None)
    for key, val in overrides.items():
        if val is not None:
            merged[key] = val
    known = {
        "alpha", "beta", "tau_u", "tau_l", "rho", "eps0", "max_iters",
        "dual_cap", "kappa", "stale_omega",
    }
    unknown = set(merged) - known
    if unknown:
        raise SpmdsError(f"unknown solver settings: {sorted(unknown)}")
    if "alpha" not in merged or "beta" not in merged:
        raise SpmdsError("solver settings must include alpha and beta")
    return SolverConfig(**merged)


def algorithm_name(cfg: ScenarioConfig, override: str | None = None) -> str:
    return override or str(cfg.solver.get("algorithm", "spmds"))


# -- EV assembly -------------------------------------------------------------


def build_grouping(
    cfg: ScenarioConfig,
    sens: np.ndarray,
    r_override: int | None = None,
) -> partition.GroupingPlan:
    """Clustering plus subset selection per the scenario's grouping block."""
    grouping = dict(cfg.raw.get("grouping", {}))
    if "plan" in grouping and r_override is None:
        return partition.load_plan(cfg.resolve(grouping["plan"]))
    r = int(r_override or grouping.get("r", 1))
    n = sens.shape[1]
    cluster = partition.best_of_seeds(
        sens, r, seeds=range(cfg.seed, cfg.seed + KMEANS_RESTARTS)
    )
    d = int(grouping.get("d", partition.max_reduction(n, r)))
    rule = str(grouping.get("rule", "blocks"))
    return partition.select_subsets(cluster, sens, d, rule=rule)


def build_ev_problem(
    cfg: ScenarioConfig, r_override: int | None = None
) -> ValleyFillingProblem:
    if cfg.kind != "ev":
        raise SpmdsError("not an EV scenario")
    doc = cfg.raw
    net = netmodel.load_network(cfg.resolve(doc["network"]))
    sens = netmodel.build_sensitivity(net)
    plan = build_grouping(cfg, sens.R, r_override)

    hz = doc.get("horizon", {})
    horizon = Horizon(
        K=int(hz.get("slots", 52)),
        dt=float(hz.get("dt_minutes", 15.0)) * 60.0,
        start=int(hz.get("start", 0)),
    )

    rng = np.random.default_rng(cfg.seed)
    fl = doc.get("fleet", {})
    if "file" in fl:
        evs = fleet_mod.load_fleet(cfg.resolve(fl["file"]))
    elif "synthetic" in fl:
        spec = fl["synthetic"]
        skip = set(int(s) for s in spec.get("skip_nodes", []))
        nodes = [i for i in range(1, net.node_count + 1) if i not in skip]
        evs = fleet_mod.sample_fleet(
            nodes,
            evs_per_node=int(spec.get("evs_per_node", 1)),
            rng=rng,
            pmax_w=float(spec.get("pmax_kw", 6.6)) * 1e3,
            eta=float(spec.get("eta", 0.9)),
            soc_need_range=tuple(spec.get("soc_need_range", (0.2, 0.6))),
            capacity_j=float(spec.get("capacity_kwh", 40.0)) * 3.6e6,
        )
    else:
        raise SpmdsError("fleet block needs either 'file' or 'synthetic'")

    base = doc.get("baseline", {})
    start_hour = float(hz.get("start_hour", 19.0))
    total = fleet_mod.valley_baseline(
        horizon, peak_w=float(base.get("peak_kw", 2500.0)) * 1e3, start_hour=start_hour
    )
    weights = base.get("weights", "uniform")
    if weights == "uniform":
        load_nodes = sorted({ev.node for ev in evs})
        w = np.zeros(net.node_count)
        w[[i - 1 for i in load_nodes]] = 1.0
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (net.node_count,):
            raise SpmdsError("baseline.weights must list one weight per node")
    p_nodal, q_nodal = fleet_mod.spread_baseline(
        total, w, power_factor=float(base.get("power_factor", 0.95))
    )

    return ValleyFillingProblem(
        network=net,
        sens=sens,
        plan=plan,
        evs=evs,
        horizon=horizon,
        baseline_nodal_p=p_nodal,
        baseline_nodal_q=q_nodal,
        rho=float(cfg.solver.get("rho", 0.0)),
        vmin_pu=float(doc.get("vmin_pu", 0.954)),
        dual_cap=float(cfg.solver.get("dual_cap") or DUAL_CAP_DEFAULT),
    )


def build_traffic_problem(cfg: ScenarioConfig) -> traffic.TrafficProblem:
    if cfg.kind != "traffic":
        raise SpmdsError("not a traffic scenario")
    return traffic.load_instance(cfg.resolve(cfg.raw["instance"]))


def build_problem(cfg: ScenarioConfig, r_override: int | None = None):
    if cfg.kind == "ev":
        return build_ev_problem(cfg, r_override)
    return build_traffic_problem(cfg)
