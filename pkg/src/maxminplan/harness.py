"""Closed-loop experiment runner for the formation game.

``run_proposed`` executes, at every timestep and for every agent: tree search
on the neighborhood model, negation of the sampled returns, max-affine fit of
the cost, offset by the agent's accumulated cost, and finally the distributed
min-max solve whose own-coordinates are executed. The baselines share the
same environment, seeds and record format.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import convexfit, minmax
from .convexfit import FitConfig
from .formation import (
    FormationEnv, FormationSpec, RolloutConfig, load_fixture, local_generative_model,
    rollout_action, rollout_converge,
)
from .game import NAMED_TOPOLOGIES, SWITCHING_G1_G2, Topology, TopologySchedule, flat_coordinates
from .minmax import Box, LiftedObjective, MessageLayer, OptimizerConfig
from .oracles import OpenLoopConfig, optimal_openloop
from .planner import PlannerConfig, best_sample, plan

log = logging.getLogger(__name__)

ALGORITHMS = ("proposed", "rollout_baseline", "pomcpow_baseline", "optimal")


class RunError(RuntimeError):
    def __init__(self, msg, record=None):
        super().__init__(msg)
        self.record = record


@dataclass
class ExperimentConfig:
    schedule: TopologySchedule
    formation: FormationSpec
    initial: np.ndarray
    seed: int
    algorithm: str = "proposed"
    topology_name: str = "custom"
    horizon: int = 30
    gamma: float = 1.0
    planner: PlannerConfig = field(default_factory=lambda: PlannerConfig(n_queries=50))
    fit: FitConfig = field(default_factory=FitConfig)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(n_iters=500))
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    openloop: OpenLoopConfig = field(default_factory=OpenLoopConfig)
    ordered_pairs: bool = False
    out_dir: Path | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        self.initial = np.asarray(self.initial, dtype=float).reshape(self.formation.n_agents, 2)

    def env(self) -> FormationEnv:
        return FormationEnv(self.formation, self.schedule, self.initial, self.ordered_pairs)


def scenario(name: str, seed: int = 0, **overrides) -> ExperimentConfig:
    """Bundled scenarios: ``G1``, ``G2``, ``switching`` (five agents) and ``G3``."""
    fx = load_fixture("formations.json")
    if name == "G3":
        schedule, spec, init = TopologySchedule.fixed(NAMED_TOPOLOGIES["G3"]), fx["octagon"], fx["initial_8"]
    elif name in ("G1", "G2"):
        schedule, spec, init = TopologySchedule.fixed(NAMED_TOPOLOGIES[name]), fx["pentagon"], fx["initial_5"]
    elif name == "switching":
        schedule, spec, init = SWITCHING_G1_G2, fx["pentagon"], fx["initial_5"]
    else:
        raise ValueError(f"unknown scenario {name!r}")
    return ExperimentConfig(schedule=schedule, formation=FormationSpec(spec), initial=np.asarray(init),
                            seed=seed, topology_name=name, **overrides)


@dataclass
class RunRecord:
    algorithm: str
    seed: int
    topology_name: str
    gamma: float
    rewards: np.ndarray  # (T, N) instantaneous
    actions: np.ndarray  # (T, N, 2)
    positions: np.ndarray  # (T+1, N, 2)
    wall_clock: np.ndarray  # (T,)
    audit: list = field(default_factory=list)
    reads: int = 0

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[1]

    @property
    def cumulative(self) -> np.ndarray:
        disc = self.gamma ** np.arange(self.horizon)
        return np.cumsum(self.rewards * disc[:, None], axis=0)

    @property
    def worst(self) -> np.ndarray:
        return self.rewards.min(axis=1) if self.horizon else np.zeros(0)

    @property
    def worst_cumulative(self) -> float:
        """Final cumulative return of the worst agent (the max-min objective)."""
        return float(self.cumulative[-1].min()) if self.horizon else 0.0


class _Recorder:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.rewards, self.actions, self.wall = [], [], []
        self.positions = [cfg.initial.copy()]
        self.audit, self.reads = [], 0

    def add(self, actions, positions, rewards, wall):
        self.actions.append(np.asarray(actions, dtype=float))
        self.positions.append(np.asarray(positions, dtype=float))
        self.rewards.append(np.asarray(rewards, dtype=float))
        self.wall.append(wall)

    def absorb(self, layer: MessageLayer):
        self.audit.extend(layer.violations)
        self.reads += layer.reads

    def record(self) -> RunRecord:
        n = self.cfg.formation.n_agents
        return RunRecord(
            self.cfg.algorithm, self.cfg.seed, self.cfg.topology_name, self.cfg.gamma,
            np.asarray(self.rewards).reshape(-1, n), np.asarray(self.actions).reshape(-1, n, 2),
            np.asarray(self.positions).reshape(-1, n, 2), np.asarray(self.wall), list(self.audit), self.reads,
        )


def agent_rng(seed: int, t: int, i: int, stream: int = 0) -> np.random.Generator:
    """Per (timestep, agent, stream) generator; shared by every algorithm."""
    return np.random.default_rng([seed, t, i, stream])


def _exchange_states(layer: MessageLayer, positions: np.ndarray) -> dict[int, np.ndarray]:
    """Each agent broadcasts its position and collects its neighborhood slice."""
    n = positions.shape[0]
    for i in range(n):
        layer.publish(i, positions[i].copy())
    layer.barrier()
    return {i: np.array([v for _, v in sorted(layer.gather(i).items())]) for i in range(n)}


def _plan_agent(cfg: ExperimentConfig, topo: Topology, i: int, local: np.ndarray, t: int):
    model, rollout = local_generative_model(topo, cfg.formation, i, cfg.gamma, cfg.ordered_pairs)
    depth = max(1, min(cfg.planner.max_depth, cfg.horizon - t))
    pcfg = replace(cfg.planner, max_depth=depth)
    return model, plan(local, model, rollout, pcfg, agent_rng(cfg.seed, t, i, 0))


def _run(cfg: ExperimentConfig, choose) -> RunRecord:
    env = cfg.env()
    rec = _Recorder(cfg)
    s = env.initial.copy()
    cum = np.zeros(env.n_agents)
    for t in range(cfg.horizon):
        t0 = time.perf_counter()
        try:
            actions = choose(t, s, cum, rec)
            s, r = env.step(s, actions, t)
        except Exception as exc:
            raise RunError(f"{cfg.algorithm} failed at timestep {t}: {exc}", rec.record()) from exc
        cum += cfg.gamma ** t * r
        rec.add(actions, s, r, time.perf_counter() - t0)
        log.debug("%s t=%d worst=%.4f", cfg.algorithm, t, r.min())
    return rec.record()


def run_proposed(cfg: ExperimentConfig) -> RunRecord:
    n = cfg.formation.n_agents
    box = Box.uniform(2 * n)

    def choose(t, s, cum, rec):
        topo = cfg.schedule.at(t)
        layer = MessageLayer(topo)
        slices = _exchange_states(layer, s)
        objectives = []
        for i in range(n):
            model, samples = _plan_agent(cfg, topo, i, slices[i], t)
            X = np.array([q.action for q in samples])
            cost = -np.array([q.value for q in samples])
            fcfg = replace(cfg.fit, seed=int(np.random.SeedSequence([cfg.seed, t, i, 1]).generate_state(1)[0]))
            surrogate = convexfit.fit_surrogate(X, cost, fcfg).scaled(cfg.gamma ** t).offset(-cum[i])
            objectives.append(LiftedObjective(surrogate, flat_coordinates(model.members, 2), 2 * n))
        ocfg = replace(cfg.optimizer, seed=cfg.seed * 1_000_003 + t)
        result = minmax.run(topo, objectives, ocfg, box, layer=layer)
        rec.absorb(layer)
        return np.array([box.project(result.iterates[i].alpha)[2 * i:2 * i + 2] for i in range(n)])

    return _run(cfg, choose)


def run_baseline_pomcpow(cfg: ExperimentConfig) -> RunRecord:
    n = cfg.formation.n_agents

    def choose(t, s, cum, rec):
        topo = cfg.schedule.at(t)
        layer = MessageLayer(topo)
        slices = _exchange_states(layer, s)
        rec.absorb(layer)
        acts = np.zeros((n, 2))
        for i in range(n):
            model, samples = _plan_agent(cfg, topo, i, slices[i], t)
            k = model.members.index(i)
            acts[i] = best_sample(samples).action[2 * k:2 * k + 2]
        return acts

    return _run(cfg, choose)


def run_baseline_rollout(cfg: ExperimentConfig) -> RunRecord:
    def choose(t, s, cum, rec):
        topo = cfg.schedule.at(t)
        conv = rollout_converge(s, cfg.formation.desired, topo.laplacian(), cfg.rollout)
        if not conv.converged:
            log.debug("consensus flow did not settle at t=%d; using last state", t)
        return rollout_action(s, conv.positions)

    return _run(cfg, choose)


def run_optimal(cfg: ExperimentConfig) -> RunRecord:
    t0 = time.perf_counter()
    res = optimal_openloop(cfg.env(), cfg.horizon, cfg.openloop)
    env = cfg.env()
    rec = _Recorder(cfg)
    s = env.initial.copy()
    per_step = (time.perf_counter() - t0) / max(cfg.horizon, 1)
    for t in range(cfg.horizon):
        s, r = env.step(s, res.actions[t], t)
        rec.add(res.actions[t], s, r, per_step)
    return rec.record()


RUNNERS = {
    "proposed": run_proposed,
    "rollout_baseline": run_baseline_rollout,
    "pomcpow_baseline": run_baseline_pomcpow,
    "optimal": run_optimal,
}


def run(cfg: ExperimentConfig) -> RunRecord:
    return RUNNERS[cfg.algorithm](cfg)


def steady_state(record: RunRecord, window: int = 5) -> float:
    """Mean worst-agent instantaneous reward over the last ``window`` steps."""
    w = record.worst
    return float(w[-window:].mean()) if len(w) else 0.0
