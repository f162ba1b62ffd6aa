"""Distributed stochastic subgradient solver for ``min_a max_i f_i(a)``.

Every agent keeps an estimate ``(alpha, eta)`` of the minimizer and of the
optimal value. One round is: exchange iterates with neighbors, take a convex
combination with doubly stochastic weights, shift ``eta`` down by
``beta_k / N``, then take a projected subgradient step on
``max(0, f_i(alpha) - eta)``.

Agents only see each other through :class:`MessageLayer`, which refuses reads
outside the reader's neighborhood and keeps an audit log.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .game import Topology, TopologySchedule, agent_label


class ConfigurationError(ValueError):
    pass


class LocalityViolation(RuntimeError):
    pass


class OptimizerError(RuntimeError):
    pass


@dataclass
class AgentIterate:
    alpha: np.ndarray
    eta: float

    def vector(self) -> np.ndarray:
        return np.append(self.alpha, self.eta)

    @classmethod
    def from_vector(cls, z: np.ndarray) -> "AgentIterate":
        return cls(np.array(z[:-1], dtype=float), float(z[-1]))


@dataclass(frozen=True)
class Box:
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def uniform(cls, dim: int, low: float = 0.0, high: float = 1.0) -> "Box":
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.low), self.high)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.low) and np.all(x <= self.high))


@dataclass(frozen=True)
class OptimizerConfig:
    n_iters: int = 1000
    beta0: float = 1.0
    step_power: float = 1.0  # beta_k = beta0 / (k+1)**step_power
    r: float | tuple = 2.0
    noise_sigma: float = 0.0
    weight_rule: str = "metropolis"
    n_agents: int | None = None  # N in the eta drift; defaults to the network size
    seed: int = 0

    def __post_init__(self):
        if self.n_iters < 0:
            raise ValueError("n_iters must be nonnegative")
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if not 0.5 < self.step_power <= 1.0:
            # keeps sum(beta) infinite and sum(beta^2) finite
            raise ValueError("step_power must lie in (0.5, 1]")
        rs = self.r if isinstance(self.r, tuple) else (self.r,)
        if any(v <= 1 for v in rs):
            raise ValueError("every r must exceed 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.weight_rule != "metropolis":
            raise ValueError(f"unknown weight rule {self.weight_rule!r}")

    def beta(self, k: int) -> float:
        return self.beta0 / (k + 1) ** self.step_power

    def r_of(self, i: int) -> float:
        return self.r[i] if isinstance(self.r, tuple) else self.r


class LocalObjective(Protocol):
    def value(self, alpha: np.ndarray) -> float:
        ...

    def subgradient(self, alpha: np.ndarray) -> np.ndarray:
        ...


class FunctionObjective:
    def __init__(self, value: Callable, subgradient: Callable):
        self._value = value
        self._sub = subgradient

    def value(self, alpha):
        return float(self._value(alpha))

    def subgradient(self, alpha):
        return np.asarray(self._sub(alpha), dtype=float)


class LiftedObjective:
    """A function of some coordinates of the joint vector, zero slope elsewhere."""

    def __init__(self, model, coords: Sequence[int], dim: int):
        self.model = model
        self.coords = np.asarray(coords, dtype=int)
        self.dim = dim

    def value(self, alpha):
        return float(self.model(alpha[self.coords]))

    def subgradient(self, alpha):
        g = np.zeros(self.dim)
        g[self.coords] = self.model.subgradient(alpha[self.coords])
        return g


# --- consensus weights -----------------------------------------------------


def metropolis_weights(topology: Topology, i: int, k: int = 0) -> dict[int, float]:
    """Row ``i`` of the Metropolis matrix as ``{j: w_ij}`` over ``j`` in N_i.

    ``k`` is accepted for time-varying schedules; the weights depend only on
    the graph passed in.
    """
    deg = topology.degrees()
    row = {j: 1.0 / (1.0 + max(deg[i], deg[j])) for j in topology.neighbors(i)}
    row[i] = 1.0 - sum(row.values())
    return dict(sorted(row.items()))


def metropolis_matrix(topology: Topology) -> np.ndarray:
    n = topology.n_agents
    W = np.zeros((n, n))
    for i in range(n):
        for j, w in metropolis_weights(topology, i).items():
            W[i, j] = w
    return W


def check_weight_row(topology: Topology, i: int, row: dict[int, float], tol: float = 1e-12) -> None:
    nb = set(topology.neighborhood(i))
    if any(j not in nb for j in row):
        raise ConfigurationError(f"agent {agent_label(i)} weights a non-neighbor")
    if any(w < 0 for w in row.values()):
        raise ConfigurationError(f"agent {agent_label(i)} has a negative weight")
    if abs(sum(row.values()) - 1.0) > tol:
        raise ConfigurationError(f"agent {agent_label(i)} weights sum to {sum(row.values())}")


# --- message layer ---------------------------------------------------------


class MessageLayer:
    """Double-buffered neighbor exchange.

    ``publish`` writes into the outbox of the current round; ``barrier``
    makes those messages readable. ``read`` only serves messages from the
    reader's neighborhood under the active topology.
    """

    def __init__(self, topology: Topology, strict: bool = True):
        self.topology = topology
        self.strict = strict
        self._outbox: dict[int, object] = {}
        self._inbox: dict[int, object] = {}
        self._nbhd = {i: frozenset(topology.neighborhood(i)) for i in range(topology.n_agents)}
        self.violations: list[tuple[int, int]] = []
        self.reads = 0

    def set_topology(self, topology: Topology) -> None:
        if topology is not self.topology:
            self.topology = topology
            self._nbhd = {i: frozenset(topology.neighborhood(i)) for i in range(topology.n_agents)}

    def publish(self, sender: int, payload) -> None:
        self._outbox[sender] = payload

    def barrier(self) -> None:
        self._inbox, self._outbox = self._outbox, {}

    def read(self, reader: int, sender: int):
        if sender not in self._nbhd[reader]:
            self.violations.append((reader, sender))
            if self.strict:
                raise LocalityViolation(f"agent {agent_label(reader)} read from non-neighbor {agent_label(sender)}")
            return None
        self.reads += 1
        return self._inbox[sender]

    def gather(self, reader: int) -> dict[int, object]:
        return {j: self.read(reader, j) for j in sorted(self._nbhd[reader])}


# --- solver ----------------------------------------------------------------


def mix(iterates: dict[int, AgentIterate], weights: dict[int, float], self_index: int | None = None) -> AgentIterate:
    """Convex combination ``sum_j w_j (alpha_j, eta_j)``.

    With ``self_index`` given the sum is formed as ``z_i + sum_j w_j (z_j - z_i)``,
    which is the same number mathematically but returns ``z_i`` bit-for-bit
    when all neighbors agree with it.
    """
    if set(weights) - set(iterates):
        raise ConfigurationError("weight row references a missing iterate")
    if any(w < 0 for w in weights.values()) or abs(sum(weights.values()) - 1.0) > 1e-12:
        raise ConfigurationError("weight row is not a probability vector")
    if self_index is None:
        z = sum(w * iterates[j].vector() for j, w in weights.items())
    else:
        zi = iterates[self_index].vector()
        z = zi.copy()
        for j, w in weights.items():
            if j != self_index:
                z += w * (iterates[j].vector() - zi)
    return AgentIterate.from_vector(np.asarray(z, dtype=float))


def step(i: int, mixed: AgentIterate, k: int, obj: LocalObjective, cfg: OptimizerConfig, box: Box,
         n_agents: int, rng: np.random.Generator | None = None) -> AgentIterate:
    beta = cfg.beta(k)
    v_alpha = mixed.alpha
    v_eta = mixed.eta - beta / n_agents
    try:
        gap = obj.value(v_alpha) - v_eta
        if gap > 0:
            g_alpha, g_eta = obj.subgradient(v_alpha), -1.0
        else:
            g_alpha, g_eta = np.zeros_like(v_alpha), 0.0
    except Exception as exc:
        raise OptimizerError(f"objective of agent {agent_label(i)} failed at round {k}: {exc}") from exc
    if cfg.noise_sigma > 0:
        g_alpha = g_alpha + rng.normal(0.0, cfg.noise_sigma, size=v_alpha.shape)
    ri = cfg.r_of(i)
    alpha = box.project(v_alpha - beta * ri * g_alpha)
    eta = v_eta - beta * ri * g_eta
    return AgentIterate(alpha, float(eta))


def default_init(objectives: Sequence[LocalObjective], box: Box) -> list[AgentIterate]:
    c = box.center
    return [AgentIterate(c.copy(), obj.value(c)) for obj in objectives]


@dataclass
class RunResult:
    iterates: list
    disagreement: np.ndarray
    trace: list = field(default_factory=list)
    layer: MessageLayer | None = None

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


TRACE_COLUMNS = ("round", "agent", "eta", "disagreement", "objective_value_at_own_alpha")


def write_trace(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in rows:
            w.writerow(row)


def _disagreement(iterates: Sequence[AgentIterate]) -> float:
    Z = np.array([z.vector() for z in iterates])
    # offsets from the first iterate keep the result exactly 0 at consensus
    D = Z - Z[0]
    return float(np.max(np.linalg.norm(D - D.mean(axis=0), axis=1)))


def run(network: Topology | TopologySchedule, objectives: Sequence[LocalObjective], cfg: OptimizerConfig,
        box: Box, init: Sequence[AgentIterate] | None = None, record_trace: bool = False,
        layer: MessageLayer | None = None) -> RunResult:
    """``cfg.n_iters`` synchronous rounds of the distributed solver."""
    schedule = network if isinstance(network, TopologySchedule) else TopologySchedule.fixed(network)
    n = schedule.n_agents
    if len(objectives) != n:
        raise ValueError(f"expected {n} objectives, got {len(objectives)}")
    if not all(t.is_connected() for t in schedule.topologies()):
        warnings.warn("communication graph is disconnected; iterates cannot reach consensus", RuntimeWarning)
    n_drift = cfg.n_agents or n
    iterates = [AgentIterate(z.alpha.copy(), z.eta) for z in (init or default_init(objectives, box))]
    for z in iterates:
        if not box.contains(z.alpha):
            raise ValueError("initial alpha outside the feasible box")
    layer = layer or MessageLayer(schedule.at(0))
    rng = np.random.default_rng(cfg.seed) if cfg.noise_sigma > 0 else None
    dis = np.zeros(cfg.n_iters)
    trace = []
    for k in range(cfg.n_iters):
        topo = schedule.at(k)
        layer.set_topology(topo)
        for i, z in enumerate(iterates):
            layer.publish(i, z)
        layer.barrier()
        new = []
        for i in range(n):
            row = metropolis_weights(topo, i, k)
            mixed = mix(layer.gather(i), row, self_index=i)
            z = step(i, mixed, k, objectives[i], cfg, box, n_drift, rng)
            if not box.contains(z.alpha):
                raise AssertionError("iterate left the feasible box")
            new.append(z)
        iterates = new
        dis[k] = _disagreement(iterates)
        if record_trace:
            for i, z in enumerate(iterates):
                trace.append((k, agent_label(i), z.eta, dis[k], objectives[i].value(z.alpha)))
    return RunResult(iterates, dis, trace, layer)
