"""Networked Markov game primitives: topologies, neighborhoods, slices.

Agents are indexed from 0 inside the library. Config files and reports use
1-based labels; :func:`parse_agent_label` and :func:`agent_label` are the only
conversion points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np


def parse_agent_label(label: int | str) -> int:
    """Convert a 1-based agent label to a 0-based index."""
    idx = int(label) - 1
    if idx < 0:
        raise ValueError(f"agent labels start at 1, got {label!r}")
    return idx


def agent_label(index: int) -> int:
    return index + 1


@dataclass(frozen=True)
class Topology:
    """Undirected communication graph over ``n_agents`` agents.

    Edges are stored as sorted 0-based pairs, so ``(i, j)`` and ``(j, i)``
    describe the same link.
    """

    n_agents: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on agent {agent_label(i)}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ValueError(f"edge ({i}, {j}) out of range")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_labels(cls, n_agents: int, pairs: Iterable[tuple[int, int]]) -> "Topology":
        """Build from 1-based label pairs, as written in configs."""
        return cls(n_agents, frozenset((parse_agent_label(a), parse_agent_label(b)) for a, b in pairs))

    @classmethod
    def complete(cls, n_agents: int) -> "Topology":
        return cls(n_agents, frozenset((i, j) for i in range(n_agents) for j in range(i + 1, n_agents)))

    @classmethod
    def path(cls, n_agents: int) -> "Topology":
        return cls(n_agents, frozenset((i, i + 1) for i in range(n_agents - 1)))

    @classmethod
    def cycle(cls, n_agents: int) -> "Topology":
        edges = {(i, i + 1) for i in range(n_agents - 1)}
        if n_agents > 2:
            edges.add((0, n_agents - 1))
        return cls(n_agents, frozenset(edges))

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Edge neighbors of ``i`` (excluding ``i``), ascending."""
        self._check_index(i)
        return tuple(sorted({b if a == i else a for a, b in self.edges if i in (a, b)}))

    def neighborhood(self, i: int) -> tuple[int, ...]:
        """N_i: edge neighbors plus ``i`` itself, ascending."""
        self._check_index(i)
        return tuple(sorted(set(self.neighbors(i)) | {i}))

    def degrees(self) -> list[int]:
        deg = [0] * self.n_agents
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_agents, self.n_agents))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def laplacian(self) -> np.ndarray:
        adj = self.adjacency()
        return np.diag(adj.sum(axis=1)) - adj

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_agents

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.n_agents:
            raise IndexError(f"agent index {i} out of range for {self.n_agents} agents")


def neighborhood(topology: Topology, i: int) -> tuple[int, ...]:
    return topology.neighborhood(i)


# Experiment graphs, 1-based labels as in the experiment description.
G1 = Topology.from_labels(5, [(a, b) for a in range(1, 6) for b in range(a + 1, 6) if (a, b) != (1, 5)])
G2 = Topology.cycle(5)
G3 = Topology.path(8)

NAMED_TOPOLOGIES = {"G1": G1, "G2": G2, "G3": G3}


@dataclass(frozen=True)
class TopologySchedule:
    """Piecewise-constant topology over time.

    ``entries`` holds ``(topology, duration)`` pairs. Lookups past the end wrap
    around when ``cyclic`` is set and otherwise stay on the last entry.
    """

    entries: tuple
    cyclic: bool = True

    def __post_init__(self):
        if not self.entries:
            raise ValueError("schedule needs at least one entry")
        entries = tuple((topo, int(dur)) for topo, dur in self.entries)
        sizes = {topo.n_agents for topo, _ in entries}
        if len(sizes) != 1:
            raise ValueError(f"schedule mixes agent counts {sorted(sizes)}")
        if any(dur < 1 for _, dur in entries):
            raise ValueError("schedule durations must be positive")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def fixed(cls, topology: Topology) -> "TopologySchedule":
        return cls(((topology, 1),), cyclic=True)

    @property
    def n_agents(self) -> int:
        return self.entries[0][0].n_agents

    @property
    def period(self) -> int:
        return sum(d for _, d in self.entries)

    def at(self, t: int) -> Topology:
        if t < 0:
            raise ValueError("timestep must be nonnegative")
        if self.cyclic:
            t = t % self.period
        for topo, dur in self.entries:
            if t < dur:
                return topo
            t -= dur
        return self.entries[-1][0]

    def topologies(self) -> list[Topology]:
        return [topo for topo, _ in self.entries]


SWITCHING_G1_G2 = TopologySchedule(((G1, 10), (G2, 10)), cyclic=True)


@dataclass
class TopologyReport:
    n_agents: int
    connected: bool
    degrees: list
    symmetric: bool
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(topology: Topology) -> TopologyReport:
    """Pre-flight check of the graph assumptions used by the consensus solver."""
    violations = []
    adj = topology.adjacency()
    symmetric = bool(np.array_equal(adj, adj.T))
    if not symmetric:
        violations.append("adjacency is not symmetric")
    if np.any(np.diag(adj)):
        violations.append("self-loops present")
    connected = topology.is_connected()
    if not connected:
        violations.append("graph is disconnected")
    return TopologyReport(topology.n_agents, connected, topology.degrees(), symmetric, violations)


# --- joint vectors ---------------------------------------------------------
# A joint state/action is an (n_agents, dim) array; row i is agent i's part.


def project(joint: np.ndarray, indices: Sequence[int]) -> np.ndarray:
    """Rows of ``joint`` for ``indices``, in the given (ascending) order."""
    joint = np.asarray(joint)
    idx = list(indices)
    for i in idx:
        if not 0 <= i < joint.shape[0]:
            raise IndexError(f"agent index {i} out of range")
    return joint[idx].copy()


def scatter(joint: np.ndarray, indices: Sequence[int], part: np.ndarray) -> np.ndarray:
    """Return a copy of ``joint`` with rows ``indices`` replaced by ``part``."""
    out = np.array(joint, dtype=float, copy=True)
    out[list(indices)] = np.asarray(part, dtype=float).reshape(len(indices), -1)
    return out


def flat_coordinates(indices: Sequence[int], dim: int) -> np.ndarray:
    """Positions of the agents' coordinates inside a flattened joint vector."""
    return np.concatenate([np.arange(i * dim, (i + 1) * dim) for i in indices]) if len(indices) else np.zeros(0, int)


class GenerativeModel(Protocol):
    """Simulator for one agent's neighborhood slice.

    ``step`` maps a neighborhood state slice and action slice to the next
    state slice and the owning agent's reward. Randomness comes only from the
    ``rng`` argument so that runs are reproducible.
    """

    gamma: float
    deterministic: bool

    def step(self, state: np.ndarray, action: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        ...

    def sample_action(self, rng: np.random.Generator) -> np.ndarray:
        ...
