"""Formation-control Markov game.

Each agent is a point in the plane moved by ``s' = s + B a`` with the action
``a`` in the unit box. An agent's reward is minus the sum, over pairs of
agents in its neighborhood, of how far their relative position is from the
desired one. The rollout policy steers agents toward the equilibrium of the
affine consensus flow ``ds_i/dt = -sum_j [(s_i - s_j) - (d_i - d_j)]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .game import Topology, TopologySchedule

B = np.array([[1.0, 0.0], [-1.0, 2.0]])
B_INV = np.linalg.inv(B)
assert abs(np.linalg.det(B) - 2.0) < 1e-12

ACTION_LOW, ACTION_HIGH = 0.0, 1.0
_BOX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FormationSpec:
    """Desired position of every agent, shape ``(n_agents, 2)``."""

    desired: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.desired, dtype=float)
        if d.ndim != 2 or d.shape[1] != 2:
            raise ValueError("desired positions must have shape (n_agents, 2)")
        object.__setattr__(self, "desired", d)

    @property
    def n_agents(self) -> int:
        return self.desired.shape[0]

    @classmethod
    def regular_polygon(cls, n: int, radius: float = 2.0) -> "FormationSpec":
        ang = np.pi / 2 + 2 * np.pi * np.arange(n) / n
        return cls(np.round(radius * np.column_stack([np.cos(ang), np.sin(ang)]), 12))


@dataclass(frozen=True)
class RolloutConfig:
    dt: float = 0.05
    t_final: float = 50.0
    tol: float = 1e-6
    lookahead_iters: int = 200

    def __post_init__(self):
        if self.dt <= 0 or self.t_final <= 0 or self.tol <= 0 or self.lookahead_iters < 1:
            raise ValueError("rollout parameters must be positive")


def step_dynamics(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``s + B a`` for one agent (or row-wise for a stack of agents)."""
    a = np.asarray(a, dtype=float)
    if np.any(a < ACTION_LOW - _BOX_TOL) or np.any(a > ACTION_HIGH + _BOX_TOL):
        raise ValueError(f"action {a.tolist()} outside the unit box")
    return np.asarray(s, dtype=float) + a @ B.T


def local_reward(positions: np.ndarray, desired: np.ndarray, ordered_pairs: bool = False) -> float:
    """Minus the summed relative-position error over pairs of the slice.

    Each unordered pair counts once unless ``ordered_pairs`` is set.
    """
    e = np.asarray(positions, dtype=float) - np.asarray(desired, dtype=float)
    k = e.shape[0]
    if k < 2:
        return 0.0
    iu, ju = np.triu_indices(k, 1)
    diff = e[iu] - e[ju]
    total = float(np.sqrt((diff * diff).sum(axis=1)).sum())
    return -(2.0 * total if ordered_pairs else total)


def agent_reward(joint: np.ndarray, spec: FormationSpec, topology: Topology, i: int,
                 ordered_pairs: bool = False) -> float:
    idx = list(topology.neighborhood(i))
    return local_reward(np.asarray(joint)[idx], spec.desired[idx], ordered_pairs)


def stable_dt_bound(laplacian: np.ndarray) -> float:
    max_deg = float(np.max(np.diag(laplacian))) if laplacian.size else 0.0
    return 2.0 / (2.0 * max_deg + 1.0)


@dataclass
class ConvergeResult:
    positions: np.ndarray
    converged: bool
    steps: int


def rollout_converge(positions: np.ndarray, desired: np.ndarray, laplacian: np.ndarray,
                     cfg: RolloutConfig = RolloutConfig()) -> ConvergeResult:
    """Euler-integrate the affine consensus flow until agents stop moving.

    Integration stops once every agent's speed falls below ``cfg.tol`` or
    ``cfg.t_final`` is reached; in the latter case ``converged`` is False and
    the last state is returned.
    """
    L = np.asarray(laplacian, dtype=float)
    if cfg.dt >= stable_dt_bound(L):
        raise ValueError(f"dt={cfg.dt} violates the stability bound {stable_dt_bound(L):.4g}")
    d = np.asarray(desired, dtype=float)
    e = np.asarray(positions, dtype=float) - d
    n_steps = int(np.ceil(cfg.t_final / cfg.dt))
    for k in range(n_steps):
        vel = -L @ e
        e = e + cfg.dt * vel
        if np.max(np.abs(vel)) < cfg.tol:
            return ConvergeResult(e + d, True, k + 1)
    return ConvergeResult(e + d, False, n_steps)


def equilibrium(positions: np.ndarray, desired: np.ndarray) -> np.ndarray:
    """Limit of the consensus flow on a connected graph: ``d + mean(s - d)``.

    The flow conserves the centroid of ``s - d`` and drives its spread to zero,
    so the limit does not depend on which connected graph is used.
    """
    s = np.asarray(positions, dtype=float)
    d = np.asarray(desired, dtype=float)
    return d + (s - d).mean(axis=0)


def _edge_min(delta, fixed_axis, fixed_val):
    """Minimize ||B a - delta|| along one edge of the unit box."""
    free = 1 - fixed_axis
    col_f, col_v = B[:, free], B[:, fixed_axis]
    r = delta - fixed_val * col_v
    t = np.clip(r @ col_f / (col_f @ col_f), 0.0, 1.0)
    a = np.empty(delta.shape)
    a[..., fixed_axis] = fixed_val
    a[..., free] = t
    return a


def rollout_action(current: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Box action minimizing ``||current + B a - target||`` (row-wise).

    The quadratic is strictly convex, so its minimizer is either the
    unconstrained point ``B^-1 (target - current)`` or lies on one of the four
    edges of the box, each of which is a clipped one-dimensional problem.
    """
    delta = np.atleast_2d(np.asarray(target, dtype=float) - np.asarray(current, dtype=float))
    free = delta @ B_INV.T
    cands = [np.clip(free, 0.0, 1.0)]
    for axis in (0, 1):
        for val in (0.0, 1.0):
            cands.append(_edge_min(delta, axis, val))
    C = np.stack(cands)  # (5, k, 2)
    obj = (((C @ B.T) - delta[None]) ** 2).sum(-1)
    inside = np.all((free >= 0) & (free <= 1), axis=-1)
    best = np.argmin(obj, axis=0)
    out = C[best, np.arange(delta.shape[0])]
    out[inside] = free[inside]
    return out if np.ndim(target) > 1 or np.ndim(current) > 1 else out[0]


def rollout_action_pgd(current, target, iters: int = 200, tol: float = 1e-8) -> np.ndarray:
    """Projected gradient reference solver for :func:`rollout_action`."""
    delta = np.asarray(target, dtype=float) - np.asarray(current, dtype=float)
    a = np.zeros(2)
    step = 1.0 / np.linalg.eigvalsh(B.T @ B).max()
    for _ in range(iters):
        new = np.clip(a - step * B.T @ (B @ a - delta), 0.0, 1.0)
        if np.max(np.abs(new - a)) < tol:
            return new
        a = new
    return a


class FormationRollout:
    """Default policy for the tree search: chase the local consensus limit.

    The owning agent treats its neighborhood as fully connected, so the limit
    of the flow is available in closed form (see :func:`equilibrium`).
    """

    def __init__(self, desired: np.ndarray, gamma: float = 1.0, ordered_pairs: bool = False):
        self.desired = np.asarray(desired, dtype=float)
        self.gamma = gamma
        self.ordered_pairs = ordered_pairs

    def action(self, positions: np.ndarray) -> np.ndarray:
        return rollout_action(positions, equilibrium(positions, self.desired))

    def __call__(self, positions, depth, rng=None) -> float:
        s = np.asarray(positions, dtype=float)
        total, disc = 0.0, 1.0
        for _ in range(depth):
            s = s + self.action(s) @ B.T
            total += disc * local_reward(s, self.desired, self.ordered_pairs)
            disc *= self.gamma
        return total


class FormationModel:
    """Deterministic generative model over one agent's neighborhood slice.

    Actions are flattened ``(|N_i| * 2,)`` vectors in ascending agent order.
    The reward is the owner's reward evaluated on the post-transition slice.
    """

    deterministic = True

    def __init__(self, members, desired: np.ndarray, gamma: float = 1.0, ordered_pairs: bool = False):
        self.members = tuple(members)
        self.desired = np.asarray(desired, dtype=float)
        self.gamma = gamma
        self.ordered_pairs = ordered_pairs
        self.action_dim = 2 * len(self.members)

    def step(self, state, action, rng=None):
        a = np.asarray(action, dtype=float).reshape(len(self.members), 2)
        nxt = step_dynamics(state, a)
        return nxt, local_reward(nxt, self.desired, self.ordered_pairs)

    def sample_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(ACTION_LOW, ACTION_HIGH, self.action_dim)


def local_generative_model(topology: Topology, spec: FormationSpec, i: int, gamma: float = 1.0,
                           ordered_pairs: bool = False) -> tuple[FormationModel, FormationRollout]:
    members = topology.neighborhood(i)
    d = spec.desired[list(members)]
    return FormationModel(members, d, gamma, ordered_pairs), FormationRollout(d, gamma, ordered_pairs)


class FormationEnv:
    """Global simulator used by the harness (never handed to the agents)."""

    deterministic = True

    def __init__(self, spec: FormationSpec, schedule: TopologySchedule, initial: np.ndarray,
                 ordered_pairs: bool = False):
        if spec.n_agents != schedule.n_agents:
            raise ValueError("formation and topology disagree on the number of agents")
        self.spec = spec
        self.schedule = schedule
        self.initial = np.asarray(initial, dtype=float).reshape(spec.n_agents, 2)
        self.ordered_pairs = ordered_pairs

    @property
    def n_agents(self) -> int:
        return self.spec.n_agents

    def rewards(self, positions: np.ndarray, t: int) -> np.ndarray:
        topo = self.schedule.at(t)
        return np.array([agent_reward(positions, self.spec, topo, i, self.ordered_pairs)
                         for i in range(self.n_agents)])

    def step(self, positions: np.ndarray, actions: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
        nxt = step_dynamics(positions, np.clip(actions, ACTION_LOW, ACTION_HIGH))
        return nxt, self.rewards(nxt, t)


def load_fixture(name: str) -> dict:
    with resources.files("maxminplan.data").joinpath(name).open() as fh:
        return json.load(fh)
