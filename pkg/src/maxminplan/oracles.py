"""Ground-truth computations used to check the planner, solver and harness.

* backward induction on small tabular MDPs,
* exhaustive open-loop search for tiny tabular games,
* the two-step game on which greedy subproblem play is not max-min optimal,
* the centralized open-loop optimum of the formation game.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .formation import B, FormationEnv, load_fixture


class OracleError(RuntimeError):
    pass


@dataclass
class TabularGame:
    """Finite deterministic game with per-agent rewards ``r_i(s, a)``."""

    states: list
    actions: list  # one list of actions per agent
    transitions: dict  # (state, joint action) -> next state
    rewards: dict  # (state, joint action) -> tuple of per-agent rewards
    initial_state: object
    horizon: int
    gamma: float = 1.0

    @property
    def n_agents(self) -> int:
        return len(self.actions)

    def joint_actions(self) -> list[tuple]:
        return list(itertools.product(*self.actions))

    def next_state(self, s, a: tuple):
        try:
            return self.transitions[(s, tuple(a))]
        except KeyError:
            raise OracleError(f"transition undefined for state {s!r}, action {a!r}") from None

    def reward(self, s, a: tuple) -> tuple:
        try:
            return self.rewards[(s, tuple(a))]
        except KeyError:
            raise OracleError(f"reward undefined for state {s!r}, action {a!r}") from None

    def reachable(self, steps: int | None = None) -> list[set]:
        """States reachable at each timestep ``0..steps-1``."""
        steps = self.horizon if steps is None else steps
        layers = [{self.initial_state}]
        for _ in range(steps - 1):
            layers.append({self.next_state(s, a) for s in layers[-1] for a in self.joint_actions()})
        return layers

    def check_total(self) -> None:
        for layer in self.reachable():
            for s in layer:
                for a in self.joint_actions():
                    self.next_state(s, a)
                    self.reward(s, a)

    def rollout(self, plan, start=None) -> np.ndarray:
        """Cumulative discounted reward per agent of an open-loop plan."""
        s = self.initial_state if start is None else start
        total = np.zeros(self.n_agents)
        for t, a in enumerate(plan):
            total += self.gamma ** t * np.asarray(self.reward(s, a), dtype=float)
            s = self.next_state(s, a)
        return total

    @classmethod
    def from_fixture(cls, data: dict) -> "TabularGame":
        actions = [list(a) for a in data["actions"]]
        joint = list(itertools.product(*actions))
        horizon = int(data["horizon"])
        if data["dynamics"] == "sum":
            step = lambda s, a: s + sum(a)  # noqa: E731
            states = set()
            layer = {data["initial_state"]}
            for _ in range(horizon + 1):
                states |= layer
                layer = {step(s, a) for s in layer for a in joint}
            states = sorted(states)
            rewards = {}
            for key, table in data["rewards"].items():
                s = int(key)
                default = table.get("default")
                for a in joint:
                    r = table.get(",".join(str(x) for x in a), default)
                    rewards[(s, a)] = tuple(float(x) for x in r)
        elif data["dynamics"] == "chain":
            states = list(data["states"])
            top = max(states)
            step = lambda s, a: min(top, s + 1) if a[0] == 1 else max(0, s - 1)  # noqa: E731
            arrive = data["arrival_reward"]
            rewards = {(s, a): (float(arrive[step(s, a)]),) for s in states for a in joint}
        else:
            raise ValueError(f"unknown dynamics {data['dynamics']!r}")
        transitions = {(s, a): step(s, a) for s in states for a in joint}
        return cls(states, actions, transitions, rewards, data["initial_state"], horizon, float(data["gamma"]))


def counterexample_game() -> TabularGame:
    return TabularGame.from_fixture(load_fixture("counterexample.json"))


def chain_mdp() -> TabularGame:
    return TabularGame.from_fixture(load_fixture("chain_mdp.json"))


# --- single-agent backward induction --------------------------------------


def value_iteration(game: TabularGame) -> list[dict]:
    """Finite-horizon Q tables, one dict ``{(s, a): Q}`` per timestep."""
    if game.n_agents != 1:
        raise ValueError("value iteration needs a single-agent game")
    V = {s: 0.0 for s in game.states}
    tables = []
    for _ in range(game.horizon):
        Q = {}
        for s in game.states:
            for a in game.joint_actions():
                Q[(s, a)] = game.reward(s, a)[0] + game.gamma * V[game.next_state(s, a)]
        V = {s: max(Q[(s, a)] for a in game.joint_actions()) for s in game.states}
        tables.append(Q)
    return tables[::-1]


def enumerate_q(game: TabularGame, s, a: tuple, horizon: int | None = None) -> float:
    """Best return after taking ``a`` in ``s``, by trying every continuation."""
    horizon = game.horizon if horizon is None else horizon
    best = -math.inf
    for rest in itertools.product(game.joint_actions(), repeat=horizon - 1):
        best = max(best, float(game.rollout((a,) + rest, start=s)[0]))
    return best


# --- tabular max-min -------------------------------------------------------

PLAN_GUARD = 10 ** 6


def brute_force_minmax(game: TabularGame, start=None, horizon: int | None = None,
                       guard: int = PLAN_GUARD) -> tuple[tuple, float]:
    """Open-loop joint plan maximizing the worst agent's cumulative reward."""
    horizon = game.horizon if horizon is None else horizon
    joint = game.joint_actions()
    count = len(joint) ** horizon
    if count > guard:
        raise OracleError(f"{count} plans exceed the enumeration guard of {guard}")
    best_plan, best_val = (), -math.inf
    for plan in itertools.product(joint, repeat=horizon):
        val = float(np.min(game.rollout(plan, start)))
        if val > best_val:
            best_plan, best_val = plan, val
    if horizon == 0:
        best_val = 0.0
    return best_plan, best_val


def greedy_subproblem_value(game: TabularGame) -> float:
    """Best overall value when play from the second step on follows the
    max-min optimal plan of the remaining subproblem, ignoring past rewards."""
    best = -math.inf
    for a0 in game.joint_actions():
        s = game.next_state(game.initial_state, a0)
        tail, _ = brute_force_minmax(game, start=s, horizon=game.horizon - 1)
        best = max(best, float(np.min(game.rollout((a0,) + tuple(tail)))))
    return best


@dataclass
class CounterexampleVerdict:
    game: TabularGame
    greedy_value: float
    optimal_value: float
    optimal_plan: tuple
    subgame_actions: dict = field(default_factory=dict)

    @property
    def dp_fails(self) -> bool:
        return self.optimal_value > self.greedy_value


def theorem1_counterexample() -> CounterexampleVerdict:
    """Build the two-agent game and compare greedy and optimal max-min values."""
    game = counterexample_game()
    game.check_total()
    plan, opt = brute_force_minmax(game)
    sub = {}
    for s in sorted(game.reachable()[1]):
        tail, val = brute_force_minmax(game, start=s, horizon=1)
        sub[s] = (tail[0], val)
    return CounterexampleVerdict(game, greedy_subproblem_value(game), opt, plan, sub)


class TabularModel:
    """Adapter exposing one agent of a tabular game to the tree search."""

    deterministic = True

    def __init__(self, game: TabularGame, agent: int = 0):
        self.game = game
        self.agent = agent
        self.gamma = game.gamma
        self._joint = game.joint_actions()

    def step(self, state, action, rng=None):
        s = int(state[0])
        a = tuple(int(x) for x in np.asarray(action).ravel())
        return np.array([self.game.next_state(s, a)], dtype=float), self.game.reward(s, a)[self.agent]

    def sample_action(self, rng):
        return np.asarray(self._joint[int(rng.integers(len(self._joint)))], dtype=float)


class RandomTabularRollout:
    def __init__(self, model: TabularModel):
        self.model = model

    def __call__(self, state, depth, rng):
        total, disc, s = 0.0, 1.0, state
        for _ in range(depth):
            s, r = self.model.step(s, self.model.sample_action(rng))
            total += disc * r
            disc *= self.model.gamma
        return total


# --- centralized formation optimum ----------------------------------------


@dataclass(frozen=True)
class OpenLoopConfig:
    n_iters: int = 200_000
    step_scale: float = 1.0
    seed: int = 0


@dataclass
class OpenLoopResult:
    actions: np.ndarray  # (T, N, 2)
    value: float  # worst agent's cumulative cost
    rewards: np.ndarray  # (T, N) instantaneous rewards along the plan
    history: np.ndarray  # best value after each iteration, subsampled


def _pair_structures(env: FormationEnv, T: int):
    N = env.n_agents
    pairs = [(j, l) for j in range(N) for l in range(j + 1, N)]
    inc = np.zeros((len(pairs), N))
    for p, (j, l) in enumerate(pairs):
        inc[p, j], inc[p, l] = 1.0, -1.0
    mem = np.zeros((T, N, len(pairs)))
    cache = {}
    for t in range(T):
        topo = env.schedule.at(t)
        if topo not in cache:
            m = np.zeros((N, len(pairs)))
            for i in range(N):
                nb = set(topo.neighborhood(i))
                for p, (j, l) in enumerate(pairs):
                    if j in nb and l in nb:
                        m[i, p] = 1.0
            cache[topo] = m
        mem[t] = cache[topo]
    factor = 2.0 if env.ordered_pairs else 1.0
    dd = inc @ env.spec.desired  # (P, 2)
    return inc, mem * factor, dd


def _costs(A, s0, inc, mem, dd):
    S = s0[None] + np.cumsum(A @ B.T, axis=0)  # positions after each step
    E = np.einsum("pn,tnc->tpc", inc, S) - dd[None]
    nrm = np.sqrt((E * E).sum(-1))
    per_t = np.einsum("tnp,tp->tn", mem, nrm)
    return per_t, E, nrm


def optimal_openloop(env: FormationEnv, T: int, cfg: OpenLoopConfig = OpenLoopConfig()) -> OpenLoopResult:
    """Minimize the worst agent's cumulative cost over open-loop plans.

    States are eliminated through the dynamics, leaving a convex piecewise
    smooth function of the actions. Normalized projected subgradient steps of
    size ``step_scale / sqrt(k+1)`` are taken and the best iterate is kept.
    """
    if not getattr(env, "deterministic", True):
        raise OracleError("the open-loop oracle needs deterministic dynamics")
    N = env.n_agents
    if T == 0:
        return OpenLoopResult(np.zeros((0, N, 2)), 0.0, np.zeros((0, N)), np.zeros(0))
    s0 = env.initial
    inc, mem, dd = _pair_structures(env, T)
    A = np.zeros((T, N, 2))
    best_A, best_val = A.copy(), math.inf
    hist = []
    for k in range(cfg.n_iters):
        per_t, E, nrm = _costs(A, s0, inc, mem, dd)
        cost = per_t.sum(axis=0)
        i = int(np.argmax(cost))
        val = float(cost[i])
        if not np.isfinite(val):
            raise OracleError(f"subgradient iteration diverged at step {k}")
        if val < best_val:
            best_val, best_A = val, A.copy()
        with np.errstate(invalid="ignore", divide="ignore"):
            U = np.where(nrm[..., None] > 0, E / nrm[..., None], 0.0)
        U *= mem[:, i, :, None]
        G_s = np.einsum("tpc,pn->tnc", U, inc)
        G_a = np.cumsum(G_s[::-1], axis=0)[::-1] @ B
        gn = np.linalg.norm(G_a)
        if gn == 0:
            break
        A = np.clip(A - cfg.step_scale / math.sqrt(k + 1) * G_a / gn, 0.0, 1.0)
        if k % 100 == 0:
            hist.append(best_val)
    rewards = simulate_plan(env, best_A)
    resim = float(np.max(-rewards.sum(axis=0)))
    if abs(resim - best_val) > 1e-9 * max(1.0, abs(best_val)):
        raise OracleError(f"re-simulated value {resim} disagrees with {best_val}")
    return OpenLoopResult(best_A, resim, rewards, np.asarray(hist))


def simulate_plan(env: FormationEnv, actions: np.ndarray) -> np.ndarray:
    """Instantaneous rewards ``(T, N)`` of an open-loop plan, via the environment."""
    s = env.initial.copy()
    out = []
    for t, a in enumerate(actions):
        s, r = env.step(s, a, t)
        out.append(r)
    return np.asarray(out).reshape(len(actions), env.n_agents)
