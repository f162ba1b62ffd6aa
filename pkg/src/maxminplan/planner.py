"""Monte Carlo tree search with double progressive widening and UCB1.

The planner searches over an agent's neighborhood action space and returns the
first-level action children with their mean sampled returns. Those samples are
what the convex surrogate is fitted to.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .game import GenerativeModel


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    n_queries: int = 100
    max_depth: int = 5
    ucb_c: float = 1.0
    k_a: float = 2.0
    alpha_a: float = 0.5
    k_o: float = 0.0
    alpha_o: float = 0.5
    seed: int = 0
    # first action child of every node comes from the rollout policy when it
    # exposes ``action(state)``; later children are sampled uniformly
    default_first: bool = False

    def __post_init__(self):
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.ucb_c < 0 or self.k_a < 0 or self.k_o < 0:
            raise ValueError("ucb_c, k_a and k_o must be nonnegative")
        for name in ("alpha_a", "alpha_o"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass
class QSample:
    action: np.ndarray
    value: float
    visits: int = 0


class RolloutPolicy(Protocol):
    def __call__(self, state: np.ndarray, depth: int, rng: np.random.Generator) -> float:
        """Estimated return-to-go from ``state`` over ``depth`` more steps."""
        ...


def zero_rollout(state, depth, rng):
    return 0.0


class ActionNode:
    __slots__ = ("action", "key", "n", "q", "outcomes", "counts", "rewards")

    def __init__(self, action: np.ndarray):
        self.action = action
        self.key = tuple(np.asarray(action, dtype=float).ravel().tolist())
        self.n = 0
        self.q = 0.0
        self.outcomes: list[StateNode] = []
        self.counts: list[int] = []
        self.rewards: list[float] = []


class StateNode:
    __slots__ = ("state", "n", "children", "keys")

    def __init__(self, state: np.ndarray):
        self.state = state
        self.n = 0
        self.children: list[ActionNode] = []
        self.keys: dict[tuple, int] = {}


def widen(node: StateNode, cfg: PlannerConfig) -> bool:
    """True when the node should receive a freshly sampled action.

    A node without children always widens once, whatever ``k_a`` is.
    """
    if not node.children:
        return True
    return len(node.children) < cfg.k_a * node.n ** cfg.alpha_a


def ucb1_select(node: StateNode, c: float = 1.0) -> ActionNode:
    """Child maximizing ``q + c*sqrt(log n / n_child)``; unvisited children first."""
    if not node.children:
        raise ValueError("node has no action children")
    log_n = math.log(max(node.n, 1))
    best, best_score = None, -math.inf
    for child in node.children:
        if child.n == 0:
            score = math.inf
        else:
            score = child.q + c * math.sqrt(log_n / child.n)
        # strict comparison keeps the earliest child on ties
        if score > best_score:
            best, best_score = child, score
    return best


def child_bound(n: int, cfg: PlannerConfig) -> int:
    return max(1, math.ceil(cfg.k_a * n ** cfg.alpha_a))


@dataclass
class SearchTree:
    root: StateNode
    log: list = field(default_factory=list)

    def first_level(self) -> list[QSample]:
        return [QSample(c.action.copy(), c.q, c.n) for c in self.root.children]

    def format_log(self) -> str:
        """One line per query: ``<query>\\t<child path>\\t<per-level returns>``."""
        lines = []
        for k, (path, returns) in enumerate(self.log):
            p = ".".join(str(i) for i in path)
            r = ",".join(repr(float(x)) for x in returns)
            lines.append(f"{k}\t{p}\t{r}")
        return "\n".join(lines) + ("\n" if lines else "")


class _Search:
    def __init__(self, model: GenerativeModel, rollout: RolloutPolicy, cfg: PlannerConfig,
                 rng: np.random.Generator, record: bool):
        self.model = model
        self.rollout = rollout
        self.cfg = cfg
        self.rng = rng
        self.gamma = float(model.gamma)
        self.deterministic = bool(getattr(model, "deterministic", True))
        self.record = record
        self._path: list[int] = []
        self._returns: list[float] = []

    def _choose(self, node: StateNode) -> ActionNode:
        if widen(node, self.cfg):
            if not node.children and self.cfg.default_first and hasattr(self.rollout, "action"):
                action = np.asarray(self.rollout.action(node.state), dtype=float).ravel()
            else:
                action = np.asarray(self.model.sample_action(self.rng), dtype=float)
            child = ActionNode(action)
            if child.key not in node.keys:
                node.keys[child.key] = len(node.children)
                node.children.append(child)
                if len(node.children) > child_bound(node.n + 1, self.cfg):
                    raise AssertionError("action widening bound violated")
                return child
        return ucb1_select(node, self.cfg.ucb_c)

    def _transition(self, node: StateNode, child: ActionNode, depth: int) -> tuple[StateNode, float, bool]:
        try:
            if self.deterministic:
                if not child.outcomes:
                    nxt, r = self.model.step(node.state, child.action, self.rng)
                    child.outcomes.append(StateNode(np.asarray(nxt, dtype=float)))
                    child.rewards.append(float(r))
                    child.counts.append(1)
                    return child.outcomes[0], child.rewards[0], True
                child.counts[0] += 1
                return child.outcomes[0], child.rewards[0], False
            bound = max(1, math.ceil(self.cfg.k_o * child.n ** self.cfg.alpha_o))
            if len(child.outcomes) < bound:
                nxt, r = self.model.step(node.state, child.action, self.rng)
                child.outcomes.append(StateNode(np.asarray(nxt, dtype=float)))
                child.rewards.append(float(r))
                child.counts.append(1)
                return child.outcomes[-1], child.rewards[-1], True
            w = np.asarray(child.counts, dtype=float)
            j = int(self.rng.choice(len(w), p=w / w.sum()))
            child.counts[j] += 1
            return child.outcomes[j], child.rewards[j], False
        except PlannerError:
            raise
        except Exception as exc:
            raise PlannerError(
                f"model step failed at remaining depth {depth} with action {child.action.tolist()}: {exc}"
            ) from exc

    def simulate(self, node: StateNode, depth: int) -> float:
        if depth == 0:
            return 0.0
        child = self._choose(node)
        if self.record:
            self._path.append(node.children.index(child))
        nxt, reward, fresh = self._transition(node, child, depth)
        if fresh or depth == 1:
            # a new leaf, or the last level: the rollout estimate stands in for the subtree
            future = float(self.rollout(nxt.state, depth - 1, self.rng))
        else:
            future = self.simulate(nxt, depth - 1)
        total = reward + self.gamma * future
        node.n += 1
        child.n += 1
        child.q += (total - child.q) / child.n
        if self.record:
            self._returns.append(total)
        return total

    def query(self, root: StateNode) -> None:
        self._path, self._returns = [], []
        self.simulate(root, self.cfg.max_depth)

    def take_log(self):
        return list(self._path), list(reversed(self._returns))


def search(root_state: np.ndarray, model: GenerativeModel, rollout: RolloutPolicy | None,
           cfg: PlannerConfig, rng: np.random.Generator | None = None, record: bool = False) -> SearchTree:
    """Run ``cfg.n_queries`` tree queries from ``root_state`` and return the tree."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    s = _Search(model, rollout or zero_rollout, cfg, rng, record)
    tree = SearchTree(StateNode(np.asarray(root_state, dtype=float)))
    for _ in range(cfg.n_queries):
        s.query(tree.root)
        if record:
            tree.log.append(s.take_log())
    return tree


def plan(root_state: np.ndarray, model: GenerativeModel, rollout: RolloutPolicy | None,
         cfg: PlannerConfig, rng: np.random.Generator | None = None) -> list[QSample]:
    """First-level (action, mean return) samples after ``cfg.n_queries`` queries."""
    return search(root_state, model, rollout, cfg, rng).first_level()


def best_sample(samples: list[QSample]) -> QSample:
    return samples[int(np.argmax([s.value for s in samples]))]
