"""Self-checks run by ``maxminplan verify``.

Each check compares a library routine against an independent oracle and
returns a :class:`Check`. They are quick (a few seconds in total) and need
no test framework, so they can run on an installed package.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import convexfit, minmax, oracles
from .convexfit import FitConfig
from .formation import RolloutConfig, rollout_action, rollout_action_pgd, rollout_converge
from .game import G1, G2, G3, Topology
from .minmax import Box, FunctionObjective, OptimizerConfig
from .planner import PlannerConfig, search


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def _counterexample():
    v = oracles.theorem1_counterexample()
    return v.greedy_value == 95 and v.optimal_value == 205, f"greedy {v.greedy_value}, optimal {v.optimal_value}"


def _value_iteration():
    game = oracles.chain_mdp()
    q = oracles.value_iteration(game)[0]
    worst = max(abs(q[(s, a)] - oracles.enumerate_q(game, s, a))
                for s in game.states for a in game.joint_actions())
    return worst < 1e-12, f"max |VI - enumeration| = {worst:.2e}"


def _metropolis():
    dev = 0.0
    for topo in (G1, G2, G3):
        W = minmax.metropolis_matrix(topo)
        dev = max(dev, np.abs(W.sum(0) - 1).max(), np.abs(W.sum(1) - 1).max())
    return dev <= 1e-12, f"max row/column sum deviation {dev:.1e}"


def _max_affine():
    x = np.array([-1, -0.5, 0, 0.5, 1.0])
    m1 = convexfit.fit(x[:, None], np.abs(x), FitConfig(n_hyperplanes=2))
    g = np.linspace(-1, 1, 50)
    m2 = convexfit.fit(g[:, None], g ** 2, FitConfig(n_hyperplanes=8))
    e1, e2 = convexfit.rmse(m1, x[:, None], np.abs(x)), convexfit.rmse(m2, g[:, None], g ** 2)
    return e1 < 1e-8 and e2 <= 1 / 128, f"|x| rmse {e1:.1e}, x^2 rmse {e2:.2e}"


def _minmax():
    c = (0.0, 1.0, 2.0)
    objs = [FunctionObjective(lambda a, ci=ci: (a[0] - ci) ** 2, lambda a, ci=ci: 2 * (a - ci)) for ci in c]
    res = minmax.run(Topology.path(3), objs, OptimizerConfig(n_iters=20000), Box.uniform(1, -10, 10))
    err = max(max(abs(z.alpha[0] - 1), abs(z.eta - 1)) for z in res.iterates)
    return err < 5e-2 and res.disagreement[-1] < 1e-2, f"max error {err:.2e}, disagreement {res.disagreement[-1]:.1e}"


def _planner():
    game = oracles.chain_mdp()
    qstar = oracles.value_iteration(game)[0]
    model = oracles.TabularModel(game)
    tree = search(np.array([game.initial_state]), model, oracles.RandomTabularRollout(model),
                  PlannerConfig(n_queries=2000, max_depth=game.horizon, seed=0))
    best = max(tree.root.children, key=lambda c: c.n)
    a = int(best.action[0])
    rel = abs(best.q - qstar[(game.initial_state, (a,))]) / abs(qstar[(game.initial_state, (a,))])
    return rel < 0.05, f"greedy root action relative error {rel:.2%} at L=2000"


def _rollout_ode():
    s0 = np.array([[-1.0, 0.0], [1.0, 0.0]])
    d = np.array([[-0.5, 0.0], [0.5, 0.0]])
    L = np.array([[1.0, -1.0], [-1.0, 1.0]])
    res = rollout_converge(s0, d, L, RolloutConfig())
    err = np.abs(res.positions - d).max()
    drift = np.abs(res.positions.mean(0) - s0.mean(0)).max()
    return err < 1e-4 and drift < 1e-9, f"error {err:.1e}, centroid drift {drift:.1e}"


def _lookahead():
    rng = np.random.default_rng(0)
    gap = 0.0
    for _ in range(200):
        cur, tgt = rng.normal(0, 2, 2), rng.normal(0, 2, 2)
        B = np.array([[1.0, 0.0], [-1.0, 2.0]])
        f = lambda a: np.linalg.norm(cur + B @ a - tgt)  # noqa: E731
        gap = max(gap, f(rollout_action(cur, tgt)) - f(rollout_action_pgd(cur, tgt, iters=5000)))
    return gap <= 1e-7, f"exact minus iterative objective at most {gap:.1e}"


CHECKS = {
    "counterexample": _counterexample,
    "value-iteration": _value_iteration,
    "metropolis": _metropolis,
    "max-affine": _max_affine,
    "minmax": _minmax,
    "planner": _planner,
    "rollout-ode": _rollout_ode,
    "lookahead": _lookahead,
}


def run_checks(names=None) -> list[Check]:
    out = []
    for name in names or CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # a crash is a failed check, not an aborted verify
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(Check(name, bool(ok), detail, time.perf_counter() - t0))
    return out
