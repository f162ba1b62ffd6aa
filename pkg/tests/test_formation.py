import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxminplan.formation import (
    B, FormationEnv, FormationRollout, FormationSpec, RolloutConfig, agent_reward, equilibrium, load_fixture,
    local_generative_model, local_reward, rollout_action, rollout_action_pgd, rollout_converge, stable_dt_bound,
    step_dynamics,
)
from maxminplan.game import G1, G3, Topology, TopologySchedule

PAIR = Topology.complete(2)
finite = st.floats(-5, 5, allow_nan=False)


def lookahead_obj(cur, tgt, a):
    return float(np.linalg.norm(cur + B @ a - tgt))


# --- dynamics ---------------------------------------------------------------


def test_dynamics_matrix_determinant():
    assert np.linalg.det(B) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("s,a,expected", [((0, 0), (0, 0), (0, 0)), ((0, 0), (1, 1), (1, 1)),
                                          ((2, 3), (1, 0), (3, 2))])
def test_step_examples(s, a, expected):
    assert np.array_equal(step_dynamics(np.array(s, float), np.array(a, float)), expected)


def test_step_rejects_actions_outside_box():
    with pytest.raises(ValueError):
        step_dynamics(np.zeros(2), np.array([1.2, 0.0]))
    with pytest.raises(ValueError):
        step_dynamics(np.zeros(2), np.array([0.0, -0.1]))


@settings(max_examples=100, deadline=None)
@given(st.tuples(finite, finite), st.tuples(*[st.floats(0, 1)] * 4), st.floats(0, 1))
def test_dynamics_are_affine(s, a, lam):
    s = np.array(s)
    a1, a2 = np.array(a[:2]), np.array(a[2:])
    mixed = step_dynamics(s, lam * a1 + (1 - lam) * a2)
    assert np.allclose(mixed, lam * step_dynamics(s, a1) + (1 - lam) * step_dynamics(s, a2), atol=1e-12)


# --- reward -----------------------------------------------------------------


def test_reward_zero_on_translated_formation():
    spec = FormationSpec.regular_polygon(5)
    for i in range(5):
        assert agent_reward(spec.desired + [3.0, -7.5], spec, G1, i) == 0.0


def test_two_agent_reward_example():
    assert local_reward(np.zeros((2, 2)), np.array([[0.0, 0.0], [1.0, 0.0]])) == -1.0


def test_ordered_pairs_double_the_sum():
    s, d = np.random.default_rng(0).normal(size=(2, 4, 2))
    assert local_reward(s, d, ordered_pairs=True) == 2 * local_reward(s, d)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_reward_nonpositive_and_pair_order_free(k, seed):
    rng = np.random.default_rng(seed)
    s, d = rng.normal(size=(2, k, 2))
    perm = rng.permutation(k)
    r = local_reward(s, d)
    assert r <= 0
    assert r == pytest.approx(local_reward(s[perm], d[perm]), abs=1e-12)


def test_single_agent_reward_is_zero():
    assert local_reward(np.ones((1, 2)), np.zeros((1, 2))) == 0.0


# --- consensus flow ---------------------------------------------------------


def test_flow_fixed_point():
    d = FormationSpec.regular_polygon(4).desired
    res = rollout_converge(d, d, Topology.cycle(4).laplacian())
    assert res.converged and res.steps == 1
    assert np.array_equal(res.positions, d)


def test_two_agent_flow_meets_target():
    d = np.array([[0.0, 0.0], [1.0, 0.0]])
    res = rollout_converge(np.zeros((2, 2)), d, PAIR.laplacian(), RolloutConfig())
    assert res.converged
    assert np.allclose(res.positions, [[-0.5, 0.0], [0.5, 0.0]], atol=1e-4)


def test_flow_is_translation_equivariant():
    rng = np.random.default_rng(1)
    s, d = rng.normal(size=(2, 5, 2))
    v = np.array([2.5, -1.0])
    a = rollout_converge(s, d, G1.laplacian())
    b = rollout_converge(s + v, d, G1.laplacian())
    assert np.allclose(b.positions, a.positions + v, atol=1e-9)


def test_flow_meets_relative_targets_on_edges():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(5, 2)) * 3
    d = FormationSpec.regular_polygon(5).desired
    cfg = RolloutConfig(tol=1e-7)
    res = rollout_converge(s, d, G1.laplacian(), cfg)
    e = res.positions - d
    for i, j in G1.edges:
        assert np.linalg.norm(e[i] - e[j]) < 10 * cfg.tol


def test_flow_conserves_centroid():
    rng = np.random.default_rng(3)
    s = rng.normal(size=(8, 2)) * 4
    d = FormationSpec.regular_polygon(8).desired
    cfg = RolloutConfig(t_final=20.0)
    res = rollout_converge(s, d, G3.laplacian(), cfg)
    drift = np.abs(res.positions.mean(0) - s.mean(0)).max()
    assert drift / (res.steps * cfg.dt) < 1e-9


def test_flow_reports_non_convergence():
    rng = np.random.default_rng(4)
    res = rollout_converge(rng.normal(size=(8, 2)) * 5, np.zeros((8, 2)), G3.laplacian(),
                           RolloutConfig(t_final=1.0))
    assert not res.converged


def test_unstable_step_rejected():
    L = G1.laplacian()
    with pytest.raises(ValueError, match="stability"):
        rollout_converge(np.zeros((5, 2)), np.zeros((5, 2)), L, RolloutConfig(dt=stable_dt_bound(L)))


def test_equilibrium_matches_integration():
    rng = np.random.default_rng(5)
    s = rng.normal(size=(5, 2))
    d = FormationSpec.regular_polygon(5).desired
    res = rollout_converge(s, d, G1.laplacian(), RolloutConfig(tol=1e-9, t_final=200))
    assert np.allclose(res.positions, equilibrium(s, d), atol=1e-7)


# --- one-step lookahead -----------------------------------------------------


def test_lookahead_zero_displacement():
    assert np.array_equal(rollout_action(np.ones(2), np.ones(2)), [0.0, 0.0])


def test_lookahead_interior_solution():
    a = rollout_action(np.zeros(2), np.array([0.5, 0.5]))
    assert np.allclose(a, [0.5, 0.5], atol=1e-12)
    assert lookahead_obj(np.zeros(2), np.array([0.5, 0.5]), a) < 1e-12


def test_lookahead_far_target_beats_corners():
    cur, tgt = np.zeros(2), np.array([10.0, 10.0])
    a = rollout_action(cur, tgt)
    assert np.all((a >= 0) & (a <= 1)) and (a.min() == 0 or a.max() == 1)
    cands = [np.array(c, float) for c in ((0, 0), (0, 1), (1, 0), (1, 1))]
    cands.append(np.clip(np.linalg.solve(B, tgt - cur), 0, 1))
    assert all(lookahead_obj(cur, tgt, a) <= lookahead_obj(cur, tgt, c) + 1e-12 for c in cands)


@settings(max_examples=200, deadline=None)
@given(st.tuples(finite, finite), st.tuples(finite, finite))
def test_lookahead_matches_projected_gradient(cur, tgt):
    cur, tgt = np.array(cur), np.array(tgt)
    a = rollout_action(cur, tgt)
    assert np.all((a >= 0) & (a <= 1))
    ref = rollout_action_pgd(cur, tgt, iters=20000, tol=1e-13)
    assert lookahead_obj(cur, tgt, a) <= lookahead_obj(cur, tgt, ref) + 1e-7
    assert lookahead_obj(cur, tgt, a) <= lookahead_obj(cur, tgt, np.zeros(2)) + 1e-12


def test_lookahead_is_row_wise():
    rng = np.random.default_rng(6)
    cur, tgt = rng.normal(size=(2, 6, 2))
    rows = rollout_action(cur, tgt)
    assert rows.shape == (6, 2)
    for k in range(6):
        assert np.array_equal(rows[k], rollout_action(cur[k], tgt[k]))


# --- local models -----------------------------------------------------------


def test_singleton_neighborhood_model():
    topo = Topology(2)
    model, _ = local_generative_model(topo, FormationSpec.regular_polygon(2), 0)
    assert model.members == (0,)
    _, r = model.step(np.zeros((1, 2)), np.array([0.3, 0.4]))
    assert r == 0.0


def test_model_agrees_with_reward_and_dynamics():
    spec = FormationSpec.regular_polygon(8)
    rng = np.random.default_rng(7)
    for i in range(8):
        model, _ = local_generative_model(G3, spec, i)
        idx = list(model.members)
        s = rng.normal(size=(len(idx), 2))
        a = model.sample_action(rng)
        nxt, r = model.step(s, a)
        assert np.array_equal(nxt, np.array([step_dynamics(s[k], a[2 * k:2 * k + 2]) for k in range(len(idx))]))
        assert r == local_reward(nxt, spec.desired[idx])
        assert model.deterministic


def test_rollout_estimate_is_discounted_sum():
    spec = FormationSpec.regular_polygon(3)
    ro = FormationRollout(spec.desired, gamma=0.5)
    s = np.random.default_rng(8).normal(size=(3, 2))
    total, state = 0.0, s
    for k in range(4):
        state = state + ro.action(state) @ B.T
        total += 0.5 ** k * local_reward(state, spec.desired)
    assert ro(s, 4) == pytest.approx(total, abs=1e-12)
    assert ro(s, 0) == 0.0


def test_env_clips_actions_and_uses_schedule():
    spec = FormationSpec.regular_polygon(5)
    env = FormationEnv(spec, TopologySchedule(((G1, 1), (Topology(5), 1))), spec.desired)
    nxt, r = env.step(spec.desired, np.full((5, 2), 2.0), 0)
    assert np.allclose(nxt, spec.desired + [1.0, 1.0])
    assert np.allclose(r, 0.0)
    assert np.all(env.rewards(np.random.default_rng(0).normal(size=(5, 2)), 1) == 0)


def test_env_size_mismatch():
    with pytest.raises(ValueError):
        FormationEnv(FormationSpec.regular_polygon(4), TopologySchedule.fixed(G1), np.zeros((4, 2)))


def test_fixtures_have_matching_shapes():
    fx = load_fixture("formations.json")
    assert np.shape(fx["pentagon"]) == np.shape(fx["initial_5"]) == (5, 2)
    assert np.shape(fx["octagon"]) == np.shape(fx["initial_8"]) == (8, 2)
    assert np.allclose(fx["pentagon"], FormationSpec.regular_polygon(5).desired, atol=1e-9)
