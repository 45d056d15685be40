import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varmix import envs, episodic
from varmix.envs import MixtureEnv
from varmix.episodic import AgentConfig, EpisodicAgentState


def tabular(seed=0, S=3, A=2, H=3):
    return envs.random_tabular(np.random.default_rng(seed), S, A, horizon=H)


def two_state_env(H=2, p=0.3):
    """d = 2: phi(s'|s, a) = e_{s'} / sqrt 2, theta_h = sqrt 2 (p, 1 - p)."""
    phi = np.zeros((2, 1, 2, 2))
    for s in range(2):
        phi[s, 0] = np.eye(2) / math.sqrt(2)
    theta = np.tile(math.sqrt(2) * np.array([p, 1 - p]), (H, 1))
    return MixtureEnv(phi, theta, np.zeros((H, 2, 1)), horizon=H)


# beta schedules --------------------------------------------------------------------


def test_betas_hand_arithmetic():
    d, k, H, lam, delta, B = 4, 10, 5, 1.0, 0.1, 1.0
    lc = math.log(4 * 100 * 5 / 0.1)
    hat = 8 * math.sqrt(4 * math.log(11) * lc) + 4 * 2 * lc + 1
    check = 8 * 4 * math.sqrt(math.log(11) * lc) + 4 * 2 * lc + 1
    tilde = 8 * math.sqrt(4 * 625 * math.log(1 + 10 * 625 / 4) * lc) + 4 * 25 * lc + 1
    got = episodic.beta_schedules(d, k, H, lam, delta, B)
    assert got == pytest.approx((hat, check, tilde), rel=1e-14)


def test_betas_equal_in_one_dimension():
    hat, check, _ = episodic.beta_schedules(1, 17, 4, 0.5, 0.05, 2.0)
    assert hat == pytest.approx(check, rel=1e-15)


def test_check_over_hat_leading_ratio():
    d = 9
    ratios = []
    for k in (10, 10**4, 10**8):
        lc = math.log(4 * k * k * 3 / 0.1)
        hat, check, _ = episodic.beta_schedules(d, k, 3, 1.0, 0.1, 0.0)
        rest = 4 * math.sqrt(d) * lc
        ratios.append((check - rest) / (hat - rest))
    assert ratios == pytest.approx([math.sqrt(d)] * 3, rel=1e-12)


@given(st.integers(1, 50), st.integers(1, 10**6), st.integers(1, 20), st.floats(0.01, 10), st.floats(0.001, 0.99))
def test_hat_below_check(d, k, H, lam, delta):
    hat, check, _ = episodic.beta_schedules(d, k, H, lam, delta, 1.0)
    assert hat <= check * (1 + 1e-15)


def test_betas_reject_zero_episode():
    with pytest.raises(ValueError):
        episodic.beta_schedules(2, 0, 3, 1.0, 0.1, 1.0)


def test_baseline_radius_formula():
    got = episodic.baseline_beta(4, 10, 5, 2.0, 0.1, 3.0)
    assert got == pytest.approx(5 * math.sqrt(4 * math.log((1 + 10 * 25 / 2.0) / 0.1)) + math.sqrt(2.0) * 3.0)


# backward pass ------------------------------------------------------------------------


def test_first_episode_backward_pass():
    env = tabular()
    ag = EpisodicAgentState(env, AgentConfig())
    beta = ag.betas()[0]
    Q, V, _ = ag.backward_pass(beta)
    H = env.horizon
    assert np.array_equal(Q[H - 1], env.reward[H - 1])
    for h in range(H - 1):
        phi = env.feature_expectation(V[h + 1])
        expected = np.minimum(H, env.reward[h] + beta * np.linalg.norm(phi, axis=-1) / math.sqrt(1.0))
        assert np.allclose(Q[h], expected, rtol=1e-12)


def test_zero_reward_zero_radius_gives_zero():
    env = tabular()
    env0 = envs.tabular_as_mixture(env.kernel_table, np.zeros_like(env.reward))
    ag = EpisodicAgentState(env0)
    Q, V, _ = ag.backward_pass(0.0)
    assert not Q.any() and not V.any()


def _slow_q(env, data, beta, lam, H):
    """Recompute Q from recorded (x-building inputs, weights) with explicit sums."""
    S, A, d = env.n_states, env.n_actions, env.dim
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Sig = lam * np.eye(d)
        b = np.zeros(d)
        for (s, a, s2, Vn, sb) in data[h]:
            x = sum(env.phi[s, a, j] * Vn[j] for j in range(S))
            Sig += np.outer(x, x) / sb**2
            b += Vn[s2] * x / sb**2
        theta = np.linalg.solve(Sig, b)
        Sinv = np.linalg.inv(Sig)
        for s in range(S):
            for a in range(A):
                phi = sum(env.phi[s, a, j] * V[h + 1][j] for j in range(S))
                q = env.reward[h, s, a] + phi @ theta + beta * math.sqrt(phi @ Sinv @ phi)
                Q[h, s, a] = min(H, max(0.0, q))
        V[h] = Q[h].max(axis=1)
    return Q


@pytest.mark.parametrize("alg", episodic.ALGORITHMS)
def test_backward_pass_matches_slow_path(alg):
    env = tabular(seed=4, S=3, A=2, H=3)
    ag = EpisodicAgentState(env, AgentConfig(alg, param_bound=env.param_bound))
    rng = np.random.default_rng(9)
    data = [[] for _ in range(env.horizon)]
    for k in range(1, 51):
        ag.k = k
        betas = ag.betas()
        ag.backward_pass(betas[0])
        s = 0
        for h in range(env.horizon):
            a = int(ag.policy[h, s])
            s2 = env.sample_transition(s, a, h, rng)
            sb, _ = ag.absorb_step(s, a, s2, h, betas)
            data[h].append((s, a, s2, ag.V[h + 1].copy(), sb))
            s = s2
    ag.k = 51
    beta = ag.betas()[0]
    Q, _, _ = ag.backward_pass(beta)
    assert np.allclose(Q, _slow_q(env, data, beta, 1.0, env.horizon), rtol=1e-9, atol=1e-9)


# variance estimate, offset, sigma_bar -----------------------------------------------------


def test_variance_estimate_zero_parameters():
    env = tabular()
    ag = EpisodicAgentState(env)
    ag.backward_pass()
    assert ag.variance_estimate(0, 1, 0) == 0.0


def test_variance_estimate_deterministic_env_true_parameters():
    S, A, H = 3, 2, 3
    P = np.zeros((H, S, A, S))
    for h in range(H):
        for s in range(S):
            for a in range(A):
                P[h, s, a, (s + a + 1) % S] = 1.0
    env = envs.tabular_as_mixture(P, np.full((H, S, A), 0.5))
    ag = EpisodicAgentState(env)
    ag.backward_pass(0.0, env.theta)
    ag.theta_tilde[:] = env.theta
    for h in range(H):
        for s in range(S):
            for a in range(A):
                assert ag.variance_estimate(s, a, h) == pytest.approx(0.0, abs=1e-12)


def test_variance_estimate_true_parameters_brute_force():
    env = tabular(seed=5, S=4, A=2, H=3)
    ag = EpisodicAgentState(env)
    ag.backward_pass(0.0, env.theta)
    ag.theta_tilde[:] = env.theta
    for h in range(env.horizon):
        V = ag.V[h + 1]
        for s in range(4):
            for a in range(2):
                p = env.kernel(h)[s, a]
                m = sum(p[j] * V[j] for j in range(4))
                brute = sum(p[j] * V[j] ** 2 for j in range(4)) - m * m
                assert ag.variance_estimate(s, a, h) == pytest.approx(brute, abs=1e-10)


def test_variance_estimate_can_be_negative():
    phi_v, phi_v2 = np.array([1.0]), np.array([1.0])
    assert episodic.estimated_variance(phi_v, phi_v2, np.array([2.0]), np.array([1.0]), 3.0) == -3.0


def test_offset_zero_radii():
    assert episodic.offset(0.7, 0.4, 0.0, 0.0, 5.0) == 0.0


def test_offset_saturates():
    assert episodic.offset(10.0, 10.0, 1e6, 1e6, 3.0) == 18.0


def test_offset_mid_range():
    H, bh, bt, c, t = 4.0, 0.01, 0.002, 50.0, 900.0
    assert episodic.offset(bh, bt, c, t, H) == pytest.approx(2 * 4 * 50 * 0.01 + 900 * 0.002)
    assert episodic.offset(0.1, bt, c, t, H) == pytest.approx(16 + 1.8)


def test_sigma_bar_floor():
    assert episodic.sigma_bar(0.1, 0.2, 4.0, 4) == pytest.approx(2.0)


def test_sigma_bar_upper_value():
    H = 5.0
    assert episodic.sigma_bar(H**2, 2 * H**2, H, 3) == pytest.approx(math.sqrt(3) * H)


def test_sigma_bar_generic():
    assert episodic.sigma_bar(1.5, 2.25, 2.0, 4) == pytest.approx(math.sqrt(3.75))


@given(st.floats(-25, 25), st.floats(0, 50), st.floats(0.5, 10), st.integers(1, 30))
def test_sigma_bar_range(var, err, H, d):
    var = min(var, H * H)
    err = min(err, 2 * H * H)
    sb = episodic.sigma_bar(var, err, H, d)
    assert sb >= H / math.sqrt(d) * (1 - 1e-15)
    assert sb * sb <= 3 * H * H * (1 + 1e-12)


# absorb ------------------------------------------------------------------------------------


def test_absorb_with_zero_values_is_noop_on_b():
    env = tabular()
    ag = EpisodicAgentState(env)
    ag.backward_pass()
    H = env.horizon
    ag.absorb_step(0, 0, 1, H - 1)  # V_{H+1} = 0
    assert not ag.hat[H - 1].b_vec.any() and not ag.tilde[H - 1].b_vec.any()
    assert np.array_equal(ag.hat[H - 1].sigma_mat, np.eye(env.dim))


def test_absorb_one_step_by_hand():
    env = two_state_env(H=2, p=0.3)
    ag = EpisodicAgentState(env, AgentConfig(delta=0.1, param_bound=1.0))
    ag.V[1] = np.array([0.5, 1.5])
    betas = ag.betas()
    sb, bonus = ag.absorb_step(0, 0, 1, 0, betas)
    x = np.array([0.5, 1.5]) / math.sqrt(2)
    x2 = np.array([0.25, 2.25]) / math.sqrt(2)
    _, check, tilde = betas
    err = min(4.0, 2 * 2 * check * np.linalg.norm(x)) + min(4.0, tilde * np.linalg.norm(x2))
    expect_sb = math.sqrt(max(4 / 2, 0.0 + err))
    assert sb == pytest.approx(expect_sb)
    assert bonus == pytest.approx(np.linalg.norm(x))
    assert np.allclose(ag.hat[0].sigma_mat, np.eye(2) + np.outer(x, x) / expect_sb**2)
    assert np.allclose(ag.hat[0].b_vec, 1.5 * x / expect_sb**2)
    # second moment: unit weight
    assert np.allclose(ag.tilde[0].sigma_mat, np.eye(2) + np.outer(x2, x2))
    assert np.allclose(ag.tilde[0].b_vec, 2.25 * x2)


def test_baseline_absorb_uses_unit_weight():
    env = two_state_env()
    ag = EpisodicAgentState(env, AgentConfig("ucrl-vtr"))
    ag.V[1] = np.array([1.0, 2.0])
    sb, _ = ag.absorb_step(1, 0, 0, 0)
    x = np.array([1.0, 2.0]) / math.sqrt(2)
    assert sb == 1.0
    assert np.allclose(ag.hat[0].sigma_mat, np.eye(2) + np.outer(x, x))
    assert ag.tilde[0].count == 0


# runs -----------------------------------------------------------------------------------------


def test_oracle_planning_has_zero_regret():
    for seed in range(3):
        env = tabular(seed=seed, S=4, A=3, H=4)
        ag = EpisodicAgentState(env)
        ag.backward_pass(0.0, env.theta)
        V_star, Q_star = envs.optimal_values(env)
        assert np.allclose(ag.Q, Q_star, atol=1e-12)
        V_pi = envs.policy_values(env, ag.policy)
        assert V_star[0, 0] - V_pi[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_single_episode_regret():
    env = tabular(seed=2, S=4, A=2, H=3)
    conf = AgentConfig(param_bound=env.param_bound)
    r = episodic.run(env, 1, conf, seed=0)
    ag = EpisodicAgentState(env, conf)
    ag.backward_pass()
    V_star, _ = envs.optimal_values(env)
    expected = V_star[0, 0] - envs.policy_values(env, ag.policy)[0, 0]
    assert r.trace.columns["episode_regret"][0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("alg", episodic.ALGORITHMS)
def test_clamp_and_greedy_invariants(alg):
    env = tabular(seed=1, S=3, A=2, H=3)
    ag = EpisodicAgentState(env, AgentConfig(alg, param_bound=env.param_bound))
    rng = np.random.default_rng(0)
    for k in range(1, 40):
        ag.k = k
        betas = ag.betas()
        ag.backward_pass(betas[0])
        assert ag.Q.min() >= 0 and ag.Q.max() <= env.horizon
        assert np.array_equal(ag.V[:-1], ag.Q.max(axis=2))
        assert not ag.V[-1].any()
        s = 0
        for h in range(env.horizon):
            a = int(ag.policy[h, s])
            s2 = env.sample_transition(s, a, h, rng)
            ag.absorb_step(s, a, s2, h, betas)
            s = s2


def test_run_diagnostics_and_determinism():
    env = tabular(seed=3, S=3, A=2, H=3)
    conf = AgentConfig(delta=0.05, param_bound=env.param_bound)
    a = episodic.run(env, 60, conf, seed=4)
    b = episodic.run(env, 60, conf, seed=4)
    assert a.trace.to_csv() == b.trace.to_csv()
    assert a.trace.header == ["seed", "k", "episode_regret", "cumulative_regret", "min_sigma_bar", "max_bonus",
                              "optimistic_flag"]
    assert a.variance_checked == 60 * 3
    assert a.potential_ok
    inc = a.trace.columns["episode_regret"]
    assert np.all(inc >= -1e-12)
    T = 60 * 3
    assert a.total_variance <= 3 * (3 * T + 27 * math.log(1 / 0.05))


def test_optimism_frequency_on_tabular_mixtures():
    delta = 0.05
    env = tabular(seed=11, S=3, A=2, H=3)
    conf = AgentConfig(delta=delta, param_bound=env.param_bound)
    flags = [episodic.run(env, 40, conf, seed=s, diagnostics=False).optimistic_all for s in range(10)]
    assert np.mean(flags) >= 1 - 5 * delta


def test_hard_instance_runs():
    signs = np.ones((3, 3))
    env = envs.hard_mdp_episodic(4, 3, 100, 1.5, signs)
    for alg in episodic.ALGORITHMS:
        r = episodic.run(env, 20, AgentConfig(alg, param_bound=1.5), seed=0)
        assert len(r.trace) == 20
        assert np.all(np.diff(r.trace.cumulative) >= -1e-12)
