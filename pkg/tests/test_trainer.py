"""Tests for the tabular offline training loop."""

import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sfac.divergences import parse_family
from sfac.losses import LossConfig, advantage_weight, tabular_sfac_loss
from sfac.trainer import (
    AdamMoments,
    CriticTables,
    OfflineDataset,
    TabularMdp,
    TabularPolicy,
    TrainConfig,
    TrainerError,
    TrainState,
    adam_step,
    behavior_policy,
    config_from_dict,
    config_to_dict,
    effective_config,
    epsilon_greedy,
    evaluate_policy,
    expectile_value,
    fit_critics,
    generate_dataset,
    greedy_policy,
    initial_train_state,
    make_gridworld,
    sfac_update,
    train,
    value_iteration_q,
)
from oracles import bellman_policy_values


def two_state_chain(gamma=0.9):
    # action 0 advances to the terminal paying 1, action 1 loiters for 0
    transition = np.zeros((2, 2, 2))
    transition[0, 0, 1] = 1.0
    transition[0, 1, 0] = 1.0
    transition[1, :, 1] = 1.0
    reward = np.array([[1.0, 0.0], [0.0, 0.0]])
    initial = np.array([1.0, 0.0])
    terminal = np.array([False, True])
    return TabularMdp(transition, reward, gamma, initial, terminal)


class TestGridworld:
    def test_shapes_and_stochasticity(self):
        mdp = make_gridworld()
        assert mdp.n_states == 25 and mdp.n_actions == 4
        assert_allclose(mdp.transition.sum(axis=2), 1.0)
        assert mdp.terminal[24] and not mdp.terminal[:24].any()
        assert mdp.initial[0] == 1.0

    def test_goal_absorbs_with_zero_reward(self):
        mdp = make_gridworld()
        assert_allclose(mdp.transition[24, :, 24], 1.0)
        assert_allclose(mdp.reward[24], 0.0)

    def test_wall_bump_stays(self):
        mdp = make_gridworld()
        # state 0 is the top-left corner; up (0) and left (2) bump
        assert mdp.transition[0, 0, 0] == 1.0
        assert mdp.transition[0, 2, 0] == 1.0
        assert mdp.transition[0, 1, 5] == 1.0  # down moves a full row
        assert mdp.transition[0, 3, 1] == 1.0  # right moves one cell

    def test_goal_entry_pays(self):
        mdp = make_gridworld()
        # state 23 sits left of the goal corner; moving right enters it
        assert mdp.transition[23, 3, 24] == 1.0
        assert mdp.reward[23, 3] == 1.0
        assert mdp.reward[23, 2] == -0.01

    def test_rejects_tiny_grid(self):
        with pytest.raises(ValueError):
            make_gridworld(size=1)


class TestPoliciesFromValueIteration:
    def test_greedy_after_ten_sweeps_reaches_goal(self):
        mdp = make_gridworld()
        policy = greedy_policy(value_iteration_q(mdp, 10))
        report = evaluate_policy(mdp, policy, episodes=8, horizon=50, seed=0)
        # deterministic policy and mdp: the std collapses and the goal is hit
        assert report.discounted_std == 0.0
        assert report.undiscounted_mean > 0.9

    def test_epsilon_greedy_mixes_uniform(self):
        mdp = make_gridworld()
        greedy = greedy_policy(value_iteration_q(mdp, 10))
        noisy = epsilon_greedy(greedy, 0.3)
        taken = greedy.probs.argmax(axis=1)
        rows = np.arange(25)
        assert_allclose(noisy.probs[rows, taken], 0.7 + 0.3 / 4)
        off = noisy.probs.copy()
        off[rows, taken] = 0.0
        assert_allclose(off[off > 0], 0.3 / 4)
        with pytest.raises(ValueError):
            epsilon_greedy(greedy, 1.5)

    def test_behavior_policy_composition(self):
        mdp = make_gridworld()
        want = epsilon_greedy(greedy_policy(value_iteration_q(mdp, 10)), 0.3)
        got = behavior_policy(mdp)
        assert_allclose(got.probs, want.probs)


class TestTabularTypes:
    def test_policy_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            TabularPolicy(np.array([[0.5, 0.6]]))
        with pytest.raises(ValueError):
            TabularPolicy(np.array([[1.2, -0.2]]))

    def test_mdp_rejects_bad_transition(self):
        good = make_gridworld()
        with pytest.raises(ValueError):
            TabularMdp(good.transition * 0.5, good.reward, 0.99, good.initial, good.terminal)
        with pytest.raises(ValueError):
            TabularMdp(good.transition, good.reward, 1.0, good.initial, good.terminal)

    def test_dataset_rejects_misaligned_columns(self):
        with pytest.raises(ValueError):
            OfflineDataset(
                np.array([0]), np.array([0, 1]), np.array([0.0]),
                np.array([0]), np.array([False]),
                2, 2, 0, np.zeros((2, 2)),
            )

    def test_dataset_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            OfflineDataset(
                np.array([5]), np.array([0]), np.array([0.0]),
                np.array([0]), np.array([False]),
                2, 2, 0, np.zeros((2, 2)),
            )


class TestGenerateDataset:
    def test_deterministic_given_seed(self):
        mdp = make_gridworld()
        behavior = behavior_policy(mdp)
        a = generate_dataset(mdp, behavior, 500, seed=7)
        b = generate_dataset(mdp, behavior, 500, seed=7)
        assert np.array_equal(a.s, b.s) and np.array_equal(a.a, b.a)
        assert np.array_equal(a.r, b.r) and np.array_equal(a.done, b.done)

    def test_deterministic_chain_gives_trajectory_prefix(self):
        mdp = two_state_chain()
        always_advance = TabularPolicy(np.array([[1.0, 0.0], [1.0, 0.0]]))
        ds = generate_dataset(mdp, always_advance, 3, seed=0)
        # each episode is the single transition 0 -> 1; the prefix repeats it
        assert ds.s.tolist() == [0, 0, 0]
        assert ds.a.tolist() == [0, 0, 0]
        assert ds.s_next.tolist() == [1, 1, 1]
        assert ds.done.tolist() == [True, True, True]
        assert ds.r.tolist() == [1.0, 1.0, 1.0]

    def test_empty_dataset(self):
        mdp = make_gridworld()
        ds = generate_dataset(mdp, behavior_policy(mdp), 0, seed=0)
        assert len(ds) == 0

    def test_counts_match_visits(self):
        mdp = make_gridworld()
        ds = generate_dataset(mdp, behavior_policy(mdp), 2000, seed=3)
        counts = np.zeros((25, 4))
        np.add.at(counts, (ds.s, ds.a), 1.0)
        assert np.array_equal(counts, ds.counts)
        assert ds.counts.sum() == 2000

    def test_done_iff_next_terminal(self):
        mdp = make_gridworld()
        ds = generate_dataset(mdp, behavior_policy(mdp), 2000, seed=3)
        assert np.array_equal(ds.done, mdp.terminal[ds.s_next])

    def test_row_view(self):
        mdp = two_state_chain()
        ds = generate_dataset(mdp, TabularPolicy(np.array([[1.0, 0.0], [1.0, 0.0]])), 1, seed=0)
        row = ds.row(0)
        assert (row.s, row.a, row.r, row.s_next, row.done) == (0, 0, 1.0, 1, True)


def expectile_oracle(values, weights, kappa):
    values = np.asarray(values, dtype=np.float64)
    grid = np.linspace(values.min() - 0.5, values.max() + 0.5, 200001)
    side = np.where(values[None, :] > grid[:, None], kappa, 1.0 - kappa)
    loss = np.sum(weights * side * (values[None, :] - grid[:, None]) ** 2, axis=1)
    return grid[np.argmin(loss)]


class TestExpectile:
    def test_half_is_weighted_mean(self):
        v = expectile_value([0.0, 1.0, 5.0], [1.0, 2.0, 1.0], 0.5)
        assert_allclose(v, 7.0 / 4.0, rtol=1e-14)

    def test_two_point_balance(self):
        # 0.7 (1 - v) = 0.3 (v - 0) balances at 0.7
        assert_allclose(expectile_value([0.0, 1.0], [1.0, 1.0], 0.7), 0.7, rtol=1e-14)

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(1, 7))
            values = rng.normal(size=n)
            weights = rng.uniform(0.1, 2.0, size=n)
            kappa = float(rng.uniform(0.1, 0.9))
            got = expectile_value(values, weights, kappa)
            want = expectile_oracle(values, weights, kappa)
            assert abs(got - want) < 3e-5

    def test_degenerate_and_errors(self):
        assert expectile_value([3.0, 3.0], [1.0, 1.0], 0.7) == 3.0
        with pytest.raises(ValueError):
            expectile_value([1.0], [1.0], 0.0)
        with pytest.raises(ValueError):
            expectile_value([], [], 0.5)
        with pytest.raises(ValueError):
            expectile_value([1.0], [-1.0], 0.5)


class TestFitCritics:
    def test_single_state_geometric_fixed_point(self):
        # q = mean(r) + 0.5 q with mean(r) = 1.5 has fixed point 3
        ds = OfflineDataset(
            np.zeros(4, dtype=int), np.zeros(4, dtype=int),
            np.array([1.0, 1.0, 2.0, 2.0]),
            np.zeros(4, dtype=int), np.zeros(4, dtype=bool),
            1, 1, 0, np.array([[4.0]]),
        )
        critics = fit_critics(ds, gamma=0.5, expectile=0.7, sweeps=200)
        assert_allclose(critics.q[0, 0], 3.0, atol=1e-7)
        assert_allclose(critics.v[0], 3.0, atol=1e-7)

    def test_chain_matches_bellman_solve(self):
        mdp = two_state_chain(gamma=0.9)
        behavior = TabularPolicy(np.array([[0.5, 0.5], [0.5, 0.5]]))
        ds = generate_dataset(mdp, behavior, 600, seed=1, horizon=30)
        critics = fit_critics(ds, gamma=0.9, expectile=0.5, sweeps=2000)
        # at expectile 0.5 the critic fixed point is policy evaluation of
        # the empirical action frequencies
        freq = ds.counts[0] / ds.counts[0].sum()
        policy = np.array([freq, [0.5, 0.5]])
        v_pi = bellman_policy_values(mdp.transition, mdp.reward, 0.9, policy, mdp.terminal)
        cont = np.where(mdp.terminal, 0.0, 1.0)
        q_pi = mdp.reward + 0.9 * mdp.transition @ (cont * v_pi)
        assert_allclose(critics.q[0], q_pi[0], atol=1e-6)
        assert_allclose(critics.v[0], v_pi[0], atol=1e-6)

    def test_uncovered_entries_keep_floor(self):
        mdp = two_state_chain()
        always_advance = TabularPolicy(np.array([[1.0, 0.0], [1.0, 0.0]]))
        ds = generate_dataset(mdp, always_advance, 50, seed=0)
        critics = fit_critics(ds, gamma=0.9)
        floor = ds.r.min() / (1.0 - 0.9)
        assert critics.q[0, 1] == floor  # loiter action never taken
        assert critics.q[1, 0] == floor and critics.q[1, 1] == floor
        assert critics.v[1] == floor

    def test_v_between_covered_q_bounds(self):
        mdp = make_gridworld()
        ds = generate_dataset(mdp, behavior_policy(mdp), 5000, seed=5)
        critics = fit_critics(ds, gamma=0.99)
        covered = ds.counts > 0
        for s in range(25):
            if covered[s].any():
                qs = critics.q[s, covered[s]]
                assert qs.min() - 1e-9 <= critics.v[s] <= qs.max() + 1e-9

    def test_rejects_empty_dataset(self):
        mdp = make_gridworld()
        ds = generate_dataset(mdp, behavior_policy(mdp), 0, seed=0)
        with pytest.raises(ValueError):
            fit_critics(ds, gamma=0.99)


def small_problem(seed=0, n_states=3, n_actions=3):
    rng = np.random.default_rng(seed)
    critics = CriticTables(
        rng.normal(size=(n_states, n_actions)), rng.normal(size=n_states)
    )
    state = TrainState(
        theta_logits=rng.normal(size=(n_states, n_actions)),
        zeta_logits=rng.normal(size=(n_states, n_actions)),
        critics=critics,
        step=0,
        theta_moments=AdamMoments.zeros((n_states, n_actions)),
        zeta_moments=AdamMoments.zeros((n_states, n_actions)),
    )
    s_idx = rng.integers(0, n_states, size=32)
    a_idx = rng.integers(0, n_actions, size=32)
    config = LossConfig(parse_family("jensen_shannon"), n_loss=3, eps=100.0, tau=1.0)
    return state, (s_idx, a_idx), config


class TestSfacUpdate:
    def test_zero_learning_rates_leave_state_unchanged(self):
        state, batch, config = small_problem()
        for algo in ("adam", "sgd"):
            new, _ = sfac_update(state, batch, config, (0.0, 0.0), algo=algo)
            assert np.array_equal(new.theta_logits, state.theta_logits)
            assert np.array_equal(new.zeta_logits, state.zeta_logits)
            assert new.step == 1

    def test_equal_tables_make_symmetry_inert(self):
        state, batch, config = small_problem()
        shared = state.theta_logits.copy()
        state = TrainState(
            theta_logits=shared, zeta_logits=shared.copy(),
            critics=state.critics, step=0,
            theta_moments=AdamMoments.zeros(shared.shape),
            zeta_moments=AdamMoments.zeros(shared.shape),
        )
        with_sym, diag_on = sfac_update(state, batch, config, (0.01, 0.01))
        without, diag_off = sfac_update(
            state, batch, config, (0.01, 0.01), include_symmetry=False
        )
        assert np.array_equal(with_sym.theta_logits, without.theta_logits)
        assert diag_on["consym"] == 0.0
        assert diag_off["consym"] == 0.0
        # both tables get the same gradient, so they stay locked together
        assert np.array_equal(with_sym.theta_logits, with_sym.zeta_logits)

    def test_sgd_step_is_plain_descent(self):
        state, batch, config = small_problem(seed=3)
        s_idx, a_idx = batch
        weights = advantage_weight(
            state.critics.q[s_idx, a_idx], state.critics.v[s_idx],
            config.tau, config.q_weight,
        )
        zeta_probs = state.zeta_policy().probs
        new, _ = sfac_update(state, batch, config, (0.05, 0.02), algo="sgd")
        _, _, _, grad_theta, _ = tabular_sfac_loss(
            state.theta_logits, zeta_probs, s_idx, a_idx, weights, config
        )
        assert_allclose(new.theta_logits, state.theta_logits - 0.05 * grad_theta, rtol=1e-12)

    def test_adam_first_step_is_signed(self):
        table = np.zeros((2, 2))
        grad = np.array([[3.0, -0.5], [0.0, 10.0]])
        new, moments = adam_step(table, grad, AdamMoments.zeros((2, 2)), 0.1, step=1)
        want = -0.1 * np.sign(grad) * (np.abs(grad) / (np.abs(grad) + 1e-8))
        assert_allclose(new, want, atol=1e-12)
        assert_allclose(moments.m, 0.1 * grad)

    def test_nonfinite_gradient_aborts(self):
        state, batch, config = small_problem()
        huge = CriticTables(
            np.full_like(state.critics.q, 1e308),
            np.full_like(state.critics.v, -1e308),
        )
        state = TrainState(
            theta_logits=state.theta_logits, zeta_logits=state.zeta_logits,
            critics=huge, step=0,
            theta_moments=state.theta_moments, zeta_moments=state.zeta_moments,
        )
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainerError, match="step"):
                sfac_update(state, batch, config, (0.01, 0.01))

    def test_rejects_unknown_algo(self):
        state, batch, config = small_problem()
        with pytest.raises(ValueError):
            sfac_update(state, batch, config, (0.01, 0.01), algo="momentum")


class TestEvaluatePolicy:
    def test_deterministic_rollout_matches_trajectory_sum(self):
        mdp = make_gridworld()
        policy = greedy_policy(value_iteration_q(mdp, 20))
        report = evaluate_policy(mdp, policy, episodes=4, horizon=50, seed=0)
        gamma = 0.99
        # eight moves along the shortest path; the last one pays 1
        want = sum(-0.01 * gamma**t for t in range(7)) + gamma**7
        assert_allclose(report.discounted_mean, want, rtol=1e-12)
        assert report.discounted_std == 0.0
        assert_allclose(report.undiscounted_mean, 1.0 - 0.07, rtol=1e-12)

    def test_same_seed_reproduces(self):
        mdp = make_gridworld()
        behavior = behavior_policy(mdp)
        a = evaluate_policy(mdp, behavior, 50, 100, seed=9)
        b = evaluate_policy(mdp, behavior, 50, 100, seed=9)
        assert a == b
        c = evaluate_policy(mdp, behavior, 50, 100, seed=10)
        assert c.discounted_mean != a.discounted_mean

    def test_single_step_horizon(self):
        mdp = make_gridworld()
        uniform = TabularPolicy(np.full((25, 4), 0.25))
        report = evaluate_policy(mdp, uniform, episodes=64, horizon=1, seed=2)
        assert_allclose(report.discounted_mean, -0.01, rtol=1e-12)

    def test_uniform_policy_matches_linear_solve(self):
        mdp = make_gridworld()
        uniform = TabularPolicy(np.full((25, 4), 0.25))
        v_pi = bellman_policy_values(
            mdp.transition, mdp.reward, mdp.gamma, uniform.probs, mdp.terminal
        )
        exact = float(mdp.initial @ v_pi)
        report = evaluate_policy(mdp, uniform, episodes=3000, horizon=2000, seed=4)
        se = report.discounted_std / np.sqrt(report.episodes)
        assert abs(report.discounted_mean - exact) < 5.0 * se + 1e-6

    def test_rejects_bad_arguments(self):
        mdp = make_gridworld()
        uniform = TabularPolicy(np.full((25, 4), 0.25))
        with pytest.raises(ValueError):
            evaluate_policy(mdp, uniform, 0, 10, seed=0)


class TestTrainConfig:
    def test_roundtrip_through_dict(self):
        cfg = TrainConfig(family="jeffreys", seed=11, steps=5, lr_zeta=0.002)
        data = config_to_dict(cfg)
        assert data["schema_version"] == 1
        assert set(data) == {
            "schema_version", "seed", "environment", "dataset", "critic",
            "loss", "optimizer", "evaluation",
        }
        assert config_from_dict(json.loads(json.dumps(data))) == cfg

    def test_rejects_wrong_schema_version(self):
        data = config_to_dict(TrainConfig())
        data["schema_version"] = 2
        with pytest.raises(ValueError):
            config_from_dict(data)

    def test_rejects_unknown_keys(self):
        data = config_to_dict(TrainConfig())
        data["loss"]["momentum"] = 0.9
        with pytest.raises(ValueError):
            config_from_dict(data)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=-1)
        with pytest.raises(ValueError):
            TrainConfig(batch=0)
        with pytest.raises(ValueError):
            TrainConfig(algo="rmsprop")

    def test_kl_baseline_preset(self):
        eff = effective_config(TrainConfig(kl_baseline=True))
        assert eff.use_symmetry is False
        assert eff.q_weight == 1.0
        plain = effective_config(TrainConfig())
        assert plain == TrainConfig()


def quick_config(**kwargs):
    base = dict(
        n_transitions=500, steps=40, eval_every=20, eval_episodes=20,
        eval_horizon=60, critic_sweeps=500, seed=1,
    )
    base.update(kwargs)
    return TrainConfig(**base)


class TestTrain:
    def test_zero_steps_evaluates_initial_uniform_policy(self, tmp_path):
        result = train(quick_config(steps=0), tmp_path)
        assert len(result.curve) == 1
        assert result.curve[0][0] == 0
        uniform = TabularPolicy(np.full((25, 4), 0.25))
        mdp = make_gridworld()
        want = evaluate_policy(mdp, uniform, 20, 60, [1, 3, 0])
        assert result.curve[0][1] == want.discounted_mean

    def test_outputs_written_and_config_roundtrips(self, tmp_path):
        result = train(quick_config(), tmp_path)
        lines = (tmp_path / "learning_curve.csv").read_text().splitlines()
        assert lines[0] == "step,return_mean,return_std,awr_term,consym_term,clip_fraction"
        assert len(lines) == 1 + 3  # steps 0, 20, 40
        transitions = (tmp_path / "transitions.csv").read_text().splitlines()
        assert len(transitions) == 1 + 500
        final = (tmp_path / "policy_final.csv").read_text().splitlines()
        assert final[0] == "state,action,theta_prob,zeta_prob,behavior_prob"
        assert len(final) == 1 + 25 * 4
        stored = json.loads((tmp_path / "config.json").read_text())
        assert config_from_dict(stored) == result.config

    def test_rerun_is_byte_identical(self, tmp_path):
        a = train(quick_config(), tmp_path / "a")
        b = train(quick_config(), tmp_path / "b")
        for name in ("transitions", "learning_curve", "policy_final", "config"):
            assert (
                Path(a.output_files[name]).read_bytes()
                == Path(b.output_files[name]).read_bytes()
            )

    def test_kl_baseline_bit_identical_to_symmetry_off(self, tmp_path):
        a = train(quick_config(kl_baseline=True, tau=1.0), tmp_path / "a")
        b = train(
            quick_config(use_symmetry=False, q_weight=1.0, tau=1.0), tmp_path / "b"
        )
        assert np.array_equal(a.theta_probs, b.theta_probs)
        assert np.array_equal(a.zeta_probs, b.zeta_probs)
        for name in ("transitions", "learning_curve", "policy_final"):
            assert (
                Path(a.output_files[name]).read_bytes()
                == Path(b.output_files[name]).read_bytes()
            )

    def test_short_run_beats_behavior(self, tmp_path):
        # the full five-seed, 20k-step protocol lives in the acceptance
        # suite; one 4k-step seed already clears the bar
        cfg = TrainConfig(steps=4000, eval_every=2000, seed=0)
        result = train(cfg, tmp_path)
        assert result.final_report.discounted_mean >= result.behavior_report.discounted_mean

    def test_result_carries_tables(self, tmp_path):
        result = train(quick_config(), tmp_path)
        assert result.theta_probs.shape == (25, 4)
        assert_allclose(result.theta_probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(result.theta_probs > 0.0)
        assert result.critics.q.shape == (25, 4)
