import numpy as np
import pytest
from scipy import stats

from hyprl.agent import (
    EpsilonSchedule,
    Experience,
    ReplayBuffer,
    compute_targets,
    deploy,
    select_action,
    sync_target,
    train,
)
from hyprl.environment import TuningEnvironment
from hyprl.errors import GridError
from hyprl.neuralnet import init_params, q_forward, save_checkpoint, zero_params
from hyprl.schemas import TrainConfig

from .conftest import make_md


def experience(env, action, r, terminal=False, previous=()):
    state = env.reset(0)
    for a in previous:
        state = env.step(state, a).next_state
    next_state = env.step(state, action).next_state
    return Experience(state, next_state, action, r, terminal)


def fixed_q_params(toy_md, q_values):
    params = zero_params(16, toy_md.grid.encoded_dim + 1, 2, 2, len(q_values))
    params.b2[:] = q_values
    return params


def test_buffer_keeps_last_experiences(toy_md):
    env = TuningEnvironment(toy_md, budget=4)
    buffer = ReplayBuffer(capacity=3)
    items = [experience(env, i % 4, float(i)) for i in range(7)]
    for item in items:
        buffer.add(item)
        assert len(buffer) <= 3
    assert buffer.full
    assert buffer.contents() == items[-3:]
    assert buffer.inserted == 7


def test_buffer_sampling(toy_md):
    env = TuningEnvironment(toy_md, budget=4)
    buffer = ReplayBuffer(capacity=5)
    for i in range(5):
        buffer.add(experience(env, i % 4, float(i)))
    batch = buffer.sample(3, np.random.default_rng(0))
    assert len(batch) == 3
    assert all(item in buffer.contents() for item in batch)
    assert len(buffer.sample(8, np.random.default_rng(0))) == 8


def test_greedy_ties_go_to_lowest_id(toy_md):
    params = fixed_q_params(toy_md, [0.1, 0.9, 0.9, 0.2])
    state = TuningEnvironment(toy_md, budget=4).reset(0)
    assert select_action(state, params, 0.0, np.random.default_rng(0)) == 1


def test_full_exploration_is_uniform(toy_md):
    params = fixed_q_params(toy_md, [0.0, 5.0, 0.0, 0.0])
    state = TuningEnvironment(toy_md, budget=4).reset(0)
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action(state, params, 1.0, rng) for _ in range(10_000)], minlength=4)
    assert stats.chisquare(counts).pvalue > 0.001


def test_action_sequence_is_reproducible(toy_md):
    params = init_params(16, 2, 3, 4, 4, np.random.default_rng(0))
    state = TuningEnvironment(toy_md, budget=4).reset(0)

    def actions(seed):
        rng = np.random.default_rng(seed)
        return [select_action(state, params, 0.5, rng) for _ in range(50)]

    assert actions(3) == actions(3)


def test_select_action_rejects_bad_epsilon(toy_md):
    params = fixed_q_params(toy_md, [0.0] * 4)
    state = TuningEnvironment(toy_md, budget=4).reset(0)
    with pytest.raises(ValueError):
        select_action(state, params, 1.5, np.random.default_rng(0))


def test_terminal_label_is_reward(toy_md):
    env = TuningEnvironment(toy_md, budget=4)
    target = init_params(16, 2, 3, 4, 4, np.random.default_rng(0))
    item = experience(env, 1, -0.3, terminal=True)
    [(_, action, label)] = compute_targets([item], target, gamma=0.9)
    assert action == 1
    assert label == pytest.approx(-0.3)

    perturbed = target.copy()
    perturbed.b2 += 10.0
    assert compute_targets([item], perturbed, gamma=0.9)[0][2] == label


def test_zero_gamma_label_is_reward(toy_md):
    env = TuningEnvironment(toy_md, budget=4)
    target = init_params(16, 2, 3, 4, 4, np.random.default_rng(0))
    labels = compute_targets([experience(env, 2, 0.25)], target, gamma=0.0)
    assert labels[0][2] == pytest.approx(0.25)


def test_zero_target_network_label(toy_md):
    env = TuningEnvironment(toy_md, budget=4)
    target = zero_params(16, 2, 3, 4, 4)
    labels = compute_targets([experience(env, 0, 0.5)], target, gamma=0.9)
    assert labels[0][2] == pytest.approx(0.5)


def test_bootstrapped_label(toy_md):
    env = TuningEnvironment(toy_md, budget=4)
    target = fixed_q_params(toy_md, [0.1, 0.4, -0.2, 0.3])
    labels = compute_targets([experience(env, 0, -0.5)], target, gamma=0.9)
    assert labels[0][2] == pytest.approx(-0.5 + 0.9 * 0.4)


def test_labels_shift_with_reward(toy_md):
    env = TuningEnvironment(toy_md, budget=4)
    target = init_params(16, 2, 3, 4, 4, np.random.default_rng(1))
    batch = [experience(env, 1, -0.2), experience(env, 3, -0.4, terminal=True, previous=(2,))]
    shifted = [Experience(e.s, e.s_next, e.a, e.r + 0.05, e.terminal) for e in batch]
    for (_, _, before), (_, _, after) in zip(
        compute_targets(batch, target, 0.9), compute_targets(shifted, target, 0.9)
    ):
        assert after - before == pytest.approx(0.05)
    for (_, _, plain), (_, _, with_shift) in zip(
        compute_targets(batch, target, 0.9), compute_targets(batch, target, 0.9, reward_shift=1.0)
    ):
        assert with_shift - plain == pytest.approx(1.0)


def test_sync_target_is_isolated(toy_md):
    params = init_params(16, 2, 3, 4, 4, np.random.default_rng(0))
    target = sync_target(params)
    state = TuningEnvironment(toy_md, budget=4).reset(0)
    np.testing.assert_array_equal(q_forward(state, target), q_forward(state, params))
    params.W2 += 1.0
    params.lstm.b_c -= 1.0
    assert target != params


def test_epsilon_schedule():
    schedule = EpsilonSchedule(1.0, 0.1)
    assert schedule.value(500) == 1.0
    schedule.begin_annealing(100, 100)
    assert schedule.value(100) == 1.0
    assert schedule.value(150) == pytest.approx(0.55)
    assert schedule.value(200) == pytest.approx(0.1)
    assert schedule.value(10_000) == pytest.approx(0.1)


def test_training_without_episodes_returns_initial_params(toy_md):
    cfg = TrainConfig(episodes_per_dataset=0, n_hidden=3, n_layer=4, budget=4)
    params, log = train(toy_md, [0], cfg)
    reference = init_params(16, 2, 3, 4, 4, np.random.default_rng([0, 10]))
    assert params == reference
    assert log.episodes.empty
    assert log.target_syncs == 0


def small_config(**changes):
    values = dict(
        episodes_per_dataset=40,
        budget=4,
        buffer_size=50,
        batch_size=8,
        target_update=20,
        train_every=2,
        n_hidden=4,
        n_layer=8,
        seed=5,
    )
    values.update(changes)
    return TrainConfig(**values)


def test_training_log_contents(toy_md):
    params, log = train(toy_md, [0], small_config())
    episodes = log.episodes
    assert list(episodes["episode"]) == list(range(40))
    assert episodes["steps"].between(1, 4).all()
    assert (episodes["frames"].diff().dropna() == episodes["steps"].iloc[1:].to_numpy()).all()
    assert episodes["frames"].iloc[-1] == episodes["steps"].sum()
    # target refreshed every 20 frames
    np.testing.assert_array_equal(episodes["target_syncs"], episodes["frames"] // 20)
    assert episodes["epsilon"].iloc[0] == 1.0
    assert episodes["epsilon"].between(0.1, 1.0).all()
    assert len(log.trace) == episodes["steps"].sum()
    assert set(log.trace["terminal_reason"]) <= {"none", "budget", "repeat"}
    np.testing.assert_allclose(
        episodes["return"], log.trace.groupby("episode")["reward"].sum().to_numpy()
    )


def test_training_is_reproducible(toy_md):
    first_params, first_log = train(toy_md, [0], small_config())
    second_params, second_log = train(toy_md, [0], small_config())
    assert first_params == second_params
    assert first_log.episodes.equals(second_log.episodes)
    assert first_log.trace.equals(second_log.trace)
    other_params, _ = train(toy_md, [0], small_config(seed=6))
    assert other_params != first_params


def test_training_writes_periodic_checkpoints(tmp_path, toy_md):
    train(toy_md, [0], small_config(episodes_per_dataset=10, checkpoint_every=5), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["model-000005.ckpt", "model-000010.ckpt"]


def test_deploy_with_zero_network_follows_id_order(toy_md):
    params = zero_params(16, 2, 3, 4, 4)
    record = deploy(params, toy_md, 0, budget=3)
    assert record.config_ids == [0, 1, 2]
    assert record.method == "hyp-rl"
    assert [trial.t for trial in record.trials] == [1, 2, 3]


def test_deploy_full_budget_is_permutation(toy_md):
    params = init_params(16, 2, 3, 4, 4, np.random.default_rng(2))
    record = deploy(params, toy_md, 0, budget=4)
    assert sorted(record.config_ids) == [0, 1, 2, 3]
    assert record.losses == [toy_md.loss(0, c) for c in record.config_ids]
    assert deploy(params, toy_md, 0, budget=4).config_ids == record.config_ids


def test_deploy_budget_larger_than_grid(toy_md):
    params = zero_params(16, 2, 3, 4, 4)
    with pytest.raises(GridError):
        deploy(params, toy_md, 0, budget=5)


def test_deploy_standardizes_with_split_statistics(synthetic_md):
    from hyprl.tuners.policy import HypRLTuner

    input_dim = synthetic_md.grid.encoded_dim + 1
    params = init_params(16, input_dim, 3, 4, synthetic_md.n_configs, np.random.default_rng(4))
    static = synthetic_md.static_features(2)
    for dataset_id in synthetic_md.split(2).test:
        implicit = deploy(params, synthetic_md, dataset_id, budget=4, split_id=2)
        explicit = deploy(params, synthetic_md, dataset_id, budget=4, static=static, split_id=2)
        assert implicit.config_ids == explicit.config_ids

    tuner = HypRLTuner(synthetic_md, params=params, split_id=2)
    tuner.start(0, 4, np.random.default_rng(0))
    np.testing.assert_allclose(tuner.env.static, static)


def test_checkpointed_policy_deploys_identically(tmp_path, toy_md):
    from hyprl.neuralnet import load_checkpoint

    params, _ = train(toy_md, [0], small_config(episodes_per_dataset=5))
    save_checkpoint(params, tmp_path / "model.ckpt")
    loaded, _ = load_checkpoint(tmp_path / "model.ckpt")
    assert deploy(loaded, toy_md, 0, 4).config_ids == deploy(params, toy_md, 0, 4).config_ids


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_toy_policy_picks_best_config_first(toy_md, seed):
    cfg = TrainConfig(
        episodes_per_dataset=2000,
        budget=4,
        buffer_size=500,
        batch_size=32,
        target_update=100,
        train_every=4,
        n_hidden=8,
        n_layer=16,
        gamma=0.9,
        seed=seed,
    )
    params, _ = train(toy_md, [0], cfg)
    state = TuningEnvironment(toy_md, budget=4).reset(0)
    assert int(np.argmax(q_forward(state, params))) == 3


@pytest.mark.slow
def test_episodes_grow_longer_with_shifted_rewards():
    md = make_md([[0.9, 0.7, 0.5, 0.1, 0.3, 0.6, 0.8, 0.4]])
    cfg = TrainConfig(
        episodes_per_dataset=1500,
        budget=6,
        buffer_size=500,
        batch_size=32,
        target_update=100,
        train_every=4,
        n_hidden=8,
        n_layer=16,
        reward_shift=1.0,
        seed=0,
    )
    _, log = train(md, [0], cfg)
    episodes = log.episodes[log.episodes["frames"] > cfg.buffer_size]
    tenth = max(1, len(episodes) // 10)
    assert episodes["steps"].iloc[-tenth:].mean() > episodes["steps"].iloc[:tenth].mean()
