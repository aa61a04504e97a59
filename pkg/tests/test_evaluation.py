import numpy as np
import pandas as pd
import pytest

from hyprl.errors import HypRLError, UsageError
from hyprl.evaluation import (
    Strategy,
    adtm,
    adtm_with_excluded,
    average_rank,
    build_report,
    normalized_distance,
    records_frame,
    run_benchmark,
)
from hyprl.neuralnet import zero_params
from hyprl.schemas import Trial, TrialRecord

from .conftest import make_md

TRANSFER_GRID = "a:one-hot:p,q,r,s;b:scalar:1,2,3,4;c:scalar:0,1,2,3"


def record(dataset_id, config_ids, md, method="random", seed=0, split_id=0):
    trials = [
        Trial(t, c, md.loss(dataset_id, c)) for t, c in enumerate(config_ids, start=1)
    ]
    return TrialRecord(method, dataset_id, seed, trials, split_id)


@pytest.fixture
def three_md():
    return make_md([[0.2, 0.5, 0.8], [0.0, 0.1, 1.0]])


def test_normalized_distance(three_md):
    assert normalized_distance(record(0, [1], three_md), three_md, 1) == pytest.approx(0.5)
    assert normalized_distance(record(0, [1, 0], three_md), three_md, 2) == 0.0


def test_adtm_averages_over_datasets(three_md):
    records = [record(0, [1], three_md), record(1, [1], three_md)]
    assert adtm(records, three_md, 1) == pytest.approx(0.3)


def test_adtm_is_invariant_to_affine_rescaling():
    rng = np.random.default_rng(0)
    for _ in range(200):
        losses = rng.random((3, 7))
        scale, offset = rng.uniform(0.1, 10.0), rng.uniform(-5.0, 5.0)
        md, scaled = make_md(losses), make_md(scale * losses + offset)
        orders = [rng.permutation(7)[:5] for _ in range(3)]
        previous = np.inf
        for t in range(1, 6):
            plain = adtm([record(d, o, md) for d, o in enumerate(orders)], md, t)
            rescaled = adtm([record(d, o, scaled) for d, o in enumerate(orders)], scaled, t)
            assert rescaled == pytest.approx(plain, abs=1e-9)
            assert plain <= previous
            previous = plain


def test_adtm_matches_brute_force():
    rng = np.random.default_rng(5)
    losses = rng.random((4, 9))
    md = make_md(losses)
    orders = [rng.permutation(9)[:6] for _ in range(4)]
    records = [record(d, o, md) for d, o in enumerate(orders)]
    previous = np.inf
    for t in range(1, 7):
        expected = np.mean(
            [
                (losses[d, o[:t]].min() - losses[d].min()) / (losses[d].max() - losses[d].min())
                for d, o in enumerate(orders)
            ]
        )
        value = adtm(records, md, t)
        assert value == pytest.approx(expected)
        assert value <= previous
        previous = value


def test_constant_dataset_is_excluded(caplog):
    md = make_md([[0.4, 0.4, 0.4], [0.1, 0.3, 0.2]])
    records = [record(0, [0], md), record(1, [1], md)]
    value, excluded = adtm_with_excluded(records, md, 1)
    assert excluded == 1
    assert value == pytest.approx(1.0)
    assert adtm(records, md, 1) == pytest.approx(1.0)
    assert "excluded" in caplog.text
    assert np.isnan(adtm([records[0]], md, 1))


def test_average_rank_two_methods():
    ranks = average_rank({"a": {0: 0.1, 1: 0.2}, "b": {0: 0.3, 1: 0.4}})
    assert ranks == {"a": 1.0, "b": 2.0}


def test_average_rank_ties():
    ranks = average_rank({"a": {0: 0.1}, "b": {0: 0.1}, "c": {0: 0.5}})
    assert ranks == {"a": 1.5, "b": 1.5, "c": 3.0}


def test_average_rank_sums_to_triangular_number():
    rng = np.random.default_rng(0)
    methods = {name: {k: float(rng.random()) for k in range(10)} for name in "abcde"}
    assert sum(average_rank(methods).values()) == pytest.approx(5 * 6 / 2)


def test_average_rank_needs_same_datasets():
    with pytest.raises(ValueError):
        average_rank({"a": {0: 0.1}, "b": {1: 0.1}})


def test_build_report_tables(three_md):
    records = [
        record(0, [1, 0], three_md, "random"),
        record(0, [2, 1], three_md, "i-gp"),
    ]
    report = build_report(records, three_md, budget=2)
    assert report.methods == ["random", "i-gp"]
    np.testing.assert_allclose(report.adtm_curve("random"), [0.5, 0.0])
    np.testing.assert_allclose(report.adtm_curve("i-gp"), [1.0, 0.5])
    np.testing.assert_allclose(report.rank_curve("random"), [1.0, 1.0])
    np.testing.assert_allclose(report.rank_curve("i-gp"), [2.0, 2.0])
    assert list(report.timing["trials"]) == [2, 2]
    assert len(records_frame(records)) == 4


def test_build_report_needs_every_method(three_md):
    records = [record(0, [1], three_md, "random"), record(1, [1], three_md, "i-gp")]
    with pytest.raises(HypRLError, match="not every method"):
        build_report(records, three_md, budget=1)


def test_empty_report(three_md):
    report = build_report([], three_md, budget=3)
    assert report.adtm.empty
    assert report.rank.empty
    assert report.methods == []


def test_single_method_always_ranks_first(synthetic_md):
    report = run_benchmark(synthetic_md, [Strategy.from_method("random")], 4, seeds=[0, 1])
    assert (report.rank["rank"] == 1.0).all()
    assert len(report.records) == 2 * 6


def test_duplicated_strategy_gives_identical_curves(synthetic_md):
    strategies = [Strategy("random-a", "random"), Strategy("random-b", "random")]
    report = run_benchmark(synthetic_md, strategies, 5, seeds=[3], split_ids=[0, 1])
    np.testing.assert_array_equal(report.adtm_curve("random-a"), report.adtm_curve("random-b"))
    assert (report.rank["rank"] == 1.5).all()


def test_random_adtm_is_nonincreasing(synthetic_md):
    report = run_benchmark(synthetic_md, [Strategy.from_method("random")], 6, seeds=[0, 1, 2])
    curve = report.adtm_curve("random")
    assert len(curve) == 6
    assert np.all(np.diff(curve) <= 1e-12)
    # the full grid always contains the minimum
    assert curve[-1] == pytest.approx(0.0)


def test_benchmark_with_zero_network(synthetic_md):
    input_dim = synthetic_md.grid.encoded_dim + 1
    params = {s.split_id: zero_params(16, input_dim, 3, 4, synthetic_md.n_configs) for s in synthetic_md.splits}
    strategies = [Strategy.from_method("random"), Strategy.from_method("hyp-rl", params)]
    report = run_benchmark(synthetic_md, strategies, 3, seeds=[0])
    hyp = [r for r in report.records if r.method == "hyp-rl"]
    assert all(r.config_ids == [0, 1, 2] for r in hyp)
    ranks = report.rank.groupby(["split", "dataset_id", "seed", "t"])["rank"].sum()
    assert (ranks == 3.0).all()


def test_parallel_jobs_give_same_report(synthetic_md):
    strategies = [Strategy.from_method("random"), Strategy.from_method("i-gp")]
    serial = run_benchmark(synthetic_md, strategies, 4, seeds=[0, 1], jobs=1)
    parallel = run_benchmark(synthetic_md, strategies, 4, seeds=[0, 1], jobs=4)
    pd.testing.assert_frame_equal(serial.adtm, parallel.adtm)
    pd.testing.assert_frame_equal(serial.rank, parallel.rank)
    assert serial.records == parallel.records


def test_failure_flushes_partial_records(tmp_path, synthetic_md):
    strategies = [Strategy.from_method("random"), Strategy.from_method("hyp-rl", {})]
    partial = tmp_path / "trials.partial.csv"
    with pytest.raises(UsageError, match="no trained network"):
        run_benchmark(synthetic_md, strategies, 3, seeds=[0], partial_path=partial)
    frame = pd.read_csv(partial)
    assert not frame.empty
    assert set(frame["method"]) == {"random"}


def test_benchmark_argument_errors(synthetic_md, toy_md):
    with pytest.raises(UsageError, match="budget"):
        run_benchmark(synthetic_md, [Strategy.from_method("random")], 7, seeds=[0])
    with pytest.raises(UsageError, match="no splits"):
        run_benchmark(toy_md, [Strategy.from_method("random")], 2, seeds=[0])
    with pytest.raises(UsageError):
        Strategy.from_method("grid-search")


@pytest.fixture(scope="module")
def transfer_md():
    from hyprl.metadata import generate_synthetic_metadataset, grid_from_spec

    return generate_synthetic_metadataset(25, grid_from_spec(TRANSFER_GRID), seed=0)


@pytest.fixture(scope="module")
def transfer_run(transfer_md):
    from hyprl.agent import train
    from hyprl.schemas import TrainConfig

    # rewards shifted into [0, 1] inside the Bellman labels: with raw negative
    # rewards every extra trial costs return and episodes shrink instead
    cfg = TrainConfig(
        episodes_per_dataset=250,
        budget=10,
        buffer_size=2000,
        target_update=500,
        n_hidden=16,
        n_layer=32,
        reward_shift=1.0,
        seed=0,
    )
    params, log = train(transfer_md, transfer_md.split(0).train, cfg, split_id=0)
    return cfg, params, log


@pytest.mark.slow
def test_trained_policy_transfers_to_test_datasets(transfer_md, transfer_run):
    _, params, log = transfer_run
    assert log.episodes["frames"].iloc[-1] <= 50_000
    strategies = [Strategy.from_method("random"), Strategy.from_method("hyp-rl", {0: params})]
    report = run_benchmark(transfer_md, strategies, 10, seeds=range(5), split_ids=[0])
    policy, random = report.adtm_curve("hyp-rl"), report.adtm_curve("random")
    assert policy[-1] <= 0.9 * random[-1]
    assert policy[0] < random[0]


@pytest.mark.slow
def test_episodes_grow_longer_during_transfer_training(transfer_run):
    cfg, _, log = transfer_run
    episodes = log.episodes[log.episodes["frames"] > cfg.buffer_size]
    tenth = max(1, len(episodes) // 10)
    assert episodes["steps"].iloc[-tenth:].mean() > episodes["steps"].iloc[:tenth].mean()


@pytest.mark.slow
def test_policy_trials_are_cheaper_than_gp(transfer_md):
    from hyprl.neuralnet import init_params

    params = init_params(
        16, transfer_md.grid.encoded_dim + 1, 16, 32, transfer_md.n_configs, np.random.default_rng(0)
    )
    strategies = [Strategy.from_method("hyp-rl", {0: params}), Strategy.from_method("i-gp")]
    report = run_benchmark(transfer_md, strategies, 30, seeds=[0, 1], split_ids=[0])
    seconds = report.timing.set_index("method")["mean_seconds"]
    assert seconds["hyp-rl"] < seconds["i-gp"]
