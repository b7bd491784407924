"""Federated averaging: aggregation algebra, reductions, scheduling."""

import numpy as np
import pytest

from fedsln.federation import (
    ClientState,
    aggregate,
    history_to_csv,
    local_round,
    make_clients,
    run_fedavg,
    synchronize,
)
from fedsln.neural import (
    DenseLayer,
    ModelParams,
    TrainConfig,
    init_params,
    params_checksum,
    train_steps,
)
from fedsln.rng import derive_rng


def flatten(params):
    return np.concatenate([np.concatenate([l.weights.ravel(), l.biases]) for l in params.layers])


def toy_dataset(seed, n=40, dim=6):
    rng = derive_rng(seed, "toy")
    x = rng.normal(size=(n, dim))
    w = rng.normal(size=dim)
    y = (x @ w + 0.3 * rng.normal(size=n) > 0).astype(float)
    return x, y


def toy_clients(n_clients, seed=0, n=40):
    datasets = []
    for i in range(n_clients):
        x, y = toy_dataset(seed * 100 + i, n=n)
        datasets.append((x[: n - 10], y[: n - 10], x[n - 10 :], y[n - 10 :]))
    return make_clients(datasets, seed)


def const_model(value, dims=(2, 1)):
    layers = []
    fan_in = dims[0]
    for out in dims[1:]:
        layers.append(DenseLayer(np.full((out, fan_in), value), np.full(out, value)))
        fan_in = out
    return ModelParams(layers)


class TestAggregate:
    def test_weighted_mean_fixture(self):
        # sizes 1 and 3: result = 0.25*a + 0.75*b, checked to 1e-12
        a, b = const_model(0.0), const_model(4.0)
        out = aggregate([a, b], [1, 3])
        assert np.allclose(flatten(out), 3.0, atol=1e-12)

    def test_three_way_fixture(self):
        models = [const_model(v) for v in (1.0, 2.0, 6.0)]
        out = aggregate(models, [2, 3, 5])
        expected = (2 * 1.0 + 3 * 2.0 + 5 * 6.0) / 10
        assert np.allclose(flatten(out), expected, atol=1e-12)

    def test_equal_sizes_is_plain_mean(self):
        models = [init_params(s, hidden=(3,), input_dim=4) for s in range(3)]
        out = aggregate(models, [7, 7, 7])
        expected = np.mean([flatten(m) for m in models], axis=0)
        assert np.allclose(flatten(out), expected, atol=1e-12)

    def test_single_client_is_identity(self):
        m = init_params(3, hidden=(3,), input_dim=4)
        assert np.array_equal(flatten(aggregate([m], [5])), flatten(m))

    def test_weights_sum_preserved(self):
        # aggregating copies of one model returns that model
        m = init_params(1, hidden=(4,), input_dim=5)
        out = aggregate([m, m.copy(), m.copy()], [1, 2, 9])
        assert np.allclose(flatten(out), flatten(m), atol=1e-12)

    def test_validation(self):
        m = const_model(1.0)
        with pytest.raises(ValueError):
            aggregate([], [])
        with pytest.raises(ValueError):
            aggregate([m], [1, 2])
        with pytest.raises(ValueError):
            aggregate([m, m], [1, 0])


class TestClientState:
    def test_rejects_empty_training_set(self):
        with pytest.raises(ValueError):
            ClientState(0, np.empty((0, 6)), np.empty(0), np.empty((0, 6)), np.empty(0), 0)

    def test_streams_are_persistent_and_slot_scoped(self):
        c = toy_clients(1)[0]
        s1 = c.batch_stream("update", 8)
        s2 = c.batch_stream("update", 8)
        assert s1 is s2
        other = c.batch_stream("meta", 8)
        assert other is not s1

    def test_stream_batch_size_conflict(self):
        c = toy_clients(1)[0]
        c.batch_stream("update", 8)
        with pytest.raises(ValueError):
            c.batch_stream("update", 16)

    def test_generators_reproducible_across_builds(self):
        a = toy_clients(2, seed=5)[1].generator("update").random(4)
        b = toy_clients(2, seed=5)[1].generator("update").random(4)
        assert np.array_equal(a, b)

    def test_distinct_clients_draw_distinct_streams(self):
        clients = toy_clients(2, seed=5)
        a = clients[0].generator("update").random(4)
        b = clients[1].generator("update").random(4)
        assert not np.array_equal(a, b)


class TestSynchronize:
    def test_copies_not_aliases(self):
        c = toy_clients(1)[0]
        g = init_params(0)
        synchronize(c, g)
        c.params.layers[0].weights[0, 0] += 1.0
        assert g.layers[0].weights[0, 0] != c.params.layers[0].weights[0, 0]

    def test_dimension_mismatch(self):
        c = toy_clients(1)[0]
        synchronize(c, init_params(0, hidden=(4,), input_dim=6))
        with pytest.raises(ValueError):
            synchronize(c, init_params(0, hidden=(5,), input_dim=6))

    def test_local_round_requires_sync(self):
        c = toy_clients(1)[0]
        with pytest.raises(ValueError):
            local_round(c, TrainConfig())


class TestRunFedavg:
    def test_single_client_equals_sequential_sgd(self):
        # one client, aggregation weights collapse: K rounds of s steps
        # must match K*s sequential steps on the same stream, to 1e-12
        clients = toy_clients(1, seed=3)
        cfg = TrainConfig(learning_rate=0.1, batch_size=8, local_steps=7, global_rounds=4, seed=3)
        final, history = run_fedavg(clients, cfg)

        ref_client = toy_clients(1, seed=3)[0]
        initial = init_params(derive_rng(3, "init"), cfg.hidden_sizes, 6)
        stream = ref_client.batch_stream("update", cfg.batch_size)
        expected = train_steps(
            initial, ref_client.train_x, ref_client.train_y, cfg, stream, steps=28
        )
        assert np.max(np.abs(flatten(final) - flatten(expected))) < 1e-12
        assert len(history) == 4

    def test_scheduling_order_independence(self):
        cfg = TrainConfig(learning_rate=0.05, batch_size=8, local_steps=5, global_rounds=3, seed=1)
        seq, seq_hist = run_fedavg(toy_clients(3, seed=1), cfg)
        par, par_hist = run_fedavg(toy_clients(3, seed=1), cfg, max_workers=3)
        assert params_checksum(seq) == params_checksum(par)
        assert [r.checksum for r in seq_hist] == [r.checksum for r in par_hist]

    def test_rerun_reproducible(self):
        cfg = TrainConfig(learning_rate=0.05, batch_size=8, local_steps=5, global_rounds=2, seed=9)
        a, _ = run_fedavg(toy_clients(2, seed=9), cfg)
        b, _ = run_fedavg(toy_clients(2, seed=9), cfg)
        assert params_checksum(a) == params_checksum(b)

    def test_zero_rounds_returns_initial(self):
        clients = toy_clients(2, seed=4)
        cfg = TrainConfig(global_rounds=0, seed=4)
        final, history = run_fedavg(clients, cfg)
        expected = init_params(derive_rng(4, "init"), cfg.hidden_sizes, 6)
        assert np.array_equal(flatten(final), flatten(expected))
        assert history == []

    def test_explicit_initial_used(self):
        clients = toy_clients(1, seed=2)
        initial = init_params(99, hidden=(32, 16), input_dim=6)
        cfg = TrainConfig(global_rounds=0, seed=2)
        final, _ = run_fedavg(clients, cfg, initial=initial)
        assert params_checksum(final) == params_checksum(initial)

    def test_round_records_shape(self):
        clients = toy_clients(2, seed=6)
        cfg = TrainConfig(learning_rate=0.05, batch_size=8, local_steps=3, global_rounds=2, seed=6)
        _, history = run_fedavg(clients, cfg)
        assert [r.round_index for r in history] == [0, 1]
        for record in history:
            assert sorted(record.train_losses) == [0, 1]
            assert record.wall_clock >= 0.0
            assert len(record.checksum) == 64

    def test_requires_clients(self):
        with pytest.raises(ValueError):
            run_fedavg([], TrainConfig())

    def test_history_csv(self):
        clients = toy_clients(2, seed=6)
        cfg = TrainConfig(learning_rate=0.05, batch_size=8, local_steps=2, global_rounds=2, seed=6)
        _, history = run_fedavg(clients, cfg)
        text = history_to_csv(history)
        lines = text.splitlines()
        assert lines[0] == "round,client_id,train_loss"
        assert len(lines) == 5
        assert lines[1].startswith("0,0,")
