import dataclasses

import numpy as np
import pytest

from fedphish import continual, data, federated
from fedphish.continual import StrategyConfig, StrategyKind
from fedphish.errors import ConfigurationError, DimensionError, ProtocolError
from fedphish.federated import (NodeConfig, NodeUpdate, SimulationConfig, broadcast_get, derive_seed,
                                node_round, run_simulation, server_ingest, server_init)
from fedphish.models import ModelConfig, ModelKind, build_model
from fedphish.nn import ParamSet


def vec(*values):
    return ParamSet.from_arrays([("w", np.array(values, dtype=float))])


def ingest(state, n, *values, node=1, rnd=0):
    return server_ingest(state, NodeUpdate(node, vec(*values), n, rnd))


# -- aggregator ---------------------------------------------------------------

def test_init_state():
    st = server_init(vec(5.0, 6.0))
    assert st.n_total == 0
    assert np.all(st.w_cum.flat == 0)
    assert broadcast_get(st) == vec(5.0, 6.0)


def test_worked_two_updates():
    st = server_init(vec(0.0, 0.0))
    ingest(st, 4, 1.0, 2.0)
    assert broadcast_get(st).flat.tolist() == [1.0, 2.0]
    ingest(st, 4, 3.0, 6.0)
    assert broadcast_get(st).flat.tolist() == [2.0, 4.0]


@pytest.mark.parametrize("order", [[(1, 0.0), (3, 4.0)], [(3, 4.0), (1, 0.0)]])
def test_order_swap(order):
    st = server_init(vec(0.0))
    for n, w in order:
        ingest(st, n, w)
    assert broadcast_get(st).flat.tolist() == [3.0]


def test_n_total_grows_by_count():
    st = server_init(vec(0.0))
    for k, n in enumerate([2, 7, 1], start=1):
        before = st.n_total
        ingest(st, n, float(k))
        assert st.n_total == before + n
        assert st.updates_processed == k


def test_identical_updates_fix_w0(rng):
    w = rng.normal(size=4)
    st = server_init(vec(*np.zeros(4)))
    for n in rng.integers(1, 100, 6):
        ingest(st, int(n), *w)
    np.testing.assert_allclose(broadcast_get(st).flat, w, rtol=1e-12)


def test_randomized_against_brute_force(rng):
    for _ in range(200):
        shape = tuple(rng.integers(1, 4, size=rng.integers(1, 3)))
        template = ParamSet.from_arrays([("a", np.zeros(shape)), ("b", np.zeros(2))])
        ups = [(int(rng.integers(1, 50)), rng.normal(scale=10, size=template.size)) for _ in range(rng.integers(1, 30))]
        expect = sum(n * w for n, w in ups) / sum(n for n, _ in ups)
        for perm in (range(len(ups)), rng.permutation(len(ups))):
            st = server_init(template)
            for i in perm:
                n, w = ups[i]
                server_ingest(st, NodeUpdate(1, template.with_flat(w), n))
            np.testing.assert_allclose(st.w_0.flat, expect, rtol=0, atol=1e-9)


def test_broadcast_is_a_copy():
    st = server_init(vec(1.0))
    got = broadcast_get(st)
    got.flat[:] = 99.0
    assert broadcast_get(st).flat.tolist() == [1.0]
    assert broadcast_get(st) == broadcast_get(st)


@pytest.mark.parametrize("n", [0, -3, 2.5, True])
def test_bad_sample_count(n):
    with pytest.raises(ProtocolError):
        ingest(server_init(vec(0.0)), n, 1.0)


def test_shape_mismatch():
    with pytest.raises(ProtocolError):
        ingest(server_init(vec(0.0)), 1, 1.0, 2.0)


def test_non_update_rejected():
    with pytest.raises(ProtocolError):
        server_ingest(server_init(vec(0.0)), vec(1.0))


def test_non_finite_rejected():
    with pytest.raises(ProtocolError):
        ingest(server_init(vec(0.0)), 1, float("nan"))


def test_per_round_window_resets():
    st = server_init(vec(0.0), window="per-round")
    ingest(st, 1, 10.0, rnd=1)
    ingest(st, 1, 20.0, rnd=1)
    assert st.w_0.flat.tolist() == [15.0]
    ingest(st, 1, 2.0, rnd=2)
    assert st.w_0.flat.tolist() == [2.0]


def test_unknown_window():
    with pytest.raises(ConfigurationError):
        server_init(vec(0.0), window="sliding")


def test_update_carries_no_data():
    fields = {f.name for f in dataclasses.fields(NodeUpdate)}
    assert fields == {"node_id", "params", "sample_count", "round"}


# -- seeds -------------------------------------------------------------------

def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "train", 1, 2) == derive_seed(0, "train", 1, 2)
    seeds = {derive_seed(m, lab) for m in range(5) for lab in ("a", "b", "c")}
    assert len(seeds) == 15
    assert 0 <= derive_seed(2**40, "x") < 2**63


# -- nodes --------------------------------------------------------------------

def toy_stream(n=30, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, 3)) + y[:, None] * 2.0
    return data.Dataset(X, y, ("a", "b", "c"))


def small_model():
    return build_model(ModelKind.SIMPLE_MLP, ModelConfig(input_dim=3, mlp_hidden=4), 0)


def run_node(lr, epochs=10):
    m = small_model()
    st = continual.init_state(StrategyConfig(), 3)
    shard = toy_stream()
    return m, node_round(NodeConfig(1, lr, epochs, 8), m.params, shard, st, seed=3, model=m)[0]


def test_node_zero_lr_returns_w0():
    m, up = run_node(0.0)
    assert up.params == m.params
    assert up.sample_count == 30


def test_node_training_moves_params():
    m, up = run_node(0.001)
    assert up.params != m.params
    assert up.params.compatible(m.params)


def test_node_errors():
    m = small_model()
    st = continual.init_state(StrategyConfig(), 3)
    with pytest.raises(ConfigurationError):
        node_round(NodeConfig(1), m.params, toy_stream().subset([]), st, 0, model=m)
    with pytest.raises(ConfigurationError):
        node_round(NodeConfig(1, learning_rate=-1.0), m.params, toy_stream(), st, 0, model=m)


# -- simulation ---------------------------------------------------------------

def tiny_partition(seed=0, n=160):
    ds = data.synthetic_dataset(n, seed)
    return data.partition_streams(ds, 4, "drift", seed)


TINY = dict(rounds=4, nodes=2, streams=4, local_epochs=1, batch_size=16,
            model_config=ModelConfig(mlp_hidden=8), model_kind=ModelKind.SIMPLE_MLP)


def test_default_schedule():
    cfg = SimulationConfig()
    assert cfg.active_streams() == [1] * 5 + [2] * 5 + [3] * 5 + [4] * 5


def test_custom_schedule():
    cfg = SimulationConfig(rounds=6, streams=3, schedule=(1, 2, 3))
    assert cfg.active_streams() == [1, 2, 2, 3, 3, 3]


@pytest.mark.parametrize("kw", [dict(rounds=5), dict(schedule=(5, 5, 5)), dict(schedule=(5, 5, 5, 4)),
                                dict(nodes=0), dict(window="x")])
def test_bad_simulation_config(kw):
    with pytest.raises(ConfigurationError):
        SimulationConfig(**kw).validate()


def test_partition_stream_count_must_match():
    with pytest.raises(ConfigurationError):
        run_simulation(SimulationConfig(**{**TINY, "streams": 2, "rounds": 2}), tiny_partition())


def test_history_shape_and_updates():
    res = run_simulation(SimulationConfig(**TINY), tiny_partition())
    assert [h.active_stream for h in res.history] == [1, 2, 3, 4]
    assert all(len(h.stream_metrics) == 4 for h in res.history)
    assert res.updates == 8
    assert res.final.total == 4 * 8


@pytest.mark.parametrize("kind", ["naive", "replay", "lwf", "mir", "cumulative"])
def test_simulation_deterministic(kind):
    cfg = SimulationConfig(**TINY, strategy=StrategyConfig(StrategyKind(kind)), seed=9)
    a = run_simulation(cfg, tiny_partition(9))
    b = run_simulation(cfg, tiny_partition(9))
    np.testing.assert_array_equal(a.global_params.flat, b.global_params.flat)
    assert [h.stream_metrics for h in a.history] == [h.stream_metrics for h in b.history]


def test_initial_params_must_match():
    bad = ParamSet.from_arrays([("w", np.zeros(2))])
    with pytest.raises(DimensionError):
        run_simulation(SimulationConfig(**TINY), tiny_partition(), initial_params=bad)
