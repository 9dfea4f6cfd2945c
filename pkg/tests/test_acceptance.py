"""Acceptance criteria; each test prints exactly one PASS/FAIL line.

Tolerances and thresholds are the pinned acceptance values. Criteria 4-6 run
the full 20-round protocol and take most of the suite's wall time.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from fedphish import data
from fedphish.continual import ReplayBuffer, StrategyKind
from fedphish.diagnostics import gradient_suite
from fedphish.federated import NodeUpdate, broadcast_get, server_ingest, server_init
from fedphish.harness import ExperimentConfig, render_csv, render_json, render_markdown, run_experiment
from fedphish.metrics import compute_metrics
from fedphish.models import ModelKind
from fedphish.nn import ParamSet

SEEDS = range(5)
BASELINES = (ModelKind.SIMPLE_MLP, ModelKind.DEEP_MLP, ModelKind.SIMPLE_RNN)


@pytest.fixture
def report_line(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return emit


# 1 -----------------------------------------------------------------------------

def test_criterion_1_gradient_oracle(report_line):
    cases, seconds = gradient_suite(seeds=20)
    worst = max(c.max_rel_error for c in cases)
    kinds = {c.kind for c in cases}
    largest = max(max(c.config.hidden_dim, c.config.mlp_hidden, c.config.rnn_hidden, *c.config.deep_hiddens)
                  for c in cases)
    ok = worst < 1e-4 and seconds < 60 and kinds == set(ModelKind) and largest <= 64 \
        and max(c.batch for c in cases) <= 4
    report_line(1, ok, f"{len(cases)} cases over {len(kinds)} kinds, max rel error {worst:.2e} (< 1e-4), "
                       f"{seconds:.1f}s (< 60s)")
    assert ok


# 2 -----------------------------------------------------------------------------

def test_criterion_2_aggregator_oracle(report_line):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        shapes = [tuple(int(d) for d in rng.integers(1, 5, size=rng.integers(1, 4))) for _ in range(rng.integers(1, 4))]
        template = ParamSet([(f"p{i}", s) for i, s in enumerate(shapes)])
        T = int(rng.integers(1, 40))
        flats = rng.normal(scale=rng.uniform(0.1, 100), size=(T, template.size))
        counts = rng.integers(1, 1000, size=T)
        # brute-force weighted mean in exact rational arithmetic, rounded once
        total = sum(int(n) for n in counts)
        expect = np.array([float(sum(Fraction(int(n)) * Fraction(float(w)) for n, w in zip(counts, col)) / total)
                           for col in flats.T])
        for order in (np.arange(T), rng.permutation(T)):
            st = server_init(template)
            for i in order:
                server_ingest(st, NodeUpdate(int(i), template.with_flat(flats[i]), int(counts[i])))
            worst = max(worst, float(np.max(np.abs(broadcast_get(st).flat - expect))))
    ok = worst <= 1e-9
    report_line(2, ok, f"1000 random sequences plus permutations, max |w_0 - brute force| {worst:.1e} (<= 1e-9)")
    assert ok


# 3 -----------------------------------------------------------------------------

def test_criterion_3_algorithm_trace(report_line):
    def vec(*v):
        return ParamSet.from_arrays([("w", np.array(v, dtype=float))])

    st = server_init(vec(0.0, 0.0))
    server_ingest(st, NodeUpdate(1, vec(1.0, 2.0), 4))
    first = broadcast_get(st).flat.tolist()
    server_ingest(st, NodeUpdate(2, vec(3.0, 6.0), 4))
    second = broadcast_get(st).flat.tolist()
    swaps = []
    for order in ([(1, 0.0), (3, 4.0)], [(3, 4.0), (1, 0.0)]):
        st = server_init(vec(0.0))
        for n, w in order:
            server_ingest(st, NodeUpdate(1, vec(w), n))
        swaps.append(broadcast_get(st).flat.tolist())
    ok = first == [1.0, 2.0] and second == [2.0, 4.0] and swaps == [[3.0], [3.0]]
    report_line(3, ok, f"trace {first} -> {second}, order swap {swaps}")
    assert ok


# 4 and 5 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def drift_runs():
    """Per seed: the attention model under Naive/Cumulative/LwF and every baseline under LwF."""
    runs = {}
    for seed in SEEDS:
        base = dict(partition="drift", synthetic_records=5000, seed=seed, formats="")
        ours = run_experiment(ExperimentConfig(**base, models="attention", strategies="naive,cumulative,lwf"))
        others = run_experiment(ExperimentConfig(**base, models=BASELINES, strategies="lwf"))
        runs[seed] = (ours, others)
    return runs


def test_criterion_4_forgetting_ordering(drift_runs, report_line):
    rows = []
    for seed, (ours, _) in drift_runs.items():
        acc = {s: ours.cell("attention", s).final_streams[0].accuracy for s in ("naive", "cumulative", "lwf")}
        rows.append(acc)
    cum = sum(r["cumulative"] >= r["naive"] for r in rows)
    lwf = sum(r["lwf"] >= r["naive"] for r in rows)
    ok = cum >= 4 and lwf >= 4
    detail = "; ".join(f"s{i} N={r['naive']:.3f} C={r['cumulative']:.3f} L={r['lwf']:.3f}" for i, r in enumerate(rows))
    report_line(4, ok, f"stream-1 accuracy, Cumulative>=Naive {cum}/5, LwF>=Naive {lwf}/5 (need 4/5 each) [{detail}]")
    assert ok


def test_criterion_5_model_ordering(drift_runs, report_line):
    wins, parts = 0, []
    for seed, (ours, others) in drift_runs.items():
        f_ours = ours.cell("attention", StrategyKind.LWF).final.f1
        f_base = {m: others.cell(m, StrategyKind.LWF).final.f1 for m in BASELINES}
        wins += all(f_ours >= f for f in f_base.values())
        parts.append(f"s{seed} ours={f_ours:.3f} " + " ".join(f"{m.value}={f:.3f}" for m, f in f_base.items()))
    ok = wins >= 3
    report_line(5, ok, f"LwF F1, attention >= every baseline in {wins}/5 seeds (need 3/5) [{'; '.join(parts)}]")
    assert ok


# 6 -----------------------------------------------------------------------------

def test_criterion_6_desk_scale_grid(report_line, tmp_path):
    cfg = ExperimentConfig(synthetic_records=5000, seed=0, rounds=20, nodes=3, local_epochs=10, streams=4,
                           batch_size=16, formats="")
    start = time.perf_counter()
    first = run_experiment(cfg)
    elapsed = time.perf_counter() - start
    renders = [(render_csv(r), render_json(r), render_markdown(r)) for r in (first, run_experiment(cfg))]
    complete = (len(first.cells) == 20 and all(len(c.history) == 20 for c in first.cells)
                and renders[0][0].count("\n") == 1 + 20 * 20 * 4 + 20
                and renders[0][2].count("| Ours |") == 5)
    identical = renders[0][:2] == renders[1][:2]
    ok = elapsed < 15 * 60 and complete and identical and first.dataset["records_balanced"] <= 5000
    report_line(6, ok, f"20-cell grid in {elapsed / 60:.1f} min (< 15), reports complete={complete}, "
                       f"rerun byte-identical={identical}")
    assert ok


# 7 -----------------------------------------------------------------------------

def test_criterion_7_data_layer(report_line):
    rng = np.random.default_rng(7)
    balanced = True
    for _ in range(200):
        neg, pos = (int(v) for v in rng.integers(1, 300, 2))
        y = rng.permutation(np.array([0] * neg + [1] * pos))
        ds = data.Dataset(rng.normal(size=(len(y), 3)), y, ("a", "b", "c"))
        out = data.undersample_balance(ds, int(rng.integers(1 << 30)))
        balanced &= out.class_counts() == (min(neg, pos),) * 2 and set(out.ids) <= set(ds.ids)

    exact = True
    for _ in range(200):
        n = int(rng.integers(1, 500))
        ds = data.Dataset(rng.integers(10, 200, size=(n, 19)).astype(float), rng.integers(0, 2, n))
        S = int(rng.integers(1, min(n, 8) + 1))
        for mode in data.PARTITION_MODES:
            part = data.partition_streams(ds, S, mode, seed=int(rng.integers(1 << 30)))
            ids = np.concatenate([s.ids for s in part.streams])
            sizes = [len(s) for s in part.streams]
            exact &= sorted(ids.tolist()) == list(range(n)) and max(sizes) - min(sizes) <= 1
            for stream in part.streams:
                N = int(rng.integers(1, min(len(stream), 5) + 1))
                seed = int(rng.integers(1 << 30))
                shards = data.shard_for_nodes(stream, N, seed)
                repeat = data.shard_for_nodes(stream, N, seed)
                sids = np.concatenate([s.ids for s in shards])
                exact &= sorted(sids.tolist()) == sorted(stream.ids.tolist())
                exact &= all(np.array_equal(a.ids, b.ids) for a, b in zip(shards, repeat))

    def feats(url):
        return dict(zip(data.FEATURE_NAMES, data.extract_features(url)))

    def only(f, expected):
        return all(v == expected.get(k, 0) for k, v in f.items())

    worked = (only(feats("http://a.b/c?d=e"), {"url_length": 16, "count_dot": 1, "count_slash": 3,
                                               "count_question": 1, "count_equal": 1})
              and only(feats("."), {"url_length": 1, "count_dot": 1})
              and feats("http://x//y//z")["count_redirection"] == 2
              and feats("http://x//y//z")["count_slash"] == 6)

    trials = 100_000
    kept = np.zeros(3)
    for t in range(trials):
        buf = ReplayBuffer(2, 1, seed=t)
        for i in range(3):
            buf.insert(np.array([float(i)]), 0, i)
        kept[buf.ids] += 1
    freq = kept / trials
    reservoir = bool(np.all(np.abs(freq - 2 / 3) <= 0.01))

    ok = balanced and exact and worked and reservoir
    report_line(7, ok, f"balance exact={balanced}, partitions/shards exact={exact}, worked URLs={worked}, "
                       f"reservoir retention {np.round(freq, 4).tolist()} (2/3 +- 0.01)")
    assert ok


# 8 -----------------------------------------------------------------------------

def test_criterion_8_metrics_exactness(report_line):
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        p, y = rng.integers(0, 2, n), rng.integers(0, 2, n)
        m = compute_metrics(p, y)
        tp = int(np.sum((p == 1) & (y == 1)))
        fp = int(np.sum((p == 1) & (y == 0)))
        tn = int(np.sum((p == 0) & (y == 0)))
        fn = int(np.sum((p == 0) & (y == 1)))
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
        expect = (Fraction(tp + tn, n), prec, rec, f1)
        got = tuple(Fraction(v) for v in (m.accuracy, m.precision, m.recall, m.f1))
        mismatches += (m.tp, m.fp, m.tn, m.fn) != (tp, fp, tn, fn) or got != tuple(Fraction(float(e)) for e in expect)
    ok = mismatches == 0
    report_line(8, ok, f"1000 random confusion matrices, {mismatches} mismatches against rational formulas")
    assert ok
