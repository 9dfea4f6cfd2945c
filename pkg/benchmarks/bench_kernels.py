"""Time each hot kernel, and one local training round, on every available backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import timeit

import numpy as np

from fedphish import continual, data, kernels
from fedphish.models import ModelKind, build_model


def kernel_cases(rng):
    b, s, d, h = 16, 1, 64, 4
    q, k, v = (rng.normal(size=(b, s, d)) for _ in range(3))
    qf, kf, vf = (rng.normal(size=(b, 19, d)) for _ in range(3))
    logits = rng.normal(size=(256, 2))
    labels = rng.integers(0, 2, 256)
    x = rng.normal(size=(16, 19))
    w_in, w_rec, bias = rng.normal(size=(1, 32)), rng.normal(scale=0.2, size=(32, 32)), np.zeros(32)
    g_last = rng.normal(size=(16, 32))
    url = b"http://login.example-secure.com/verify//account?id=12&next=//evil.xyz/%20"
    p, g = rng.normal(size=42498), rng.normal(size=42498)

    def adam(mod):
        m, vv = np.zeros_like(p), np.zeros_like(p)
        mod.adam_update(p.copy(), g, m, vv, 1, 1e-3, 0.9, 0.999, 1e-8)

    return {
        "softmax_xent[256x2]": lambda mod: mod.softmax_xent(logits, labels),
        "distill_kl[256x2]": lambda mod: mod.distill_kl(logits, logits[::-1].copy(), 2.0),
        "attention fwd[16x1x64]": lambda mod: mod.attention_forward(q, k, v, h),
        "attention fwd[16x19x64]": lambda mod: mod.attention_forward(qf, kf, vf, h),
        "attention fwd+bwd[16x19x64]": lambda mod: mod.attention_backward(
            qf, qf, kf, vf, mod.attention_forward(qf, kf, vf, h)[1], h),
        "elman fwd+bwd[16x19x32]": lambda mod: mod.elman_backward(
            g_last, x, w_rec, mod.elman_forward(x, w_in, w_rec, bias)),
        "adam_update[42498]": adam,
        "url features": lambda mod: (mod.byte_histogram(url), mod.count_redirections(url, 8)),
    }


def training_round(kind):
    ds = data.synthetic_dataset(400, seed=0)
    ds, _ = data.standardize(ds)
    model = build_model(kind, seed=0)

    def run(_mod):
        state = continual.init_state(continual.StrategyConfig(), ds.width)
        continual.train_experience(model, state, ds, epochs=1, batch_size=16, lr=1e-3, seed=0)

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)

    cases = kernel_cases(np.random.default_rng(0))
    for kind in (ModelKind.ATTENTION, ModelKind.SIMPLE_RNN):
        cases[f"train epoch {kind.value} (400 rows)"] = training_round(kind)

    backends = kernels.available()
    results = {}
    for label, fn in cases.items():
        row = {}
        for name in backends:
            mod = kernels.BACKENDS[name]
            with kernels.use(name):
                timer = timeit.Timer(lambda: fn(mod))
                number, _ = timer.autorange()
                row[name] = min(timer.repeat(args.repeat, number)) / number
        results[label] = row

    width = max(map(len, results)) + 2
    print(f"{'case':<{width}}" + "".join(f"{b:>14}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, row in results.items():
        line = f"{label:<{width}}" + "".join(f"{row[b] * 1e6:>12.1f}us" for b in backends)
        if "cython" in row:
            line += f"{row['numpy'] / row['cython']:>11.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
