"""``fedphish`` command line: run, features, correlate, gradcheck."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__, data, kernels
from .errors import ConfigurationError, DataError, FedPhishError
from .harness import ExperimentConfig, emit_report, run_experiment, stage

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_GRADCHECK = 3


def _add_run_parser(sub) -> None:
    p = sub.add_parser("run", help="run the (model, strategy) grid and write reports",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON file with the same keys as these flags; flags win")
    p.add_argument("--dataset", help="feature CSV or url,label CSV (default: built-in synthetic corpus)")
    p.add_argument("--raw-urls", dest="raw_urls", action="store_true", help="dataset holds raw URLs")
    p.add_argument("--synthetic-records", dest="synthetic_records", type=int)
    p.add_argument("--models", help="all or a comma list of attention,simple_mlp,deep_mlp,simple_rnn")
    p.add_argument("--strategies", help="all or a comma list of naive,replay,cumulative,lwf,mir")
    p.add_argument("--rounds", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--local-epochs", dest="local_epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--streams", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--partition", choices=data.PARTITION_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", dest="formats", help="comma list of csv,json,markdown (empty for none)")
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    p.add_argument("--window", choices=("cumulative", "per-round"))
    p.add_argument("--attn-tokens", dest="attn_tokens", choices=("single", "features"))
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--dropout", dest="dropout_rate", type=float)
    p.add_argument("--buffer-capacity", dest="buffer_capacity", type=int)
    p.add_argument("--replay-ratio", dest="replay_ratio", type=float)
    p.add_argument("--lwf-lambda", dest="lwf_lambda", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--candidate-count", dest="candidate_count", type=int)
    p.add_argument("--retrieve-count", dest="retrieve_count", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--save-model", dest="save_model", help="directory for final global checkpoints")
    p.add_argument("--load-model", dest="load_model", help="checkpoint to start the global model from")
    p.add_argument("--jobs", type=int, help="cells run in parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedphish", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fedphish {__version__}")
    parser.add_argument("--kernels", choices=kernels.available(), help="kernel backend")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub)

    p = sub.add_parser("features", help="write the lexical feature CSV for a URL file")
    p.add_argument("url_file", help="one URL per line, or a CSV with url,label columns")
    p.add_argument("-o", "--output", help="output CSV (default: stdout)")

    p = sub.add_parser("correlate", help="feature/label correlation table")
    p.add_argument("--dataset", help="feature CSV or url,label CSV (default: synthetic corpus)")
    p.add_argument("--raw-urls", dest="raw_urls", action="store_true", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="output CSV (default: stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every model and loss")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _cmd_run(args) -> int:
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "kernels", "verbose", "config")}
    with stage("config"):
        base = ExperimentConfig.from_json(args.config).to_dict() if getattr(args, "config", None) else {}
        cfg = ExperimentConfig.from_dict({**base, **opts})
    report = run_experiment(cfg)
    for path in emit_report(report, cfg.formats, cfg.out):
        print(path)
    return EXIT_OK


def _read_urls(path: Path) -> tuple[list[str], list[int] | None]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if lines and [h.strip().lower() for h in lines[0].split(",")] == ["url", "label"]:
        ds_rows = list(csv.reader(lines[1:]))
        urls = [r[0] for r in ds_rows if r]
        labels = [data._parse_label(r[-1].strip(), i) for i, r in enumerate(ds_rows, start=2) if r]
        return urls, labels
    return [line.strip() for line in lines if line.strip()], None


def _open_output(target):
    return open(target, "w", newline="", encoding="utf-8") if target else sys.stdout


def _cmd_features(args) -> int:
    with stage("extract"):
        urls, labels = _read_urls(Path(args.url_file))
        table = data.features_table(urls)
    with stage("write"):
        fh = _open_output(args.output)
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(data.FEATURE_NAMES) + (["label"] if labels is not None else []))
            for i, row in enumerate(table):
                w.writerow([int(v) for v in row] + ([labels[i]] if labels is not None else []))
        finally:
            if fh is not sys.stdout:
                fh.close()
    return EXIT_OK


def _cmd_correlate(args) -> int:
    with stage("load"):
        if args.dataset:
            ds = data.load_csv(args.dataset, args.raw_urls)
        else:
            ds = data.synthetic_dataset(seed=args.seed)
    with stage("correlate"):
        rows = data.correlation_report(ds)
    with stage("write"):
        if args.output:
            data.write_correlation_csv(rows, args.output)
        else:
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(["feature", "r", "constant_flag"])
            for row in rows:
                w.writerow([row.feature, repr(row.r), int(row.constant)])
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .diagnostics import gradient_suite

    if args.seeds < 1:
        raise ConfigurationError(f"--seeds must be >= 1, got {args.seeds}")
    with stage("gradcheck"):
        cases, seconds = gradient_suite(args.seeds)
    worst = {}
    for case in cases:
        if case.max_rel_error >= worst.get(case.kind, (-1.0,))[0]:
            worst[case.kind] = (case.max_rel_error, case.seed)
    failed = False
    for kind, (err, seed) in worst.items():
        ok = err < args.tolerance
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {kind.value:<11} max rel error {err:.3e} (seed {seed})")
    print(f"{len(cases)} cases in {seconds:.1f}s on {kernels.backend_name()} kernels")
    return EXIT_GRADCHECK if failed else EXIT_OK


COMMANDS = {"run": _cmd_run, "features": _cmd_features, "correlate": _cmd_correlate,
            "gradcheck": _cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.kernels:
            kernels.select(args.kernels)
        return COMMANDS[args.command](args)
    except FedPhishError as exc:
        if exc.stage is None:
            exc.with_stage(args.command)
        print(f"fedphish: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
