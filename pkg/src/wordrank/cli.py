"""Command line: ``wordrank {gen-data,train,eval,query,gradcheck}``.

Every command writes into a run directory. Relative run directories are
resolved against ``$WORDRANK_RUN_ROOT`` (default ``./runs``). Each run
directory gets a ``manifest.json`` with the exact invocation.

Exit status: 0 on success, 2 for configuration errors (bad flags, bad or
missing config/data files, invalid values), 1 for failures at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import generate_dataset, load_dataset, save_dataset
from .metrics import RelevanceSpec
from .model import WordSpotterModel
from .retrieval import evaluate, query_by_example, query_by_string, write_report
from .training import TrainConfig, train

log = logging.getLogger("wordrank")

RUN_ROOT_ENV = "WORDRANK_RUN_ROOT"
DATA_FILE = "dataset.tsv"


class ConfigError(Exception):
    """Problem with the invocation or its inputs; maps to exit status 2."""



def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def resolve_run_dir(path: str | None, default: str) -> Path:
    p = Path(path if path else default)
    return p if p.is_absolute() else run_root() / p


def _invocation(args) -> list[str]:
    return ["wordrank", *args.argv]


def write_manifest(run_dir: Path, args, extra: dict | None = None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": args.command, "invocation": _invocation(args), "version": __version__}
    manifest.update(extra or {})
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_data(path: str):
    p = Path(path)
    if not p.exists() and not p.is_absolute():
        p = run_root() / p  # a gen-data run directory under the run root
    if p.is_dir():
        p = p / DATA_FILE
    if not p.exists():
        raise ConfigError(f"dataset file {p} does not exist")
    try:
        return load_dataset(p), p
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read dataset {p}: {exc}") from exc


def _load_model(run_dir: Path, which: str):
    ckpt = run_dir / f"{which}.ckpt"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    try:
        return WordSpotterModel.load(ckpt)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read checkpoint {ckpt}: {exc}") from exc


def _run_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    return json.loads(path.read_text()) if path.exists() else {}


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    if args.min_len > args.max_len:
        raise ConfigError("--min-len must not exceed --max-len")
    try:
        ds = generate_dataset(args.words, args.samples, (args.min_len, args.max_len), args.sigma, args.seed, args.test_fraction)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = resolve_run_dir(args.run_dir, f"data-w{args.words}-n{args.samples}-s{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / DATA_FILE)
    write_manifest(
        out,
        args,
        {
            "params": {
                "words": args.words,
                "samples": args.samples,
                "length_range": [args.min_len, args.max_len],
                "sigma": args.sigma,
                "seed": args.seed,
                "test_fraction": args.test_fraction,
            },
            "dataset_hash": ds.content_hash(),
            "n_samples": len(ds.samples),
        },
    )
    print(out / DATA_FILE)
    return 0


TRAIN_FLAGS = {
    "mode": "mode",
    "seed": "seed",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "samples_per_epoch": "samples_per_epoch",
    "alpha": "alpha",
    "tau": "tau",
    "gamma": "gamma",
    "noise_sigma": "noise_sigma",
    "per_class": "per_class",
}


def build_train_config(args) -> TrainConfig:
    """Defaults, then the optional JSON config file, then explicit flags."""
    values: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for flag, key in TRAIN_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    if args.no_mix:
        values["mix"] = False
    opt = dict(values.get("optimizer", {}))
    if args.lr is not None:
        opt["learning_rate"] = args.lr
    if args.decay_epochs is not None:
        opt["decay_epochs"] = args.decay_epochs
    if opt:
        values["optimizer"] = {**TrainConfig().to_dict()["optimizer"], **opt}
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    ds, data_path = _load_data(args.data)
    run_dir = resolve_run_dir(args.run_dir, f"train-{cfg.mode}-s{cfg.seed}")
    result = train(ds, cfg, run_dir=run_dir, evaluate_every=args.eval_every)
    # train() writes the full manifest; add where the data came from
    manifest = _run_manifest(run_dir)
    manifest.update(command="train", data=str(data_path), version=__version__)
    manifest["invocation"] = _invocation(args)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    last = result.history[-1]
    print(f"{run_dir}  best epoch {result.best_epoch}  final QbS mAP {last['test_qbs_map']:.4f} nDCG {last['test_qbs_ndcg']:.4f}")
    return 0


def cmd_eval(args) -> int:
    run_dir = resolve_run_dir(args.run_dir, "")
    model, _, meta = _load_model(run_dir, args.checkpoint)
    train_manifest = _run_manifest(run_dir)
    data = args.data or train_manifest.get("data")
    if not data:
        raise ConfigError("no dataset: pass --data or evaluate a run created by `train`")
    ds, data_path = _load_data(data)
    rel = RelevanceSpec.binary() if args.binary_ndcg else RelevanceSpec.evaluation()
    report = evaluate(model, ds, rel, split=args.split, max_n=args.max_n)
    out = run_dir / f"eval-{args.checkpoint}-{args.split}"
    extra = {
        "config_hash": meta.get("config_hash"),
        "seeds": [meta.get("seed")],
        "checkpoint": args.checkpoint,
        "split": args.split,
        "data": str(data_path),
        "dataset_hash": ds.content_hash(),
    }
    write_report(report, out, extra)
    write_manifest(out, args, extra)
    s = report.summary()
    print(f"QbS mAP {s['qbs']['mAP']:.4f} nDCG {s['qbs']['nDCG']:.4f} | QbE mAP {s['qbe']['mAP']:.4f} nDCG {s['qbe']['nDCG']:.4f}")
    print(out)
    return 0


def cmd_query(args) -> int:
    run_dir = resolve_run_dir(args.run_dir, "")
    model, _, _ = _load_model(run_dir, args.checkpoint)
    data = args.data or _run_manifest(run_dir).get("data")
    if not data:
        raise ConfigError("no dataset: pass --data or query a run created by `train`")
    ds, _ = _load_data(data)
    gallery = ds.split(args.split)
    if args.string is not None:
        try:
            res = query_by_string(args.string, gallery, model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        match = [s for s in ds.samples if s.id == args.example]
        if not match:
            raise ConfigError(f"no sample with id {args.example!r}")
        res = query_by_example(match[0], gallery, model)
    text = res.format(args.top)
    print(text)
    out = run_dir / "queries"
    out.mkdir(parents=True, exist_ok=True)
    stem = ("qbs-" + res.query) if args.string is not None else ("qbe-" + res.query)
    (out / f"{stem}.txt").write_text(text + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    if args.seeds < 1 or any(t <= 0 for t in args.taus):
        raise ConfigError("--seeds must be positive and every tau > 0")
    report = run_suite(range(args.seeds), tuple(args.taus), args.tolerance, chain=not args.no_chain)
    for line in report.lines():
        print(line)
    out = resolve_run_dir(args.run_dir, "gradcheck")
    write_manifest(out, args, {"worst": report.worst, "failures": report.failures, "passed": report.passed})
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


# ----------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wordrank", description="Word spotting with smooth ranking objectives.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--words", type=int, default=100)
    g.add_argument("--samples", type=int, default=20, help="samples per word")
    g.add_argument("--min-len", type=int, default=3)
    g.add_argument("--max-len", type=int, default=8)
    g.add_argument("--sigma", type=float, default=0.3, help="feature noise scale")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--test-fraction", type=float, default=0.25)
    g.add_argument("--run-dir")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True, help="dataset file or gen-data run directory")
    t.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    t.add_argument("--mode", choices=("join", "ap", "ndcg"))
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--samples-per-epoch", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--gamma", type=int)
    t.add_argument("--noise-sigma", type=float)
    t.add_argument("--per-class", type=int)
    t.add_argument("--no-mix", action="store_true", help="disable within-class feature mixing")
    t.add_argument("--lr", type=float)
    t.add_argument("--decay-epochs", type=int, nargs="*")
    t.add_argument("--eval-every", type=int, default=1)
    t.add_argument("--run-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("--run-dir", required=True)
    e.add_argument("--data", help="defaults to the dataset the run was trained on")
    e.add_argument("--checkpoint", choices=("best", "final"), default="final")
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--max-n", type=int, default=50)
    e.add_argument("--binary-ndcg", action="store_true", help="grade nDCG by exact match only")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("query", help="rank the gallery for one query")
    q.add_argument("--run-dir", required=True)
    q.add_argument("--data")
    q.add_argument("--checkpoint", choices=("best", "final"), default="final")
    q.add_argument("--split", choices=("train", "test"), default="test")
    q.add_argument("--top", type=int, default=10)
    which = q.add_mutually_exclusive_group(required=True)
    which.add_argument("--string", help="query by string")
    which.add_argument("--example", help="query by example: a sample id")
    q.set_defaults(func=cmd_query)

    c = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    c.add_argument("--seeds", type=int, default=100)
    c.add_argument("--taus", type=float, nargs="+", default=[0.1, 1.0])
    c.add_argument("--tolerance", type=float, default=1e-3)
    c.add_argument("--no-chain", action="store_true", help="skip the encoder-to-loss chain")
    c.add_argument("--run-dir")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        argv = list(sys.argv[1:] if argv is None else argv)
        args = parser.parse_args(argv)
        args.argv = argv
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
        )
        return args.func(args)
    except ConfigError as exc:
        print(f"wordrank: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("wordrank: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any runtime failure with exit status 1
        log.debug("runtime failure", exc_info=True)
        print(f"wordrank: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
