"""``formscreen`` command line.

Each subcommand reads its inputs, validates everything, runs, and only then
writes into ``--out``. Hyperparameters come from an optional JSON config
file (see README); ``--seed`` overrides every seed in it.

Exit codes: 0 success, 2 input or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from .artifact import ModelArtifact, config_hash
from .candidates import GenConfig, generate, read_pool, write_pool
from .errors import ConfigError, FormscreenError, InputError
from .formulation import (
    DescriptorBuilder, DescriptorConvention, Separator, load_dataset, split_random, split_sorted,
    write_dataset,
)
from .gcn import PretrainConfig, encode_registry, load_corpus, pretrain, write_corpus
from .interpret import bins_from_edges, quartile_summary, scc_report
from .regressor import TrainConfig, descriptor_pairs, evaluate, train
from .screening import read_predictions, screen, shortlist, write_predictions, write_scatter_svg
from .synthetic import make_dataset, make_pretrain_corpus

log = logging.getLogger("formscreen")

SECTIONS = ("pretrain", "train", "convention", "gen", "screen", "interpret", "rfr", "svr")
SPLIT_DEFAULTS = {"split": "random", "test_fraction": 0.2}
SCREEN_DEFAULTS = {"window": [40.0, 45.0], "threshold": 210.0, "max_n": None, "separator": None,
                   "workers": 1}
INTERPRET_DEFAULTS = {"bins": None, "capacity_floor": 210.0}


# configuration


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be an object")
    unknown = set(cfg) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"{p}: unknown section(s) {sorted(unknown)}")
    return cfg


def _section(cfg: dict, name: str, seed: int | None) -> dict:
    sec = dict(cfg.get(name) or {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    s = seed if seed is not None else cfg.get("seed")
    if s is not None:
        sec["seed"] = int(s)
    return sec


def _build(cls, sec: dict, extra: tuple[str, ...] = ()):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(sec) - names - set(extra)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} option(s) {sorted(unknown)}")
    try:
        return cls(**{k: v for k, v in sec.items() if k in names})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def _options(sec: dict, defaults: dict) -> dict:
    unknown = set(sec) - set(defaults) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown option(s) {sorted(unknown)}")
    return {**defaults, **{k: v for k, v in sec.items() if k in defaults}}


def _split_options(sec: dict, override: str | None) -> dict:
    opts = {k: sec.get(k, v) for k, v in SPLIT_DEFAULTS.items()}
    if override:
        opts["split"] = override
    return opts


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _to_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, Separator):
        return obj.name
    return obj


# output helpers


def _prepare_out(out: str) -> Path:
    p = Path(out)
    if p.exists() and not p.is_dir():
        raise InputError(f"output path {p} exists and is not a directory")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _builder(art: ModelArtifact, conv_sec: dict) -> DescriptorBuilder:
    conv = _build(DescriptorConvention, {"gr_version": art.encoder.version, **conv_sec})
    return DescriptorBuilder(encode_registry(art.encoder), conv)


def _split(records, opts: dict, seed: int):
    kind = opts["split"]
    if kind == "random":
        return split_random(records, float(opts["test_fraction"]), seed)
    if kind == "sorted":
        return split_sorted(records, float(opts["test_fraction"]))
    if kind == "all":
        return records, records
    raise ConfigError(f"split must be random|sorted|all, got {kind!r}")


def _metrics_rows(pairs):
    return [[name, repr(m.rmse), repr(m.mae), len(m.parity)] for name, m in pairs]


def _parity_rows(pairs):
    return [[rid, name, repr(meas), repr(pred)] for name, m in pairs for rid, meas, pred in m.parity]


# subcommands


def cmd_synth(args, cfg) -> None:
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if args.n < 2 or args.corpus_size < 1:
        raise ConfigError("--n must be >= 2 and --corpus-size >= 1")
    records = make_dataset(n=args.n, seed=seed)
    corpus = make_pretrain_corpus(args.corpus_size, seed)
    out = _prepare_out(args.out)
    write_dataset(out / "dataset.csv", records)
    write_corpus(out / "corpus.csv", corpus)


def cmd_pretrain(args, cfg) -> None:
    pc = _build(PretrainConfig, _section(cfg, "pretrain", args.seed))
    corpus = load_corpus(args.corpus)
    model, history = pretrain(corpus, pc)
    meta = {"seed": str(pc.seed), "config_hash": config_hash({"pretrain": _to_jsonable(pc)})}
    out = _prepare_out(args.out)
    ModelArtifact(model, None, meta).save(out / "encoder.fsm")
    _write_rows(out / "pretrain_history.csv", ["epoch", "mse"], [[e, repr(v)] for e, v in history])


def cmd_train(args, cfg) -> None:
    sec = _section(cfg, "train", args.seed)
    tc = _build(TrainConfig, sec, tuple(SPLIT_DEFAULTS))
    opts = _split_options(sec, args.split)
    art = ModelArtifact.load(args.model)
    records = load_dataset(args.dataset)
    builder = _builder(art, cfg.get("convention") or {})
    tr, te = _split(records, opts, tc.seed)
    model, hist = train(descriptor_pairs(tr, builder), descriptor_pairs(te, builder), tc, builder.convention)
    pairs = [("train", evaluate(model, tr, builder)), ("test", evaluate(model, te, builder))]
    meta = dict(art.meta)
    meta.update({
        "seed": str(tc.seed),
        "split": opts["split"],
        "config_hash": config_hash({"train": _to_jsonable(tc), "split": opts,
                                    "encoder": art.meta.get("config_hash", "")}),
    })
    out = _prepare_out(args.out)
    ModelArtifact(art.encoder, model, meta).save(out / "model.fsm")
    hist.write_csv(out / "train_history.csv")
    _write_rows(out / "metrics.csv", ["split", "rmse_mah_g", "mae_mah_g", "n"], _metrics_rows(pairs))
    _write_rows(out / "parity.csv", ["id", "split", "measured_mah_g", "predicted_mah_g"], _parity_rows(pairs))


def _trained(path) -> ModelArtifact:
    art = ModelArtifact.load(path)
    if art.regressor is None:
        raise InputError(f"{path}: artifact has no trained regressor (run `train` first)")
    return art


def _artifact_builder(art: ModelArtifact, cfg) -> DescriptorBuilder:
    builder = _builder(art, cfg.get("convention") or {})
    art.check_convention(builder.convention)
    return builder


def cmd_eval(args, cfg) -> None:
    art = _trained(args.model)
    records = load_dataset(args.dataset)
    builder = _artifact_builder(art, cfg)
    pairs = [("eval", evaluate(art.regressor, records, builder))]
    out = _prepare_out(args.out)
    _write_rows(out / "eval_metrics.csv", ["split", "rmse_mah_g", "mae_mah_g", "n"], _metrics_rows(pairs))
    _write_rows(out / "eval_parity.csv", ["id", "split", "measured_mah_g", "predicted_mah_g"],
                _parity_rows(pairs))


def cmd_gen(args, cfg) -> None:
    gc = _build(GenConfig, _section(cfg, "gen", args.seed))
    pool = generate(gc)
    out = _prepare_out(args.out)
    write_pool(out / "pool.csv", pool, gc.metadata())


def cmd_screen(args, cfg) -> None:
    opts = _options(_section(cfg, "screen", None), SCREEN_DEFAULTS)
    art = _trained(args.model)
    pool = read_pool(args.pool)
    builder = _artifact_builder(art, cfg)
    lo, hi = (float(v) for v in opts["window"])
    sep = Separator.parse(opts["separator"]) if opts["separator"] else None
    results = screen(art.regressor, builder, pool, workers=int(opts["workers"]))
    short = shortlist(results, (lo, hi), float(opts["threshold"]), opts["max_n"], sep)
    out = _prepare_out(args.out)
    write_predictions(out / "predictions.csv", results)
    write_predictions(out / "shortlist.csv", short)
    write_scatter_svg(out / "scatter.svg", results, float(opts["threshold"]), (lo, hi))
    log.info("screened %d designs, %d shortlisted", len(results), len(short))


def cmd_interpret(args, cfg) -> None:
    opts = _options(_section(cfg, "interpret", None), INTERPRET_DEFAULTS)
    if bool(args.predictions) == bool(args.dataset):
        raise InputError("give exactly one of --predictions or --dataset")
    if args.predictions:
        rows = [(r.design, r.predicted) for r in read_predictions(args.predictions)]
    else:
        rows = [(r.design, r.capacity) for r in load_dataset(args.dataset)]
    bins = bins_from_edges(opts["bins"]) if opts["bins"] else None
    report = scc_report(rows, bins)
    quart = quartile_summary(rows, float(opts["capacity_floor"]))
    out = _prepare_out(args.out)
    report.write_csv(out / "scc.csv")
    quart.write_csv(out / "quartiles.csv")


def cmd_report(args, cfg) -> None:
    sec = _section(cfg, "train", args.seed)
    tc = _build(TrainConfig, sec, tuple(SPLIT_DEFAULTS))
    opts = _split_options(sec, args.split)
    rc = _build(bl.RfrConfig, _section(cfg, "rfr", args.seed))
    sc = _build(bl.SvrConfig, _section(cfg, "svr", args.seed))
    art = ModelArtifact.load(args.model)
    records = load_dataset(args.dataset)
    builder = _builder(art, cfg.get("convention") or {})
    tr, te = _split(records, opts, tc.seed)
    model, _ = train(descriptor_pairs(tr, builder), descriptor_pairs(te, builder), tc, builder.convention)
    Xtr, ytr = bl.flat_xy(tr)
    Xte, yte = bl.flat_xy(te)
    preds = {
        "FGCN": np.array([p for _, _, p in evaluate(model, te, builder).parity]),
        "RFR": bl.train_rfr(Xtr, ytr, rc).predict(Xte),
        "SVR": bl.train_svr(Xtr, ytr, sc).predict(Xte),
    }
    ids = tuple(r.record_id for r in tr)
    rows = bl.compare(preds, yte, {k: ids for k in preds})
    hp = {"FGCN": _to_jsonable(tc), "RFR": bl.config_dict(rc), "SVR": bl.config_dict(sc)}
    for r in rows:
        r.hyperparameters = hp[r.model]
    out = _prepare_out(args.out)
    bl.write_comparison(out / "comparison.csv", rows)


# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="formscreen", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset and pretraining corpus")
    s.add_argument("--n", type=int, default=93)
    s.add_argument("--corpus-size", type=int, default=50)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", parents=[common], help="pretrain and freeze the molecular encoder")
    s.add_argument("--corpus", required=True)
    s.set_defaults(func=cmd_pretrain)

    for name, func, hlp in (("train", cmd_train, "train the capacity regressor"),
                            ("report", cmd_report, "compare against random forest and SVR")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--dataset", required=True)
        s.add_argument("--model", required=True, help="artifact holding the pretrained encoder")
        s.add_argument("--split", choices=("random", "sorted", "all"))
        s.set_defaults(func=func)

    s = sub.add_parser("eval", parents=[common], help="evaluate a trained model on a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gen", parents=[common], help="generate the candidate design pool")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("screen", parents=[common], help="predict, rank and shortlist a pool")
    s.add_argument("--model", required=True)
    s.add_argument("--pool", required=True)
    s.set_defaults(func=cmd_screen)

    s = sub.add_parser("interpret", parents=[common], help="rank-correlation and quartile reports")
    s.add_argument("--predictions")
    s.add_argument("--dataset")
    s.set_defaults(func=cmd_interpret)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except FormscreenError as exc:
        print(f"formscreen {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"formscreen {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
