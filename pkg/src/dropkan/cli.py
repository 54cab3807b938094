"""Command line entry point: ``dropkan {preprocess,train,exp1,exp2,search,verify}``.

Settings resolve in three layers: built-in defaults, then ``--config`` JSON,
then explicit flags. Every command writes into its run directory (``--out``)
and echoes the resolved settings to ``resolved_config.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .data import BUILTIN, load_dataset, split
from .layers import DropMode, EdgeGrid, build_network, drop_configs, save_network
from .train import NonFiniteError, TrainConfig, train
from .verify import report, run_checks

log = logging.getLogger("dropkan")

SCALE_DEFAULT = {DropMode.NONE: False, DropMode.DROPOUT: True,
                 DropMode.DROPKAN_PA: True, DropMode.DROPKAN_PS: False}

COMMAND_DEFAULTS = {
    "preprocess": {"dataset": None, "label_column": -1, "fractions": [0.6, 0.2, 0.2]},
    "train": {"dataset": None, "label_column": -1, "architecture": None, "mode": "none", "rate": 0.0,
              "scale": None, "steps": 2000, "batch_size": 32, "learning_rate": 0.01, "eval_every": 100,
              "loss": None, "fractions": [0.6, 0.2, 0.2], "grid_degree": 3, "grid_intervals": 5,
              "grid_range": [-1.0, 1.0], "init_sigma": 0.1, "timing": False},
    "exp1": {**{f.name: f.default for f in dataclasses.fields(ex.ExperimentConfig)
                if f.default is not dataclasses.MISSING},
             "architecture": [6, 2, 2, 1], "fractions": [0.6, 0.2, 0.2], "grid_range": [-1.0, 1.0]},
    "exp2": {**{f.name: f.default for f in dataclasses.fields(ex.ExperimentConfig)
                if f.default is not dataclasses.MISSING},
             "fractions": [0.6, 0.2, 0.2], "grid_range": [-1.0, 1.0], "steps": 2000, "eval_every": 100,
             "evaluations": 50, "rate_lo": 0.05, "rate_hi": 0.5},
    "verify": {"gradient_seeds": 20, "seed": 0},
}
COMMAND_DEFAULTS["search"] = {**COMMAND_DEFAULTS["exp2"], "setting": "dropkan_pa_w_scale"}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropkan", description="KAN layers with Dropout and DropKAN")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p, seed_required=True, data=True):
        p.add_argument("--config", default=S, help="JSON file of settings; flags override it")
        p.add_argument("--out", default=S, help="run directory (default runs/<command>-seed<seed>)")
        p.add_argument("--seed", type=int, default=S, required=seed_required)
        if data:
            p.add_argument("--dataset", default=S, help=f"CSV path or builtin name {BUILTIN}")
            p.add_argument("--label-column", dest="label_column", default=S,
                           help="label column name or index (default: last)")
            p.add_argument("--fractions", type=_float_list, default=S, help="train,valid,test fractions")

    def model_flags(p):
        p.add_argument("--arch", dest="architecture", type=_int_list, default=S, help="widths, e.g. 6,10,4")
        p.add_argument("--steps", type=int, default=S)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
        p.add_argument("--lr", dest="learning_rate", type=float, default=S)
        p.add_argument("--eval-every", dest="eval_every", type=int, default=S)
        p.add_argument("--loss", choices=["softmax_cross_entropy", "binary_logistic", "mse"], default=S)
        p.add_argument("--grid-intervals", dest="grid_intervals", type=int, default=S)
        p.add_argument("--grid-degree", dest="grid_degree", type=int, default=S)

    p = sub.add_parser("preprocess", help="split and encode a dataset into a replayable bundle")
    common(p)

    p = sub.add_parser("train", help="train one network and write its metric log")
    common(p)
    model_flags(p)
    p.add_argument("--mode", choices=[m.value for m in DropMode], default=S)
    p.add_argument("--rate", type=_float_list, default=S, help="drop rate, or one per maskable layer")
    p.add_argument("--scale", dest="scale", action="store_true", default=S)
    p.add_argument("--no-scale", dest="scale", action="store_false", default=S)
    p.add_argument("--timing", action="store_true", default=S, help="include wall_time in metrics.jsonl")

    p = sub.add_parser("exp1", help="forward-pass expectation study")
    common(p)
    model_flags(p)
    p.add_argument("--settings", type=_str_list, default=S)
    p.add_argument("--rate", type=float, default=S)
    p.add_argument("--repeats", type=int, default=S)
    p.add_argument("--passes", type=int, default=S)

    for name, help_text in (("exp2", "random search plus five final runs for all five settings"),
                            ("search", "random search over drop rates for one setting")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        model_flags(p)
        if name == "exp2":
            p.add_argument("--settings", type=_str_list, default=S)
        else:
            p.add_argument("--setting", choices=sorted(ex.SETTINGS), default=S)
        p.add_argument("--evaluations", type=int, default=S)
        p.add_argument("--rate-lo", dest="rate_lo", type=float, default=S)
        p.add_argument("--rate-hi", dest="rate_hi", type=float, default=S)
        p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("verify", help="run the brute-force oracle suite")
    common(p, seed_required=False, data=False)
    p.add_argument("--gradient-seeds", dest="gradient_seeds", type=int, default=S)
    return parser


def resolve(command: str, flags: dict) -> dict:
    settings = dict(COMMAND_DEFAULTS[command])
    config_path = flags.pop("config", None)
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"config file not found: {config_path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {config_path} is not valid JSON: {exc}") from None
        unknown = set(loaded) - set(settings) - {"seed", "out"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    settings.update(flags)
    if settings.get("seed") is None:
        raise UsageError("--seed is required")
    if "dataset" in settings:
        if settings["dataset"] is None:
            raise UsageError("--dataset is required")
        if settings["dataset"] not in BUILTIN and not Path(settings["dataset"]).is_file():
            raise UsageError(f"dataset file not found: {settings['dataset']}")
    lc = settings.get("label_column")
    if isinstance(lc, str) and lc.lstrip("-").isdigit():
        settings["label_column"] = int(lc)
    settings.setdefault("out", f"runs/{command}-seed{settings['seed']}")
    return settings


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _experiment_config(settings: dict) -> ex.ExperimentConfig:
    names = {f.name for f in dataclasses.fields(ex.ExperimentConfig)}
    return ex.ExperimentConfig(**{k: v for k, v in settings.items() if k in names})


def cmd_preprocess(s: dict, out: Path) -> int:
    table = load_dataset(s["dataset"], s["label_column"], seed=s["seed"])
    splits = split(table, s["fractions"], seed=s["seed"])
    splits.save(out / "dataset.npz")
    _write_json(out / "schema.json", splits.schema.to_dict())
    print(f"train/valid/test = {len(splits.y_train)}/{len(splits.y_valid)}/{len(splits.y_test)}, "
          f"{splits.n_features} features, {splits.n_classes} classes -> {out}")
    return 0


def cmd_train(s: dict, out: Path) -> int:
    table = load_dataset(s["dataset"], s["label_column"], seed=s["seed"])
    splits = split(table, s["fractions"], seed=s["seed"])
    arch = s["architecture"] or [splits.n_features, 10, splits.n_classes]
    if arch[0] != splits.n_features:
        raise UsageError(f"--arch starts with {arch[0]} but the dataset has {splits.n_features} features")
    mode = DropMode(s["mode"])
    scale = SCALE_DEFAULT[mode] if s["scale"] is None else bool(s["scale"])
    s["scale"] = scale
    rates = s["rate"]
    rates = rates[0] if isinstance(rates, list) and len(rates) == 1 else rates
    drops = drop_configs(mode, scale, rates if mode is not DropMode.NONE else [], len(arch) - 1)
    grid = EdgeGrid(s["grid_degree"], s["grid_intervals"], *map(float, s["grid_range"]))
    init_seed, train_seed = (ex.derive_seed(s["seed"], k) for k in (1, 2))
    net = build_network(arch, np.random.default_rng(init_seed), grid=grid, sigma=s["init_sigma"], drops=drops)
    config = TrainConfig(steps=s["steps"], batch_size=s["batch_size"], learning_rate=s["learning_rate"],
                         seed=train_seed, loss=s["loss"], eval_every=min(s["eval_every"], s["steps"]))
    try:
        net, metrics = train(net, splits, config)
    except NonFiniteError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    metrics.write(out / "metrics.jsonl", include_time=s["timing"])
    save_network(net, out / "model.json")
    final = metrics.for_split("test")[-1]
    print(f"test accuracy {final.accuracy:.4f} after {config.steps} steps -> {out}")
    return 0


def cmd_exp1(s: dict, out: Path) -> int:
    config = _experiment_config(s)
    rows = ex.run_exp1(config)
    (out / "exp1.csv").write_text(ex.exp1_csv(rows))
    deviation = ex.exp1_deviation(rows) if "no_drop" in (config.settings or ex.EXP1_SETTINGS) else {}
    _write_json(out / "exp1_summary.json", {"mean_abs_deviation_from_no_drop": deviation})
    for name, value in sorted(deviation.items()):
        print(f"{name:<22} mean |deviation| {value:.4f}")
    return 0


def _search_spec(s: dict) -> ex.SearchSpec:
    return ex.SearchSpec(s["evaluations"], s["rate_lo"], s["rate_hi"])


def cmd_exp2(s: dict, out: Path) -> int:
    config = _experiment_config(s)
    results, search_log = ex.run_exp2(config, _search_spec(s))
    (out / "exp2_results.csv").write_text(ex.results_csv(results))
    (out / "exp2_search.csv").write_text(ex.search_csv(search_log))
    for row in results:
        print(f"{row['label']:<22} {row['table']}")
    return 0


def cmd_search(s: dict, out: Path) -> int:
    config = _experiment_config(s)
    splits = ex.prepare(config)
    results = ex.random_search(config, _search_spec(s), s["setting"], splits)
    log_rows = [{"setting": s["setting"], "evaluation": r.index, "rates": r.rates, "valid_acc": r.valid_acc,
                 "test_acc": r.test_acc, "failed": r.failed} for r in results]
    (out / "search.csv").write_text(ex.search_csv(log_rows))
    best = ex.best_run(results)
    _write_json(out / "best.json", dataclasses.asdict(best) if best else None)
    print(f"best rates {best.rates} valid acc {best.valid_acc:.4f}" if best else "every evaluation failed")
    return 0 if best else 1


def cmd_verify(s: dict, out: Path) -> int:
    started = time.perf_counter()
    checks = run_checks(s["seed"], gradient_seeds=s["gradient_seeds"])
    text = report(checks)
    (out / "verify_report.txt").write_text(text)
    sys.stdout.write(text)
    print(f"({time.perf_counter() - started:.1f} s)")
    return 0 if all(c.passed for c in checks) else 1


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "exp1": cmd_exp1,
            "exp2": cmd_exp2, "search": cmd_search, "verify": cmd_verify}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args.command, flags)
        out = Path(settings["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "resolved_config.json", {"command": args.command, **settings})
        return COMMANDS[args.command](settings, out)
    except (UsageError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dropkan {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
