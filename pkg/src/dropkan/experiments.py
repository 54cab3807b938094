"""Experiment runners: forward-pass expectation study and drop-rate random search.

Every run draws its seeds from ``(master_seed, *path)`` through
``numpy.random.SeedSequence`` spawn keys, so runs are independent of each
other and of execution order, and a worker pool gives the same numbers as a
serial loop.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import LossKind, default_loss
from .data import DatasetSplits, load_dataset, split
from .layers import DropMode, EdgeGrid, KanNetwork, build_network, drop_configs, maskable_layers, network_forward
from .train import NonFiniteError, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

EXP1_HEADER = ["step", "setting", "repeat", "pass", "mean_output"]
FINAL_RUNS = 5


@dataclass(frozen=True)
class Setting:
    name: str
    mode: DropMode
    scale: bool
    label: str


SETTINGS = {s.name: s for s in [
    Setting("no_drop", DropMode.NONE, False, "No-Drop"),
    Setting("dropout_wo_scale", DropMode.DROPOUT, False, "Dropout w/o scale"),
    Setting("dropout_w_scale", DropMode.DROPOUT, True, "Dropout w/ scale"),
    Setting("dropkan_ps_wo_scale", DropMode.DROPKAN_PS, False, "DropKAN ps"),
    Setting("dropkan_ps_w_scale", DropMode.DROPKAN_PS, True, "DropKAN ps w/ scale"),
    Setting("dropkan_pa_w_scale", DropMode.DROPKAN_PA, True, "DropKAN pa"),
    Setting("dropkan_pa_wo_scale", DropMode.DROPKAN_PA, False, "DropKAN pa w/o scale"),
]}

EXP1_SETTINGS = ("no_drop", "dropout_w_scale", "dropout_wo_scale", "dropkan_pa_w_scale", "dropkan_pa_wo_scale")
EXP2_SETTINGS = ("no_drop", "dropout_wo_scale", "dropout_w_scale", "dropkan_ps_wo_scale", "dropkan_pa_w_scale")


def get_setting(name: str) -> Setting:
    try:
        return SETTINGS[name]
    except KeyError:
        raise ValueError(f"unknown setting {name!r}; known: {sorted(SETTINGS)}") from None


def derive_seed(master: int, *path: int) -> int:
    seq = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(seq.generate_state(1, np.uint32)[0])


@dataclass
class ExperimentConfig:
    dataset: str = "car"
    label_column: object = -1
    architecture: Optional[list] = None     # None: [n_features, 10, n_classes]
    settings: Optional[list] = None         # None: the runner's five settings
    rate: float = 0.5                       # exp1 drop rate on every maskable layer
    repeats: int = 5
    steps: int = 100
    eval_every: int = 10
    passes: int = 5
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    fractions: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    grid_degree: int = 3
    grid_intervals: int = 5
    grid_range: list = field(default_factory=lambda: [-1.0, 1.0])
    init_sigma: float = 0.1
    loss: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.steps < 1 or self.eval_every < 1 or self.passes < 1:
            raise ValueError("steps, eval_every and passes must be positive")

    @property
    def grid(self) -> EdgeGrid:
        return EdgeGrid(self.grid_degree, self.grid_intervals, *map(float, self.grid_range))

    def train_config(self, seed: int, loss: Optional[LossKind] = None) -> TrainConfig:
        loss = loss or (LossKind(self.loss) if self.loss else None)
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           seed=seed, loss=loss, eval_every=min(self.eval_every, self.steps))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchSpec:
    evaluations: int = 50
    rate_lo: float = 0.05
    rate_hi: float = 0.5

    def __post_init__(self):
        if self.evaluations < 1:
            raise ValueError("evaluations must be at least 1")
        if not 0.0 <= self.rate_lo < self.rate_hi < 1.0:
            raise ValueError("need 0 <= rate_lo < rate_hi < 1")


def prepare(config: ExperimentConfig) -> DatasetSplits:
    table = load_dataset(config.dataset, config.label_column, seed=config.seed)
    return split(table, config.fractions, seed=config.seed)


def resolve_architecture(config: ExperimentConfig, splits: DatasetSplits) -> list:
    arch = list(config.architecture) if config.architecture else [splits.n_features, 10, splits.n_classes]
    if arch[0] != splits.n_features:
        raise ValueError(f"architecture input width {arch[0]} does not match {splits.n_features} dataset features")
    return arch


def apply_setting(net: KanNetwork, setting: Setting, rates) -> KanNetwork:
    n_layers = len(net.layers)
    if setting.mode is DropMode.NONE:
        return net.with_drops(drop_configs(DropMode.NONE, False, [], n_layers))
    return net.with_drops(drop_configs(setting.mode, setting.scale, rates, n_layers))


# -- Experiment I ----------------------------------------------------------

def run_exp1(config: ExperimentConfig, splits: Optional[DatasetSplits] = None) -> list:
    """Train the no-drop network and probe each drop setting on the validation split.

    Every ``eval_every`` steps, each setting runs ``passes`` training-mode
    forward passes over the validation rows at rate ``config.rate`` and records
    the mean of output node 0. Returns rows matching :data:`EXP1_HEADER`.
    """
    splits = splits if splits is not None else prepare(config)
    arch = resolve_architecture(config, splits)
    settings = [get_setting(s) for s in (config.settings or EXP1_SETTINGS)]
    rows = []
    for repeat in range(config.repeats):
        net = build_network(arch, np.random.default_rng(derive_seed(config.seed, 1, repeat)),
                            grid=config.grid, sigma=config.init_sigma)

        def probe(step, trained, repeat=repeat):
            if step % config.eval_every:
                return
            for s_index, setting in enumerate(settings):
                variant = apply_setting(trained, setting, config.rate)
                for p in range(config.passes):
                    rng = np.random.default_rng(derive_seed(config.seed, 3, repeat, step, s_index, p))
                    out, _ = network_forward(variant, splits.x_valid, training=True, rng=rng, keep_cache=False)
                    rows.append([step, setting.name, repeat, p, float(out[:, 0].mean())])

        train(net, splits, config.train_config(derive_seed(config.seed, 2, repeat)), on_step=probe)
    return rows


def exp1_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EXP1_HEADER)
    for step, name, repeat, p, value in rows:
        writer.writerow([step, name, repeat, p, repr(float(value))])
    return buf.getvalue()


def exp1_deviation(rows, reference: str = "no_drop") -> dict:
    """Mean |pass-averaged output - reference output| over all (repeat, step) points, per setting."""
    means = {}
    for step, name, repeat, _, value in rows:
        means.setdefault((name, repeat, step), []).append(value)
    means = {k: float(np.mean(v)) for k, v in means.items()}
    points = sorted({(r, s) for (n, r, s) in means if n == reference})
    if not points:
        raise ValueError(f"reference setting {reference!r} not present")
    names = sorted({n for (n, _, _) in means})
    return {name: float(np.mean([abs(means[(name, r, s)] - means[(reference, r, s)]) for r, s in points]))
            for name in names}


# -- Experiment II ---------------------------------------------------------

@dataclass
class RunResult:
    index: int
    rates: list
    valid_acc: float
    test_acc: float
    failed: str = ""


def _train_one(job) -> RunResult:
    index, splits, arch, grid, sigma, setting_name, rates, init_seed, tconfig = job
    setting = get_setting(setting_name)
    net = build_network(arch, np.random.default_rng(init_seed), grid=grid, sigma=sigma)
    net = apply_setting(net, setting, rates)
    try:
        train(net, splits, tconfig)
    except NonFiniteError as exc:
        log.warning("run %d (%s, rates %s) aborted: %s", index, setting_name, rates, exc)
        return RunResult(index, list(rates), float("nan"), float("nan"), str(exc))
    valid_acc, _ = evaluate(net, splits.x_valid, splits.y_valid, tconfig.loss, splits.n_classes)
    test_acc, _ = evaluate(net, splits.x_test, splits.y_test, tconfig.loss, splits.n_classes)
    return RunResult(index, list(rates), valid_acc, test_acc)


def run_jobs(jobs, workers: int = 1) -> list:
    if workers <= 1:
        results = [_train_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    return sorted(results, key=lambda r: r.index)


def _loss_for(config: ExperimentConfig, arch, splits) -> LossKind:
    return LossKind(config.loss) if config.loss else default_loss(arch[-1], splits.n_classes)


def random_search(config: ExperimentConfig, search: SearchSpec, setting_name: str,
                  splits: DatasetSplits, setting_index: int = 0) -> list:
    """Train one model per sampled rate vector; a no-drop setting gets a single evaluation."""
    setting = get_setting(setting_name)
    arch = resolve_architecture(config, splits)
    n_rates = len(maskable_layers(setting.mode, len(arch) - 1))
    n_evals = 1 if n_rates == 0 else search.evaluations
    rate_rng = np.random.default_rng(derive_seed(config.seed, 10, setting_index))
    loss = _loss_for(config, arch, splits)
    jobs = []
    for e in range(n_evals):
        rates = [float(r) for r in rate_rng.uniform(search.rate_lo, search.rate_hi, size=n_rates)]
        tconfig = config.train_config(derive_seed(config.seed, 12, setting_index, e), loss)
        jobs.append((e, splits, arch, config.grid, config.init_sigma, setting.name, rates,
                     derive_seed(config.seed, 11, setting_index, e), tconfig))
    return run_jobs(jobs, config.workers)


def best_run(results: Sequence[RunResult]) -> Optional[RunResult]:
    """Highest validation accuracy; failed runs skipped, ties go to the earliest run."""
    ok = [r for r in results if not r.failed]
    if not ok:
        return None
    return max(ok, key=lambda r: (r.valid_acc, -r.index))


def run_exp2(config: ExperimentConfig, search: SearchSpec,
             splits: Optional[DatasetSplits] = None):
    """Random-search the drop rates per setting, then retrain the winner five times.

    Returns ``(results, search_log)``: one result dict per setting and one
    row per search evaluation.
    """
    splits = splits if splits is not None else prepare(config)
    arch = resolve_architecture(config, splits)
    loss = _loss_for(config, arch, splits)
    names = list(config.settings or EXP2_SETTINGS)
    results, search_log = [], []
    for s_index, name in enumerate(names):
        setting = get_setting(name)
        evaluated = random_search(config, search, name, splits, s_index)
        for r in evaluated:
            search_log.append({"setting": name, "evaluation": r.index, "rates": r.rates,
                               "valid_acc": r.valid_acc, "test_acc": r.test_acc, "failed": r.failed})
        best = best_run(evaluated)
        if best is None:
            results.append(_result_row(setting, None, len(evaluated), []))
            continue
        jobs = []
        for k in range(FINAL_RUNS):
            tconfig = config.train_config(derive_seed(config.seed, 14, s_index, k), loss)
            jobs.append((k, splits, arch, config.grid, config.init_sigma, name, best.rates,
                         derive_seed(config.seed, 13, s_index, k), tconfig))
        finals = run_jobs(jobs, config.workers)
        row = _result_row(setting, best, len(evaluated), finals)
        results.append(row)
        log.info("%s: %s", setting.label, row["table"])
    return results, search_log


def _result_row(setting: Setting, best: Optional[RunResult], n_evals: int, finals) -> dict:
    ok = [r for r in finals if not r.failed]
    test = np.array([r.test_acc for r in ok]) * 100.0
    valid = np.array([r.valid_acc for r in ok]) * 100.0
    mean = float(test.mean()) if ok else float("nan")
    std = float(test.std(ddof=1)) if len(ok) > 1 else float("nan")
    return {
        "setting": setting.name,
        "label": setting.label,
        "rates": best.rates if best else [],
        "evaluations": n_evals,
        "search_valid_acc": best.valid_acc * 100.0 if best else float("nan"),
        "runs": len(finals),
        "failed_runs": len(finals) - len(ok),
        "mean_valid_acc": float(valid.mean()) if ok else float("nan"),
        "mean_test_acc": mean,
        "std_test_acc": std,
        "table": f"{mean:.2f}% ± {std:.2f}",
    }


RESULT_COLUMNS = ["setting", "label", "rates", "evaluations", "search_valid_acc", "runs", "failed_runs",
                  "mean_valid_acc", "mean_test_acc", "std_test_acc", "table"]


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ";".join(repr(float(v)) for v in value)
    return str(value)


def results_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in results:
        writer.writerow([_cell(row[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def search_csv(search_log) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["setting", "evaluation", "rates", "valid_acc", "test_acc", "failed"]
    writer.writerow(cols)
    for row in search_log:
        writer.writerow([_cell(row[c]) for c in cols])
    return buf.getvalue()
