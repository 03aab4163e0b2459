"""Experiment harness: configs, per-method training, benchmark grids and ablations.

Every trial produces one ``ResultRecord``; records are appended to a JSON
lines file by the calling process only, one ``write`` per line.
"""

from __future__ import annotations

import csv
import enum
import functools
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import metrics
from .baselines import (
    EnsembleMode,
    baseline_mlp,
    hyper_ensemble,
    train_crowd_layer,
    train_hyper_ensemble,
    train_label_vote,
    train_single_noisy,
)
from .data import (
    DataError,
    Dataset,
    Split,
    SyntheticSpec,
    append_clean_labels,
    load_csv,
    make_synthetic,
    split_70_25_5,
    standardize,
)
from .model import AdmoeModel, TrainConfig, expert_usage, fit
from .moe import ConfigError
from .noise import QUALITY_GRID, NoiseSpec, quality_report, synthesize

log = logging.getLogger(__name__)

RESULTS_ENV = "ADMOE_RESULTS_DIR"
CLEAN_FRACTIONS = (0.01, 0.02, 0.04, 0.08, 0.10)
EXPERT_GRID = tuple((m, k) for m in (2, 4, 8) for k in (1, 2, 4) if k <= m)
PARITY_TOLERANCE = 0.05


class Method(str, enum.Enum):
    ADMOE_MLP = "AdmoeMlp"
    MLP = "Mlp"
    SINGLE_NOISY = "SingleNoisy"
    LABEL_VOTE = "LabelVote"
    HE_A = "HE_A"
    HE_M = "HE_M"
    CROWD_LAYER = "CrowdLayer"


class AblationKind(str, enum.Enum):
    MOE_VS_INPUT = "MoeVsInput"
    EXPERT_GRID = "ExpertGrid"
    CLEAN_RATIO = "CleanRatio"


def _reject_unknown(cls, raw: dict, what: str) -> None:
    unknown = set(raw) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {what} fields: {sorted(unknown)}")


def train_config_from_dict(raw: dict) -> TrainConfig:
    _reject_unknown(TrainConfig, raw, "train config")
    return TrainConfig(**raw)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["loss_mode"] = cfg.loss_mode.value
    return d


@dataclass
class ExperimentConfig:
    """One method on one dataset, run for ``trials`` training seeds.

    Either ``dataset`` (a CSV path) or ``synthetic`` describes the data. Noisy
    labels are synthesized from ground truth unless the CSV already has weak
    columns. ``source_index`` picks the SingleNoisy source; when unset, trial
    i uses source ``i mod t``.
    """

    method: Method = Method.ADMOE_MLP
    dataset: str | None = None
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    trials: int = 4
    seed: int = 0
    split_seed: int = 0
    source_index: int | None = None
    use_moe: bool = True
    labels_as_input: bool = True
    clean_fraction: float = 0.0
    output: str | None = None

    def __post_init__(self):
        self.method = Method(self.method)
        if self.dataset is not None:
            self.synthetic = None
        if self.dataset is None and self.synthetic is None:
            raise ConfigError("need a dataset path or a synthetic spec")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ConfigError("clean_fraction must lie in [0, 1]")
        if self.method is not Method.ADMOE_MLP and not (self.use_moe and self.labels_as_input):
            raise ConfigError("use_moe / labels_as_input only apply to AdmoeMlp")
        if self.source_index is not None and self.method is not Method.SINGLE_NOISY:
            raise ConfigError("source_index only applies to SingleNoisy")

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "dataset": self.dataset,
            "synthetic": None if self.synthetic is None else asdict(self.synthetic),
            "noise": self.noise.to_dict(),
            "train": train_config_to_dict(self.train),
            "trials": self.trials,
            "seed": self.seed,
            "split_seed": self.split_seed,
            "source_index": self.source_index,
            "use_moe": self.use_moe,
            "labels_as_input": self.labels_as_input,
            "clean_fraction": self.clean_fraction,
            "output": self.output,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _reject_unknown(cls, raw, "experiment config")
        raw = dict(raw)
        if raw.get("synthetic") is not None:
            raw["synthetic"] = SyntheticSpec.from_dict(raw["synthetic"])
        if "noise" in raw:
            raw["noise"] = NoiseSpec.from_dict(raw["noise"])
        if "train" in raw:
            raw["train"] = train_config_from_dict(raw["train"])
        return cls(**raw)

    def cell_hash(self) -> str:
        """Hash of everything that affects a trial's result (not trials or output)."""
        d = self.to_dict()
        d.pop("trials")
        d.pop("output")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class ResultRecord:
    config_hash: str
    method: str
    seed: int
    trial: int | None
    quality: float | None
    status: str = "ok"
    error: str | None = None
    roc_auc: float | None = None
    average_precision: float | None = None
    seconds: float | None = None
    n_params: int | None = None
    expert_usage: list | None = None
    kind: str = "trial"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "ResultRecord":
        _reject_unknown(cls, raw, "result record")
        return cls(**raw)


def results_path(path) -> Path:
    """Relative result paths live under ``$ADMOE_RESULTS_DIR`` (default ``results``)."""
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get(RESULTS_ENV, "results")) / p


def append_record(path, record: ResultRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = (record.to_json() + "\n").encode()
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        os.write(fd, line)
        os.fsync(fd)
    finally:
        os.close(fd)


def read_records(path) -> list[ResultRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ResultRecord.from_dict(json.loads(line)))
    return out


# --- data preparation ---------------------------------------------------------


@dataclass
class Prepared:
    dataset: Dataset  # standardized features
    split: Split
    quality: list


def _data_key(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    keep = ("dataset", "synthetic", "noise", "split_seed", "clean_fraction")
    return json.dumps({k: d[k] for k in keep}, sort_keys=True)


@functools.lru_cache(maxsize=8)
def _prepare_cached(key: str) -> Prepared:
    raw = json.loads(key)
    if raw["dataset"] is not None:
        ds = load_csv(raw["dataset"])
    else:
        s = SyntheticSpec.from_dict(raw["synthetic"])
        ds = make_synthetic(s.n, s.d, s.anomaly_rate, s.difficulty, s.seed, s.n_clusters)
    noise = NoiseSpec.from_dict(raw["noise"])
    split = split_70_25_5(ds.n, raw["split_seed"], ds.ground_truth, stratify=ds.ground_truth is not None)
    if ds.t == 0 and ds.ground_truth is not None:
        ds = ds.with_sources(synthesize(noise, ds.features, ds.ground_truth))
    quality = quality_report(ds.noisy_labels[split.test], ds.ground_truth[split.test]) if (
        ds.ground_truth is not None and ds.t
    ) else []
    if raw["clean_fraction"] > 0:
        rng = np.random.default_rng((noise.seed, 2))
        size = int(round(raw["clean_fraction"] * split.train.size))
        ds = append_clean_labels(ds, np.sort(rng.choice(split.train, size, replace=False)), 1.0)
    ds, _, _ = standardize(ds, split.train)
    return Prepared(ds, split, quality)


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Dataset with noisy labels, standardized on train rows, plus the fixed split."""
    return _prepare_cached(_data_key(cfg))


# --- single trial ----------------------------------------------------------------


def check_parity(*models) -> None:
    counts = [m.n_params for m in models]
    lo, hi = min(counts), max(counts)
    if (hi - lo) / lo > PARITY_TOLERANCE:
        raise ConfigError(f"parameter counts {counts} differ by more than {PARITY_TOLERANCE:.0%}")


def _train_method(cfg: ExperimentConfig, prep: Prepared, trial: int, train_cfg: TrainConfig):
    """Returns (test scores, parameter count, expert usage or None, extra, model or None)."""
    ds, split = prep.dataset, prep.split
    test = split.test
    x_test = ds.features[test]
    method = cfg.method
    if ds.ground_truth is None:
        raise ConfigError("evaluation needs a ground-truth label column")
    if method is not Method.MLP and ds.n_inputs == 0:
        raise ConfigError(f"{method.value} needs at least one noisy-label source")
    if cfg.clean_fraction > 0:
        # the clean column is target-only; its weight comes from the train config
        ds = replace(ds, source_weights=np.where(ds.input_sources, ds.source_weights, train_cfg.clean_weight))
    extra = {}

    if method is Method.ADMOE_MLP:
        model = AdmoeModel.for_budget(
            ds.d,
            ds.n_inputs,
            train_cfg.budget,
            use_moe=cfg.use_moe,
            labels_as_input=cfg.labels_as_input,
            m=train_cfg.m,
            k=train_cfg.k,
            e=train_cfg.e,
            seed=train_cfg.seed,
        )
        check_parity(model, baseline_mlp(ds.d, train_cfg))
        report = fit(model, ds, split, train_cfg)
        y_test = ds.input_labels(test) if cfg.labels_as_input else None
        usage = expert_usage(model, x_test, y_test).tolist() if cfg.use_moe else None
        extra["best_epoch"] = report.best_epoch
        return model.score(x_test, y_test), model.n_params, usage, extra, model

    if method is Method.MLP:
        if ds.ground_truth is None:
            raise ConfigError("Mlp trains on ground truth; the dataset has none")
        truth = ds.with_sources(ds.ground_truth)
        model = baseline_mlp(ds.d, train_cfg)
        report = fit(model, truth, split, train_cfg)
        extra["best_epoch"] = report.best_epoch
        return model.score(x_test), model.n_params, None, extra, model

    if method is Method.SINGLE_NOISY:
        idx = cfg.source_index if cfg.source_index is not None else trial % ds.n_inputs
        extra["source_index"] = idx
        model, report = train_single_noisy(ds, split, idx, train_cfg)
        extra["best_epoch"] = report.best_epoch
        return model.score(x_test), model.n_params, None, extra, model

    if method is Method.LABEL_VOTE:
        model, report = train_label_vote(ds, split, train_cfg)
        extra["best_epoch"] = report.best_epoch
        return model.score(x_test), model.n_params, None, extra, model

    if method in (Method.HE_A, Method.HE_M):
        bundle = train_hyper_ensemble(ds, split, train_cfg)
        mode = EnsembleMode.AVERAGE if method is Method.HE_A else EnsembleMode.MAX
        n_params = sum(m.n_params for m, _ in bundle.members)
        return hyper_ensemble(bundle, x_test, mode), n_params, None, extra, None

    model, report = train_crowd_layer(ds, split, train_cfg)
    extra["best_epoch"] = report.best_epoch
    extra["crowd_a"] = model.a.tolist()
    return model.score(x_test), model.n_params, None, extra, None


def run_trial(cfg: ExperimentConfig, trial: int, snapshot_dir=None) -> ResultRecord:
    """Train and evaluate one seed; failures become records with status "error"."""
    seed = cfg.seed + trial
    quality = cfg.noise.gt_fraction if cfg.dataset is None else None
    rec = ResultRecord(cfg.cell_hash(), cfg.method.value, seed, trial, quality)
    start = time.perf_counter()
    try:
        prep = prepare(cfg)
        train_cfg = replace(cfg.train, seed=seed)
        scores, n_params, usage, extra, model = _train_method(cfg, prep, trial, train_cfg)
        truth = prep.dataset.ground_truth[prep.split.test]
        rep = metrics.evaluate(scores, truth)
        rec.roc_auc, rec.average_precision = rep.roc_auc, rep.average_precision
        rec.n_params, rec.expert_usage, rec.extra = n_params, usage, extra
        rec.extra["label_quality"] = prep.quality
        if snapshot_dir is not None and isinstance(model, AdmoeModel):
            from . import serialize

            path = Path(snapshot_dir) / f"{rec.config_hash[:12]}-seed{seed}.snap"
            path.parent.mkdir(parents=True, exist_ok=True)
            serialize.save(model, path)
            rec.extra["snapshot"] = str(path)
    except (ConfigError, DataError, ValueError, IndexError, FloatingPointError) as exc:
        rec.status, rec.error = "error", f"{type(exc).__name__}: {exc}"
        log.warning("trial %d of %s failed: %s", trial, cfg.method.value, rec.error)
    rec.seconds = time.perf_counter() - start
    return rec


def summarize(records: list[ResultRecord]) -> ResultRecord:
    ok = [r for r in records if r.status == "ok"]
    first = records[0]
    summary = ResultRecord(first.config_hash, first.method, first.seed, None, first.quality, kind="summary")
    summary.status = "ok" if len(ok) == len(records) else "error"
    if ok:
        summary.roc_auc = float(np.mean([r.roc_auc for r in ok]))
        summary.average_precision = float(np.mean([r.average_precision for r in ok]))
        summary.n_params = ok[0].n_params
        summary.seconds = float(sum(r.seconds for r in records))
        if ok[0].expert_usage is not None:
            summary.expert_usage = np.mean([r.expert_usage for r in ok], axis=0).tolist()
    summary.extra = {"trials": len(records), "succeeded": len(ok)}
    return summary


def run_experiment(cfg: ExperimentConfig, snapshot_dir=None, workers: int = 1) -> list[ResultRecord]:
    """All trials of ``cfg`` followed by a summary record; appended to ``cfg.output`` if set."""
    cells = [(cfg, i) for i in range(cfg.trials)]
    records = run_cells(cells, workers, snapshot_dir)
    records.append(summarize(records))
    if cfg.output:
        for r in records:
            append_record(results_path(cfg.output), r)
    return records


def _run_cell(args):
    cfg, trial, snapshot_dir = args
    return run_trial(cfg, trial, snapshot_dir)


def run_cells(cells, workers: int = 1, snapshot_dir=None) -> list[ResultRecord]:
    jobs = [(cfg, trial, snapshot_dir) for cfg, trial in cells]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, jobs))


# --- benchmark grid -------------------------------------------------------------


BENCHMARK_COLUMNS = ("method", "quality", "seed", "status", "roc_auc", "average_precision", "config_hash")


def benchmark_cells(base: ExperimentConfig, methods, qualities) -> list[tuple[ExperimentConfig, int]]:
    cells = []
    for q in qualities:
        noise = replace(base.noise, gt_fraction=float(q))
        for method in methods:
            cfg = replace(base, method=Method(method), noise=noise, source_index=None)
            cells += [(cfg, i) for i in range(base.trials)]
    return cells


def run_benchmark(
    base: ExperimentConfig,
    methods,
    qualities=QUALITY_GRID,
    results_file="benchmark.jsonl",
    table_file="benchmark.csv",
    workers: int = 1,
) -> list[ResultRecord]:
    """Full methods x qualities x trials grid; skips cells already recorded as ok."""
    jsonl = results_path(results_file)
    done = {(r.config_hash, r.seed): r for r in read_records(jsonl) if r.kind == "trial" and r.status == "ok"}
    cells = benchmark_cells(base, methods, qualities)
    todo = [(cfg, i) for cfg, i in cells if (cfg.cell_hash(), cfg.seed + i) not in done]
    log.info("benchmark: %d cells, %d already done", len(cells), len(cells) - len(todo))
    for rec in run_cells(todo, workers):
        append_record(jsonl, rec)
        done[(rec.config_hash, rec.seed)] = rec
    rows = [done[(cfg.cell_hash(), cfg.seed + i)] for cfg, i in cells]
    write_table(results_path(table_file), rows)
    return rows


def write_table(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCHMARK_COLUMNS)
        for r in records:
            w.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in BENCHMARK_COLUMNS])
    os.replace(tmp, path)


# --- ablations ------------------------------------------------------------------------


def ablation_configs(kind, base: ExperimentConfig) -> list[tuple[dict, ExperimentConfig]]:
    """(label, config) pairs for one ablation; every config runs AdmoeMlp."""
    kind = AblationKind(kind)
    base = replace(base, method=Method.ADMOE_MLP, source_index=None)
    if kind is AblationKind.MOE_VS_INPUT:
        return [
            ({"use_moe": moe, "labels_as_input": lab}, replace(base, use_moe=moe, labels_as_input=lab))
            for moe in (True, False)
            for lab in (True, False)
        ]
    if kind is AblationKind.EXPERT_GRID:
        return [({"m": m, "k": k}, replace(base, train=replace(base.train, m=m, k=k))) for m, k in EXPERT_GRID]
    return [({"clean_fraction": f}, replace(base, clean_fraction=f)) for f in CLEAN_FRACTIONS]


@dataclass
class AblationResult:
    kind: str
    rows: list  # dicts: label fields + mean roc_auc / average_precision + status
    spearman: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def run_ablation(kind, base: ExperimentConfig, results_file=None, workers: int = 1) -> AblationResult:
    kind = AblationKind(kind)
    configs = ablation_configs(kind, base)
    cells = [(cfg, i) for _, cfg in configs for i in range(cfg.trials)]
    records = run_cells(cells, workers)
    rows, pos = [], 0
    for label, cfg in configs:
        recs = records[pos : pos + cfg.trials]
        pos += cfg.trials
        summary = summarize(recs)
        if results_file:
            for r in recs + [summary]:
                append_record(results_path(results_file), r)
        rows.append({**label, "roc_auc": summary.roc_auc, "average_precision": summary.average_precision, "status": summary.status})
    result = AblationResult(kind.value, rows)
    if kind is AblationKind.CLEAN_RATIO and all(r["roc_auc"] is not None for r in rows):
        rho = stats.spearmanr([r["clean_fraction"] for r in rows], [r["roc_auc"] for r in rows])[0]
        result.spearman = None if math.isnan(rho) else float(rho)
    return result
