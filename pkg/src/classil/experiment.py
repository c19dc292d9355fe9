"""Config-driven experiment runner: data, T-state training chains, weight-bank
recording, the evaluation grid, and persisted run artifacts.

All method variants of one backbone share a single training chain; they differ
only in how the classifier is resolved at evaluation time. A completed run
directory is self-describing and can be re-evaluated without retraining.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datahub, neuralnet, weightbank
from .errors import ClassILError, ConfigError, IntegrityError
from .metrics import MetricsReport, StateMetrics, error_typology, g_il, GilInput, topk_accuracy
from .scoring import EvalConfig, score

BACKBONE_FT = "ft"
BACKBONE_LWF = "lwf"

# Method grid: name -> (backbone, classifier source, normalization, calibration).
METHODS = {
    "FT": (BACKBONE_FT, "current_head", "none", "none"),
    "inFT": (BACKBONE_FT, "initial_bank", "none", "none"),
    "inFT_L2": (BACKBONE_FT, "initial_bank", "l2", "none"),
    "inFT_mc": (BACKBONE_FT, "initial_bank", "none", "mc"),
    "inFT_L2_mc": (BACKBONE_FT, "initial_bank", "l2", "mc"),
    "inFT_siw": (BACKBONE_FT, "initial_bank", "standardize", "none"),
    "inFT_siw_mc": (BACKBONE_FT, "initial_bank", "standardize", "mc"),
    "inFT_mean": (BACKBONE_FT, "initial_bank", "mean", "none"),
    "inFT_minmax": (BACKBONE_FT, "initial_bank", "min_max", "none"),
    "LwF": (BACKBONE_LWF, "current_head", "none", "none"),
    "inLwF": (BACKBONE_LWF, "initial_bank", "none", "none"),
    "inLwF_siw": (BACKBONE_LWF, "initial_bank", "standardize", "none"),
    "inLwF_siw_mc": (BACKBONE_LWF, "initial_bank", "standardize", "mc"),
}


def method_eval_config(name: str) -> tuple[str, EvalConfig]:
    try:
        backbone, source, norm, calib = METHODS[name]
    except KeyError:
        raise ConfigError(
            f"unknown method {name!r}; available: {', '.join(sorted(METHODS))}"
        ) from None
    return backbone, EvalConfig(source, norm, calib)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    num_classes: int = 20
    samples_per_class: int = 200
    test_samples_per_class: int = 50
    dim: int = 16
    spread: float = 0.8
    seed: int = 7


@dataclass
class FileSpec:
    train_path: str = ""
    test_path: str = ""
    format: str = "csv"


@dataclass
class TrainConfig:
    """Desk-scale training defaults.

    Cluster overlap (spread 0.8 on unit-normal means) keeps the loss positive
    for the whole state, so the new-class bias and row suppression that drive
    forgetting stay active; plateau cuts are disabled by default because they
    would freeze that pressure within a few epochs at this scale.
    """

    epochs: int = 100
    initial_epochs: int = 100
    batch_size: int = 32
    base_lr: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 2e-3
    plateau_patience: int = 1000
    plateau_factor: float = 0.1
    hidden_sizes: list = field(default_factory=lambda: [96])
    distill_temperature: float = 2.0
    distill_weight: float = 1.0


DEFAULT_GRID = ["FT", "inFT", "inFT_L2", "inFT_siw", "inFT_siw_mc"]


@dataclass
class ExperimentConfig:
    dataset: object = field(default_factory=SyntheticSpec)
    states: int = 10
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    output: str = "run"

    def __post_init__(self):
        if self.states < 1:
            raise ConfigError("states must be >= 1")
        if not self.grid:
            raise ConfigError("grid must name at least one method")
        for name in self.grid:
            method_eval_config(name)

    def to_json(self) -> dict:
        if isinstance(self.dataset, SyntheticSpec):
            dataset = {"synthetic": dict(vars(self.dataset))}
        else:
            dataset = {
                "file": {
                    "train_path": self.dataset.train_path,
                    "test_path": self.dataset.test_path,
                    "format": self.dataset.format,
                }
            }
        return {
            "dataset": dataset,
            "states": self.states,
            "seed": self.seed,
            "train": dict(vars(self.train), hidden_sizes=list(self.train.hidden_sizes)),
            "grid": list(self.grid),
            "output": self.output,
        }


def _check_keys(obj: dict, allowed: set, context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


def config_from_dict(obj: dict) -> ExperimentConfig:
    """Parse and validate a config mapping; unknown keys are rejected."""
    _check_keys(obj, {"dataset", "states", "seed", "train", "grid", "output"}, "config")
    cfg = ExperimentConfig()
    if "dataset" in obj:
        ds = obj["dataset"]
        _check_keys(ds, {"synthetic", "file"}, "dataset")
        if "synthetic" in ds and "file" in ds:
            raise ConfigError("dataset must be either synthetic or file, not both")
        if "synthetic" in ds:
            _check_keys(ds["synthetic"], set(vars(SyntheticSpec())), "dataset.synthetic")
            cfg.dataset = SyntheticSpec(**ds["synthetic"])
        elif "file" in ds:
            _check_keys(ds["file"], {"train_path", "test_path", "format"}, "dataset.file")
            cfg.dataset = FileSpec(**ds["file"])
        else:
            raise ConfigError("dataset requires a synthetic or file section")
    if "train" in obj:
        _check_keys(obj["train"], set(vars(TrainConfig())), "train")
        cfg.train = TrainConfig(**obj["train"])
    cfg.states = int(obj.get("states", cfg.states))
    cfg.seed = int(obj.get("seed", cfg.seed))
    cfg.grid = list(obj.get("grid", cfg.grid))
    cfg.output = str(obj.get("output", cfg.output))
    return ExperimentConfig(cfg.dataset, cfg.states, cfg.seed, cfg.train, cfg.grid, cfg.output)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(obj)


def load_experiment_data(cfg: ExperimentConfig):
    if isinstance(cfg.dataset, SyntheticSpec):
        ds = cfg.dataset
        train = datahub.generate_synthetic(
            ds.num_classes, ds.samples_per_class, ds.dim, ds.spread, ds.seed, split="train"
        )
        test = datahub.generate_synthetic(
            ds.num_classes, ds.test_samples_per_class, ds.dim, ds.spread, ds.seed, split="test"
        )
    else:
        train = datahub.load_dataset(cfg.dataset.train_path, cfg.dataset.format, split="train")
        test = datahub.load_dataset(cfg.dataset.test_path, cfg.dataset.format, split="test")
    datahub.check_train_test_consistency(train, test)
    return train, test


# ---------------------------------------------------------------------------
# Training chains
# ---------------------------------------------------------------------------


def _state_spec(cfg: ExperimentConfig, state: int, distill: bool) -> neuralnet.TrainSpec:
    tc = cfg.train
    return neuralnet.TrainSpec(
        epochs=tc.initial_epochs if state == 0 else tc.epochs,
        batch_size=tc.batch_size,
        base_lr=tc.base_lr,
        momentum=tc.momentum,
        weight_decay=tc.weight_decay,
        plateau_patience=tc.plateau_patience,
        plateau_factor=tc.plateau_factor,
        distill=distill and state >= 1,
        distill_temperature=tc.distill_temperature,
        distill_weight=tc.distill_weight,
        seed=cfg.seed,
    )


def train_chain(cfg: ExperimentConfig, backbone: str, train_set, stream, audit):
    """Sequential per-state training for one backbone; returns (models, bank, traces)."""
    distill = backbone == BACKBONE_LWF
    n = stream.classes_per_state
    models = []
    traces = []
    bank: weightbank.WeightBank | None = None
    previous = None
    for t in range(stream.num_states):
        try:
            view = datahub.state_training_view(stream, train_set, t, audit)
            if previous is None:
                model = neuralnet.init_model(
                    train_set.dim, cfg.train.hidden_sizes, n, cfg.seed, state_index=0
                )
            else:
                model = neuralnet.extend_head(previous, n, cfg.seed)
            spec = _state_spec(cfg, t, distill)
            model, trace = neuralnet.train_state(
                model, view, spec, previous_model=previous if spec.distill else None
            )
            if bank is None:
                bank = weightbank.WeightBank(feature_dim=model.feature_dim)
            weightbank.record_state(bank, model, view)
        except ClassILError as exc:
            raise type(exc)(f"{backbone} backbone, state {t}: {exc}") from exc
        models.append(model)
        traces.append(trace)
        previous = model
    return models, bank, traces


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_method(name: str, models, bank, stream, test_set) -> MetricsReport:
    backbone, eval_cfg = method_eval_config(name)
    report = MetricsReport(name, backbone, eval_cfg.to_json())
    n = stream.classes_per_state
    for t, model in enumerate(models):
        view = datahub.cumulative_test_view(stream, test_set, t)
        matrix = score(eval_cfg, model, bank, t, view.features)
        seen = stream.classes_seen(t)
        top1 = topk_accuracy(matrix, view.labels, 1)
        top5 = topk_accuracy(matrix, view.labels, min(5, seen))
        past = list(range(n * t))
        new = list(range(n * t, seen))
        typology = error_typology(matrix, view.labels, past, new)
        report.per_state.append(StateMetrics(t, seen, top1, top5, typology))
    return report


# ---------------------------------------------------------------------------
# Run artifacts
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


@dataclass
class RunArtifacts:
    run_dir: Path
    config: ExperimentConfig
    stream: datahub.IncrementalStream
    models: dict           # backbone -> list of Models
    banks: dict            # backbone -> WeightBank
    reports: dict          # method -> MetricsReport
    audit: datahub.AccessAudit


def _bank_path(run_dir: Path, backbone: str) -> Path:
    return run_dir / ("bank.bin" if backbone == BACKBONE_FT else f"bank_{backbone}.bin")


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_summary_csv(reports: dict, path: Path) -> None:
    """Delimited per-method summary: per-state top-1 plus incremental averages."""
    methods = sorted(reports)
    if not methods:
        return
    num_states = len(reports[methods[0]].per_state)
    header = (
        ["method"]
        + [f"top1_state{t}" for t in range(num_states)]
        + ["avg_inc_top1", "avg_inc_top5"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name in methods:
            report = reports[name]
            row = [name] + [f"{s.top1:.4f}" for s in report.per_state]
            avg1 = report.average_incremental_top1
            avg5 = report.average_incremental_top5
            row.append("" if avg1 is None else f"{avg1:.4f}")
            row.append("" if avg5 is None else f"{avg5:.4f}")
            writer.writerow(row)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunArtifacts:
    """Train every backbone the grid needs, evaluate the grid, persist artifacts."""
    run_dir = Path(out_dir if out_dir is not None else cfg.output)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / MANIFEST_NAME
    if manifest_path.exists():
        manifest_path.unlink()

    train_set, test_set = load_experiment_data(cfg)
    stream = datahub.partition_stream(train_set, cfg.states, cfg.seed)
    audit = datahub.AccessAudit(memoryless=True)

    backbones = sorted({method_eval_config(name)[0] for name in cfg.grid})
    models: dict = {}
    banks: dict = {}
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for backbone in backbones:
        chain, bank, traces = train_chain(cfg, backbone, train_set, stream, audit)
        models[backbone] = chain
        banks[backbone] = bank
        for t, model in enumerate(chain):
            neuralnet.save_model(model, ckpt_dir / f"{backbone}_state{t}.bin")
        weightbank.save_bank(bank, _bank_path(run_dir, backbone))
        _write_json(
            run_dir / f"training_{backbone}.json",
            [
                [
                    {
                        "epoch": e.epoch,
                        "lr": e.lr,
                        "classification_loss": e.classification_loss,
                        "distillation_loss": e.distillation_loss,
                        "train_accuracy": e.train_accuracy,
                    }
                    for e in trace
                ]
                for trace in traces
            ],
        )

    reports_dir = run_dir / "reports"
    reports_dir.mkdir(exist_ok=True)
    reports = {}
    for name in cfg.grid:
        backbone, _ = method_eval_config(name)
        report = evaluate_method(name, models[backbone], banks[backbone], stream, test_set)
        reports[name] = report
        (reports_dir / f"{name}.json").write_text(report.dumps())
    write_summary_csv(reports, run_dir / "summary.csv")

    _write_json(run_dir / "config.json", cfg.to_json())
    _write_json(run_dir / "stream.json", stream.to_json())
    audit.save(run_dir / "audit.json")

    files = {}
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != MANIFEST_NAME:
            files[str(path.relative_to(run_dir))] = _file_sha256(path)
    _write_json(
        manifest_path,
        {"complete": True, "backbones": backbones, "grid": list(cfg.grid), "files": files},
    )
    return RunArtifacts(run_dir, cfg, stream, models, banks, reports, audit)


def load_run(run_dir):
    """Load a completed run's config, stream, chains, and banks, verifying integrity."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise IntegrityError(f"{run_dir}: no manifest; run is incomplete or missing")
    manifest = json.loads(manifest_path.read_text())
    if not manifest.get("complete"):
        raise IntegrityError(f"{run_dir}: manifest marks the run incomplete")
    for rel, digest in manifest["files"].items():
        path = run_dir / rel
        if rel.startswith("reports/") or rel == "summary.csv":
            continue  # reports may legitimately be regenerated post hoc
        if not path.exists():
            raise IntegrityError(f"{run_dir}: missing artifact {rel}")
        if _file_sha256(path) != digest:
            raise IntegrityError(f"{run_dir}: digest mismatch for {rel}")
    cfg = config_from_dict(json.loads((run_dir / "config.json").read_text()))
    stream = datahub.IncrementalStream.from_json(
        json.loads((run_dir / "stream.json").read_text())
    )
    models = {}
    banks = {}
    for backbone in manifest["backbones"]:
        models[backbone] = [
            neuralnet.load_model(run_dir / "checkpoints" / f"{backbone}_state{t}.bin")
            for t in range(stream.num_states)
        ]
        banks[backbone] = weightbank.load_bank(_bank_path(run_dir, backbone))
    return cfg, stream, models, banks


def evaluate_only(run_dir, grid) -> dict:
    """Score extra grid entries against a stored run without retraining."""
    run_dir = Path(run_dir)
    cfg, stream, models, banks = load_run(run_dir)
    _, test_set = load_experiment_data(cfg)
    reports = {}
    reports_dir = run_dir / "reports"
    reports_dir.mkdir(exist_ok=True)
    for name in grid:
        backbone, _ = method_eval_config(name)
        if backbone not in models:
            raise ConfigError(
                f"method {name} needs the {backbone} backbone, which this run never trained"
            )
        report = evaluate_method(name, models[backbone], banks[backbone], stream, test_set)
        reports[name] = report
        (reports_dir / f"{name}.json").write_text(report.dumps())
    return reports


def dataset_tag(cfg: ExperimentConfig) -> str:
    if isinstance(cfg.dataset, SyntheticSpec):
        return f"synthetic{cfg.dataset.num_classes}c"
    return Path(cfg.dataset.train_path).stem


def load_reports(run_dir) -> dict:
    from .metrics import MetricsReport

    run_dir = Path(run_dir)
    reports = {}
    for path in sorted((run_dir / "reports").glob("*.json")):
        report = MetricsReport.from_json(json.loads(path.read_text()))
        reports[report.method] = report
    if not reports:
        raise IntegrityError(f"{run_dir}: no reports found")
    return reports


def write_accuracy_table(run_dirs, path, metric: str = "top1") -> None:
    """Cross-run accuracy table: method rows, one column per (dataset, T) run.

    Runs with a single state supply the Full reference row for their dataset;
    every other run contributes its average incremental accuracy. The output
    feeds ``g_il_table`` directly.
    """
    if metric not in ("top1", "top5"):
        raise ConfigError(f"unknown metric {metric!r}")
    columns = []           # (label, tag, {method: value})
    full = {}              # tag -> Full value
    for run_dir in run_dirs:
        cfg = config_from_dict(json.loads((Path(run_dir) / "config.json").read_text()))
        reports = load_reports(run_dir)
        tag = dataset_tag(cfg)
        if cfg.states == 1:
            values = {m: getattr(r.per_state[0], metric) for m, r in reports.items()}
            ref = max(values.values())
            if tag in full:
                raise ConfigError(f"two Full (single-state) runs for dataset {tag}")
            full[tag] = ref
            continue
        cells = {}
        for method, report in reports.items():
            avg = (report.average_incremental_top1 if metric == "top1"
                   else report.average_incremental_top5)
            cells[method] = avg
        columns.append((f"{tag}_T{cfg.states}", tag, cells))
    if not columns:
        raise ConfigError("no incremental runs to tabulate")
    methods = sorted(set().union(*(set(c[2]) for c in columns)))
    for label, _, cells in columns:
        missing = [m for m in methods if m not in cells]
        if missing:
            raise ConfigError(f"column {label} lacks methods {missing}")
    for label, tag, _ in columns:
        if tag not in full:
            raise ConfigError(
                f"no Full reference for dataset {tag}; add a single-state run"
            )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + [label for label, _, _ in columns])
        for method in methods:
            writer.writerow([method] + [f"{cells[method]:.4f}" for _, _, cells in columns])
        writer.writerow(["Full"] + [f"{full[tag]:.4f}" for _, tag, _ in columns])


# ---------------------------------------------------------------------------
# G_IL over an accuracy table
# ---------------------------------------------------------------------------


def g_il_table(csv_path, upper_bound: float = 100.0) -> list:
    """Per-method G_IL from a table of accuracy cells with a Full reference row.

    The file must have a ``method`` column, one column per configuration, and
    a row named ``Full`` giving the reference accuracy for each column.
    """
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{csv_path}: empty table") from None
        if not header or header[0] != "method":
            raise ConfigError(f"{csv_path}: first column must be 'method'")
        columns = header[1:]
        if not columns:
            raise ConfigError(f"{csv_path}: no configuration columns")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns) + 1:
                raise ConfigError(f"{csv_path}: line {lineno}: wrong column count")
            try:
                rows[row[0]] = [float(v) for v in row[1:]]
            except ValueError:
                raise ConfigError(f"{csv_path}: line {lineno}: non-numeric cell") from None
    if "Full" not in rows:
        raise ConfigError(f"{csv_path}: missing Full row")
    full = rows.pop("Full")
    out = []
    for method, accs in rows.items():
        value = g_il(GilInput(tuple(zip(accs, full)), upper_bound=upper_bound))
        out.append((method, value))
    return out
