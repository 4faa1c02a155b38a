"""End-to-end fault-localisation experiment on the simulated winding.

The plan trains on faults of some depths and tests on faults of other,
unseen depths; the localisation target is the faulted section, whatever the
severity.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io, metrics
from .classifier import (Encoding, LabeledDataset, LabeledItem, Model, Normalization, TrainHyper,
                         TrainingLog, predict_model, train)
from .errors import InvalidPlanError, ParseError, TrainingDivergenceError
from .winding import (DEFAULT_F_MAX, DEFAULT_F_MIN, DEFAULT_N_POINTS, CATALOG_DEPTHS_MM, FaultSpec,
                      FrequencyGrid, FrequencyResponse, WindingModel, default_model,
                      frequency_response, inject_fault)

log = logging.getLogger(__name__)

LOW_CONFIDENCE = 0.5


@dataclass(frozen=True)
class ExperimentPlan:
    model: WindingModel = field(default_factory=default_model)
    sections: tuple[int, ...] | None = None  # None -> every section of the model
    train_depths_mm: tuple[float, ...] = (9.0, 12.0)
    test_depths_mm: tuple[float, ...] = (6.0,)
    f_min: float = DEFAULT_F_MIN
    f_max: float = DEFAULT_F_MAX
    n_points: int = DEFAULT_N_POINTS
    n_steps: int = 200
    healthy_reference: bool = True
    rescale: bool = True
    hyper: TrainHyper = field(default_factory=TrainHyper)
    noise: float = 0.0

    def __post_init__(self):
        secs = tuple(range(1, self.model.n_sections + 1)) if self.sections is None else self.sections
        object.__setattr__(self, "sections", tuple(int(s) for s in secs))
        object.__setattr__(self, "train_depths_mm", tuple(float(d) for d in self.train_depths_mm))
        object.__setattr__(self, "test_depths_mm", tuple(float(d) for d in self.test_depths_mm))

    @property
    def seed(self) -> int:
        return self.hyper.seed

    def validate(self):
        if not self.sections:
            raise InvalidPlanError("plan has no sections")
        bad = [s for s in self.sections if not 1 <= s <= self.model.n_sections]
        if bad:
            raise InvalidPlanError(f"sections {bad} outside 1..{self.model.n_sections}")
        if len(set(self.sections)) != len(self.sections):
            raise InvalidPlanError("duplicate sections in plan")
        if not self.train_depths_mm:
            raise InvalidPlanError("plan has no training depths")
        depths = self.train_depths_mm + self.test_depths_mm
        if any(not d >= 0 for d in depths):
            raise InvalidPlanError("depths must be >= 0")
        overlap = set(self.train_depths_mm) & set(self.test_depths_mm)
        if overlap:
            raise InvalidPlanError(f"train and test depths overlap: {sorted(overlap)}")
        if not self.noise >= 0:
            raise InvalidPlanError("noise amplitude must be >= 0")

    def grid(self) -> FrequencyGrid:
        return FrequencyGrid.logspace(self.f_min, self.f_max, self.n_points)

    def with_seed(self, seed: int) -> "ExperimentPlan":
        return replace(self, hyper=replace(self.hyper, seed=int(seed)))

    def to_dict(self):
        d = asdict(self)
        d["model"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["model"].items()}
        for k in ("sections", "train_depths_mm", "test_depths_mm"):
            d[k] = list(d[k])
        return d

    def digest(self) -> str:
        return io.sha256(json.dumps(self.to_dict(), sort_keys=True).encode())


def plan_from_config(cp, base: ExperimentPlan | None = None) -> ExperimentPlan:
    """Overlay ``[model]``, ``[grid]``, ``[plan]``, ``[encoding]`` and ``[training]`` sections."""
    base = base or ExperimentPlan()
    model = io.model_from_config(cp, base.model)
    kw = {"model": model}
    try:
        if cp.has_section("grid"):
            g = cp["grid"]
            kw["f_min"] = float(g.get("f_min", base.f_min))
            kw["f_max"] = float(g.get("f_max", base.f_max))
            kw["n_points"] = int(g.get("n_points", base.n_points))
        hyper = base.hyper
        if cp.has_section("plan"):
            p = cp["plan"]
            if "sections" in p:
                kw["sections"] = tuple(int(v) for v in io._floats(p["sections"]))
            elif model.n_sections != base.model.n_sections:
                kw["sections"] = None
            for key in ("train_depths_mm", "test_depths_mm"):
                if key in p:
                    kw[key] = tuple(io._floats(p[key]))
            if "noise" in p:
                kw["noise"] = float(p["noise"])
            if "seed" in p:
                hyper = replace(hyper, seed=int(p["seed"]))
        elif model.n_sections != base.model.n_sections:
            kw["sections"] = None
        if cp.has_section("encoding"):
            e = cp["encoding"]
            kw["n_steps"] = int(e.get("n_steps", base.n_steps))
            kw["healthy_reference"] = e.getboolean("healthy_reference", base.healthy_reference)
            kw["rescale"] = e.getboolean("rescale", base.rescale)
        if cp.has_section("training"):
            t = cp["training"]
            hyper = TrainHyper(
                hidden_size=int(t.get("hidden_size", hyper.hidden_size)),
                learning_rate=float(t.get("learning_rate", hyper.learning_rate)),
                beta1=float(t.get("beta1", hyper.beta1)),
                beta2=float(t.get("beta2", hyper.beta2)),
                epsilon=float(t.get("epsilon", hyper.epsilon)),
                max_epochs=int(t.get("max_epochs", hyper.max_epochs)),
                loss_threshold=float(t.get("loss_threshold", hyper.loss_threshold)),
                seed=int(t.get("seed", hyper.seed)),
            )
    except ValueError as exc:
        raise ParseError(f"config: {exc}") from None
    kw["hyper"] = hyper
    return replace(base, **kw)


def simulate_curves(model: WindingModel, grid: FrequencyGrid, faults, workers=None):
    """Frequency responses for each fault, in input order.

    Solves are independent, so they may run on a thread pool; results do not
    depend on the schedule.
    """
    faults = list(faults)
    solve = lambda f: frequency_response(inject_fault(model, f), grid)  # noqa: E731
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve, faults))
    return [solve(f) for f in faults]


def _catalog(plan, depths):
    return [FaultSpec(s, d) for s in plan.sections for d in depths]


def add_noise(fr: FrequencyResponse, sigma: float, rng: np.random.Generator) -> FrequencyResponse:
    """Additive Gaussian noise on magnitudes; negatives are clipped to zero."""
    noisy = fr.magnitude + rng.normal(0.0, sigma, fr.magnitude.shape)
    return FrequencyResponse(fr.grid, np.maximum(noisy, 0.0))


def build_dataset(plan: ExperimentPlan, workers=None):
    """Simulate, encode and label the training and test catalogs.

    Returns ``(train, test)`` LabeledDatasets sharing one Encoding whose
    normalization constants come from the training items only.
    """
    plan.validate()
    grid = plan.grid()
    healthy = frequency_response(plan.model, grid)
    train_faults = _catalog(plan, plan.train_depths_mm)
    test_faults = _catalog(plan, plan.test_depths_mm)
    curves = simulate_curves(plan.model, grid, train_faults + test_faults, workers)

    if plan.noise > 0:
        rng = np.random.default_rng([plan.seed, 1])
        sigma = plan.noise * float(np.ptp(healthy.magnitude))
        curves = [add_noise(c, sigma, rng) for c in curves]

    reference = None
    if plan.healthy_reference:
        reference = Encoding(plan.n_steps, grid.f_min, grid.f_max).raw(healthy)
    enc = Encoding(plan.n_steps, grid.f_min, grid.f_max, Normalization(), reference, plan.rescale)
    raws = [enc.raw(c) for c in curves]
    enc = enc.with_norm(Normalization.fit(raws[:len(train_faults)]))

    def items(faults, offset):
        return [LabeledItem(enc.encode(curves[offset + k]), f.section, f.depth_mm)
                for k, f in enumerate(faults)]

    n = plan.model.n_sections
    train_ds = LabeledDataset(items(train_faults, 0), enc, n)
    test_ds = LabeledDataset(items(test_faults, len(train_faults)), enc, n)
    return train_ds, test_ds


@dataclass(frozen=True)
class ItemResult:
    true_section: int
    predicted_section: int
    probabilities: tuple[float, ...]
    depth_mm: float


@dataclass(frozen=True)
class Evaluation:
    items: tuple[ItemResult, ...]
    accuracy: float | None
    metrics: metrics.Metrics | None

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "items": [asdict(it) | {"probabilities": list(it.probabilities)} for it in self.items],
        }


def evaluate(model: Model, dataset: LabeledDataset) -> Evaluation:
    rows = []
    for it in dataset.items:
        label, p = predict_model(model, it.sequence)
        rows.append(ItemResult(it.label, label, tuple(float(v) for v in p), it.depth_mm))
    if not rows:
        return Evaluation((), None, None)
    true = np.array([r.true_section for r in rows], dtype=float)
    pred = np.array([r.predicted_section for r in rows], dtype=float)
    return Evaluation(tuple(rows), float(np.mean(true == pred)), metrics.evaluate(true, pred))


@dataclass(frozen=True)
class EvaluationReport:
    status: str
    seed: int | None
    plan_hash: str
    checkpoint_hash: str | None
    train: Evaluation | None
    test: Evaluation | None
    epochs: int
    final_loss: float | None
    converged: bool
    warning: str | None = None
    diverged_epoch: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self):
        return {
            "status": self.status,
            "seed": self.seed,
            "plan_hash": self.plan_hash,
            "checkpoint_hash": self.checkpoint_hash,
            "train": None if self.train is None else self.train.to_dict(),
            "test": None if self.test is None else self.test.to_dict(),
            "epochs": self.epochs,
            "final_loss": self.final_loss,
            "converged": self.converged,
            "warning": self.warning,
            "diverged_epoch": self.diverged_epoch,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return io.sha256(self.to_json().encode())


@dataclass
class ExperimentResult:
    report: EvaluationReport
    model: Model | None
    training_log: TrainingLog | None
    train_set: LabeledDataset
    test_set: LabeledDataset
    elapsed_s: float


def run_experiment(plan: ExperimentPlan, out_dir=None, workers=None) -> ExperimentResult:
    """Build datasets, train, evaluate on train and held-out test.

    Training divergence does not raise: it yields a report with status
    ``"failed"`` and the diverging epoch.  When `out_dir` is given, curves,
    datasets, the training log, the checkpoint and the report are written there.
    """
    t0 = time.perf_counter()
    train_ds, test_ds = build_dataset(plan, workers)
    plan_hash = plan.digest()
    try:
        model, tlog = train(train_ds, plan.hyper)
    except TrainingDivergenceError as exc:
        report = EvaluationReport("failed", plan.seed, plan_hash, None, None, None,
                                  exc.epoch or 0, None, False, str(exc), exc.epoch)
        result = ExperimentResult(report, None, None, train_ds, test_ds, time.perf_counter() - t0)
        if out_dir is not None:
            _write_outputs(Path(out_dir), plan, result)
        return result

    ckpt = io.checkpoint_bytes(model)
    report = EvaluationReport(
        "ok", plan.seed, plan_hash, io.sha256(ckpt),
        evaluate(model, train_ds), evaluate(model, test_ds),
        len(tlog.losses), tlog.losses[-1], tlog.converged, tlog.warning,
    )
    result = ExperimentResult(report, model, tlog, train_ds, test_ds, time.perf_counter() - t0)
    if out_dir is not None:
        _write_outputs(Path(out_dir), plan, result)
    return result


def _write_outputs(out: Path, plan: ExperimentPlan, result: ExperimentResult):
    out.mkdir(parents=True, exist_ok=True)
    export_curves(plan, out / "curves")
    io.write_dataset(out / "dataset", result.train_set, result.test_set)
    if result.model is not None:
        io.save_checkpoint(out / "checkpoint.bin", result.model)
    if result.training_log is not None:
        (out / "training_log.csv").write_text(result.training_log.to_csv())
    (out / "report.json").write_text(result.report.to_json())
    (out / "metrics.txt").write_text(metrics_text(result.report))


def metrics_text(report: EvaluationReport) -> str:
    blocks = []
    for name, ev in (("train", report.train), ("test", report.test)):
        if ev is None or ev.metrics is None:
            continue
        blocks.append(f"[{name}]\naccuracy={ev.accuracy!r}\n" + ev.metrics.to_text())
    return "\n".join(blocks)


def curve_filename(fault: FaultSpec) -> str:
    if fault.healthy:
        return "healthy.csv"
    return f"section{fault.section}_depth{io.fmt(fault.depth_mm)}mm.csv"


def export_curves(plan: ExperimentPlan, directory, depths=None, workers=None):
    """Write the healthy curve and the fault catalog as CSVs (noise-free)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if depths is None:
        depths = sorted(set(plan.train_depths_mm) | set(plan.test_depths_mm) | set(CATALOG_DEPTHS_MM))
    grid = plan.grid()
    faults = [FaultSpec(1, 0.0)] + _catalog(plan, [x for x in depths if x > 0])
    paths = []
    for fault, fr in zip(faults, simulate_curves(plan.model, grid, faults, workers)):
        path = d / curve_filename(fault)
        io.write_curve(path, fr)
        paths.append(path)
    return paths


@dataclass(frozen=True)
class Location:
    section: int
    probabilities: tuple[float, ...]
    low_confidence: bool
    floored: bool

    def to_text(self) -> str:
        probs = ",".join(io.fmt(p) for p in self.probabilities)
        return (f"section={self.section}\nprobabilities={probs}\n"
                f"low_confidence={'true' if self.low_confidence else 'false'}\n")


def locate_curve(model: Model, fr: FrequencyResponse) -> Location:
    seq = model.encode(fr)
    section, p = predict_model(model, seq)
    return Location(section, tuple(float(v) for v in p), bool(p.max() < LOW_CONFIDENCE), seq.floored)


def locate(checkpoint_path, curve_path) -> Location:
    """Predict the faulted section for a curve CSV with a saved checkpoint."""
    return locate_curve(io.load_checkpoint(checkpoint_path), io.read_curve(curve_path))


def dataset_digest(directory) -> str:
    """Hash of a dataset directory's three files, used as provenance for `evaluate`."""
    d = Path(directory)
    blob = b"".join((d / name).read_bytes() for name in ("encoding.txt", "train.csv", "test.csv"))
    return io.sha256(blob)


def evaluate_checkpoint(checkpoint_path, dataset_dir) -> EvaluationReport:
    """Score a saved checkpoint on a saved dataset without retraining."""
    model = io.load_checkpoint(checkpoint_path)
    train_ds, test_ds = io.read_dataset(dataset_dir)
    if train_ds.encoding != model.encoding:
        raise ParseError("dataset encoding does not match the checkpoint")
    ckpt_hash = io.sha256(Path(checkpoint_path).read_bytes())
    return EvaluationReport("ok", None, dataset_digest(dataset_dir), ckpt_hash,
                            evaluate(model, train_ds), evaluate(model, test_ds), 0, None, True)
