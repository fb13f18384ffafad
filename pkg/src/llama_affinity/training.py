"""Loss, Adam, the per-fold training loop and k-fold cross-validation."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .data import Dataset, FoldAssignment, make_batches, stratified_kfold
from .metrics import MetricsReport, evaluate
from .model import ModelConfig, forward, init_params, predict_proba
from .tensor import Tensor, make_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7
    k_folds: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def sparse_categorical_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class (log-sum-exp form)."""
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels {labels.shape} do not match batch of {logits.shape[0]}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"label out of range for {logits.shape[1]} classes")
    logp = T.log_softmax(logits)
    return T.neg(T.mean(T.pick(logp, labels)))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> None:
    """In-place bias-corrected Adam update of ``params`` (name -> Tensor)."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype)


def predict_dataset(params, ds: Dataset, config: ModelConfig, batch_size: int) -> np.ndarray:
    """[N, 2] class probabilities, batches in dataset order."""
    out = []
    with T.no_grad():
        for batch in make_batches(ds, batch_size, shuffle=False):
            logits = forward(params, batch.input_ids, batch.attention_mask, config).logits
            out.append(predict_proba(logits))
    return np.concatenate(out)


def evaluate_model(params, ds: Dataset, config: ModelConfig, batch_size: int) -> MetricsReport:
    return evaluate(predict_dataset(params, ds, config, batch_size), ds.labels)


@dataclass
class FoldReport:
    fold: int
    accuracy: float
    f1: float
    precision: float
    recall: float
    roc_auc: float
    training_minutes: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FoldResult:
    checkpoint: "Checkpoint"
    report: FoldReport
    metrics: MetricsReport
    epoch_losses: list


def train_fold(train: Dataset, test: Dataset, model_config: ModelConfig, train_config: TrainConfig,
               fold: int = 0, dtype=np.float32) -> FoldResult:
    from .checkpoint import Checkpoint

    if len(set(test.labels.tolist())) < 2:
        raise TrainingError("test set must contain both labels")
    seed = train_config.seed
    params = init_params(model_config, make_rng([seed, fold, 0]), dtype=dtype)
    shuffle_rng = make_rng([seed, fold, 1])
    dropout_rng = make_rng([seed, fold, 2])
    state = AdamState.zeros(params)
    names = {id(p): k for k, p in params.items()}

    start = time.perf_counter()
    epoch_losses = []
    for epoch in range(train_config.epochs):
        total, count = 0.0, 0
        for b, batch in enumerate(make_batches(train, train_config.batch_size, shuffle_rng, shuffle=True)):
            out = forward(params, batch.input_ids, batch.attention_mask, model_config,
                          rng=dropout_rng, training=True)
            loss = sparse_categorical_cross_entropy(out.logits, batch.labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"fold {fold}: loss diverged at epoch {epoch + 1}, batch {b + 1}")
            grads = {names[id(leaf)]: g for leaf, g in T.backward(loss).items() if id(leaf) in names}
            adam_step(params, grads, state, train_config)
            total += value * len(batch)
            count += len(batch)
        epoch_losses.append(total / count)
        log.info("fold %d epoch %d loss %.6f", fold, epoch + 1, epoch_losses[-1])
    minutes = (time.perf_counter() - start) / 60.0

    metrics = evaluate_model(params, test, model_config, train_config.batch_size)
    report = FoldReport(fold, metrics.accuracy, metrics.f1, metrics.precision, metrics.recall,
                        metrics.roc_auc, minutes)
    cp = Checkpoint(model_config, {k: p.data for k, p in params.items()}, train_config,
                    {"fold": fold, "epoch": train_config.epochs, "seed": seed})
    return FoldResult(cp, report, metrics, epoch_losses)


METRIC_COLUMNS = ("accuracy", "f1", "precision", "recall", "roc_auc")


def average_row(reports) -> dict:
    """Arithmetic mean of metric columns; total (summed) training minutes."""
    row = {c: float(np.mean([getattr(r, c) for r in reports])) for c in METRIC_COLUMNS}
    row["training_minutes"] = float(np.sum([r.training_minutes for r in reports]))
    return row


@dataclass
class CrossValidationResult:
    folds: FoldAssignment
    results: list

    @property
    def reports(self) -> list:
        return [r.report for r in self.results]

    @property
    def average(self) -> dict:
        return average_row(self.reports)


def _run_fold(args):
    ds, folds, fold, model_config, train_config = args
    return train_fold(ds.subset(folds.train_indices(fold)), ds.subset(folds.test_indices(fold)),
                      model_config, train_config, fold)


def cross_validate(ds: Dataset, model_config: ModelConfig, train_config: TrainConfig,
                   workers: int = 1) -> CrossValidationResult:
    """Stratified k-fold: every fold is the test set exactly once.

    With ``workers > 1`` folds run in separate processes; each fold derives its
    RNG streams from ``(seed, fold)`` only, so results match the serial run.
    """
    folds = stratified_kfold(ds.labels, train_config.k_folds, train_config.seed)
    jobs = [(ds, folds, f, model_config, train_config) for f in range(folds.k)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    return CrossValidationResult(folds, results)


TABLE_HEADERS = ("Fold", "Accuracy", "F1_score", "Precision", "Recall", "ROC AUC", "Training (Minutes)")


def format_table(reports, average: dict | None = None) -> str:
    """Aligned plain-text table: one row per fold plus an Average row."""
    average = average if average is not None else average_row(reports)
    rows = [[str(r.fold)] + [f"{getattr(r, c):.4f}" for c in (*METRIC_COLUMNS, "training_minutes")]
            for r in reports]
    rows.append(["Average"] + [f"{average[c]:.4f}" for c in (*METRIC_COLUMNS, "training_minutes")])
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(TABLE_HEADERS)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(TABLE_HEADERS, widths)).rstrip()]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def reports_to_json(reports, average: dict | None = None) -> dict:
    average = average if average is not None else average_row(reports)
    return {"folds": [r.to_dict() for r in reports], "average": average}
