"""Utility and privacy metrics for synthetic radiomaps.

Utility: absolute Pearson matrices, their rank agreement, and downstream
localization (MLP / kNN) scored by 2-D RMSE or zone accuracy under k-fold
cross-validation. Privacy: mean distance from each synthetic record to its
closest original record.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from dploc import nn
from dploc.data import RSS_CEIL, RSS_FLOOR, FingerprintDataset, kfold_split
from dploc.errors import ConfigError, DataError, SchemaError

TASKS = ("regression_xy", "classification_zone")
MODELS = ("mlp", "knn")
PROTOCOLS = ("tsts", "tstr")
MIN_RSS_SCALE = 1.0  # dB


# --- correlation -------------------------------------------------------------


@dataclass
class CorrelationMatrix:
    values: np.ndarray
    columns: list[str]
    constant: list[str] = field(default_factory=list)


def pearson_matrix(table: np.ndarray | FingerprintDataset, columns: Sequence[str] | None = None) -> CorrelationMatrix:
    """Absolute Pearson coefficients between columns; constant columns get 0."""
    if isinstance(table, FingerprintDataset):
        columns = table.columns if columns is None else columns
        table = table.table()
    x = np.asarray(table, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("correlation needs at least two records")
    columns = list(columns) if columns is not None else [f"c{i}" for i in range(x.shape[1])]
    centered = x - x.mean(axis=0)
    sd = np.sqrt((centered**2).sum(axis=0))
    ok = sd > 0
    cov = centered.T @ centered
    denom = np.outer(sd, sd)
    r = np.zeros_like(cov)
    both = np.outer(ok, ok)
    r[both] = cov[both] / denom[both]
    r = np.clip(np.abs(r), 0.0, 1.0)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, np.where(ok, 1.0, 0.0))
    return CorrelationMatrix(r, columns, [c for c, k in zip(columns, ok) if not k])


def corr_preservation(orig: CorrelationMatrix | np.ndarray, synth: CorrelationMatrix | np.ndarray) -> float:
    """Spearman rank correlation of the two matrices' upper triangles."""
    a = orig.values if isinstance(orig, CorrelationMatrix) else np.asarray(orig)
    b = synth.values if isinstance(synth, CorrelationMatrix) else np.asarray(synth)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SchemaError(f"correlation matrices differ in shape: {a.shape} vs {b.shape}")
    iu = np.triu_indices(a.shape[0], k=1)
    return float(stats.spearmanr(a[iu], b[iu]).statistic)


# --- scalar metrics ------------------------------------------------------------------


def rmse_2d(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if pred.shape != truth.shape or len(pred) == 0:
        raise SchemaError("predictions and truth must have equal, non-zero length")
    return float(np.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=1))))


def zone_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred).ravel(), np.asarray(truth).ravel()
    if pred.shape != truth.shape or pred.size == 0:
        raise SchemaError("predictions and truth must have equal, non-zero length")
    return 100.0 * float(np.mean(pred == truth))


def _minmax01(reference: np.ndarray, x: np.ndarray) -> np.ndarray:
    lo, hi = reference.min(axis=0), reference.max(axis=0)
    span = hi - lo
    out = np.zeros_like(x, dtype=np.float64)
    ok = span > 0
    out[:, ok] = (x[:, ok] - lo[ok]) / span[ok]
    return out


def disclosure_min(original: np.ndarray | FingerprintDataset, generated: np.ndarray | FingerprintDataset,
                   space: str = "normalized") -> float:
    """Average over generated records of the distance to the closest original record.

    Datasets are compared on the generated table's columns. In ``normalized``
    space both tables are min-max scaled with the original's ranges.
    """
    if isinstance(generated, FingerprintDataset):
        cols = generated.columns
        gen = generated.table()
        if isinstance(original, FingerprintDataset):
            missing = [c for c in cols if c not in original.columns]
            if missing:
                raise SchemaError(f"original lacks generated columns {missing}")
            orig = original.table()[:, [original.columns.index(c) for c in cols]]
        else:
            orig = np.asarray(original, dtype=np.float64)
    else:
        gen = np.asarray(generated, dtype=np.float64)
        orig = original.table() if isinstance(original, FingerprintDataset) else np.asarray(original, dtype=np.float64)
    if orig.ndim != 2 or gen.ndim != 2 or orig.shape[1] != gen.shape[1]:
        raise SchemaError("original and generated tables have different columns")
    if len(orig) == 0 or len(gen) == 0:
        raise DataError("disclosure needs non-empty tables")
    if space == "normalized":
        orig, gen = _minmax01(orig, orig), _minmax01(orig, gen)
    elif space != "raw":
        raise ConfigError(f"unknown space {space!r}")
    return float(cdist(gen, orig).min(axis=1).mean())


# --- downstream models ---------------------------------------------------------------


@dataclass
class MLPSettings:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-4
    epochs: int = 500
    batch_size: int = 200


@dataclass
class Predictor:
    task: str
    model: str
    n_aps: int
    mean: np.ndarray  # input standardization
    scale: np.ndarray
    net: nn.DenseNet | None = None
    y_mean: np.ndarray | None = None
    y_scale: np.ndarray | None = None
    train_x: np.ndarray | None = None  # kNN memory (standardized)
    train_y: np.ndarray | None = None
    k: int = 3
    n_classes: int = 0
    bounds: tuple[float, float] | None = None  # (width, height) for regression output

    def _standardize(self, rss: np.ndarray) -> np.ndarray:
        return (rss - self.mean) / self.scale

    def predict(self, rss: np.ndarray) -> np.ndarray:
        rss = np.atleast_2d(np.asarray(rss, dtype=np.float64))
        if rss.shape[1] != self.n_aps:
            raise SchemaError(f"expected {self.n_aps} RSS values per query, got {rss.shape[1]}")
        x = self._standardize(rss)
        if self.model == "knn":
            return self._knn(x)
        out = nn.forward(self.net, x, keep_cache=False)
        if self.task == "regression_xy":
            out = out * self.y_scale + self.y_mean
            if self.bounds is not None:
                out = np.clip(out, 0.0, self.bounds)
            return out
        return np.argmax(out, axis=1)

    def _knn(self, x: np.ndarray) -> np.ndarray:
        d = cdist(x, self.train_x)
        k = min(self.k, self.train_x.shape[0])
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        if self.task == "regression_xy":
            return self.train_y[order].mean(axis=1)
        out = np.empty(len(x), dtype=np.int64)
        for i, nb in enumerate(order):
            labels = self.train_y[nb]
            counts = np.bincount(labels, minlength=self.n_classes)
            best = np.flatnonzero(counts == counts.max())
            # tie: the class of the closest neighbour among the tied classes
            out[i] = next(l for l in labels if l in best)
        return out


def _targets(dataset: FingerprintDataset, task: str) -> np.ndarray:
    if task == "regression_xy":
        if dataset.coords is None:
            raise SchemaError("regression task needs x,y columns")
        return dataset.coords
    if task == "classification_zone":
        if dataset.zones is None:
            raise SchemaError("classification task needs a zone column")
        return dataset.zones
    raise ConfigError(f"unknown task {task!r}")


def train_downstream(train: FingerprintDataset, task: str, model: str = "mlp", seed: int = 0,
                     k: int = 3, settings: MLPSettings | None = None) -> Predictor:
    """Fit a localization model on ``train`` (RSS -> x,y or RSS -> zone)."""
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}")
    y = _targets(train, task)
    x_raw = train.rss
    if len(x_raw) == 0:
        raise DataError("cannot train on an empty table")
    mean = x_raw.mean(axis=0)
    # a floor of 1 dB keeps near-constant synthetic columns from being
    # blown up into huge standardized values on real queries
    scale = np.maximum(x_raw.std(axis=0), MIN_RSS_SCALE)
    n_classes = train.schema.n_zones
    pred = Predictor(task, model, train.ap_count, mean, scale, k=k, n_classes=n_classes,
                     bounds=(train.schema.width, train.schema.height))
    x = pred._standardize(x_raw)
    if model == "knn":
        pred.train_x, pred.train_y = x, y.copy()
        return pred
    settings = settings or MLPSettings()
    rng = np.random.default_rng(seed)
    out_dim = 2 if task == "regression_xy" else n_classes
    net = nn.DenseNet.build([x.shape[1], *settings.hidden, out_dim], rng, "relu", "identity")
    opt = nn.OptimizerState.create(net, "adam", settings.lr)
    if task == "regression_xy":
        pred.y_mean = y.mean(axis=0)
        pred.y_scale = np.where(y.std(axis=0) > 0, y.std(axis=0), 1.0)
        target = (y - pred.y_mean) / pred.y_scale
    else:
        target = np.zeros((len(y), n_classes))
        target[np.arange(len(y)), y] = 1.0
    n = len(x)
    bs = min(settings.batch_size, n)
    for _ in range(settings.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            out = nn.forward(net, x[idx])
            if task == "regression_xy":
                g = (out - target[idx]) / len(idx)
            else:
                z = out - out.max(axis=1, keepdims=True)
                p = np.exp(z)
                p /= p.sum(axis=1, keepdims=True)
                g = (p - target[idx]) / len(idx)
            nn.optimizer_step(net, nn.backward(net, g), opt)
    net.cache = None
    pred.net = net
    return pred


def locate(predictor: Predictor, rss_vector: Sequence[float]) -> tuple[float, float] | int:
    """Position of one new user from their RSS fingerprint."""
    v = np.asarray(rss_vector, dtype=np.float64).ravel()
    if v.size != predictor.n_aps:
        raise SchemaError(f"expected {predictor.n_aps} RSS values, got {v.size}")
    if not np.all(np.isfinite(v)) or np.any(v < RSS_FLOOR) or np.any(v > RSS_CEIL):
        raise DataError(f"RSS values must lie in [{RSS_FLOOR:g}, {RSS_CEIL:g}] dBm")
    out = predictor.predict(v[None, :])[0]
    if predictor.task == "regression_xy":
        return float(out[0]), float(out[1])
    return int(out)


def score(predictor: Predictor, test: FingerprintDataset) -> float:
    pred = predictor.predict(test.rss)
    truth = _targets(test, predictor.task)
    if predictor.task == "regression_xy":
        return rmse_2d(pred, truth)
    return zone_accuracy(pred, truth)


# --- cross-validation ----------------------------------------------------------------


@dataclass
class UtilityEntry:
    task: str
    model: str
    protocol: str
    metric: str  # rmse_m | zone_accuracy_pct
    mean: float
    std: float
    folds: list[float]

    @property
    def n_folds(self) -> int:
        return len(self.folds)


def cross_validate(table: FingerprintDataset, task: str, model: str = "mlp", k: int = 5, seed: int = 0,
                   protocol: str = "tsts", real_test: FingerprintDataset | None = None,
                   settings: MLPSettings | None = None, knn_k: int = 3) -> UtilityEntry:
    """k-fold score of a downstream model.

    ``tsts`` tests each fold's model on the held-out fold of ``table``;
    ``tstr`` trains the same way but tests on ``real_test``.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    if protocol == "tstr" and real_test is None:
        raise ConfigError("TSTR needs a real test set")
    folds = kfold_split(table, k, seed)
    values = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        pred = train_downstream(table.subset(train_idx), task, model, seed=seed + i, k=knn_k, settings=settings)
        test = table.subset(test_idx) if protocol == "tsts" else real_test
        values.append(score(pred, test))
    metric = "rmse_m" if task == "regression_xy" else "zone_accuracy_pct"
    arr = np.asarray(values)
    return UtilityEntry(task, model, protocol, metric, float(arr.mean()), float(arr.std()), values)
