"""
Local learning machine (LLM) classifier.

Training alternates between estimating expected margins with kernel-weighted
neighbour probabilities and fitting an l1-regularised logistic loss on the
squared-weight parameterisation w = v * v, so weights stay non-negative.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit, softmax

from .dataset import Dataset, NormalizationStats, zscore_apply, zscore_fit
from .exceptions import ConfigError, DatasetError, TrainingError
from .schemas import LlmOptions, ModelDocument

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

# Upper bound on the size of the (rows x N x J) difference block built per E-step chunk.
_BLOCK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class LlmHyperparams:
    lambda_: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.lambda_) and self.lambda_ > 0):
            raise ConfigError(f"lambda must be positive, got {self.lambda_}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class InnerResult:
    v: np.ndarray
    converged: bool
    iterations: int
    history: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class LlmModel:
    """Trained classifier: weights, hyperparameters and the normalized training snapshot."""

    weights: np.ndarray
    hyper: LlmHyperparams
    train_snapshot: Dataset
    norm_stats: NormalizationStats
    outer_iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (self.train_snapshot.n_features,):
            raise DatasetError(
                f"{weights.size} weights for {self.train_snapshot.n_features} features")
        if np.any(weights < 0):
            raise DatasetError("feature weights must be non-negative")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def feature_names(self) -> Tuple[str, ...]:
        return self.train_snapshot.feature_names


def weighted_manhattan(x1: Sequence[float], x2: Sequence[float], w: Sequence[float]) -> float:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (x1.shape == x2.shape == w.shape) or x1.ndim != 1:
        raise DatasetError(f"dimension mismatch: {x1.shape}, {x2.shape}, {w.shape}")
    return float(np.sum(w * np.abs(x1 - x2)))


def _weighted_distances(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # w >= 0, so sum_j w_j |a_j - b_j| == cityblock distance between w*a and w*b
    return cdist(a * w, b * w, metric="cityblock")


def _check_classes(labels: np.ndarray) -> None:
    for cls in (1, -1):
        count = int(np.sum(labels == cls))
        if count == 0:
            raise TrainingError(f"class {cls:+d} has no samples")
        if count < 2:
            raise TrainingError(f"class {cls:+d} has a single sample, no hit neighbour exists")


def _masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return softmax(np.where(mask, logits, -np.inf), axis=-1)


def _probability_matrix(x: np.ndarray, y: np.ndarray, w: np.ndarray, sigma: float
                        ) -> Tuple[np.ndarray, np.ndarray]:
    """Return (A, D) with A = P_miss - P_hit row-wise and D the weighted distance matrix."""
    d = _weighted_distances(x, x, w)
    same = y[:, None] == y[None, :]
    hit_mask = same & ~np.eye(len(y), dtype=bool)
    logits = -d / sigma
    p_miss = _masked_softmax(logits, ~same)
    p_hit = _masked_softmax(logits, hit_mask)
    return p_miss - p_hit, d


def neighbor_probabilities(n: int, data: Dataset, w: Sequence[float], sigma: float
                           ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Kernel density probabilities of the misses and hits of sample ``n``.

    Returns (miss indices, P_miss, hit indices, P_hit); each distribution sums to 1.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (data.n_features,):
        raise DatasetError(f"expected {data.n_features} weights, got {w.size}")
    y = data.labels
    misses = np.flatnonzero(y != y[n])
    hits = np.flatnonzero(y == y[n])
    hits = hits[hits != n]
    if misses.size == 0:
        raise TrainingError(f"no samples of class {-y[n]:+d}")
    if hits.size == 0:
        raise TrainingError(f"sample {n} has no peer in class {y[n]:+d}")
    x_n = data.features[n:n + 1]
    d_miss = _weighted_distances(x_n, data.features[misses], w)[0]
    d_hit = _weighted_distances(x_n, data.features[hits], w)[0]
    return misses, softmax(-d_miss / sigma), hits, softmax(-d_hit / sigma)


def expected_margin_terms(data: Dataset, w: Sequence[float], sigma: float) -> np.ndarray:
    """N x J matrix whose row n is the expected margin vector of sample n."""
    w = np.asarray(w, dtype=float)
    if w.shape != (data.n_features,):
        raise DatasetError(f"expected {data.n_features} weights, got {w.size}")
    _check_classes(data.labels)
    x = data.features
    a, _ = _probability_matrix(x, data.labels, w, sigma)
    n, j = x.shape
    zbar = np.empty((n, j))
    rows = max(1, _BLOCK_ELEMENTS // max(1, n * j))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        diffs = np.abs(x[start:stop, None, :] - x[None, :, :])
        zbar[start:stop] = np.einsum("bi,bij->bj", a[start:stop], diffs)
    return zbar


def objective(v: Sequence[float], terms: np.ndarray, lambda_: float) -> float:
    v = np.asarray(v, dtype=float)
    s = terms @ (v * v)
    return float(np.sum(np.logaddexp(0.0, -s)) + lambda_ * np.dot(v, v))


def gradient(v: Sequence[float], terms: np.ndarray, lambda_: float) -> np.ndarray:
    """Analytic gradient of :func:`objective` with respect to v."""
    v = np.asarray(v, dtype=float)
    s = terms @ (v * v)
    return 2.0 * v * (lambda_ - terms.T @ expit(-s))


def solve_inner(terms: np.ndarray, lambda_: float, v0: Sequence[float],
                opts: Optional[LlmOptions] = None) -> InnerResult:
    """Minimise the logistic objective over v for fixed margin terms.

    Gradient descent with a halving backtracking line search (Armijo condition).
    Stops on a relative objective decrease below ``inner_tol``; hitting the
    iteration cap returns the last accepted iterate with ``converged=False``.
    """
    opts = opts or LlmOptions()
    v = np.asarray(v0, dtype=float).copy()
    if not np.all(np.isfinite(v)):
        raise TrainingError("initial v has non-finite entries")
    f = objective(v, terms, lambda_)
    history = [f]
    for it in range(1, opts.max_inner_iters + 1):
        g = gradient(v, terms, lambda_)
        g_sq = float(np.dot(g, g))
        if g_sq == 0.0:
            return InnerResult(v, True, it - 1, history)
        eta = opts.initial_step
        while True:
            candidate = v - eta * g
            f_new = objective(candidate, terms, lambda_)
            if f_new <= f - opts.armijo * eta * g_sq:
                break
            eta *= 0.5
            if eta < opts.min_step:
                # no descent step left at machine precision
                return InnerResult(v, True, it - 1, history)
        decrease = f - f_new
        v, f = candidate, f_new
        history.append(f)
        if decrease < opts.inner_tol * max(1.0, abs(history[-2])):
            return InnerResult(v, True, it, history)
    return InnerResult(v, False, opts.max_inner_iters, history)


def train(data: Dataset, hyper: LlmHyperparams, opts: Optional[LlmOptions] = None) -> LlmModel:
    """Fit the classifier on raw (unnormalized) data.

    The z-score stats are fitted on ``data`` and stored with the model.
    Deterministic: v starts at all ones and no randomness is involved.
    """
    opts = opts or LlmOptions()
    if data.n_samples < 4:
        raise TrainingError(f"need at least 4 training samples, got {data.n_samples}")
    _check_classes(data.labels)
    stats = zscore_fit(data)
    snapshot = zscore_apply(data, stats)

    v = np.ones(snapshot.n_features)
    w = v * v
    converged = False
    outer = 0
    for outer in range(1, opts.max_outer_iters + 1):
        terms = expected_margin_terms(snapshot, w, hyper.sigma)
        inner = solve_inner(terms, hyper.lambda_, v, opts)
        if not inner.converged:
            logger.debug(f"Inner solve hit {opts.max_inner_iters} iterations at outer step {outer}")
        v = inner.v
        w_new = v * v
        change = float(np.max(np.abs(w_new - w)))
        w = w_new
        if change < opts.outer_tol:
            converged = True
            break
    if not converged:
        logger.warning(f"LLM training stopped after {outer} outer iterations without convergence "
                       f"(lambda={hyper.lambda_:.6g}, sigma={hyper.sigma:.6g})")
    return LlmModel(w, hyper, snapshot, stats, outer_iterations=outer, converged=converged)


def decision_margins(model: LlmModel, x_raw: np.ndarray) -> np.ndarray:
    """Expected margins of test points under the hypothesis that they belong to class +1."""
    x_raw = np.asarray(x_raw, dtype=float)
    single = x_raw.ndim == 1
    x = np.atleast_2d(x_raw)
    if x.ndim != 2 or x.shape[1] != model.train_snapshot.n_features:
        raise DatasetError(f"expected {model.train_snapshot.n_features} features, got shape {x_raw.shape}")
    if not np.all(np.isfinite(x)):
        raise DatasetError("test point has non-finite values")
    x = model.norm_stats.transform(x)
    snap = model.train_snapshot
    w = model.weights
    sigma = model.hyper.sigma
    hits = snap.features[snap.labels == 1]
    misses = snap.features[snap.labels == -1]
    d_hit = _weighted_distances(x, hits, w)
    d_miss = _weighted_distances(x, misses, w)
    # w . |x - x_i| is the weighted distance itself
    margins = (np.sum(softmax(-d_miss / sigma, axis=1) * d_miss, axis=1)
               - np.sum(softmax(-d_hit / sigma, axis=1) * d_hit, axis=1))
    return margins[0] if single else margins


def predict_many(model: LlmModel, x_raw: np.ndarray) -> np.ndarray:
    margins = np.atleast_1d(decision_margins(model, np.atleast_2d(x_raw)))
    return np.where(margins > 0, 1, -1)


def predict(model: LlmModel, x_raw: Sequence[float]) -> int:
    """+1 (stable) for a strictly positive margin, otherwise -1."""
    x_raw = np.asarray(x_raw, dtype=float)
    if x_raw.ndim != 1:
        raise DatasetError("predict takes a single feature vector")
    return 1 if decision_margins(model, x_raw) > 0 else -1


def feature_weights(model: LlmModel) -> List[Tuple[str, float]]:
    """(name, weight) pairs, heaviest first; ties keep the original column order."""
    order = np.argsort(-model.weights, kind="stable")
    return [(model.feature_names[j], float(model.weights[j])) for j in order]


def to_document(model: LlmModel) -> ModelDocument:
    snap = model.train_snapshot
    return ModelDocument(
        format_version=MODEL_FORMAT_VERSION,
        feature_names=list(snap.feature_names),
        weights=model.weights.tolist(),
        lambda_=model.hyper.lambda_,
        sigma=model.hyper.sigma,
        means=model.norm_stats.means.tolist(),
        stds=model.norm_stats.stds.tolist(),
        train_features=snap.features.tolist(),
        train_labels=snap.labels.tolist(),
    )


def from_document(doc: ModelDocument) -> LlmModel:
    if doc.format_version != MODEL_FORMAT_VERSION:
        raise DatasetError(f"unsupported model format version {doc.format_version}")
    snapshot = Dataset(np.array(doc.train_features, dtype=float),
                       np.array(doc.train_labels, dtype=int), tuple(doc.feature_names))
    return LlmModel(np.array(doc.weights, dtype=float), LlmHyperparams(doc.lambda_, doc.sigma),
                    snapshot, NormalizationStats(doc.means, doc.stds))


def save_model(model: LlmModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # json writes floats with repr, which round-trips exactly
    payload = to_document(model).model_dump(by_alias=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    logger.info(f"Saved model with {len(payload['weights'])} weights to {path}")
    return path


def load_model(path: Union[str, Path]) -> LlmModel:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model file not found: {path}")
    try:
        doc = ModelDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DatasetError(f"invalid model document {path}: {exc}") from exc
    return from_document(doc)
