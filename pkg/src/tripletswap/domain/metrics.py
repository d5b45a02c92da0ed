# src/tripletswap/domain/metrics.py
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from tripletswap.domain.errors import ConfigValidationError, NumericError

METRIC_COLUMNS = ("id_similarity", "retrieval_top1", "retrieval_top5", "pose_l2", "expression_l2", "frechet")


@dataclass
class MetricReport:
    """
    One row of the evaluation table. Retrieval values are percentages.
    """
    label: str
    n: int
    id_similarity: float
    retrieval_top1: float
    retrieval_top5: float
    pose_l2: float
    expression_l2: float
    frechet: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 <= self.retrieval_top1 <= self.retrieval_top5 <= 100.0):
            raise ConfigValidationError(
                "retrieval must satisfy 0 <= top1 <= top5 <= 100",
                top1=self.retrieval_top1,
                top5=self.retrieval_top5,
            )
        if self.frechet < 0.0:
            raise ConfigValidationError("frechet distance must be non-negative", frechet=self.frechet)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MetricReport:
        return cls(**d)


@dataclass(frozen=True)
class Gallery:
    """Source identity embeddings keyed by sample id."""
    ids: tuple[str, ...]
    embeddings: np.ndarray

    def __post_init__(self) -> None:
        if len(self.ids) != int(np.asarray(self.embeddings).shape[0]):
            raise ConfigValidationError("gallery ids and embeddings differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ConfigValidationError("gallery ids must be unique")

    @property
    def count(self) -> int:
        return len(self.ids)


def _as_2d(x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise NumericError("zero-norm embedding in similarity computation", zero_rows=int(np.sum(norms < 1e-12)))
    return x / norms


def cosine_similarities(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine between paired embeddings."""
    a2, b2 = _as_2d(a), _as_2d(b)
    if a2.shape != b2.shape:
        raise ConfigValidationError("paired embeddings differ in shape", a=a2.shape, b=b2.shape)
    return np.sum(_unit_rows(a2) * _unit_rows(b2), axis=1)


def mean_cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(cosine_similarities(a, b)))


def retrieval_accuracy(
    queries: np.ndarray,
    true_ids: Sequence[str],
    gallery: Gallery,
    k: int,
) -> float:
    """
    Percentage of queries whose true source ranks within the top-k gallery
    entries by cosine similarity. Ties go to the smaller sample id, so the
    result does not depend on gallery order.
    """
    if gallery.count == 0:
        raise ConfigValidationError("empty gallery")
    if k < 1:
        raise ConfigValidationError("k must be >= 1", k=k)
    q = _unit_rows(_as_2d(queries))
    if q.shape[0] != len(true_ids):
        raise ConfigValidationError("queries and true ids differ in length", queries=q.shape[0], ids=len(true_ids))
    g = _unit_rows(_as_2d(gallery.embeddings))
    position = {sid: i for i, sid in enumerate(gallery.ids)}
    ids = np.asarray(gallery.ids, dtype=object)

    sims = q @ g.T
    hits = 0
    for row, true_id in zip(sims, true_ids):
        if true_id not in position:
            raise ConfigValidationError("true source id missing from gallery", id=true_id)
        s_true = row[position[true_id]]
        better = int(np.sum(row > s_true))
        tied_before = int(np.sum((row == s_true) & (ids < true_id)))
        if better + tied_before < k:
            hits += 1
    return 100.0 * hits / q.shape[0]


def pose_expression_l2(
    swapped_pose: np.ndarray,
    target_pose: np.ndarray,
    swapped_expression: np.ndarray,
    target_expression: np.ndarray,
) -> tuple[float, float]:
    """Mean L2 over (yaw, pitch) and over mouth curvature, per pair."""
    sp, tp = _as_2d(swapped_pose), _as_2d(target_pose)
    se = np.asarray(swapped_expression, dtype=np.float64).reshape(-1)
    te = np.asarray(target_expression, dtype=np.float64).reshape(-1)
    if sp.shape != tp.shape or se.shape != te.shape or sp.shape[0] != se.shape[0]:
        raise ConfigValidationError("swapped and target estimates differ in length")
    pose = float(np.mean(np.linalg.norm(sp - tp, axis=1)))
    expr = float(np.mean(np.abs(se - te)))
    return pose, expr


def decision_threshold(same: np.ndarray, different: np.ndarray) -> tuple[float, float]:
    """
    Cosine threshold separating same-identity from different-identity scores.
    Returns (threshold, overlap) where overlap is the balanced error
    0.5 * (P[same < thr] + P[different >= thr]) at the best threshold.
    """
    s = np.sort(np.asarray(same, dtype=np.float64))
    d = np.sort(np.asarray(different, dtype=np.float64))
    if s.size == 0 or d.size == 0:
        raise ConfigValidationError("both score sets must be non-empty")
    pooled = np.unique(np.concatenate([s, d]))
    candidates = np.concatenate([[pooled[0] - 1e-9], 0.5 * (pooled[1:] + pooled[:-1]), [pooled[-1] + 1e-9]])
    miss = np.searchsorted(s, candidates, side="left") / s.size
    false_accept = 1.0 - np.searchsorted(d, candidates, side="left") / d.size
    err = 0.5 * (miss + false_accept)
    best = int(np.argmin(err))
    return float(candidates[best]), float(err[best])
