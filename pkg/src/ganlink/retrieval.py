"""Corpus embedding, cosine ranking and the precision@K evaluation protocol."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError, InputError, LookupFailure
from .models import ModelBundle, ae_forward, bidnn_forward, discriminator_forward

logger = logging.getLogger(__name__)

SOURCES = ("cgan", "ae", "bidnn", "text_only", "visual_only")

# distances closer than this count as tied and fall back to id order
TIE_DECIMALS = 12


@dataclass
class EmbeddingMatrix:
    ids: list
    matrix: np.ndarray
    source: str = "cgan"
    _unit: np.ndarray | None = field(default=None, repr=False, compare=False)
    _index: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise DataError(f"{len(self.ids)} ids for embedding matrix of shape {self.matrix.shape}")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate segment ids in embedding matrix")
        if not np.isfinite(self.matrix).all():
            raise DataError("embedding matrix contains NaN or Inf rows")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def index(self, segment_id: str) -> int:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.ids)}
        try:
            return self._index[segment_id]
        except KeyError:
            raise LookupFailure(f"unknown anchor {segment_id!r}") from None

    def unit_rows(self) -> np.ndarray:
        """Rows scaled to unit length; zero rows stay zero."""
        if self._unit is None:
            m = self.matrix.astype(np.float64)
            norms = np.linalg.norm(m, axis=1, keepdims=True)
            self._unit = np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)
        return self._unit


def embed_corpus(bundle: ModelBundle, dataset, batch_size: int = 128) -> EmbeddingMatrix:
    """Per-segment multimodal embeddings, computed in inference mode, rows in dataset order."""
    ids = [s.id for s in dataset]
    if not ids:
        raise DataError("cannot embed an empty dataset")
    rows = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        phi = _stack(chunk, "phi", "text embedding")
        if bundle.kind == "cgan":
            images = _stack(chunk, "representative", "representative image")
            _, emb = discriminator_forward(bundle, images, phi, "infer")
        elif bundle.kind == "ae":
            _, _, emb = ae_forward(bundle, phi, _stack(chunk, "visual_feature", "visual feature"))
        else:
            _, emb = bidnn_forward(bundle, phi, _stack(chunk, "visual_feature", "visual feature"), "both")
        rows.append(emb.data)
    return EmbeddingMatrix(ids, np.concatenate(rows), bundle.kind)


def _stack(segments, attr: str, what: str) -> np.ndarray:
    missing = [s.id for s in segments if getattr(s, attr) is None]
    if missing:
        raise DataError(f"segment {missing[0]} lacks a {what}")
    return np.stack([getattr(s, attr) for s in segments])


def single_modality(dataset, which: str) -> EmbeddingMatrix:
    """Raw text or visual vectors as an embedding (the single-modality baselines)."""
    if which == "text_only":
        return EmbeddingMatrix([s.id for s in dataset], _stack(dataset, "phi", "text embedding"), which)
    if which == "visual_only":
        return EmbeddingMatrix([s.id for s in dataset], _stack(dataset, "visual_feature", "visual feature"), which)
    raise InputError(f"unknown single-modality source {which!r}")


def cosine_distance(a, b) -> float:
    """1 - cos(a, b); defined as 1 when either vector is zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InputError(f"cosine_distance: vectors of length {a.size} and {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        logger.debug("cosine distance with a zero vector; using 1")
        return 1.0
    return float(np.clip(1.0 - (a @ b) / (na * nb), 0.0, 2.0))


def rank_targets(anchor_id: str, embeddings: EmbeddingMatrix, k: int | None = None) -> list[tuple[str, float]]:
    """All other segments by ascending cosine distance, ties by id; the first ``k`` are returned."""
    i = embeddings.index(anchor_id)
    n = len(embeddings)
    if k is None:
        k = n - 1
    if not 1 <= k <= n - 1:
        raise InputError(f"k must lie in [1, {n - 1}], got {k}")
    unit = embeddings.unit_rows()
    dist = np.clip(1.0 - unit @ unit[i], 0.0, 2.0)
    if not unit[i].any():
        dist[:] = 1.0
    dist[~unit.any(axis=1)] = 1.0
    dist = np.round(dist, TIE_DECIMALS)
    ids = np.asarray(embeddings.ids)
    order = np.lexsort((ids, dist))
    order = order[order != i][:k]
    return [(embeddings.ids[j], float(dist[j])) for j in order]


def precision_at_k(ranking, relevant, k: int = 10) -> float:
    if k < 1:
        raise InputError("k must be at least 1")
    top = list(ranking)[:k]
    top = [r[0] if isinstance(r, tuple) else r for r in top]
    return sum(1 for r in top if r in relevant) / k


@dataclass
class EvalReport:
    k: int
    per_anchor: list
    run_means: list
    label: str = ""

    @property
    def runs(self) -> int:
        return len(self.run_means)

    @property
    def mean(self) -> float:
        return float(np.mean(self.run_means))

    @property
    def std(self) -> float | None:
        if self.runs < 2:
            return None
        return float(np.std(self.run_means, ddof=1))

    def row(self, width: int = 24) -> str:
        sigma = "" if self.std is None else f"{100 * self.std:.2f}"
        return f"{self.label:<{width}} {100 * self.mean:>8.2f} {sigma:>8}"


def evaluate(runs, groundtruth: dict, k: int = 10, label: str | None = None) -> EvalReport:
    """Mean P@K over anchors for each run; report mean and sample σ across runs."""
    runs = list(runs)
    if not runs:
        raise InputError("evaluate needs at least one run")
    anchors = list(runs[0].ids)
    for run in runs[1:]:
        missing = set(anchors) - set(run.ids)
        if missing:
            raise DataError(f"anchor {sorted(missing)[0]} missing from a run")
    judged = [a for a in anchors if a in groundtruth]
    skipped = len(anchors) - len(judged)
    if skipped:
        logger.info("skipping %d anchors without ground truth", skipped)
    if not judged:
        raise DataError("no anchor has ground truth")
    per_anchor, means = [], []
    for run in runs:
        depth = min(k, len(run) - 1)
        values = {a: precision_at_k([t for t, _ in rank_targets(a, run, depth)], groundtruth[a], k)
                  for a in judged}
        per_anchor.append(values)
        means.append(float(np.mean(list(values.values()))))
    return EvalReport(k, per_anchor, means, label if label is not None else runs[0].source)


def format_table(reports, k: int | None = None) -> str:
    k = k or (reports[0].k if reports else 10)
    width = max([len("Representation")] + [len(r.label) for r in reports])
    head = f"{'Representation':<{width}} {'P@' + str(k) + ' (%)':>8} {'σ (%)':>8}"
    lines = [head, "-" * len(head)]
    lines += [r.row(width) for r in reports]
    return "\n".join(lines)


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["representation", "k", "runs", "p_at_k", "sigma"])
        for r in reports:
            writer.writerow([r.label, r.k, r.runs, f"{r.mean:.6f}", "" if r.std is None else f"{r.std:.6f}"])


@dataclass
class TTestResult:
    t: float
    p: float
    dof: float


def one_sided_t_test(a, b) -> TTestResult:
    """Welch two-sample t-test of H1: mean(a) > mean(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise InputError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if va + vb == 0:
        raise InputError("both samples have zero variance; the t statistic is undefined")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return TTestResult(float(t), float(stats.t.sf(t, dof)), float(dof))
