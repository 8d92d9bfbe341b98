"""Video-to-text retrieval and cross-modal feature fusion.

A video's frame features are pooled into W chunks, each chunk queries a
sentence corpus by cosine similarity, and the mean of its top-N_K hits
becomes one row of the semantic feature matrix F^s.  Fusion attends every
frame feature over F^s (scaled dot-product) and, by default, adds the
visual features back as a residual.

No learnable parameters live here: gradients never have to flow through
retrieval, so everything is forward-only and can be precomputed per video.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, CorpusExhausted
from .numerics import Array, require_finite, softmax


@dataclass
class CorpusEntry:
    id: str
    video: str
    tokens: list[str]
    embedding: Array


class SentenceCorpus:
    """In-memory sentence store with a dense embedding matrix."""

    def __init__(self, entries: list[CorpusEntry]) -> None:
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise ContractViolation("duplicate corpus entry ids")
        self.entries = sorted(entries, key=lambda e: e.id)
        if self.entries:
            self._matrix = np.stack([e.embedding for e in self.entries])
            require_finite("corpus embeddings", self._matrix)
            norms = np.linalg.norm(self._matrix, axis=1, keepdims=True)
            self._unit = self._matrix / np.maximum(norms, 1e-12)
        else:
            self._matrix = np.zeros((0, 0), dtype=np.float64)
            self._unit = self._matrix
        self._videos = np.array([e.video for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self._matrix.shape[1] if len(self.entries) else 0


def build_chunks(features: Array, chunk_count: int) -> Array:
    """Mean-pool T frame features into W' = min(W, T) contiguous chunks.

    The first (T mod W') chunks take ceil(T/W') frames, the rest take
    floor(T/W'): chunks tile the video exactly, order preserved.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ContractViolation(f"features must be T x d with T >= 1, got {features.shape}")
    if chunk_count < 1:
        raise ContractViolation(f"chunk count must be >= 1, got {chunk_count}")
    t = features.shape[0]
    w = min(chunk_count, t)
    base = t // w
    rem = t % w
    out = np.empty((w, features.shape[1]), dtype=np.float64)
    start = 0
    for i in range(w):
        size = base + (1 if i < rem else 0)
        out[i] = features[start : start + size].mean(axis=0)
        start += size
    return out


def retrieve_topk(
    corpus: SentenceCorpus,
    query: Array,
    k: int,
    exclude_video: str | None = None,
) -> list[CorpusEntry]:
    """Top-k corpus entries by cosine similarity to `query`.

    Ties are broken by ascending entry id; entries from `exclude_video`
    never come back.  Raises CorpusExhausted when exclusion empties the
    candidate pool.
    """
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64).ravel()
    if len(corpus) == 0:
        raise CorpusExhausted("corpus is empty")
    keep = np.ones(len(corpus), dtype=bool)
    if exclude_video is not None:
        keep = corpus._videos != exclude_video
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        raise CorpusExhausted(f"every corpus entry excluded for video {exclude_video!r}")
    qn = float(np.linalg.norm(query))
    if qn < 1e-12:
        sims = np.zeros(idx.size)
    else:
        sims = corpus._unit[idx] @ (query / qn)
    # stable sort on (-sim, id); ids ascend with index by construction
    order = np.lexsort((idx, -sims))
    take = order[: min(k, idx.size)]
    return [corpus.entries[int(idx[o])] for o in take]


def semantic_features(
    corpus: SentenceCorpus,
    chunk_queries: Array,
    k: int,
    exclude_video: str | None = None,
) -> Array:
    """One mean-pooled retrieval result per chunk: W' x d."""
    chunk_queries = np.asarray(chunk_queries, dtype=np.float64)
    out = np.empty_like(chunk_queries)
    for i in range(chunk_queries.shape[0]):
        hits = retrieve_topk(corpus, chunk_queries[i], k, exclude_video)
        out[i] = np.mean([h.embedding for h in hits], axis=0)
    return out


def fuse(visual: Array, semantic: Array, residual: bool = True) -> Array:
    """Cross-modal attention F = softmax(F^v F^s^T / sqrt(d)) F^s [+ F^v]."""
    visual = np.asarray(visual, dtype=np.float64)
    semantic = np.asarray(semantic, dtype=np.float64)
    if visual.ndim != 2 or semantic.ndim != 2 or visual.shape[1] != semantic.shape[1]:
        raise ContractViolation(
            f"fuse shape mismatch: visual {visual.shape}, semantic {semantic.shape}"
        )
    d = visual.shape[1]
    scores = visual @ semantic.T / np.sqrt(d)
    attn = softmax(scores, axis=1)
    fused = attn @ semantic
    if residual:
        fused = fused + visual
    require_finite("fused features", fused)
    return fused
