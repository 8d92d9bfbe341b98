"""Weakly-supervised multi-concept detection.

Concepts are the frequent nouns/adjectives/verbs of the training captions.
A per-frame sigmoid head predicts concept probabilities, a temporal
attention pools them into one video-level distribution trained with a
multiple-instance BCE against caption-derived labels, and the detected
concepts are folded back into the frame features both per frame and per
video.  A sampled contrastive triplet keeps the concept embedding rows
discriminative.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .numerics import (
    Array,
    clamped_log,
    clamped_log_grad,
    cosine_sim,
    cosine_sim_backward,
    sigmoid,
    softmax,
)

ELIGIBLE_TAGS = ("adjective", "noun", "verb")

TaggedCaption = list[tuple[str, str]]


@dataclass
class ConceptVocabulary:
    tokens: list[str]
    tags: dict[str, str]
    freqs: dict[str, int]

    def __post_init__(self) -> None:
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def save(self, path: str | Path) -> None:
        rows = [
            {"token": t, "tag": self.tags[t], "freq": self.freqs[t]}
            for t in self.tokens
        ]
        Path(path).write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "ConceptVocabulary":
        rows = json.loads(Path(path).read_text())
        tokens = [r["token"] for r in rows]
        return ConceptVocabulary(
            tokens,
            {r["token"]: r["tag"] for r in rows},
            {r["token"]: int(r["freq"]) for r in rows},
        )


def build_vocabulary(tagged_captions: list[TaggedCaption], n_concepts: int) -> ConceptVocabulary:
    """Top-N_C eligible tokens by frequency; ties break lexicographically.

    Only nouns, adjectives and verbs are eligible.  When fewer than
    n_concepts distinct eligible tokens exist, all of them are kept and a
    warning is emitted.
    """
    if n_concepts < 1:
        raise ContractViolation(f"concept count must be >= 1, got {n_concepts}")
    freqs: dict[str, int] = {}
    tags: dict[str, str] = {}
    for cap in tagged_captions:
        for token, tag in cap:
            if tag not in ELIGIBLE_TAGS:
                continue
            freqs[token] = freqs.get(token, 0) + 1
            tags[token] = tag
    ranked = sorted(freqs, key=lambda t: (-freqs[t], t))
    if len(ranked) < n_concepts:
        warnings.warn(
            f"only {len(ranked)} eligible tokens for a {n_concepts}-concept vocabulary"
        )
    keep = ranked[:n_concepts]
    return ConceptVocabulary(keep, {t: tags[t] for t in keep}, {t: freqs[t] for t in keep})


def label_video(captions: list[list[str]], vocab: ConceptVocabulary) -> Array:
    """Multi-hot video label: concept i is on iff its token appears anywhere."""
    y = np.zeros(len(vocab), dtype=np.float64)
    for cap in captions:
        for token in cap:
            idx = vocab.index.get(token)
            if idx is not None:
                y[idx] = 1.0
    return y


# ===== head forward pieces ==============================================


def frame_probs(features: Array, fc_w: Array, fc_b: Array) -> Array:
    """Per-frame concept probabilities p_t = sigmoid(F fc_w + fc_b): T x N_C."""
    return sigmoid(features @ fc_w + fc_b)


def video_probs(probs: Array, features: Array, attn_w: Array) -> tuple[Array, Array]:
    """Temporal attention pooling: alpha = softmax(F W), P^v = sum_t alpha_t p_t.

    Returns (P^v, alpha); P^v is a convex combination of frame rows, so it
    inherits their [0, 1] range.
    """
    logits = (features @ attn_w)[:, 0]
    alpha = softmax(logits)
    return alpha @ probs, alpha


def mil_loss(video_p: Array, labels: Array) -> float:
    """Binary cross-entropy over concepts, summed, with clamped logs."""
    if video_p.shape != labels.shape:
        raise ContractViolation(
            f"mil_loss shape mismatch {video_p.shape} vs {labels.shape}"
        )
    pos = labels * clamped_log(video_p)
    neg = (1.0 - labels) * clamped_log(1.0 - video_p)
    return float(-(pos + neg).sum())


def mil_loss_grad(video_p: Array, labels: Array) -> Array:
    """dL/dP^v, honouring the flat clamp regions of the log."""
    g_pos = labels * clamped_log_grad(video_p)
    g_neg = (1.0 - labels) * clamped_log_grad(1.0 - video_p)
    return -(g_pos - g_neg)


def concept_features(probs: Array, video_p: Array, concept_emb: Array) -> tuple[Array, Array]:
    """Frame concept features f^c = p W^C and video feature f^vc = P^v W^C."""
    return probs @ concept_emb, video_p @ concept_emb


def enhance(features: Array, frame_concept: Array) -> Array:
    """Concept-enhanced frames F~ = F + f^c."""
    if features.shape != frame_concept.shape:
        raise ContractViolation(
            f"enhance shape mismatch {features.shape} vs {frame_concept.shape}"
        )
    return features + frame_concept


# ===== contrastive triplet ==============================================


def sample_contrastive(
    labels: Array, n_pairs: int, rng: np.random.Generator
) -> list[tuple[Array, Array]]:
    """Sampled positive/negative multi-hot label pairs for the triplet.

    Each positive carries m = max(1, #active) set bits: one forced from the
    active set, the remainder drawn uniformly from the whole vocabulary
    (without replacement, so the cardinality is exactly m).  Each negative
    draws min(m, #inactive) bits from the inactive set only.  A label with
    no active or no inactive bit is degenerate: no pairs, no loss signal.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n_c = labels.shape[0]
    active = np.nonzero(labels > 0.5)[0]
    inactive = np.nonzero(labels <= 0.5)[0]
    if active.size == 0 or inactive.size == 0:
        return []
    m = max(1, int(active.size))
    pairs = []
    for _ in range(n_pairs):
        pos = np.zeros(n_c)
        anchor = int(rng.choice(active))
        pos[anchor] = 1.0
        if m > 1:
            others = np.delete(np.arange(n_c), anchor)
            pos[rng.choice(others, size=m - 1, replace=False)] = 1.0
        neg = np.zeros(n_c)
        k = min(m, int(inactive.size))
        neg[rng.choice(inactive, size=k, replace=False)] = 1.0
        pairs.append((pos, neg))
    return pairs


def triplet_loss(
    video_feat: Array,
    pairs: list[tuple[Array, Array]],
    concept_emb: Array,
    margin: float,
) -> float:
    """(1/N_S) sum max(0, sim(f^vc, f^vc-) - sim(f^vc, f^vc+) + margin)."""
    if not pairs:
        return 0.0
    total = 0.0
    for pos, neg in pairs:
        s_pos = cosine_sim(video_feat, pos @ concept_emb)
        s_neg = cosine_sim(video_feat, neg @ concept_emb)
        total += max(0.0, s_neg - s_pos + margin)
    return total / len(pairs)


def triplet_loss_backward(
    video_feat: Array,
    pairs: list[tuple[Array, Array]],
    concept_emb: Array,
    margin: float,
    upstream: float = 1.0,
) -> tuple[Array, Array]:
    """Gradients of the triplet w.r.t. f^vc and W^C (labels are constants)."""
    d_feat = np.zeros_like(video_feat)
    d_emb = np.zeros_like(concept_emb)
    if not pairs:
        return d_feat, d_emb
    w = upstream / len(pairs)
    for pos, neg in pairs:
        f_pos = pos @ concept_emb
        f_neg = neg @ concept_emb
        s_pos = cosine_sim(video_feat, f_pos)
        s_neg = cosine_sim(video_feat, f_neg)
        if s_neg - s_pos + margin <= 0.0:
            continue
        du, dv = cosine_sim_backward(video_feat, f_neg, w)
        d_feat += du
        d_emb += np.outer(neg, dv)
        du, dv = cosine_sim_backward(video_feat, f_pos, -w)
        d_feat += du
        d_emb += np.outer(pos, dv)
    return d_feat, d_emb
