"""Loss terms and their combination per training objective.

The matching-dependent terms are computed over per-pair vectors so the
same helpers serve every objective; which matching supplied the pairs is
the caller's business.  Component values in a LossBreakdown are raw
(unweighted) means: the configured total is always reconstructible as the
weighted sum of the stored components, and a dedicated helper does exactly
that so the invariant can be asserted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numerics import Array, clamped_log, clamped_log_grad, softmax


def caption_loss(token_logits: Array, gt_tokens: list[int]) -> float:
    """Mean cross-entropy over token positions under teacher forcing."""
    token_logits = np.asarray(token_logits, dtype=np.float64)
    if token_logits.ndim != 2 or token_logits.shape[0] != len(gt_tokens):
        raise ContractViolation(
            f"caption_loss shapes: logits {token_logits.shape} vs {len(gt_tokens)} tokens"
        )
    if len(gt_tokens) == 0:
        raise ContractViolation("caption_loss over an empty token sequence")
    v = token_logits.shape[1]
    ids = np.asarray(gt_tokens, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= v):
        raise ContractViolation(f"token id outside vocabulary of size {v}")
    probs = softmax(token_logits, axis=1)
    picked = probs[np.arange(len(ids)), ids]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


def focal_loss(conf: Array, foreground: Array, alpha: float, gamma: float) -> float:
    """Mean focal binary loss over all queries.

    gamma = 0, alpha = 0.5 reduces to half the usual BCE.
    """
    conf = np.asarray(conf, dtype=np.float64)
    fg = np.asarray(foreground, dtype=np.float64)
    pos = -alpha * (1.0 - conf) ** gamma * clamped_log(conf)
    neg = -(1.0 - alpha) * conf**gamma * clamped_log(1.0 - conf)
    return float((fg * pos + (1.0 - fg) * neg).mean())


def focal_loss_grad(conf: Array, foreground: Array, alpha: float, gamma: float) -> Array:
    """dL/dconf with the clamp plateaus of the log respected."""
    conf = np.asarray(conf, dtype=np.float64)
    fg = np.asarray(foreground, dtype=np.float64)
    n = conf.shape[0]
    log_p = clamped_log(conf)
    log_q = clamped_log(1.0 - conf)
    d_pos = -alpha * (
        -gamma * (1.0 - conf) ** (gamma - 1.0) * log_p
        + (1.0 - conf) ** gamma * clamped_log_grad(conf)
    )
    d_neg = -(1.0 - alpha) * (
        gamma * conf ** (gamma - 1.0) * log_q
        - conf**gamma * clamped_log_grad(1.0 - conf)
    )
    return (fg * d_pos + (1.0 - fg) * d_neg) / n


def counter_loss(r_len: Array, true_count: int) -> float:
    """Cross-entropy of the length distribution at the clamped true count."""
    r_len = np.asarray(r_len, dtype=np.float64)
    if not (0 <= true_count < r_len.shape[0]):
        raise ContractViolation(f"count {true_count} outside distribution of {r_len.shape[0]}")
    return float(-clamped_log(r_len[true_count]))


def counter_loss_grad_logits(r_len: Array, true_count: int, upstream: float) -> Array:
    """Gradient on the counter logits (through the softmax)."""
    d_r = np.zeros_like(r_len)
    d_r[true_count] = -upstream * float(clamped_log_grad(np.asarray(r_len[true_count])))
    inner = float(np.dot(d_r, r_len))
    return r_len * (d_r - inner)


# ===== matched-pair combinations ========================================


def loss_lg(gious: Array, caps: Array, l1: float, l2: float) -> float:
    """Localization-guided: (1/|M|) sum (l1 (1 - giou) + l2 cap) over pairs."""
    if len(gious) == 0:
        return 0.0
    return float(l1 * np.mean(1.0 - np.asarray(gious)) + l2 * np.mean(caps))


def loss_sem(sims: Array) -> float:
    """(1/|M|) sum (1 - cosine) over location-matched pairs."""
    if len(sims) == 0:
        return 0.0
    return float(np.mean(1.0 - np.asarray(sims)))


def loss_sg(
    gious_sem: Array, caps_sem: Array, sims_loc: Array, l1: float, l2: float, l3: float
) -> float:
    """Semantic-guided: giou and caption over semantic pairs, plus l3 L_sem."""
    return loss_lg(gious_sem, caps_sem, l1, l2) + l3 * loss_sem(sims_loc)


def loss_cyc(
    gious_sem: Array, caps_loc: Array, sims_loc: Array, l1: float, l2: float, l3: float
) -> float:
    """Cyclic: giou over semantic pairs, captions over location pairs, + L_sem."""
    g = float(l1 * np.mean(1.0 - np.asarray(gious_sem))) if len(gious_sem) else 0.0
    c = float(l2 * np.mean(caps_loc)) if len(caps_loc) else 0.0
    return g + c + l3 * loss_sem(sims_loc)


def set_loss(components: dict[str, float], betas: dict[str, float]) -> float:
    """Weighted DETR-style set objective: sum_k beta_k component_k."""
    unknown = set(betas) - set(components)
    if unknown:
        raise ContractViolation(f"set_loss weights without components: {sorted(unknown)}")
    return float(sum(betas[k] * components[k] for k in betas))


# ===== breakdown ========================================================

COMPONENT_ORDER = ("l_giou", "l_cap", "l_sem", "l_cls", "l_ct", "l_tri", "l_mil")


@dataclass
class LossBreakdown:
    mode: str
    components: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    n_pairs_loc: int = 0
    n_pairs_sem: int = 0

    def row(self) -> dict[str, str]:
        """CSV row cells; absent components stay empty, not zero."""
        out: dict[str, str] = {}
        for name in COMPONENT_ORDER:
            out[name] = "%.10g" % self.components[name] if name in self.components else ""
        out["total"] = "%.10g" % self.total
        return out


def recombine(breakdown: LossBreakdown) -> float:
    """Weighted sum of stored components; must equal .total to 1e-10."""
    return float(
        sum(breakdown.weights[k] * breakdown.components[k] for k in breakdown.weights)
    )
