"""Detection and captioning metrics over predicted event sets.

Matching for evaluation is greedy in confidence order (ties to the lower
index), unlike the optimal assignment used for training losses: scoring
follows detection convention, training follows set prediction.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .errors import ContractViolation

THRESHOLDS = (0.3, 0.5, 0.7, 0.9)

NOT_COMPUTED = "not computed"


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal IOU; empty union maps to 0."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def bleu4(candidate: list[str], reference: list[str]) -> float:
    """Sentence BLEU with n-grams up to min(4, len(candidate)).

    Unigram precision is exact (disjoint captions score 0); higher orders
    smooth a zero count to (0+1)/(denominator+1).  Brevity penalty is the
    usual min(1, e^(1 - r/c)).
    """
    if not candidate:
        return 0.0
    if not reference:
        raise ContractViolation("bleu4 against an empty reference")
    n_max = min(4, len(candidate))
    log_sum = 0.0
    for n in range(1, n_max + 1):
        cand = Counter(tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1))
        ref = Counter(tuple(reference[i : i + n]) for i in range(len(reference) - n + 1))
        num = sum(min(c, ref[g]) for g, c in cand.items())
        den = sum(cand.values())
        if n == 1:
            if num == 0:
                return 0.0
            p = num / den
        elif num == 0:
            p = 1.0 / (den + 1)
        else:
            p = num / den
        log_sum += np.log(p)
    geo = np.exp(log_sum / n_max)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c >= r else np.exp(1.0 - r / c)
    return float(bp * geo)


def match_for_eval(
    pred_segs: list[tuple[float, float]],
    pred_conf: list[float],
    gt_segs: list[tuple[float, float]],
    threshold: float,
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching at a tIOU threshold.

    Predictions are visited in descending confidence (index breaks ties);
    each takes the highest-tIOU unmatched ground truth, lowest index on
    ties, and only if the overlap clears the threshold.
    """
    order = np.lexsort((np.arange(len(pred_conf)), -np.asarray(pred_conf, dtype=np.float64)))
    taken = np.zeros(len(gt_segs), dtype=bool)
    pairs = []
    for pi in order:
        best_j, best_t = -1, threshold
        for j, gt in enumerate(gt_segs):
            if taken[j]:
                continue
            t = tiou(pred_segs[pi], gt)
            if t > best_t or (t == best_t and t >= threshold and best_j == -1):
                best_j, best_t = j, t
        if best_j >= 0 and best_t >= threshold:
            taken[best_j] = True
            pairs.append((int(pi), best_j))
    return pairs


def score(
    predictions: dict[str, list[dict]],
    ground_truth: dict[str, list[dict]],
    thresholds: tuple[float, ...] = THRESHOLDS,
) -> dict:
    """Micro-averaged detection and captioning metrics over videos.

    F1 is computed from the threshold-averaged precision and recall; the
    dense captioning score divides matched BLEU mass by the total number
    of ground-truth events, unmatched events contributing zero.
    """
    missing = set(ground_truth) - set(predictions)
    if missing:
        raise ContractViolation(f"missing predictions for {sorted(missing)[0]}")

    total_pred = sum(len(v) for v in predictions.values())
    total_gt = sum(len(v) for v in ground_truth.values())
    per_thr: dict[str, dict[str, float | str]] = {}
    precisions, recalls, bleus = [], [], []
    for thr in thresholds:
        tp = 0
        bleu_mass = 0.0
        for vid, gts in ground_truth.items():
            preds = predictions[vid]
            pred_segs = [(p["start"], p["end"]) for p in preds]
            conf = [p["confidence"] for p in preds]
            gt_segs = [(g["start"], g["end"]) for g in gts]
            pairs = match_for_eval(pred_segs, conf, gt_segs, thr)
            tp += len(pairs)
            for pi, gi in pairs:
                bleu_mass += bleu4(list(preds[pi]["tokens"]), list(gts[gi]["tokens"]))
        key = "%.6g" % thr
        p = tp / total_pred if total_pred else None
        r = tp / total_gt if total_gt else None
        b = bleu_mass / total_gt if total_gt else None
        per_thr[key] = {
            "precision": NOT_COMPUTED if p is None else p,
            "recall": NOT_COMPUTED if r is None else r,
            "bleu": NOT_COMPUTED if b is None else b,
        }
        if p is not None:
            precisions.append(p)
        if r is not None:
            recalls.append(r)
        if b is not None:
            bleus.append(b)

    report: dict = {
        "n_videos": len(ground_truth),
        "n_predictions": total_pred,
        "n_ground_truth": total_gt,
        "thresholds": list(thresholds),
        "per_threshold": per_thr,
    }
    if precisions and recalls:
        p_bar = float(np.mean(precisions))
        r_bar = float(np.mean(recalls))
        f1 = 2 * p_bar * r_bar / (p_bar + r_bar) if (p_bar + r_bar) > 0 else 0.0
        report["precision_mean"] = p_bar
        report["recall_mean"] = r_bar
        report["f1"] = f1
    else:
        report["precision_mean"] = NOT_COMPUTED if not precisions else float(np.mean(precisions))
        report["recall_mean"] = NOT_COMPUTED if not recalls else float(np.mean(recalls))
        report["f1"] = NOT_COMPUTED
    report["bleu_mean"] = float(np.mean(bleus)) if bleus else NOT_COMPUTED
    return report


def metrics_rows(report: dict) -> list[dict[str, str]]:
    """Flatten a report into metric,threshold,value rows for the CSV."""
    rows = []

    def fmt(v) -> str:
        return v if isinstance(v, str) else "%.6g" % v

    for key, vals in sorted(report["per_threshold"].items(), key=lambda kv: float(kv[0])):
        for metric in ("precision", "recall", "bleu"):
            rows.append({"metric": metric, "threshold": key, "value": fmt(vals[metric])})
    for metric in ("precision_mean", "recall_mean", "f1", "bleu_mean"):
        rows.append({"metric": metric, "threshold": "", "value": fmt(report[metric])})
    return rows


def annotations_to_gt(annotations) -> dict[str, list[dict]]:
    """VideoAnnotation list -> the ground-truth mapping `score` expects."""
    out = {}
    for ann in annotations:
        out[ann.video_id] = [
            {"start": e.start, "end": e.end, "tokens": e.tokens} for e in ann.events
        ]
    return out
