"""Training loop: minibatch SGD with momentum and a cosine schedule.

One optimizer step averages gradients over the minibatch; matching,
sampling and shuffling all draw from streams keyed by (seed, epoch,
index), so a rerun with the same seed reproduces every byte of output.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import canonical
from .config import RunConfig
from .data import Dataset
from .errors import NumericalError
from .evaluation import annotations_to_gt, score
from .losses import COMPONENT_ORDER, LossBreakdown
from .model import Pipeline, VideoExample, component_weights, prepare_examples
from .params import ParamStore
from .rng import SeededRng

CSV_HEADER = ["step", *COMPONENT_ORDER, "total"]


@dataclass
class TrainResult:
    out_dir: str
    steps: int
    best_epoch: int
    best_score: float
    best_report: dict | None
    final_report: dict | None


def lr_at(cfg: RunConfig, step: int, total_steps: int) -> float:
    if cfg.train.schedule == "constant":
        return cfg.train.lr
    frac = step / max(1, total_steps)
    return cfg.train.lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def evaluate_split(
    pipeline: Pipeline,
    store: ParamStore,
    examples: list[VideoExample],
    gt: dict[str, list[dict]],
) -> tuple[dict[str, list[dict]], dict]:
    predictions = {ex.video_id: pipeline.infer(store, ex) for ex in examples}
    return predictions, score(predictions, gt)


def _selection_score(report: dict) -> float:
    f1 = report.get("f1")
    bleu = report.get("bleu_mean")
    if not isinstance(f1, float) or not isinstance(bleu, float):
        return float("-inf")
    return f1 + bleu


def _mean_breakdown(batch: list[LossBreakdown]) -> LossBreakdown:
    first = batch[0]
    comps = {
        k: float(np.mean([b.components[k] for b in batch])) for k in first.components
    }
    out = LossBreakdown(first.mode, comps, dict(first.weights))
    out.total = float(np.mean([b.total for b in batch]))
    return out


def _snapshot(store: ParamStore) -> dict[str, np.ndarray]:
    return {name: store.get(name).copy() for name in store.names()}


def _restore(store: ParamStore, snap: dict[str, np.ndarray]) -> None:
    for name, val in snap.items():
        store.set(name, val)


def train(cfg: RunConfig, dataset: Dataset, out_dir: str, quiet: bool = False) -> TrainResult:
    os.makedirs(out_dir, exist_ok=True)
    pipeline = Pipeline(cfg, dataset.t_frames, dataset.token_list)
    store = pipeline.build_store()
    pipeline.init_store(store, cfg.seed)

    train_set = prepare_examples(cfg, dataset, "train", cfg.flags.exclude_self)
    has_val = bool(dataset.annotations.get("val"))
    if has_val:
        val_set = prepare_examples(cfg, dataset, "val", False)
        gt_val = annotations_to_gt(dataset.annotations["val"])

    weights = component_weights(cfg)
    velocity = {name: np.zeros_like(store.get(name)) for name in store.names()}
    n = len(train_set)
    bs = cfg.train.batch_size
    n_batches = (n + bs - 1) // bs
    total_steps = cfg.train.epochs * n_batches

    rows: list[dict[str, str]] = []
    csv_path = os.path.join(out_dir, "loss.csv")
    step = 0
    best_score = float("-inf")
    best_epoch = -1
    best_report: dict | None = None
    best_params: dict[str, np.ndarray] | None = None

    def flush_csv() -> None:
        canonical.write_csv(csv_path, CSV_HEADER, rows)

    for epoch in range(cfg.train.epochs):
        order = SeededRng(cfg.seed).stream("order", epoch).permutation(n)
        for b in range(n_batches):
            batch_ids = order[b * bs : (b + 1) * bs]
            store.zero_grads()
            breakdowns = []
            for ei in batch_ids:
                ex = train_set[int(ei)]
                rng = SeededRng(cfg.seed).stream("sampling", epoch, int(ei))
                bd = pipeline.forward_backward(store, ex, weights, rng, True)
                if not math.isfinite(bd.total):
                    row = {"step": str(step), **bd.row()}
                    rows.append(row)
                    flush_csv()
                    raise NumericalError(
                        f"non-finite loss at step {step} on {ex.video_id}: "
                        f"components {bd.components}"
                    )
                breakdowns.append(bd)
            mean_bd = _mean_breakdown(breakdowns)
            rows.append({"step": str(step), **mean_bd.row()})

            lr = lr_at(cfg, step, total_steps)
            scale = 1.0 / len(batch_ids)
            for name in store.names():
                g = store.grad(name) * scale
                velocity[name] = cfg.train.momentum * velocity[name] + g
                store.set(name, store.get(name) - lr * velocity[name])
            step += 1

        last = epoch == cfg.train.epochs - 1
        if has_val and ((epoch + 1) % cfg.train.eval_every == 0 or last):
            _preds, report = evaluate_split(pipeline, store, val_set, gt_val)
            sel = _selection_score(report)
            if not quiet:
                f1 = report.get("f1")
                bleu = report.get("bleu_mean")
                print(f"epoch {epoch + 1}: val f1={f1} bleu={bleu}")
            if sel > best_score:
                best_score = sel
                best_epoch = epoch
                best_report = report
                best_params = _snapshot(store)

    flush_csv()
    final_report = None
    if has_val:
        _preds, final_report = evaluate_split(pipeline, store, val_set, gt_val)
        if _selection_score(final_report) > best_score:
            best_score = _selection_score(final_report)
            best_epoch = cfg.train.epochs - 1
            best_report = final_report
            best_params = None  # final weights are the best weights

    store.save(os.path.join(out_dir, "final.ccap"))
    if best_params is not None:
        best_store = pipeline.build_store()
        _restore(best_store, best_params)
        best_store.save(os.path.join(out_dir, "best.ccap"))
    else:
        store.save(os.path.join(out_dir, "best.ccap"))
    canonical.write_json(os.path.join(out_dir, "config.json"), cfg.to_dict())
    summary = {
        "steps": step,
        "epochs": cfg.train.epochs,
        "best_epoch": best_epoch + 1,
        "best": best_report if best_report is not None else "not computed",
        "final": final_report if final_report is not None else "not computed",
    }
    canonical.write_json(os.path.join(out_dir, "summary.json"), summary)
    return TrainResult(out_dir, step, best_epoch + 1, best_score, best_report, final_report)
