"""Finite-difference verification of the hand-derived gradients.

Each named case isolates one loss component (or one full objective) by
zeroing every other weight, then compares analytic gradients against
central differences on a subsample of parameter coordinates.  The same
forward code runs under every case, so a pass here covers the paths
training actually uses.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .config import RunConfig
from .data import Dataset
from .gradcheck import GradCheckResult, grad_check
from .model import Pipeline, VideoExample, component_weights, prepare_examples
from .params import ParamStore
from .rng import SeededRng


def compact_config(seed: int = 0) -> RunConfig:
    """A small instance: quick to differentiate, still exercises everything."""
    cfg = RunConfig(seed=seed)
    cfg.model.d = 16
    cfg.model.chunk_count = 6
    cfg.model.retrieval_k = 4
    cfg.model.n_concepts = 12
    cfg.model.n_pairs = 4
    cfg.model.n_queries = 6
    cfg.model.gen_layers = 2
    cfg.model.d_ff = 24
    cfg.model.h_loc = 12
    cfg.model.d_embed = 8
    cfg.data.n_train = 4
    cfg.data.n_val = 0
    cfg.data.t_frames = 24
    cfg.data.k_min = 2
    cfg.data.k_max = 3
    cfg.data.width_min = 0.1
    cfg.data.width_max = 0.25
    return cfg


def _zeroed_except(base: dict[str, float], keep: tuple[str, ...]) -> dict[str, float]:
    return {k: (v if k in keep else 0.0) for k, v in base.items()}


def suite_cases(cfg: RunConfig) -> list[tuple[str, RunConfig, dict[str, float]]]:
    """(label, config variant, component weights) per checked objective.

    Isolated components, each matched-objective combination, the set loss,
    and the full default total.
    """
    cyc = dataclasses.replace(cfg, mode="cyc")
    sg = dataclasses.replace(cfg, mode="sg")
    lg = dataclasses.replace(cfg, mode="lg")
    pdvc = dataclasses.replace(cfg, mode="pdvc")
    base = component_weights(cyc)
    objective = ("l_giou", "l_cap", "l_sem")
    return [
        ("mil", cyc, _zeroed_except(base, ("l_mil",))),
        ("triplet", cyc, _zeroed_except(base, ("l_tri",))),
        ("lg", lg, _zeroed_except(component_weights(lg), objective)),
        ("sem", cyc, _zeroed_except(base, ("l_sem",))),
        ("sg", sg, _zeroed_except(component_weights(sg), objective)),
        ("cyc", cyc, _zeroed_except(base, objective)),
        ("focal", cyc, _zeroed_except(base, ("l_cls",))),
        ("counter", cyc, _zeroed_except(base, ("l_ct",))),
        (
            "set",
            pdvc,
            _zeroed_except(
                component_weights(pdvc), ("l_giou", "l_cap", "l_cls", "l_ct")
            ),
        ),
        ("total", cyc, base),
    ]


def pick_example(examples: list[VideoExample]) -> VideoExample:
    """The busiest video gives the matchings the most structure."""
    return max(examples, key=lambda ex: ex.count)


def make_loss_fn(pipeline: Pipeline, ex: VideoExample, weights: dict[str, float], seed: int):
    def loss_fn(store: ParamStore, want_grads: bool) -> float:
        rng = SeededRng(seed).stream("gradcheck", 0)
        bd = pipeline.forward_backward(store, ex, weights, rng, want_grads)
        return bd.total

    return loss_fn


def degrade_to_float32(store: ParamStore) -> None:
    """Round every parameter through float32, in place."""
    for name in store.names():
        store.set(name, store.get(name).astype(np.float32).astype(np.float64))


def run_suite(
    cfg: RunConfig,
    dataset: Dataset,
    eps: float = 1e-5,
    subsample: int = 150,
    single_precision: bool = False,
) -> list[tuple[str, GradCheckResult]]:
    examples = prepare_examples(cfg, dataset, "train", cfg.flags.exclude_self)
    ex = pick_example(examples)
    results = []
    for label, cfg_v, weights in suite_cases(cfg):
        pipeline = Pipeline(cfg_v, dataset.t_frames, dataset.token_list)
        store = pipeline.build_store()
        pipeline.init_store(store, cfg.seed)
        if single_precision:
            degrade_to_float32(store)
        loss_fn = make_loss_fn(pipeline, ex, weights, cfg.seed)
        coord_rng = SeededRng(cfg.seed).stream("gradcheck", 1)
        results.append(
            (label, grad_check(loss_fn, store, eps=eps, subsample=subsample, rng=coord_rng))
        )
    return results
