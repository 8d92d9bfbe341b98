"""Command-line entry points.

Exit codes: 0 success, 2 configuration problems (including bad inputs),
3 artifact mismatches (checkpoints or datasets that do not fit the
config), 4 numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

from . import canonical, config
from .errors import (
    ArtifactMismatch,
    ConfigError,
    ContractViolation,
    CorpusExhausted,
    NumericalError,
)


def _load_config(path: str | None) -> config.RunConfig:
    if path is None:
        return config.RunConfig()
    return config.load(path)


def _apply_overrides(cfg: config.RunConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
    if getattr(args, "no_v2t", False):
        cfg.toggles.v2t = False
    if getattr(args, "no_mcd", False):
        cfg.toggles.mcd = False
    if getattr(args, "no_cyc", False):
        cfg.toggles.cyc = False
    config.validate(cfg)


def cmd_gen_data(args) -> int:
    from .data import generate

    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    digest = generate(cfg, args.out, threads=args.threads)
    print(f"wrote dataset to {args.out}")
    print(f"digest {digest}")
    return 0


def cmd_train(args) -> int:
    from .data import load_dataset
    from .train import train

    cfg = _load_config(args.config)
    _apply_overrides(cfg, args)
    dataset = load_dataset(args.data)
    result = train(cfg, dataset, args.out, quiet=args.quiet)
    print(f"trained {result.steps} steps; artifacts in {args.out}")
    if result.best_report is not None:
        print(
            "best epoch %d: f1=%s bleu=%s"
            % (
                result.best_epoch,
                result.best_report.get("f1"),
                result.best_report.get("bleu_mean"),
            )
        )
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .evaluation import annotations_to_gt, metrics_rows, score
    from .model import Pipeline, prepare_examples
    from .params import ParamStore

    if args.config is not None:
        cfg = config.load(args.config)
    else:
        sidecar = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "config.json")
        if not os.path.exists(sidecar):
            raise ConfigError(
                f"no --config given and no config.json beside {args.checkpoint}"
            )
        cfg = config.load(sidecar)
    dataset = load_dataset(args.data)
    split = args.split
    if split not in dataset.annotations or not dataset.annotations[split]:
        raise ConfigError(f"split {split!r} is empty or absent from the dataset")

    pipeline = Pipeline(cfg, dataset.t_frames, dataset.token_list)
    store = pipeline.build_store()
    store.adopt(ParamStore.load(args.checkpoint))

    examples = prepare_examples(cfg, dataset, split, False)
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            event_lists = list(pool.map(lambda ex: pipeline.infer(store, ex), examples))
    else:
        event_lists = [pipeline.infer(store, ex) for ex in examples]
    predictions = {ex.video_id: ev for ex, ev in zip(examples, event_lists)}

    report = score(predictions, annotations_to_gt(dataset.annotations[split]))
    os.makedirs(args.out, exist_ok=True)
    with open(
        os.path.join(args.out, "predictions.jsonl"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"video": ex.video_id, "events": predictions[ex.video_id]},
                    sort_keys=True,
                )
                + "\n"
            )
    canonical.write_json(os.path.join(args.out, "report.json"), report)
    canonical.write_csv(
        os.path.join(args.out, "metrics.csv"),
        ["metric", "threshold", "value"],
        metrics_rows(report),
    )
    print(f"f1={report['f1']} bleu={report['bleu_mean']} ({args.out})")
    return 0


def cmd_grad_check(args) -> int:
    from .check import compact_config, run_suite
    from .data import generate, load_dataset

    if args.config is not None:
        cfg = config.load(args.config)
    else:
        cfg = compact_config()
    _apply_overrides(cfg, args)
    if args.single_precision:
        print(
            "warning: parameters rounded to float32; expect relative errors "
            "well above the float64 tolerance",
            file=sys.stderr,
        )
    with tempfile.TemporaryDirectory(prefix="cyclecap-gc-") as tmp:
        generate(cfg, tmp)
        dataset = load_dataset(tmp)
        results = run_suite(
            cfg,
            dataset,
            eps=args.eps,
            subsample=args.subsample,
            single_precision=args.single_precision,
        )
    failed = False
    for label, res in results:
        status = "ok" if res.ok(args.tol) else "FAIL"
        if not res.ok(args.tol):
            failed = True
        print(
            f"{label:12s} {status}  max_rel_err={res.max_rel_err:.3e} "
            f"({res.checked} coords, worst {res.worst_param}{list(res.worst_index)})"
        )
    if failed and not args.single_precision:
        raise NumericalError("gradient check exceeded tolerance")
    return 0


def cmd_retrieve(args) -> int:
    from .data import load_dataset
    from .numerics import cosine_sim
    from .retrieval import build_chunks, retrieve_topk

    cfg = _load_config(args.config)
    dataset = load_dataset(args.data)
    split = args.split
    videos = {a.video_id for a in dataset.annotations.get(split, [])}
    if args.video not in videos:
        raise ConfigError(f"video {args.video!r} not in split {split!r}")
    feats = dataset.features(split, args.video)
    chunks = build_chunks(feats, cfg.model.chunk_count)
    exclude = args.video if (split == "train" and cfg.flags.exclude_self) else None
    for ci in range(chunks.shape[0]):
        entries = retrieve_topk(dataset.corpus, chunks[ci], args.k, exclude)
        for rank, e in enumerate(entries):
            sim = cosine_sim(e.embedding, chunks[ci])
            print(f"chunk {ci:3d} #{rank + 1} {e.id} {sim:+.4f} {' '.join(e.tokens)}")
    return 0


def cmd_inspect_concepts(args) -> int:
    from .data import load_dataset
    from .model import Pipeline, prepare_examples
    from .params import ParamStore

    if args.config is not None:
        cfg = config.load(args.config)
    else:
        sidecar = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "config.json")
        if not os.path.exists(sidecar):
            raise ConfigError(
                f"no --config given and no config.json beside {args.checkpoint}"
            )
        cfg = config.load(sidecar)
    if not cfg.toggles.mcd:
        raise ConfigError("concept inspection requires toggles.mcd = true")
    dataset = load_dataset(args.data)
    split = args.split
    anns = {a.video_id: a for a in dataset.annotations.get(split, [])}
    if args.video not in anns:
        raise ConfigError(f"video {args.video!r} not in split {split!r}")

    pipeline = Pipeline(cfg, dataset.t_frames, dataset.token_list)
    store = pipeline.build_store()
    store.adopt(ParamStore.load(args.checkpoint))
    examples = prepare_examples(cfg, dataset, split, False)
    ex = next(e for e in examples if e.video_id == args.video)
    _p, pv, _alpha = pipeline.concept_activations(store, ex)
    order = sorted(range(len(pv)), key=lambda i: (-pv[i], i))[: args.top]
    for i in order:
        tok = dataset.vocab.tokens[i]
        mark = "*" if ex.labels is not None and ex.labels[i] > 0.5 else " "
        print(f"{pv[i]:.4f} {mark} {tok} ({dataset.vocab.tags[tok]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyclecap",
        description="Dense event captioning on synthetic planted-event videos.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=config.MODES)
    p.add_argument("--no-v2t", action="store_true")
    p.add_argument("--no-mcd", action="store_true")
    p.add_argument("--no-cyc", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--subsample", type=int, default=150)
    p.add_argument("--single-precision", action="store_true")
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("retrieve", help="show retrieved sentences per chunk")
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("inspect-concepts", help="top video-level concepts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_inspect_concepts)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArtifactMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, CorpusExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
