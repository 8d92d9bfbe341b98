"""Synthetic planted-event corpus: generation, serialization, loading.

Each activity type owns a caption template and a signature direction in
feature space; the signature is the text embedding of the clean template,
which is what ties retrieved sentences to visual content and gives the
semantic matcher something real to latch onto.  Captions are the template
with random filler substitutions, segments are frame-snapped, and feature
tracks are white noise plus the signature over the planted span.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .concepts import ELIGIBLE_TAGS, ConceptVocabulary, build_vocabulary
from .config import RunConfig
from .decoder import SPECIAL_TOKENS
from .errors import ArtifactMismatch, ConfigError
from .numerics import Array, l2_normalize
from .retrieval import CorpusEntry, SentenceCorpus
from .rng import SeededRng

FEATURE_MAGIC = b"CCFV"

# Activity templates.  Tokens are unique across types so the planted
# concept labels are unambiguous; "the"/"a" are function words and stay
# out of the concept vocabulary by tag.
TEMPLATES: list[list[str]] = [
    ["barista", "pours", "steaming", "espresso", "shots"],
    ["violinist", "tunes", "the", "aged", "wooden", "violin"],
    ["dog", "catches", "spinning", "red", "frisbee"],
    ["chef", "slices", "ripe", "golden", "mango"],
    ["painter", "primes", "a", "blank", "linen", "canvas"],
    ["welder", "joins", "heavy", "steel", "beams"],
    ["gymnast", "lands", "clean", "vault", "routine"],
    ["farmer", "plants", "young", "olive", "saplings"],
    ["diver", "inspects", "the", "sunken", "cargo", "hull"],
    ["tailor", "hems", "silk", "summer", "jacket"],
    ["climber", "grips", "rocky", "narrow", "ledge"],
    ["juggler", "spins", "glowing", "neon", "clubs"],
]

_NOUNS = {
    "barista", "espresso", "shots", "violinist", "violin", "dog", "frisbee",
    "chef", "mango", "painter", "canvas", "welder", "beams", "gymnast",
    "vault", "routine", "farmer", "saplings", "diver", "hull", "tailor",
    "jacket", "climber", "ledge", "juggler", "clubs",
}
_VERBS = {
    "pours", "tunes", "catches", "slices", "primes", "joins", "lands",
    "plants", "inspects", "hems", "grips", "spins",
}
_ADJECTIVES = {
    "steaming", "aged", "wooden", "spinning", "red", "ripe", "golden",
    "blank", "linen", "heavy", "steel", "clean", "young", "olive",
    "sunken", "cargo", "silk", "summer", "rocky", "narrow", "glowing", "neon",
}
_FUNCTION = {"the", "a"}

FILLERS: list[str] = [
    "abruptly", "briskly", "calmly", "deftly", "eagerly", "firmly",
    "gently", "hastily", "idly", "keenly", "loosely", "mutely",
    "neatly", "oddly", "plainly", "quietly", "roughly", "slowly",
    "tightly", "warily",
]


def build_lexicon() -> dict[str, str]:
    lex: dict[str, str] = {}
    for tok in _NOUNS:
        lex[tok] = "noun"
    for tok in _VERBS:
        lex[tok] = "verb"
    for tok in _ADJECTIVES:
        lex[tok] = "adjective"
    for tok in _FUNCTION:
        lex[tok] = "function"
    for tok in FILLERS:
        lex[tok] = "adverb"
    return lex


def template_concepts(template: list[str], lexicon: dict[str, str]) -> list[str]:
    return [t for t in template if lexicon.get(t) in ELIGIBLE_TAGS]


# ===== text embedding ===================================================

_VEC_CACHE: dict[tuple[int, int, str], Array] = {}


def _token_vector(token: str, d: int, seed: int) -> Array:
    key = (seed, d, token)
    cached = _VEC_CACHE.get(key)
    if cached is None:
        tok_id = int.from_bytes(
            hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little"
        )
        gen = SeededRng(seed).stream("embed", d, tok_id)
        cached = gen.normal(0.0, 1.0, size=d)
        _VEC_CACHE[key] = cached
    return cached


def embed_text(tokens: list[str], d: int, seed: int) -> Array:
    """Deterministic bag-of-tokens embedding, unit length.

    An empty token list maps to the zero vector.
    """
    acc = np.zeros(d, dtype=np.float64)
    for tok in tokens:
        acc += _token_vector(tok, d, seed)
    return l2_normalize(acc)


# ===== annotations ======================================================


@dataclass
class Event:
    start: float
    end: float
    type_index: int
    tokens: list[str]


@dataclass
class VideoAnnotation:
    video_id: str
    events: list[Event]

    @property
    def segments(self) -> Array:
        return np.array([[e.start, e.end] for e in self.events], dtype=np.float64)


def _annotation_row(ann: VideoAnnotation) -> dict:
    return {
        "video": ann.video_id,
        "events": [
            {"start": e.start, "end": e.end, "type": e.type_index, "tokens": e.tokens}
            for e in ann.events
        ],
    }


def _annotation_from_row(row: dict) -> VideoAnnotation:
    events = [
        Event(float(e["start"]), float(e["end"]), int(e["type"]), list(e["tokens"]))
        for e in row["events"]
    ]
    return VideoAnnotation(str(row["video"]), events)


# ===== feature files ====================================================


def write_features(path: str, feats: Array) -> None:
    feats = np.ascontiguousarray(feats, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", feats.shape[0], feats.shape[1]))
        fh.write(feats.tobytes())


def read_features(path: str) -> Array:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise ArtifactMismatch(f"{path}: not a feature file")
    if len(blob) < 20:
        raise ArtifactMismatch(f"{path}: truncated header")
    t, d = struct.unpack_from("<QQ", blob, 4)
    need = 20 + t * d * 8
    if len(blob) != need:
        raise ArtifactMismatch(f"{path}: expected {need} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f8", offset=20).reshape(t, d).astype(np.float64)


# ===== generation =======================================================


@dataclass
class _SplitSpec:
    name: str
    count: int
    index: int


def _sample_video(
    cfg: RunConfig, rng: SeededRng, split: _SplitSpec, vid_no: int, signatures: Array
) -> tuple[VideoAnnotation, Array]:
    dc = cfg.data
    t_frames, d = dc.t_frames, cfg.model.d
    sid = split.index

    struct_gen = rng.stream("data", sid, vid_no, 0)
    k = int(struct_gen.integers(dc.k_min, dc.k_max + 1))
    types = struct_gen.choice(dc.n_types, size=k, replace=False).astype(int)
    if k >= 2 and struct_gen.uniform() < dc.dup_rate:
        types[1] = types[0]

    seg_gen = rng.stream("data", sid, vid_no, 1)
    segments: list[tuple[int, int]] = []
    for _ in range(k):
        placed = False
        for _attempt in range(dc.attempts):
            width = seg_gen.uniform(dc.width_min, dc.width_max)
            n_frames = max(2, int(round(width * t_frames)))
            n_frames = min(n_frames, t_frames)
            a = int(seg_gen.integers(0, t_frames - n_frames + 1))
            cand = (a, a + n_frames)
            if all(_frame_iou(cand, other) <= dc.iou_cap for other in segments):
                segments.append(cand)
                placed = True
                break
        if not placed:
            raise ConfigError(
                f"segment sampling infeasible after {dc.attempts} attempts "
                f"({split.name} video {vid_no})"
            )

    feat_gen = rng.stream("data", sid, vid_no, 2)
    feats = feat_gen.normal(0.0, dc.noise_std, size=(t_frames, d))
    for type_idx, (a, b) in zip(types, segments):
        feats[a:b] += dc.signal_strength * signatures[type_idx]

    jit_gen = rng.stream("data", sid, vid_no, 3)
    events = []
    for type_idx, (a, b) in zip(types, segments):
        tokens = list(TEMPLATES[type_idx])
        for pos in range(len(tokens)):
            if jit_gen.uniform() < dc.jitter:
                tokens[pos] = FILLERS[int(jit_gen.integers(0, len(FILLERS)))]
        events.append(
            Event(a / t_frames, b / t_frames, int(type_idx), tokens)
        )
    events.sort(key=lambda e: (e.start, e.type_index))
    vid_id = f"vid-{split.name}-{vid_no:04d}"
    return VideoAnnotation(vid_id, events), feats


def _frame_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def generate(cfg: RunConfig, out_dir: str, threads: int = 1) -> str:
    """Write a full dataset under out_dir; returns its content digest."""
    dc = cfg.data
    d = cfg.model.d
    if dc.n_types > len(TEMPLATES):
        raise ConfigError(f"data.n_types capped at {len(TEMPLATES)}")
    lexicon = build_lexicon()
    rng = SeededRng(cfg.seed)
    signatures = np.stack(
        [embed_text(TEMPLATES[i], d, cfg.seed) for i in range(dc.n_types)]
    )

    os.makedirs(out_dir, exist_ok=True)
    splits = [_SplitSpec("train", dc.n_train, 0), _SplitSpec("val", dc.n_val, 1)]
    split_videos: dict[str, list[VideoAnnotation]] = {}
    for split in splits:
        split_dir = os.path.join(out_dir, split.name)
        feat_dir = os.path.join(split_dir, "features")
        os.makedirs(feat_dir, exist_ok=True)

        def work(vid_no: int, _split=split) -> tuple[VideoAnnotation, Array]:
            return _sample_video(cfg, rng, _split, vid_no, signatures)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, range(split.count)))
        else:
            results = [work(i) for i in range(split.count)]

        anns = []
        for ann, feats in results:
            write_features(os.path.join(feat_dir, f"{ann.video_id}.ccfv"), feats)
            anns.append(ann)
        with open(
            os.path.join(split_dir, "annotations.jsonl"), "w", encoding="utf-8", newline="\n"
        ) as fh:
            for ann in anns:
                fh.write(json.dumps(_annotation_row(ann), sort_keys=True) + "\n")
        split_videos[split.name] = anns

    train_caps = [e.tokens for ann in split_videos["train"] for e in ann.events]
    tagged = [[(t, lexicon.get(t, "unknown")) for t in cap] for cap in train_caps]
    vocab = build_vocabulary(tagged, cfg.model.n_concepts)
    vocab.save(os.path.join(out_dir, "vocab.json"))

    running = 0
    with open(
        os.path.join(out_dir, "corpus.jsonl"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        for ann in split_videos["train"]:
            for ev in ann.events:
                emb = embed_text(ev.tokens, d, cfg.seed)
                fh.write(
                    json.dumps(
                        {
                            "id": f"s{running:05d}",
                            "video": ann.video_id,
                            "tokens": ev.tokens,
                            "embedding": [float(x) for x in emb],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                running += 1

    token_list = list(SPECIAL_TOKENS) + sorted({t for cap in train_caps for t in cap})
    manifest = {
        "format": "cyclecap-dataset",
        "version": 1,
        "seed": cfg.seed,
        "embed_seed": cfg.seed,
        "dims": {"t_frames": dc.t_frames, "d": d},
        "types": [
            {
                "index": i,
                "template": TEMPLATES[i],
                "concepts": template_concepts(TEMPLATES[i], lexicon),
            }
            for i in range(dc.n_types)
        ],
        "fillers": FILLERS,
        "token_list": token_list,
        "splits": {name: [a.video_id for a in anns] for name, anns in split_videos.items()},
        "data_config": {
            "n_train": dc.n_train, "n_val": dc.n_val, "t_frames": dc.t_frames,
            "n_types": dc.n_types, "k_min": dc.k_min, "k_max": dc.k_max,
            "width_min": dc.width_min, "width_max": dc.width_max,
            "iou_cap": dc.iou_cap, "noise_std": dc.noise_std,
            "signal_strength": dc.signal_strength, "jitter": dc.jitter,
            "dup_rate": dc.dup_rate, "attempts": dc.attempts,
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")

    digest = dataset_digest(out_dir)
    with open(os.path.join(out_dir, "digest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(digest + "\n")
    return digest


def dataset_digest(out_dir: str) -> str:
    """sha256 over every file (sorted relative path), digest.txt excluded."""
    h = hashlib.sha256()
    paths = []
    for root, _dirs, files in os.walk(out_dir):
        for name in files:
            rel = os.path.relpath(os.path.join(root, name), out_dir)
            if rel == "digest.txt":
                continue
            paths.append(rel)
    for rel in sorted(paths):
        h.update(rel.encode("utf-8") + b"\x00")
        with open(os.path.join(out_dir, rel), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


# ===== loading ==========================================================


@dataclass
class Dataset:
    root: str
    manifest: dict
    vocab: ConceptVocabulary
    corpus: SentenceCorpus
    annotations: dict[str, list[VideoAnnotation]] = field(default_factory=dict)

    @property
    def embed_seed(self) -> int:
        return int(self.manifest["embed_seed"])

    @property
    def t_frames(self) -> int:
        return int(self.manifest["dims"]["t_frames"])

    @property
    def d(self) -> int:
        return int(self.manifest["dims"]["d"])

    @property
    def token_list(self) -> list[str]:
        return list(self.manifest["token_list"])

    def features(self, split: str, video_id: str) -> Array:
        path = os.path.join(self.root, split, "features", f"{video_id}.ccfv")
        return read_features(path)


def load_dataset(root: str) -> Dataset:
    man_path = os.path.join(root, "manifest.json")
    try:
        with open(man_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise ArtifactMismatch(f"no dataset manifest at {man_path}") from exc
    if manifest.get("format") != "cyclecap-dataset":
        raise ArtifactMismatch(f"{man_path}: unrecognized manifest format")

    vocab = ConceptVocabulary.load(os.path.join(root, "vocab.json"))

    entries = []
    with open(os.path.join(root, "corpus.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            entries.append(
                CorpusEntry(
                    id=str(row["id"]),
                    video=str(row["video"]),
                    tokens=list(row["tokens"]),
                    embedding=np.asarray(row["embedding"], dtype=np.float64),
                )
            )
    corpus = SentenceCorpus(entries)

    annotations: dict[str, list[VideoAnnotation]] = {}
    for split, ids in manifest["splits"].items():
        path = os.path.join(root, split, "annotations.jsonl")
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(_annotation_from_row(json.loads(line)))
        got = [r.video_id for r in rows]
        if got != list(ids):
            raise ArtifactMismatch(f"{path}: video ids disagree with the manifest")
        annotations[split] = rows
    return Dataset(root, manifest, vocab, corpus, annotations)
