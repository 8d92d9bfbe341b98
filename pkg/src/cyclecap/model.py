"""End-to-end pipeline assembly: parameters, forward, backward, inference.

The matchings are recomputed inside every forward pass and treated as
constants by the backward pass; gradients reach parameters only through
the loss terms.  Component weights are passed in explicitly so a caller
can isolate any single term (the derivative checker does exactly that)
without touching the code paths being differentiated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .concepts import (
    concept_features,
    enhance,
    frame_probs,
    label_video,
    mil_loss,
    mil_loss_grad,
    sample_contrastive,
    triplet_loss,
    triplet_loss_backward,
    video_probs,
)
from .config import RunConfig
from .data import Dataset, embed_text
from .decoder import (
    UNK,
    count_events,
    count_events_backward,
    describe_greedy,
    describe_teacher,
    describe_teacher_backward,
    generate,
    generate_backward,
    localize,
    localize_backward,
    make_caption_batch,
    positional_table,
    predicted_count,
)
from .errors import ContractViolation
from .losses import (
    LossBreakdown,
    counter_loss,
    counter_loss_grad_logits,
    focal_loss,
    focal_loss_grad,
    recombine,
)
from .matching import (
    Matching,
    giou_1d,
    giou_1d_grad,
    hungarian,
    match_location,
    match_semantic,
)
from .numerics import clamped_log, cosine_sim, cosine_sim_backward, softmax_backward
from .params import ParamStore
from .retrieval import build_chunks, fuse, semantic_features
from .rng import SeededRng


@dataclass
class VideoExample:
    """Per-video constants the trainable pipeline consumes."""

    video_id: str
    feats: np.ndarray                 # T x d, fused (or raw visual) frames
    segments: np.ndarray              # M x 2 ground-truth spans
    token_ids: list[list[int]] = field(default_factory=list)
    z: np.ndarray | None = None       # M x d sentence embeddings
    labels: np.ndarray | None = None  # N_C multi-hot concepts
    count: int = 0


def component_weights(cfg: RunConfig) -> dict[str, float]:
    """Effective weight per loss component under the configured objective."""
    lo = cfg.loss
    mode = cfg.effective_mode
    aux = cfg.flags.aux_losses and mode != "pdvc"
    return {
        "l_giou": lo.beta_giou if mode == "pdvc" else lo.l1,
        "l_cap": lo.beta_cap if mode == "pdvc" else lo.l2,
        "l_sem": lo.l3 if mode in ("sg", "cyc") else 0.0,
        "l_cls": lo.beta_cls if (aux or mode == "pdvc") else 0.0,
        "l_ct": lo.beta_ct if (aux or mode == "pdvc") else 0.0,
        "l_tri": lo.l4 if cfg.toggles.mcd else 0.0,
        "l_mil": lo.l5 if cfg.toggles.mcd else 0.0,
    }


def prepare_examples(
    cfg: RunConfig, dataset: Dataset, split: str, exclude_self: bool
) -> list[VideoExample]:
    """Fuse features and precompute supervision constants for a split.

    Retrieval and fusion sit upstream of every trainable parameter, so the
    result can be computed once per run.
    """
    mc = cfg.model
    token_index = {t: i for i, t in enumerate(dataset.token_list)}
    out = []
    for ann in dataset.annotations[split]:
        feats = dataset.features(split, ann.video_id)
        if cfg.toggles.v2t:
            chunks = build_chunks(feats, mc.chunk_count)
            excl = ann.video_id if exclude_self else None
            sem = semantic_features(dataset.corpus, chunks, mc.retrieval_k, excl)
            fused = fuse(feats, sem, residual=cfg.flags.fuse_residual)
        else:
            fused = feats
        if not ann.events:
            raise ContractViolation(f"{ann.video_id}: video without events")
        z = np.stack(
            [embed_text(e.tokens, dataset.d, dataset.embed_seed) for e in ann.events]
        )
        token_ids = [
            [token_index.get(t, UNK) for t in e.tokens] for e in ann.events
        ]
        labels = label_video([e.tokens for e in ann.events], dataset.vocab)
        out.append(
            VideoExample(
                ann.video_id, fused, ann.segments, token_ids, z, labels,
                len(ann.events),
            )
        )
    return out


class Pipeline:
    """Owns the parameter layout and runs the pipeline on one video."""

    def __init__(self, cfg: RunConfig, t_frames: int, token_list: list[str]) -> None:
        self.cfg = cfg
        self.token_list = list(token_list)
        self.vocab_size = len(token_list)
        self.pe = positional_table(t_frames, cfg.model.d, cfg.model.pe_scale)

    # ----- parameters ---------------------------------------------------

    def build_store(self) -> ParamStore:
        mc = self.cfg.model
        d, dff, h = mc.d, mc.d_ff, mc.h_loc
        de, v = mc.d_embed, self.vocab_size
        bins = mc.k_max + 1
        store = ParamStore()
        store.register("queries", mc.n_queries, d, fan_in=d)
        for layer in range(mc.gen_layers):
            for w in ("wq", "wk", "wv", "wo"):
                store.register(f"gen{layer}.{w}", d, d)
            store.register(f"gen{layer}.ffn_w1", d, dff)
            store.register(f"gen{layer}.ffn_b1", 1, dff, fan_in=d)
            store.register(f"gen{layer}.ffn_w2", dff, d)
            store.register(f"gen{layer}.ffn_b2", 1, d, fan_in=dff)
        store.register("refpoint.w", d, 1)
        store.register("refpoint.b", 1, 1, fan_in=d)
        store.register("loc.w1", d, h)
        store.register("loc.b1", 1, h, fan_in=d)
        store.register("loc.w2", h, 3)
        store.register("loc.b2", 1, 3, fan_in=h)
        store.register("counter.w", d, bins)
        store.register("counter.b", 1, bins, fan_in=d)
        store.register("cap.embed", v, de, fan_in=de)
        store.register("cap.attn_w", d, d)
        for g in "run":
            store.register(f"cap.gru.wx{g}", de + 2 * d, d)
            store.register(f"cap.gru.wh{g}", d, d)
            store.register(f"cap.gru.b{g}", 1, d, fan_in=d)
        store.register("cap.out_w", d, v)
        store.register("cap.out_b", 1, v, fan_in=d)
        if self.cfg.toggles.mcd:
            nc = mc.n_concepts
            store.register("concept.fc_w", d, nc)
            store.register("concept.fc_b", 1, nc, fan_in=d)
            store.register("concept.attn_w", d, 1)
            store.register("concept.embed", nc, d)
        return store

    def init_store(self, store: ParamStore, seed: int) -> None:
        store.init_uniform(SeededRng(seed).stream("init"))

    # ----- one video, forward and (optionally) backward -----------------

    def forward_backward(
        self,
        store: ParamStore,
        ex: VideoExample,
        weights: dict[str, float] | None = None,
        sample_rng: np.random.Generator | None = None,
        compute_grads: bool = True,
    ) -> LossBreakdown:
        cfg = self.cfg
        mc = cfg.model
        lo = cfg.loss
        mode = cfg.effective_mode
        w = component_weights(cfg) if weights is None else weights
        mcd = cfg.toggles.mcd
        feats = ex.feats

        comp: dict[str, float] = {}
        eff: dict[str, float] = {}

        # concept branch feeds the enhanced frames regardless of its own
        # loss weights, so it runs whenever the toggle is on
        if mcd:
            p = frame_probs(feats, store.get("concept.fc_w"), store.get("concept.fc_b"))
            pv, alpha = video_probs(p, feats, store.get("concept.attn_w"))
            w_c = store.get("concept.embed")
            f_c, f_vc = concept_features(p, pv, w_c)
            ftil = enhance(feats, f_c)
            if w["l_mil"] != 0.0:
                comp["l_mil"] = mil_loss(pv, ex.labels)
                eff["l_mil"] = w["l_mil"]
            pairs_tri = []
            if w["l_tri"] != 0.0:
                if sample_rng is not None:
                    pairs_tri = sample_contrastive(ex.labels, mc.n_pairs, sample_rng)
                comp["l_tri"] = triplet_loss(f_vc, pairs_tri, w_c, mc.margin)
                eff["l_tri"] = w["l_tri"]
        else:
            ftil = feats

        q_tilde, p_ref, gcache = generate(store, ftil, mc.gen_layers, self.pe)
        segments, conf, lcache = localize(store, q_tilde)
        r_len, ccache = count_events(store, q_tilde)

        gt_segs = [(float(s), float(e)) for s, e in ex.segments]
        m_loc = match_location(segments, gt_segs)
        need_sem = mode in ("sg", "cyc")
        m_sem = match_semantic(q_tilde, ex.z) if need_sem else Matching([], None)
        if mode == "pdvc":
            pairs_set = self._set_matching(segments, conf, gt_segs, lo)
        else:
            pairs_set = []

        if mode == "lg":
            giou_pairs, cap_pairs = m_loc.pairs, m_loc.pairs
        elif mode == "sg":
            giou_pairs, cap_pairs = m_sem.pairs, m_sem.pairs
        elif mode == "cyc":
            giou_pairs, cap_pairs = m_sem.pairs, m_loc.pairs
        else:
            giou_pairs, cap_pairs = pairs_set, pairs_set

        if w["l_giou"] != 0.0:
            gious = [giou_1d(segments[i], gt_segs[j]) for i, j in giou_pairs]
            comp["l_giou"] = float(np.mean(1.0 - np.asarray(gious))) if gious else 0.0
            eff["l_giou"] = w["l_giou"]

        dcache = None
        q_rows = np.zeros(0, dtype=int)
        if w["l_cap"] != 0.0:
            if cap_pairs:
                ids = [ex.token_ids[j] for _i, j in cap_pairs]
                batch = make_caption_batch(ids, self.vocab_size)
                q_rows = np.array([i for i, _j in cap_pairs], dtype=int)
                cap_losses, dcache = describe_teacher(
                    store, ftil, q_tilde[q_rows], p_ref[q_rows], batch, mc.sigma
                )
                comp["l_cap"] = float(cap_losses.mean())
            else:
                comp["l_cap"] = 0.0
            eff["l_cap"] = w["l_cap"]

        if w["l_sem"] != 0.0:
            sims = [cosine_sim(q_tilde[i], ex.z[j]) for i, j in m_loc.pairs]
            comp["l_sem"] = float(np.mean(1.0 - np.asarray(sims))) if sims else 0.0
            eff["l_sem"] = w["l_sem"]

        fg = np.zeros(mc.n_queries)
        fg_pairs = pairs_set if mode == "pdvc" else m_loc.pairs
        for i, _j in fg_pairs:
            fg[i] = 1.0
        if w["l_cls"] != 0.0:
            comp["l_cls"] = focal_loss(conf, fg, lo.focal_alpha, lo.focal_gamma)
            eff["l_cls"] = w["l_cls"]

        target = ex.count
        if target > mc.k_max:
            warnings.warn(f"true event count {target} clamped to {mc.k_max}")
            target = mc.k_max
        if w["l_ct"] != 0.0:
            comp["l_ct"] = counter_loss(r_len, target)
            eff["l_ct"] = w["l_ct"]

        breakdown = LossBreakdown(
            mode=mode,
            components=comp,
            weights=eff,
            n_pairs_loc=len(m_loc.pairs),
            n_pairs_sem=len(m_sem.pairs),
        )
        breakdown.total = recombine(breakdown)

        if not compute_grads:
            return breakdown

        n = mc.n_queries
        d_qt = np.zeros_like(q_tilde)
        d_pref = np.zeros(n)
        d_segs = np.zeros((n, 2))
        d_ftil = np.zeros_like(ftil)

        if w["l_giou"] != 0.0 and giou_pairs:
            u = -w["l_giou"] / len(giou_pairs)
            for i, j in giou_pairs:
                gs, ge = giou_1d_grad(segments[i], gt_segs[j])
                d_segs[i, 0] += u * gs
                d_segs[i, 1] += u * ge

        if w["l_cls"] != 0.0:
            d_conf = w["l_cls"] * focal_loss_grad(conf, fg, lo.focal_alpha, lo.focal_gamma)
        else:
            d_conf = np.zeros(n)

        if dcache is not None:
            d_losses = np.full(len(cap_pairs), w["l_cap"] / len(cap_pairs))
            d_q_sel, d_p_sel, d_feats_cap = describe_teacher_backward(
                store, dcache, ftil, d_losses
            )
            np.add.at(d_qt, q_rows, d_q_sel)
            np.add.at(d_pref, q_rows, d_p_sel)
            d_ftil += d_feats_cap

        if w["l_sem"] != 0.0 and m_loc.pairs:
            u = -w["l_sem"] / len(m_loc.pairs)
            for i, j in m_loc.pairs:
                du, _dv = cosine_sim_backward(q_tilde[i], ex.z[j], u)
                d_qt[i] += du

        if w["l_ct"] != 0.0:
            d_logits = counter_loss_grad_logits(r_len, target, w["l_ct"])
            d_qt += count_events_backward(store, ccache, d_logits, n)

        d_qt += localize_backward(store, lcache, q_tilde, d_segs, d_conf)
        d_ftil += generate_backward(store, gcache, d_qt, d_pref)

        if mcd:
            d_fc = d_ftil
            store.add_grad("concept.embed", p.T @ d_fc)
            d_p = d_fc @ w_c.T
            d_fvc = np.zeros(feats.shape[1])
            if w["l_tri"] != 0.0 and pairs_tri:
                d_fvc_t, d_emb_t = triplet_loss_backward(
                    f_vc, pairs_tri, w_c, mc.margin, w["l_tri"]
                )
                d_fvc += d_fvc_t
                store.add_grad("concept.embed", d_emb_t)
            d_pv = w_c @ d_fvc
            store.add_grad("concept.embed", np.outer(pv, d_fvc))
            if w["l_mil"] != 0.0:
                d_pv += w["l_mil"] * mil_loss_grad(pv, ex.labels)
            d_alpha = p @ d_pv
            d_p += np.outer(alpha, d_pv)
            d_logit_a = softmax_backward(alpha, d_alpha)
            store.add_grad("concept.attn_w", (feats.T @ d_logit_a)[:, None])
            d_s = d_p * p * (1.0 - p)
            store.add_grad("concept.fc_w", feats.T @ d_s)
            store.add_grad("concept.fc_b", d_s.sum(axis=0, keepdims=True))

        return breakdown

    def _set_matching(
        self, segments, conf, gt_segs, lo
    ) -> list[tuple[int, int]]:
        """One-stage matching: localization cost plus the foreground focal
        cost of claiming the slot."""
        if not gt_segs:
            return []
        n, m = len(segments), len(gt_segs)
        pos_cost = -lo.focal_alpha * (1.0 - conf) ** lo.focal_gamma * clamped_log(conf)
        cost = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                cost[i, j] = (1.0 - giou_1d(segments[i], gt_segs[j])) + pos_cost[i]
        return hungarian(cost)

    # ----- inference ----------------------------------------------------

    def infer(self, store: ParamStore, ex: VideoExample) -> list[dict]:
        """Detected events with captions, ordered by descending confidence."""
        cfg = self.cfg
        mc = cfg.model
        feats = ex.feats
        if cfg.toggles.mcd:
            p = frame_probs(feats, store.get("concept.fc_w"), store.get("concept.fc_b"))
            f_c = p @ store.get("concept.embed")
            ftil = enhance(feats, f_c)
        else:
            ftil = feats
        q_tilde, p_ref, _ = generate(store, ftil, mc.gen_layers, self.pe)
        segments, conf, _ = localize(store, q_tilde)
        r_len, _ = count_events(store, q_tilde)
        n_set = min(predicted_count(r_len), mc.n_queries)
        order = np.lexsort((np.arange(mc.n_queries), -conf))
        sel = order[:n_set]
        caps = describe_greedy(
            store, ftil, q_tilde[sel], p_ref[sel], mc.sigma, mc.max_caption_len
        )
        events = []
        for row, ids in zip(sel, caps):
            events.append(
                {
                    "start": float(segments[row][0]),
                    "end": float(segments[row][1]),
                    "confidence": float(conf[row]),
                    "tokens": [self.token_list[t] for t in ids],
                }
            )
        return events

    def concept_activations(self, store: ParamStore, ex: VideoExample):
        """Video-level concept probabilities and frame attention, for
        inspection tooling; requires the concept branch."""
        if not self.cfg.toggles.mcd:
            raise ContractViolation("concept branch is disabled in this config")
        feats = ex.feats
        p = frame_probs(feats, store.get("concept.fc_w"), store.get("concept.fc_b"))
        pv, alpha = video_probs(p, feats, store.get("concept.attn_w"))
        return p, pv, alpha
