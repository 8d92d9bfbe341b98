"""Parallel event decoder: queries in, located and captioned events out.

A bank of N learnable query vectors cross-attends over the enhanced frame
features through L_g residual attention + feed-forward layers (no
LayerNorm anywhere).  Each refined query q~_i yields a reference point
p~_i, a (center, width, confidence) triple from a small MLP, a caption via
a gated recurrent cell whose per-step attention is content score minus a
Gaussian distance penalty around p~_i, and collectively a length
distribution from a max-pooled counter head.

Frame features are permutation-sensitive only through the fixed positional
table added to the generator's keys and values; queries themselves are
never coupled to each other, so permuting them permutes every output
identically.

Every forward here has a hand-written backward companion operating on the
cache the forward returns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import Array, relu, sigmoid, softmax, softmax_backward
from .params import ParamStore

MIN_WIDTH = 1e-4

BOS, EOS, UNK = 0, 1, 2
SPECIAL_TOKENS = ("<bos>", "<eos>", "<unk>")


def positional_table(t: int, d: int, scale: float) -> Array:
    """Fixed per-frame position channels: linear ramp, its square, sinusoids.

    The ramp pair makes segment moments linearly readable from attended
    mixtures; the sinusoid pairs (1, 2, ... cycles over the video) add
    higher-resolution phase information.  All channels are scaled together.
    """
    ts = (np.arange(t, dtype=np.float64) + 0.5) / t
    pe = np.zeros((t, d), dtype=np.float64)
    pe[:, 0] = ts
    if d > 1:
        pe[:, 1] = ts**2
    k = 0
    for col in range(2, d - 1, 2):
        k += 1
        pe[:, col] = np.sin(2.0 * np.pi * k * ts)
        pe[:, col + 1] = np.cos(2.0 * np.pi * k * ts)
    return scale * pe


# ===== query generator ==================================================


def generate(
    store: ParamStore,
    feats: Array,
    layers: int,
    pe: Array | None,
) -> tuple[Array, Array, dict]:
    """Refine the query bank over features; also emit reference points.

    Returns (q_tilde N x d, p_ref N, cache).  `pe` augments keys and values
    only; the residual stream stays in feature space.
    """
    queries = store.get("queries")
    d = queries.shape[1]
    fhat = feats if pe is None else feats + pe
    cache: dict = {"fhat": fhat, "layers": [], "feats_t": feats.shape[0]}
    q = queries
    for layer in range(layers):
        wq = store.get(f"gen{layer}.wq")
        wk = store.get(f"gen{layer}.wk")
        wv = store.get(f"gen{layer}.wv")
        wo = store.get(f"gen{layer}.wo")
        w1 = store.get(f"gen{layer}.ffn_w1")
        b1 = store.get(f"gen{layer}.ffn_b1")
        w2 = store.get(f"gen{layer}.ffn_w2")
        b2 = store.get(f"gen{layer}.ffn_b2")
        keys = fhat @ wk
        vals = fhat @ wv
        qp = q @ wq
        attn = softmax(qp @ keys.T / np.sqrt(d), axis=1)
        ctx = attn @ vals
        out = ctx @ wo
        q1 = q + out
        pre = q1 @ w1 + b1
        hid = relu(pre)
        q2 = q1 + hid @ w2 + b2
        cache["layers"].append(
            {"q_in": q, "qp": qp, "keys": keys, "vals": vals, "attn": attn,
             "ctx": ctx, "q1": q1, "pre": pre, "hid": hid}
        )
        q = q2
    ref_logit = q @ store.get("refpoint.w") + store.get("refpoint.b")
    p_ref = sigmoid(ref_logit)[:, 0]
    cache["q_tilde"] = q
    cache["p_ref"] = p_ref
    return q, p_ref, cache


def generate_backward(
    store: ParamStore,
    cache: dict,
    d_qtilde: Array,
    d_pref: Array,
) -> Array:
    """Backprop to parameter grads and to the enhanced features F~."""
    q_tilde = cache["q_tilde"]
    p_ref = cache["p_ref"]
    d = q_tilde.shape[1]
    dq = d_qtilde.copy()
    if np.any(d_pref):
        ds = (d_pref * p_ref * (1.0 - p_ref))[:, None]
        store.add_grad("refpoint.w", q_tilde.T @ ds)
        store.add_grad("refpoint.b", ds.sum(axis=0, keepdims=True))
        dq += ds @ store.get("refpoint.w").T
    d_fhat = np.zeros_like(cache["fhat"])
    for layer in reversed(range(len(cache["layers"]))):
        lc = cache["layers"][layer]
        w1 = store.get(f"gen{layer}.ffn_w1")
        w2 = store.get(f"gen{layer}.ffn_w2")
        wq = store.get(f"gen{layer}.wq")
        wk = store.get(f"gen{layer}.wk")
        wv = store.get(f"gen{layer}.wv")
        wo = store.get(f"gen{layer}.wo")
        # q2 = q1 + relu(q1 w1 + b1) w2 + b2
        d_hid = dq @ w2.T
        store.add_grad(f"gen{layer}.ffn_w2", lc["hid"].T @ dq)
        store.add_grad(f"gen{layer}.ffn_b2", dq.sum(axis=0, keepdims=True))
        d_pre = d_hid * (lc["pre"] > 0.0)
        store.add_grad(f"gen{layer}.ffn_w1", lc["q1"].T @ d_pre)
        store.add_grad(f"gen{layer}.ffn_b1", d_pre.sum(axis=0, keepdims=True))
        d_q1 = dq + d_pre @ w1.T
        # q1 = q_in + (attn vals) wo
        d_out = d_q1
        store.add_grad(f"gen{layer}.wo", lc["ctx"].T @ d_out)
        d_ctx = d_out @ wo.T
        d_attn = d_ctx @ lc["vals"].T
        d_vals = lc["attn"].T @ d_ctx
        d_scores = softmax_backward(lc["attn"], d_attn, axis=1) / np.sqrt(d)
        d_qp = d_scores @ lc["keys"]
        d_keys = d_scores.T @ lc["qp"]
        store.add_grad(f"gen{layer}.wq", lc["q_in"].T @ d_qp)
        store.add_grad(f"gen{layer}.wk", cache["fhat"].T @ d_keys)
        store.add_grad(f"gen{layer}.wv", cache["fhat"].T @ d_vals)
        d_fhat += d_keys @ wk.T + d_vals @ wv.T
        dq = d_q1 + d_qp @ wq.T
    store.add_grad("queries", dq)
    return d_fhat


# ===== localization head ================================================


def localize(store: ParamStore, q_tilde: Array) -> tuple[list[tuple[float, float]], Array, dict]:
    """Decode (center, width, confidence) per query into clamped segments.

    Collapsed segments (possible only through clamping or underflow, since
    sigmoid keeps width strictly positive) are widened to MIN_WIDTH around
    the center.  Returns (segments, confidences, cache).
    """
    pre = q_tilde @ store.get("loc.w1") + store.get("loc.b1")
    hid = relu(pre)
    out = hid @ store.get("loc.w2") + store.get("loc.b2")
    cwa = sigmoid(out)
    c, w, conf = cwa[:, 0], cwa[:, 1], cwa[:, 2]
    raw_s = c - 0.5 * w
    raw_e = c + 0.5 * w
    seg_s = np.clip(raw_s, 0.0, 1.0)
    seg_e = np.clip(raw_e, 0.0, 1.0)
    narrow = (seg_e - seg_s) < MIN_WIDTH
    if np.any(narrow):
        ns = np.clip(c[narrow] - 0.5 * MIN_WIDTH, 0.0, 1.0 - MIN_WIDTH)
        seg_s = seg_s.copy()
        seg_e = seg_e.copy()
        seg_s[narrow] = ns
        seg_e[narrow] = ns + MIN_WIDTH
    segments = [(float(seg_s[i]), float(seg_e[i])) for i in range(len(c))]
    cache = {
        "pre": pre, "hid": hid, "cwa": cwa,
        "s_live": (raw_s > 0.0) & (raw_s < 1.0) & ~narrow,
        "e_live": (raw_e > 0.0) & (raw_e < 1.0) & ~narrow,
    }
    return segments, conf, cache


def localize_backward(
    store: ParamStore,
    cache: dict,
    q_tilde: Array,
    d_seg: Array,
    d_conf: Array,
) -> Array:
    """d_seg is N x 2 (start, end); widened segments are constants."""
    cwa = cache["cwa"]
    c, w, conf = cwa[:, 0], cwa[:, 1], cwa[:, 2]
    ds = d_seg[:, 0] * cache["s_live"]
    de = d_seg[:, 1] * cache["e_live"]
    dc = ds + de
    dw = 0.5 * (de - ds)
    d_out = np.stack(
        [dc * c * (1.0 - c), dw * w * (1.0 - w), d_conf * conf * (1.0 - conf)],
        axis=1,
    )
    d_hid = d_out @ store.get("loc.w2").T
    store.add_grad("loc.w2", cache["hid"].T @ d_out)
    store.add_grad("loc.b2", d_out.sum(axis=0, keepdims=True))
    d_pre = d_hid * (cache["pre"] > 0.0)
    store.add_grad("loc.w1", q_tilde.T @ d_pre)
    store.add_grad("loc.b1", d_pre.sum(axis=0, keepdims=True))
    return d_pre @ store.get("loc.w1").T


# ===== captioning head ==================================================


@dataclass
class CaptionBatch:
    """Teacher-forcing tensors for the selected queries."""

    prev_ids: Array      # K x L int
    target_ids: Array    # K x L int
    mask: Array          # K x L float (1 on real steps)
    lengths: Array       # K int, number of real steps per query


def make_caption_batch(token_ids: list[list[int]], vocab_size: int) -> CaptionBatch:
    """[w_1..w_L] per query -> inputs [BOS w_1..w_L], targets [w_1..w_L EOS]."""
    if any(len(t) == 0 for t in token_ids):
        raise ContractViolation("empty teacher caption")
    for seq in token_ids:
        for tok in seq:
            if not (0 <= tok < vocab_size):
                raise ContractViolation(f"token id {tok} outside vocabulary of {vocab_size}")
    k = len(token_ids)
    lengths = np.array([len(t) + 1 for t in token_ids], dtype=np.int64)
    l_max = int(lengths.max())
    prev = np.full((k, l_max), EOS, dtype=np.int64)
    targ = np.full((k, l_max), EOS, dtype=np.int64)
    mask = np.zeros((k, l_max), dtype=np.float64)
    for i, seq in enumerate(token_ids):
        prev[i, 0] = BOS
        prev[i, 1 : len(seq) + 1] = seq
        targ[i, : len(seq)] = seq
        targ[i, len(seq)] = EOS
        mask[i, : len(seq) + 1] = 1.0
    return CaptionBatch(prev, targ, mask, lengths)


def _gauss_penalty(t_frames: int, p_ref: Array, sigma: float | None) -> Array:
    if sigma is None:
        return np.zeros((p_ref.shape[0], t_frames))
    ts = (np.arange(t_frames, dtype=np.float64) + 0.5) / t_frames
    return (ts[None, :] - p_ref[:, None]) ** 2 / (2.0 * sigma**2)


def describe_teacher(
    store: ParamStore,
    feats: Array,
    q_sel: Array,
    p_sel: Array,
    batch: CaptionBatch,
    sigma: float | None,
) -> tuple[Array, dict]:
    """Teacher-forced caption losses, one per selected query.

    Per step the cell reads [embed(prev); z; q~] where z soft-attends over
    the raw enhanced frames under logits  content/sqrt(d) - (t/T - p~)^2 /
    (2 sigma^2).  Loss per query is the mean cross-entropy over its steps.
    """
    if batch.prev_ids.size == 0:
        raise ContractViolation("describe_teacher on an empty batch")
    d = feats.shape[1]
    k, l_max = batch.prev_ids.shape
    emb = store.get("cap.embed")
    attn_w = store.get("cap.attn_w")
    wxr, wxu, wxn = (store.get(f"cap.gru.wx{g}") for g in "run")
    whr, whu, whn = (store.get(f"cap.gru.wh{g}") for g in "run")
    br, bu, bn = (store.get(f"cap.gru.b{g}") for g in "run")
    out_w, out_b = store.get("cap.out_w"), store.get("cap.out_b")

    gauss = _gauss_penalty(feats.shape[0], p_sel, sigma)
    h = np.zeros((k, d))
    steps = []
    ce = np.zeros((k, l_max))
    for l in range(l_max):
        keys = h @ attn_w
        sc = keys @ feats.T / np.sqrt(d) - gauss
        beta = softmax(sc, axis=1)
        z = beta @ feats
        x = np.concatenate([emb[batch.prev_ids[:, l]], z, q_sel], axis=1)
        r = sigmoid(x @ wxr + h @ whr + br)
        u = sigmoid(x @ wxu + h @ whu + bu)
        n = np.tanh(x @ wxn + (r * h) @ whn + bn)
        h_new = (1.0 - u) * n + u * h
        logits = h_new @ out_w + out_b
        probs = softmax(logits, axis=1)
        ce[:, l] = -np.log(
            np.maximum(probs[np.arange(k), batch.target_ids[:, l]], 1e-300)
        )
        steps.append(
            {"h_prev": h, "keys": keys, "beta": beta, "z": z, "x": x,
             "r": r, "u": u, "n": n, "h_new": h_new, "probs": probs}
        )
        h = h_new
    losses = (ce * batch.mask).sum(axis=1) / batch.lengths
    cache = {"steps": steps, "gauss": gauss, "batch": batch,
             "q_sel": q_sel, "p_sel": p_sel, "sigma": sigma}
    return losses, cache


def describe_teacher_backward(
    store: ParamStore,
    cache: dict,
    feats: Array,
    d_losses: Array,
) -> tuple[Array, Array, Array]:
    """Returns (d_q_sel, d_p_sel, d_feats) for upstream per-query weights."""
    batch: CaptionBatch = cache["batch"]
    sigma = cache["sigma"]
    q_sel, p_sel = cache["q_sel"], cache["p_sel"]
    k, l_max = batch.prev_ids.shape
    d = feats.shape[1]
    d_e = store.get("cap.embed").shape[1]
    attn_w = store.get("cap.attn_w")
    wxr, wxu, wxn = (store.get(f"cap.gru.wx{g}") for g in "run")
    whr, whu, whn = (store.get(f"cap.gru.wh{g}") for g in "run")
    out_w = store.get("cap.out_w")

    g_emb = np.zeros_like(store.get("cap.embed"))
    d_q = np.zeros_like(q_sel)
    d_p = np.zeros_like(p_sel)
    d_feats = np.zeros_like(feats)
    per_step_w = (d_losses / batch.lengths)[:, None] * batch.mask  # K x L
    ts = (np.arange(feats.shape[0], dtype=np.float64) + 0.5) / feats.shape[0]

    dh = np.zeros((k, d))
    for l in reversed(range(l_max)):
        st = cache["steps"][l]
        onehot_grad = st["probs"].copy()
        onehot_grad[np.arange(k), batch.target_ids[:, l]] -= 1.0
        d_logits = onehot_grad * per_step_w[:, l][:, None]
        store.add_grad("cap.out_w", st["h_new"].T @ d_logits)
        store.add_grad("cap.out_b", d_logits.sum(axis=0, keepdims=True))
        dh = dh + d_logits @ out_w.T

        h_prev, r, u, n = st["h_prev"], st["r"], st["u"], st["n"]
        du = dh * (h_prev - n)
        dn = dh * (1.0 - u)
        dh_prev = dh * u
        dn_pre = dn * (1.0 - n * n)
        drh = dn_pre @ whn.T
        dr = drh * h_prev
        dh_prev += drh * r
        dr_pre = dr * r * (1.0 - r)
        du_pre = du * u * (1.0 - u)
        x = st["x"]
        store.add_grad("cap.gru.wxn", x.T @ dn_pre)
        store.add_grad("cap.gru.whn", (r * h_prev).T @ dn_pre)
        store.add_grad("cap.gru.bn", dn_pre.sum(axis=0, keepdims=True))
        store.add_grad("cap.gru.wxr", x.T @ dr_pre)
        store.add_grad("cap.gru.whr", h_prev.T @ dr_pre)
        store.add_grad("cap.gru.br", dr_pre.sum(axis=0, keepdims=True))
        store.add_grad("cap.gru.wxu", x.T @ du_pre)
        store.add_grad("cap.gru.whu", h_prev.T @ du_pre)
        store.add_grad("cap.gru.bu", du_pre.sum(axis=0, keepdims=True))
        dh_prev += dr_pre @ whr.T + du_pre @ whu.T
        dx = dr_pre @ wxr.T + du_pre @ wxu.T + dn_pre @ wxn.T

        d_emb_rows = dx[:, :d_e]
        dz = dx[:, d_e : d_e + d]
        d_q += dx[:, d_e + d :]
        np.add.at(g_emb, batch.prev_ids[:, l], d_emb_rows)

        beta, keys = st["beta"], st["keys"]
        d_beta = dz @ feats.T
        d_feats += beta.T @ dz
        d_sc = softmax_backward(beta, d_beta, axis=1)
        if sigma is not None:
            d_p += (d_sc * (ts[None, :] - p_sel[:, None])).sum(axis=1) / sigma**2
        d_keys = d_sc @ feats / np.sqrt(d)
        d_feats += d_sc.T @ keys / np.sqrt(d)
        store.add_grad("cap.attn_w", h_prev.T @ d_keys)
        dh_prev += d_keys @ attn_w.T

        dh = dh_prev
    store.add_grad("cap.embed", g_emb)
    return d_q, d_p, d_feats


def describe_greedy(
    store: ParamStore,
    feats: Array,
    q_sel: Array,
    p_sel: Array,
    sigma: float | None,
    max_len: int,
) -> list[list[int]]:
    """Greedy decode until EOS (or max_len); returns token ids sans specials."""
    if q_sel.shape[0] == 0:
        return []
    d = feats.shape[1]
    k = q_sel.shape[0]
    emb = store.get("cap.embed")
    attn_w = store.get("cap.attn_w")
    wxr, wxu, wxn = (store.get(f"cap.gru.wx{g}") for g in "run")
    whr, whu, whn = (store.get(f"cap.gru.wh{g}") for g in "run")
    br, bu, bn = (store.get(f"cap.gru.b{g}") for g in "run")
    out_w, out_b = store.get("cap.out_w"), store.get("cap.out_b")
    gauss = _gauss_penalty(feats.shape[0], p_sel, sigma)

    h = np.zeros((k, d))
    prev = np.full(k, BOS, dtype=np.int64)
    alive = np.ones(k, dtype=bool)
    outs: list[list[int]] = [[] for _ in range(k)]
    for _ in range(max_len):
        keys = h @ attn_w
        sc = keys @ feats.T / np.sqrt(d) - gauss
        beta = softmax(sc, axis=1)
        z = beta @ feats
        x = np.concatenate([emb[prev], z, q_sel], axis=1)
        r = sigmoid(x @ wxr + h @ whr + br)
        u = sigmoid(x @ wxu + h @ whu + bu)
        n = np.tanh(x @ wxn + (r * h) @ whn + bn)
        h = (1.0 - u) * n + u * h
        logits = h @ out_w + out_b
        nxt = np.argmax(logits, axis=1)
        for i in range(k):
            if alive[i]:
                if int(nxt[i]) == EOS:
                    alive[i] = False
                elif int(nxt[i]) not in (BOS, UNK):
                    outs[i].append(int(nxt[i]))
        if not alive.any():
            break
        prev = nxt
    return outs


# ===== event counter ====================================================


def count_events(store: ParamStore, q_tilde: Array) -> tuple[Array, dict]:
    """Length distribution from a max-pool over queries: softmax(g W + b)."""
    arg = np.argmax(q_tilde, axis=0)
    pooled = q_tilde[arg, np.arange(q_tilde.shape[1])]
    logits = pooled @ store.get("counter.w") + store.get("counter.b")
    r_len = softmax(logits[None, :] if logits.ndim == 1 else logits, axis=1)[0]
    return r_len, {"arg": arg, "pooled": pooled, "r_len": r_len}


def count_events_backward(store: ParamStore, cache: dict, d_logits: Array, n_queries: int) -> Array:
    """d_logits over the K_max+1 bins -> gradient on q~ (max-pool routing)."""
    pooled = cache["pooled"]
    store.add_grad("counter.w", np.outer(pooled, d_logits))
    store.add_grad("counter.b", d_logits[None, :])
    d_pooled = store.get("counter.w") @ d_logits
    d_q = np.zeros((n_queries, pooled.shape[0]))
    d_q[cache["arg"], np.arange(pooled.shape[0])] = d_pooled
    return d_q


def predicted_count(r_len: Array) -> int:
    """argmax of the length distribution, clamped to at least one event."""
    return max(1, int(np.argmax(r_len)))
