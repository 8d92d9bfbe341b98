"""Bipartite assignment between predicted and ground-truth events.

Two cost flavours feed the same solver: localization cost 1 - gIOU and
semantic cost 1 - cosine.  The solver is an augmenting-path Hungarian
method with dual potentials.  Conceptually the matrix is padded to a
square with a large sentinel (1e6); because every real cost is far below
the sentinel, solving the rectangular problem with the smaller side fully
matched is the same thing, and that is what the code does.

Tie rule: among equal-cost optima we return the lexicographically smallest
pair list sorted by ground-truth index j.  The canonical form is found by
forcing candidate pairs column-by-column and re-solving, which is exact and
does not depend on solver internals; reduced costs from the dual potentials
only prune candidates.  Matrices with a unique optimum (the overwhelmingly
common case) skip all of that via a zero-reduced-cost degree check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numerics import Array, cosine_sim

SENTINEL = 1e6

Segment = tuple[float, float]


# ===== 1-D generalized IOU =============================================


def _check_segment(seg: Segment, who: str) -> None:
    s, e = float(seg[0]), float(seg[1])
    if not (np.isfinite(s) and np.isfinite(e)):
        raise ContractViolation(f"{who}: non-finite segment {seg!r}")
    if e <= s:
        raise ContractViolation(f"{who}: degenerate segment {seg!r}")


def giou_1d(a: Segment, b: Segment) -> float:
    """Generalized IOU of two 1-D segments, in (-1, 1].

    giou = IOU - (hull - union) / hull; equals IOU when the segments
    touch or overlap (hull == union) and drifts toward -1 as they separate.
    """
    _check_segment(a, "giou_1d/a")
    _check_segment(b, "giou_1d/b")
    sa, ea = float(a[0]), float(a[1])
    sb, eb = float(b[0]), float(b[1])
    inter = max(0.0, min(ea, eb) - max(sa, sb))
    union = (ea - sa) + (eb - sb) - inter
    hull = max(ea, eb) - min(sa, sb)
    return inter / union - (hull - union) / hull


def giou_1d_grad(a: Segment, b: Segment) -> tuple[float, float]:
    """d giou / d (a_start, a_end), holding b fixed.

    Piecewise-smooth; on the measure-zero kinks (ends exactly aligned,
    intersection exactly vanishing) one branch is chosen deterministically.
    """
    sa, ea = float(a[0]), float(a[1])
    sb, eb = float(b[0]), float(b[1])
    inter = max(0.0, min(ea, eb) - max(sa, sb))
    union = (ea - sa) + (eb - sb) - inter
    hull = max(ea, eb) - min(sa, sb)
    if inter > 0.0:
        di_ds = -1.0 if sa > sb else 0.0
        di_de = 1.0 if ea < eb else 0.0
    else:
        di_ds = 0.0
        di_de = 0.0
    du_ds = -1.0 - di_ds
    du_de = 1.0 - di_de
    dh_ds = -1.0 if sa < sb else 0.0
    dh_de = 1.0 if ea > eb else 0.0
    # giou = I/U - 1 + U/hull
    g_ds = (di_ds * union - inter * du_ds) / union**2 + (du_ds * hull - union * dh_ds) / hull**2
    g_de = (di_de * union - inter * du_de) / union**2 + (du_de * hull - union * dh_de) / hull**2
    return g_ds, g_de


# ===== assignment solver ===============================================


def _solve_rect(a: list[list[float]]) -> tuple[list[int], list[float], list[float]]:
    """Min-cost assignment of an RxC matrix, R <= C; matches every row.

    Returns (col_of_row, u, v) where the potentials satisfy
    a[r][c] - u[r] - v[c] >= 0 with equality on assigned pairs.
    """
    rows = len(a)
    cols = len(a[0])
    inf = float("inf")
    u = [0.0] * rows
    v = [0.0] * (cols + 1)         # v[cols] belongs to the virtual column
    owner = [-1] * (cols + 1)      # owner[c]: row currently holding column c
    way = [0] * cols
    for r in range(rows):
        owner[cols] = r
        j0 = cols
        minv = [inf] * cols
        used = [False] * (cols + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = inf
            j1 = -1
            row_i0 = a[i0]
            u_i0 = u[i0]
            for j in range(cols):
                if not used[j]:
                    cur = row_i0[j] - u_i0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            if j1 < 0:
                raise ContractViolation("assignment infeasible (no free column)")
            for j in range(cols + 1):
                if used[j]:
                    if owner[j] >= 0:
                        u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] < 0:
                break
        while j0 != cols:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = [-1] * rows
    for c in range(cols):
        if owner[c] >= 0:
            col_of_row[owner[c]] = c
    return col_of_row, u, v[:cols]


def _pairs_total(cost: Array, pairs: list[tuple[int, int]]) -> float:
    total = 0.0
    for i, j in sorted(pairs, key=lambda p: p[1]):
        total += float(cost[i, j])
    return total


def _solve_oriented(cost: Array) -> tuple[list[tuple[int, int]], Array]:
    """Solve with the smaller side fully matched; also return reduced costs."""
    n, m = cost.shape
    if m <= n:
        # ground truths are the scarce side: orient them as solver rows
        a = [[float(cost[i, j]) for i in range(n)] for j in range(m)]
        col_of_row, u, v = _solve_rect(a)
        pairs = [(col_of_row[j], j) for j in range(m)]
        rc = cost - np.asarray(v)[:, None] - np.asarray(u)[None, :]
    else:
        a = [[float(cost[i, j]) for j in range(m)] for i in range(n)]
        col_of_row, u, v = _solve_rect(a)
        pairs = [(i, col_of_row[i]) for i in range(n)]
        rc = cost - np.asarray(u)[:, None] - np.asarray(v)[None, :]
    return sorted(pairs, key=lambda p: p[1]), rc


def _solve_submatrix(cost: Array, rows: list[int], cols: list[int]) -> float:
    """Total cost of optimally matching the smaller of rows/cols subsets."""
    if not rows or not cols:
        return 0.0
    sub = cost[np.ix_(rows, cols)]
    pairs, _ = _solve_oriented(sub)
    return _pairs_total(sub, pairs)


def hungarian(cost: Array) -> list[tuple[int, int]]:
    """Deterministic min-cost matching; pairs (row i, column j) sorted by j.

    The smaller side is always fully matched, which under the padded-square
    reading of the problem requires every real cost to sit below the 1e6
    sentinel; costs produced by this package are bounded by 2.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractViolation(f"cost matrix must be 2-D, got {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ContractViolation("non-finite entries in cost matrix")
    if np.any(cost >= SENTINEL):
        raise ContractViolation("cost entries must stay below the 1e6 padding sentinel")

    pairs, rc = _solve_oriented(cost)
    best_total = _pairs_total(cost, pairs)
    scale = max(1.0, float(np.abs(cost).max()))
    tol_rc = 1e-8 * scale
    tol_total = 1e-9 * max(1.0, abs(best_total))

    # unique-optimum fast path: each matched column reachable by exactly
    # one zero-reduced-cost row (and, when columns outrank rows, each
    # matched row by one column) forces the assignment.
    zero_mask = rc <= tol_rc
    if m <= n:
        if np.all(zero_mask.sum(axis=0)[[j for _, j in pairs]] == 1) and len(
            {i for i, _ in pairs}
        ) == len(pairs):
            return pairs
    else:
        matched_rows = [i for i, _ in pairs]
        if np.all(zero_mask.sum(axis=1)[matched_rows] == 1):
            return pairs

    # canonical lexicographic form via forced re-solves
    chosen = _canonicalize(cost, rc, best_total, tol_rc, tol_total)
    if len(chosen) != min(n, m) or _pairs_total(cost, chosen) > best_total + tol_total:
        # reduced-cost pruning mistrimmed a candidate (float slop); redo exact
        chosen = _canonicalize(cost, rc, best_total, None, tol_total)
    return chosen


def _canonicalize(
    cost: Array,
    rc: Array,
    best_total: float,
    tol_rc: float | None,
    tol_total: float,
) -> list[tuple[int, int]]:
    n, m = cost.shape
    chosen: list[tuple[int, int]] = []
    free_rows = list(range(n))
    want = min(n, m)
    fixed_cost = 0.0
    for j in range(m):
        if len(chosen) == want:
            break
        remaining_cols = list(range(j + 1, m))
        for i in free_rows:
            if tol_rc is not None and rc[i, j] > tol_rc:
                continue
            rest_rows = [r for r in free_rows if r != i]
            total = fixed_cost + float(cost[i, j]) + _solve_submatrix(cost, rest_rows, remaining_cols)
            if total <= best_total + tol_total:
                chosen.append((i, j))
                free_rows = rest_rows
                fixed_cost += float(cost[i, j])
                break
    return chosen


# ===== event matchers ===================================================


@dataclass
class Matching:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    cost: Array | None = None

    def __len__(self) -> int:
        return len(self.pairs)


def match_location(pred_segments: list[Segment], gt_segments: list[Segment]) -> Matching:
    """Hungarian matching under localization cost 1 - gIOU."""
    if not gt_segments or not pred_segments:
        return Matching([], None)
    n, m = len(pred_segments), len(gt_segments)
    cost = np.empty((n, m), dtype=np.float64)
    for i, p in enumerate(pred_segments):
        for j, g in enumerate(gt_segments):
            cost[i, j] = 1.0 - giou_1d(p, g)
    return Matching(hungarian(cost), cost)


def match_semantic(queries: Array, sentence_embs: Array) -> Matching:
    """Hungarian matching under semantic cost 1 - cosine(q~_i, z_j)."""
    queries = np.asarray(queries, dtype=np.float64)
    sentence_embs = np.asarray(sentence_embs, dtype=np.float64)
    if sentence_embs.size == 0 or queries.size == 0:
        return Matching([], None)
    n, m = queries.shape[0], sentence_embs.shape[0]
    cost = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            cost[i, j] = 1.0 - cosine_sim(queries[i], sentence_embs[j])
    return Matching(hungarian(cost), cost)
