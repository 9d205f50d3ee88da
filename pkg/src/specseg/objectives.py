"""Losses, segment/box geometry, assignment matching, and training metrics.

Predictions travel as complex arrays: the real part is the per-bin
probability derived from the real spectrum component, the imaginary part
the one from the imaginary component.  Targets use the same packing.  All
loss gradients follow the same pairing convention as the layers
(dL/dp_x + j*dL/dp_y), so a loss gradient feeds `Model.backward` directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ShapeMismatch, TauOutOfRange

PROB_CLAMP = 1e-7  # probabilities are clipped to [PROB_CLAMP, 1 - PROB_CLAMP] before logs


class Segment(NamedTuple):
    """Inclusive bin interval [begin, end] of one occupied band."""

    begin: int
    end: int


class BoxZ(NamedTuple):
    """Axis-aligned rectangle on the complex plane, inclusive bin bounds."""

    x_begin: int
    x_end: int
    y_begin: int
    y_end: int


@dataclass
class OccupancyMask:
    """Per-bin binary ground truth for the real (x) and imaginary (y) parts."""

    o_x: np.ndarray
    o_y: np.ndarray

    def __post_init__(self):
        self.o_x = np.asarray(self.o_x, dtype=np.float64)
        self.o_y = np.asarray(self.o_y, dtype=np.float64)
        if self.o_x.shape != self.o_y.shape:
            raise ShapeMismatch("o_x and o_y must have equal shape")

    @classmethod
    def from_segments(cls, segments: Iterable[Segment], length: int) -> "OccupancyMask":
        o = np.zeros(length, dtype=np.float64)
        for s in segments:
            o[s.begin:s.end + 1] = 1.0
        return cls(o, o.copy())

    def as_complex(self) -> np.ndarray:
        return self.o_x + 1j * self.o_y


@dataclass
class PredictedSpectrum:
    """Per-bin occupancy probabilities in (0, 1) for both parts."""

    p_x: np.ndarray
    p_y: np.ndarray

    @classmethod
    def from_complex(cls, p: np.ndarray) -> "PredictedSpectrum":
        if np.iscomplexobj(p):
            return cls(np.ascontiguousarray(p.real), np.ascontiguousarray(p.imag))
        return cls(np.asarray(p), np.asarray(p))

    def as_complex(self) -> np.ndarray:
        return self.p_x + 1j * self.p_y


# -- losses ------------------------------------------------------------------

def _split(pred, target):
    if np.iscomplexobj(pred):
        p_x, p_y = pred.real, pred.imag
    else:
        p_x = p_y = np.asarray(pred)
    if np.iscomplexobj(target):
        o_x, o_y = target.real, target.imag
    else:
        o_x = o_y = np.asarray(target)
    if p_x.shape != o_x.shape:
        raise ShapeMismatch(f"prediction shape {p_x.shape} vs target {o_x.shape}")
    return p_x, p_y, o_x, o_y


def _focal_terms(p, o, gamma):
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = 1.0 - p
    log_p = np.log(p)
    log_q = np.log(q)
    loss = q ** gamma * o * log_p + p ** gamma * (1.0 - o) * log_q
    grad = (o * (q ** gamma / p - gamma * q ** (gamma - 1.0) * log_p)
            + (1.0 - o) * (gamma * p ** (gamma - 1.0) * log_q - p ** gamma / q))
    return loss, grad


def cfl(pred: np.ndarray, target: np.ndarray, gamma: float = 1.0, alpha: float = 3.0):
    """Focal loss over both spectrum components.

    Returns (loss, grad) where loss sums over every bin given and grad is
    complex with dL/dp_x in the real part and dL/dp_y in the imaginary.
    """
    p_x, p_y, o_x, o_y = _split(pred, target)
    lx, gx = _focal_terms(p_x, o_x, gamma)
    ly, gy = _focal_terms(p_y, o_y, gamma)
    scale = -alpha / 2.0
    loss = scale * float(np.sum(lx) + np.sum(ly))
    return loss, scale * (gx + 1j * gy)


def cbce(pred: np.ndarray, target: np.ndarray):
    """Binary cross-entropy applied to both parts, averaged with factor 1/2."""
    p_x, p_y, o_x, o_y = _split(pred, target)
    loss = 0.0
    grads = []
    for p, o in ((p_x, o_x), (p_y, o_y)):
        pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
        loss += float(np.sum(o * np.log(pc) + (1.0 - o) * np.log(1.0 - pc)))
        grads.append(o / pc - (1.0 - o) / (1.0 - pc))
    return -0.5 * loss, -0.5 * (grads[0] + 1j * grads[1])


def rfl(pred: np.ndarray, target: np.ndarray, gamma: float = 1.0, alpha: float = 3.0):
    """Single-channel focal loss for the real-valued model."""
    p = np.asarray(pred)
    o = np.asarray(target)
    if p.shape != o.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} vs target {o.shape}")
    l, g = _focal_terms(p, o, gamma)
    return -alpha * float(np.sum(l)), -alpha * g


def rbce(pred: np.ndarray, target: np.ndarray):
    """Single-channel binary cross-entropy."""
    p = np.asarray(pred)
    o = np.asarray(target)
    if p.shape != o.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} vs target {o.shape}")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -float(np.sum(o * np.log(pc) + (1.0 - o) * np.log(1.0 - pc)))
    return loss, -(o / pc - (1.0 - o) / (1.0 - pc))


# -- segment and box geometry -------------------------------------------------

def extract_segments(mask: np.ndarray) -> list[Segment]:
    """Maximal runs of ones in a binary vector, in ascending bin order."""
    return [Segment(int(b), int(e)) for b, e in runs_array(mask)]


def binarize(pred, tau: float):
    """Threshold predictions into (mask_x, mask_y, mask_abs).

    mask_abs implements thresholding of |p_x + j*p_y| normalized by sqrt(2)
    so a fully confident (1, 1) prediction maps to 1.  For real-mode
    predictions (p_y mirroring p_x) all three masks coincide.
    """
    if not 0.0 < tau < 1.0:
        raise TauOutOfRange(f"tau must be in (0, 1), got {tau}")
    if isinstance(pred, PredictedSpectrum):
        p_x, p_y = pred.p_x, pred.p_y
    elif np.iscomplexobj(pred):
        p_x, p_y = pred.real, pred.imag
    else:
        p_x = p_y = np.asarray(pred)
    mask_x = p_x >= tau
    mask_y = p_y >= tau
    mask_abs = np.sqrt(p_x ** 2 + p_y ** 2) / np.sqrt(2.0) >= tau
    return mask_x, mask_y, mask_abs


def runs_array(mask: np.ndarray) -> np.ndarray:
    """Maximal runs of ones as an [n, 2] array of inclusive (begin, end)."""
    m = np.asarray(mask).astype(bool)
    if m.ndim != 1:
        raise ShapeMismatch("mask must be 1-D")
    diff = np.diff(m.astype(np.int8))
    starts = np.flatnonzero(diff == 1) + 1
    ends = np.flatnonzero(diff == -1)
    if m.size and m[0]:
        starts = np.concatenate([[0], starts])
    if m.size and m[-1]:
        ends = np.concatenate([ends, [m.size - 1]])
    return np.stack([starts, ends], axis=1) if starts.size else np.zeros((0, 2), dtype=np.intp)


def boxes_array_from_masks(mask_x: np.ndarray, mask_y: np.ndarray) -> np.ndarray:
    """Vectorized complex-plane boxes as an [k, 4] array (see boxes_from_masks)."""
    rx = runs_array(mask_x)
    ry = runs_array(mask_y)
    if rx.shape[0] == 0 and ry.shape[0] == 0:
        return np.zeros((0, 4), dtype=np.intp)
    overlap = (rx[:, None, 0] <= ry[None, :, 1]) & (ry[None, :, 0] <= rx[:, None, 1])
    xi, yj = np.nonzero(overlap)
    paired = np.concatenate([rx[xi], ry[yj]], axis=1) if xi.size \
        else np.zeros((0, 4), dtype=np.intp)
    lone_x = rx[~overlap.any(axis=1)] if rx.size else rx
    lone_y = ry[~overlap.any(axis=0)] if ry.size else ry
    squares = np.concatenate([
        np.concatenate([lone_x, lone_x], axis=1),
        np.concatenate([lone_y, lone_y], axis=1),
    ], axis=0) if (lone_x.size or lone_y.size) else np.zeros((0, 4), dtype=np.intp)
    return np.concatenate([paired, squares], axis=0)


def boxes_from_masks(mask_x: np.ndarray, mask_y: np.ndarray) -> list[BoxZ]:
    """Complex-plane rectangles from the two per-part occupancy masks.

    Every x-run is paired with every y-run whose bin range intersects it;
    runs left without a partner contribute a square box from their own
    extent.  With identical masks this reduces to one square per run.
    """
    return [BoxZ(*map(int, row)) for row in boxes_array_from_masks(mask_x, mask_y)]


def _overlap(a_begin, a_end, b_begin, b_end) -> int:
    # half-open [begin, end+1) so a single bin has measure 1
    return max(0, min(a_end, b_end) + 1 - max(a_begin, b_begin))


def ciou(a: BoxZ, b: BoxZ) -> float:
    """Intersection over union of two complex-plane rectangles."""
    ix = _overlap(a.x_begin, a.x_end, b.x_begin, b.x_end)
    iy = _overlap(a.y_begin, a.y_end, b.y_begin, b.y_end)
    inter = ix * iy
    area_a = (a.x_end + 1 - a.x_begin) * (a.y_end + 1 - a.y_begin)
    area_b = (b.x_end + 1 - b.x_begin) * (b.y_end + 1 - b.y_begin)
    union = area_a + area_b - inter
    return inter / union if union else 0.0


def riou(a: Segment, b: Segment) -> float:
    """One-dimensional IoU of two segments (half-open bin convention)."""
    inter = _overlap(a.begin, a.end, b.begin, b.end)
    union = max(a.end, b.end) + 1 - min(a.begin, b.begin)
    return inter / union if union else 0.0


def riou_matrix(truths: np.ndarray, preds: np.ndarray) -> np.ndarray:
    """[N, M] segment IoU matrix from [N, 2] / [M, 2] inclusive-bin arrays."""
    t = np.atleast_2d(np.asarray(truths, dtype=np.float64).reshape(-1, 2))
    p = np.atleast_2d(np.asarray(preds, dtype=np.float64).reshape(-1, 2))
    inter = np.maximum(0.0, np.minimum(t[:, None, 1], p[None, :, 1]) + 1.0
                       - np.maximum(t[:, None, 0], p[None, :, 0]))
    union = (np.maximum(t[:, None, 1], p[None, :, 1]) + 1.0
             - np.minimum(t[:, None, 0], p[None, :, 0]))
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def ciou_matrix(truth_boxes: np.ndarray, pred_boxes: np.ndarray) -> np.ndarray:
    """[N, M] box IoU matrix from [N, 4] / [M, 4] inclusive-bin box arrays."""
    t = np.asarray(truth_boxes, dtype=np.float64).reshape(-1, 4)
    p = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    ix = np.maximum(0.0, np.minimum(t[:, None, 1], p[None, :, 1]) + 1.0
                    - np.maximum(t[:, None, 0], p[None, :, 0]))
    iy = np.maximum(0.0, np.minimum(t[:, None, 3], p[None, :, 3]) + 1.0
                    - np.maximum(t[:, None, 2], p[None, :, 2]))
    inter = ix * iy
    area_t = (t[:, 1] + 1 - t[:, 0]) * (t[:, 3] + 1 - t[:, 2])
    area_p = (p[:, 1] + 1 - p[:, 0]) * (p[:, 3] + 1 - p[:, 2])
    union = area_t[:, None] + area_p[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou_matrix(truths: Sequence, preds: Sequence, kind: str = "ciou") -> np.ndarray:
    if len(truths) == 0 or len(preds) == 0:
        return np.zeros((len(truths), len(preds)))
    if kind == "ciou":
        return ciou_matrix(np.asarray([tuple(t) for t in truths]),
                           np.asarray([tuple(p) for p in preds]))
    return riou_matrix(np.asarray([tuple(t) for t in truths]),
                       np.asarray([tuple(p) for p in preds]))


# -- optimal assignment --------------------------------------------------------

# Above this many candidate pairs the exact lexicographic tie
# canonicalization is skipped; the solver itself is still deterministic.
_CANONICAL_LIMIT = 256


def optimal_assignment(c: np.ndarray):
    """One-to-one matching maximizing total IoU.

    Returns (pairs, total) with pairs sorted by row index.  The matching has
    full cardinality min(N, N-hat); ties between equal-total matchings are
    broken toward the lexicographically smallest pair list (exactly for
    small matrices, see _CANONICAL_LIMIT).
    """
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    n, m = c.shape
    if n == 0 or m == 0 or c.size == 0:
        return [], 0.0
    pairs = _assign_max(c)
    total = float(sum(c[i, j] for i, j in pairs))
    if n * m <= _CANONICAL_LIMIT:
        pairs = _lex_canonical(c, total)
    return sorted(pairs), total


def _assign_max(c: np.ndarray) -> list[tuple[int, int]]:
    n, m = c.shape
    if n <= m:
        cols = _solve_min(-c)
        return [(i, j) for i, j in enumerate(cols)]
    rows = _solve_min(-c.T)
    return [(i, j) for j, i in enumerate(rows)]


def _solve_min(cost: np.ndarray) -> list[int]:
    """Hungarian algorithm with potentials for an n x m cost matrix, n <= m.

    Returns the assigned column per row.  Column scans break ties toward
    the lowest index, so the result is deterministic.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.full(m + 1, n, dtype=np.intp)  # row matched to each column; n = free
    way = np.zeros(m + 1, dtype=np.intp)
    for i in range(n):
        p[m] = i
        j0 = m
        minv = np.full(m, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0, :] - u[i0] - v[:m]
            upd = ~used[:m] & (cur < minv)
            minv[upd] = cur[upd]
            way[:m][upd] = j0
            masked = np.where(used[:m], np.inf, minv)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            used_cols = np.flatnonzero(used)
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[~used[:m]] -= delta
            j0 = j1
            if p[j0] == n:
                break
        while j0 != m:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    out = np.full(n, -1, dtype=np.intp)
    for j in range(m):
        if p[j] != n:
            out[p[j]] = j
    return [int(j) for j in out]


def _max_total(c: np.ndarray) -> float:
    if c.size == 0 or c.shape[0] == 0 or c.shape[1] == 0:
        return 0.0
    return float(sum(c[i, j] for i, j in _assign_max(c)))


def _lex_canonical(c: np.ndarray, total: float, tol: float = 1e-9) -> list[tuple[int, int]]:
    """Among maximum-total matchings, pick the lexicographically least pair list."""
    rows = list(range(c.shape[0]))
    cols = list(range(c.shape[1]))
    chosen: list[tuple[int, int]] = []
    remaining = total
    while rows and cols:
        i = rows.pop(0)
        for j in cols:
            sub = c[np.ix_(rows, [x for x in cols if x != j])]
            if abs(c[i, j] + _max_total(sub) - remaining) <= tol:
                chosen.append((i, j))
                cols.remove(j)
                remaining -= c[i, j]
                break
        # no feasible column: row i is unmatched in every optimal matching
    return chosen


# -- detection metrics ----------------------------------------------------------

def match_segments(preds: Sequence[Segment], truths: Sequence[Segment], tau: float):
    """Score one sample's predicted segments against its ground truth.

    Matched-below-threshold pairs count as both a false positive and a
    false negative.  Empty-against-empty scores as perfect.
    Returns (accuracy, recall, mean_iou).
    """
    n_t, n_p = len(truths), len(preds)
    if n_t == 0 and n_p == 0:
        return 1.0, 1.0, 1.0
    c = iou_matrix(truths, preds, kind="riou")
    pairs, _ = optimal_assignment(c)
    matched_iou = [c[i, j] for i, j in pairs]
    tp = sum(1 for v in matched_iou if v >= tau)
    below = len(matched_iou) - tp
    fn = (n_t - len(matched_iou)) + below
    fp = (n_p - len(matched_iou)) + below
    accuracy = tp / (tp + fp + fn) if (tp + fp + fn) else 1.0
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    mean_iou = float(sum(matched_iou)) / n_t if n_t else 1.0
    return accuracy, recall, mean_iou


def detection_metrics(preds: Sequence[Sequence[Segment]],
                      truths: Sequence[Sequence[Segment]], tau: float) -> dict:
    """Sample-wise scores averaged over a batch of samples."""
    if len(preds) != len(truths):
        raise ShapeMismatch("preds and truths must pair up per sample")
    accs, recs, ious = [], [], []
    for p, t in zip(preds, truths):
        a, r, m = match_segments(p, t, tau)
        accs.append(a)
        recs.append(r)
        ious.append(m)
    k = max(len(accs), 1)
    return {"accuracy": sum(accs) / k, "recall": sum(recs) / k, "mean_iou": sum(ious) / k}


# -- stopping rule ---------------------------------------------------------------

CONTINUE = "continue"
REDUCE_LR = "reduce_lr"
STOP = "stop"


def stopping_criterion(history: Sequence, patience: int, min_delta: float = 1e-4,
                       lr_reduction_available: bool = False, window_start: int = 0) -> str:
    """Early-stopping decision from the validation history.

    An epoch is stagnant when val_ciou failed to improve on the best so far
    by more than min_delta AND val_loss failed to drop below the best by
    more than min_delta (an improvement of exactly min_delta still counts
    as stagnation).  Once `patience` consecutive epochs are stagnant the
    run stops; if a learning-rate reduction is still available it fires
    instead, and the caller restarts the window via `window_start`.
    """
    losses, cious = [], []
    for h in history:
        if isinstance(h, dict):
            losses.append(float(h["val_loss"]))
            cious.append(float(h["val_ciou"]))
        else:
            losses.append(float(h[0]))
            cious.append(float(h[1]))
    tail = 0
    for e in range(len(losses) - 1, 0, -1):
        if e < max(window_start, 1):
            break
        best_loss = min(losses[:e])
        best_ciou = max(cious[:e])
        stagnant = (cious[e] <= best_ciou + min_delta) and (losses[e] >= best_loss - min_delta)
        if not stagnant:
            break
        tail += 1
    if tail >= patience:
        return REDUCE_LR if lr_reduction_available else STOP
    return CONTINUE
