"""Metric losses with batch-hard mining, plus the identification loss.

All metric losses use the halved squared Euclidean distance
D(x, y) = 0.5 * ||x - y||^2 and hinge terms max(0, margin + D_pos - D_neg).
Mining is batch-hard: per anchor, the farthest positive and nearest
negative within the configured candidate pool (cross- or intra-modality).
Sums run over anchors of one modality at a time and the two partial sums
are added last, so relabeling the modalities leaves every loss bitwise
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_ops, tensor as T
from .tensor import Tensor


class MiningError(ValueError):
    """An anchor has no candidate in a required positive/negative pool."""


@dataclass
class LossConfig:
    margin_ranking: float = 0.3
    margin_quadruplet: float = 0.3
    margin_triplet: float = 0.3
    normalize_inputs: bool = True

    def __post_init__(self):
        if min(self.margin_ranking, self.margin_quadruplet, self.margin_triplet) < 0:
            raise ValueError("margins must be nonnegative")


@dataclass
class MinedIndices:
    """Per-anchor hardest indices; -1 where a pool was not requested."""

    cross_pos: np.ndarray
    cross_neg: np.ndarray
    intra_pos: np.ndarray
    intra_neg: np.ndarray


def sq_euclidean(x, y) -> float:
    """D(x, y) = 0.5 * sum((x - y)^2) for equal-length vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"sq_euclidean: shapes {x.shape} and {y.shape} differ")
    d = x - y
    return 0.5 * float(np.dot(d.ravel(), d.ravel()))


def pairwise_sq(f: np.ndarray) -> np.ndarray:
    """Matrix of 0.5 * ||f_i - f_j||^2 over rows."""
    sq = (f * f).sum(axis=1)
    d = 0.5 * (sq[:, None] + sq[None, :]) - f @ f.T
    return np.maximum(d, 0.0)


ALL_POOLS = ("cross_pos", "cross_neg", "intra_pos", "intra_neg")


def mine_hard(dists: np.ndarray, ids: np.ndarray, mods: np.ndarray,
              pools=ALL_POOLS) -> MinedIndices:
    """Batch-hard selection per anchor over the requested candidate pools.

    Farthest positive / nearest negative; on distance ties the lowest
    index wins (argmax/argmin convention). Pools that are not requested
    are returned as -1 and may legally be empty.
    """
    n = len(ids)
    same_id = ids[:, None] == ids[None, :]
    same_mod = mods[:, None] == mods[None, :]
    not_self = ~np.eye(n, dtype=bool)

    def hardest(pool, mask, kind, take_max):
        if pool not in pools:
            return np.full(n, -1, dtype=np.intp)
        empty = ~mask.any(axis=1)
        if empty.any():
            anchor = int(np.flatnonzero(empty)[0])
            raise MiningError(f"anchor {anchor} has no {kind} candidate in this batch")
        if take_max:
            return np.where(mask, dists, -np.inf).argmax(axis=1)
        return np.where(mask, dists, np.inf).argmin(axis=1)

    return MinedIndices(
        cross_pos=hardest("cross_pos", ~same_mod & same_id, "cross-modality positive", True),
        cross_neg=hardest("cross_neg", ~same_mod & ~same_id, "cross-modality negative", False),
        intra_pos=hardest("intra_pos", same_mod & same_id & not_self,
                          "intra-modality positive", True),
        intra_neg=hardest("intra_neg", same_mod & ~same_id, "intra-modality negative", False),
    )


def _maybe_normalize(features: Tensor, normalize: bool) -> Tensor:
    return nn_ops.l2_normalize(features) if normalize else features


def _row_dist(f: Tensor, a_idx, b_idx) -> Tensor:
    d = T.sub(T.index_rows(f, a_idx), T.index_rows(f, b_idx))
    return T.mul(T.tsum(T.mul(d, d), axis=1), 0.5)


def _hinge_sum(f: Tensor, a_idx, pos_idx, neg_idx, margin: float) -> Tensor:
    """sum over anchors of max(0, margin + D(a,pos) - D(a,neg))."""
    if len(a_idx) == 0:
        return Tensor(np.zeros((), dtype=f.dtype))
    pre = T.add(T.sub(_row_dist(f, a_idx, pos_idx), _row_dist(f, a_idx, neg_idx)), margin)
    return T.tsum(T.relu(pre))


def _prepare(features: Tensor, ids, mods, normalize, pools=ALL_POOLS):
    ids = np.asarray(ids)
    mods = np.asarray(mods)
    if features.data.ndim != 2 or len(ids) != features.shape[0] or len(mods) != features.shape[0]:
        raise ValueError("features must be [B,dim] with one id and modality per row")
    f = _maybe_normalize(features, normalize)
    mined = mine_hard(pairwise_sq(f.data), ids, mods, pools)
    groups = [np.flatnonzero(mods == m) for m in (0, 1)]
    return f, mined, groups


def ranking_loss(features: Tensor, ids, mods, margin: float, normalize: bool = True) -> Tensor:
    """Bi-directional cross-modality top-ranking loss: per anchor, the
    farthest cross-modality positive must beat the nearest cross-modality
    negative by ``margin``; both modality directions are summed."""
    f, mined, groups = _prepare(features, ids, mods, normalize,
                                pools=("cross_pos", "cross_neg"))
    return _cross_terms(f, mined, groups, margin)


def _cross_terms(f, mined, groups, margin) -> Tensor:
    per_mod = [
        _hinge_sum(f, idx, mined.cross_pos[idx], mined.cross_neg[idx], margin)
        for idx in groups
    ]
    return T.add(per_mod[0], per_mod[1])


def _quadruplet_terms(f, mined, groups, margin) -> Tensor:
    cross = _cross_terms(f, mined, groups, margin)
    per_mod = [
        _hinge_sum(f, idx, mined.cross_pos[idx], mined.intra_neg[idx], margin)
        for idx in groups
    ]
    return T.add(cross, T.add(per_mod[0], per_mod[1]))


def _triplet_terms(f, mined, groups, margin) -> Tensor:
    per_mod = [
        _hinge_sum(f, idx, mined.intra_pos[idx], mined.intra_neg[idx], margin)
        for idx in groups
    ]
    return T.add(per_mod[0], per_mod[1])


def quadruplet_loss(features: Tensor, ids, mods, margin: float, normalize: bool = True) -> Tensor:
    """Cross-modality quadruplet loss: the two cross-negative ranking terms
    plus two terms holding the farthest cross-modality positive below the
    nearest intra-modality negative."""
    f, mined, groups = _prepare(features, ids, mods, normalize,
                                pools=("cross_pos", "cross_neg", "intra_neg"))
    return _quadruplet_terms(f, mined, groups, margin)


def triplet_loss(features: Tensor, ids, mods, margin: float, normalize: bool = True) -> Tensor:
    """Single-modality triplet loss over the hardest intra-modality
    positive and negative, summed over both modalities."""
    f, mined, groups = _prepare(features, ids, mods, normalize,
                                pools=("intra_pos", "intra_neg"))
    return _triplet_terms(f, mined, groups, margin)


def identification_loss(logits: Tensor, ids, rows) -> Tensor:
    """Mean cross-entropy of the given rows against their identity labels."""
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        return Tensor(np.zeros((), dtype=logits.dtype))
    return nn_ops.softmax_cross_entropy(T.index_rows(logits, rows), np.asarray(ids)[rows])


def total_loss(parts: dict, logits: dict, ids, mods, cfg: LossConfig,
               loss_kind: str = "quadruplet"):
    """Sum the configured cross-modality loss, the triplet loss, and both
    per-modality identification losses over every (level, part) slot.

    Returns the scalar tensor and a per-slot breakdown; breakdown keys
    follow the serialized report format (cq / st / id_rgb / id_ir).
    """
    if loss_kind not in ("quadruplet", "ranking"):
        raise ValueError(f"loss_kind must be 'quadruplet' or 'ranking', got '{loss_kind}'")
    if set(parts) != set(logits):
        raise ValueError("parts and logits must cover the same (level, part) slots")
    ids = np.asarray(ids)
    mods = np.asarray(mods)
    rgb_rows = np.flatnonzero(mods == 0)
    ir_rows = np.flatnonzero(mods == 1)
    cross_margin = cfg.margin_quadruplet if loss_kind == "quadruplet" else cfg.margin_ranking

    total = None
    breakdown = []
    for level, k in sorted(parts):
        feats = parts[(level, k)]
        f, mined, groups = _prepare(feats, ids, mods, cfg.normalize_inputs)
        if loss_kind == "quadruplet":
            cq = _quadruplet_terms(f, mined, groups, cross_margin)
        else:
            cq = _cross_terms(f, mined, groups, cross_margin)
        st = _triplet_terms(f, mined, groups, cfg.margin_triplet)
        id_rgb = identification_loss(logits[(level, k)], ids, rgb_rows)
        id_ir = identification_loss(logits[(level, k)], ids, ir_rows)
        slot = T.add(T.add(cq, st), T.add(id_rgb, id_ir))
        total = slot if total is None else T.add(total, slot)
        breakdown.append({
            "level": level,
            "part": k,
            "cq": cq.item(),
            "st": st.item(),
            "id_rgb": id_rgb.item(),
            "id_ir": id_ir.item(),
            "total": slot.item(),
        })
    if total is None:
        raise ValueError("total_loss: no (level, part) slots provided")
    return total, breakdown
