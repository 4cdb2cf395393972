"""Cross-modal scoring, IoU targets and the two training losses."""

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, DataError
from .nn import Conv2d, Linear, Module


@dataclass
class LossConfig:
    t_min: float = 0.5
    t_max: float = 1.0
    temperature: float = 0.1
    iou_weight: float = 1.0
    contrastive_weight: float = 1.0
    eps: float = 1e-6

    def __post_init__(self):
        if not 0 <= self.t_min < self.t_max <= 1:
            raise ConfigError("IoU scaling needs 0 <= t_min < t_max <= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class ScoreMap:
    """Cosine scores [T, T, M]; invalid cells hold -inf."""

    scores: np.ndarray

    @property
    def num_valid(self):
        return int(np.isfinite(self.scores[:, :, 0]).sum())


@dataclass
class IoUTargetMap:
    raw_iou: np.ndarray
    targets: np.ndarray


class Matcher(Module):
    """1x1 conv on the encoded map and an affine query map, both L2-normalised."""

    def __init__(self, map_width, query_width, d, rng):
        self.moment_proj = Conv2d(map_width, d, 1, rng)
        self.query_proj = Linear(query_width, d, rng)

    def __call__(self, encoded_map, query):
        """Return (scores [T*T, M], unit moment vectors [T*T, d], unit queries [M, d])."""
        T = encoded_map.shape[0]
        moments = tn.l2_normalize_rows(tn.reshape(self.moment_proj(encoded_map), (T * T, -1)))
        queries = tn.l2_normalize_rows(self.query_proj(query))
        return tn.matmul(moments, tn.transpose(queries)), moments, queries


def score_map(matcher, encoded_map, query):
    """Inference view of the matcher output with -inf outside the upper triangle."""
    with tn.no_grad():
        scores, _, _ = matcher(encoded_map, query)
    T = encoded_map.shape[0]
    s = scores.data.reshape(T, T, -1).copy()
    s[~np.triu(np.ones((T, T), dtype=bool))] = -np.inf
    return ScoreMap(s)


def span_seconds(T, duration):
    """Start and end times [T, T] of every cell: clips i..j cover [i*D, (j+1)*D]."""
    step = duration / T
    idx = np.arange(T, dtype=np.float64)
    return np.broadcast_to(idx[:, None] * step, (T, T)), np.broadcast_to((idx[None, :] + 1) * step, (T, T))


def gt_iou_map(timestamps, T, duration, cfg=None):
    """Raw and scaled temporal IoU of every cell against each target interval."""
    cfg = cfg or LossConfig()
    ts = np.asarray(timestamps, dtype=np.float64).reshape(-1, 2)
    for m, (s, e) in enumerate(ts):
        if not s < e:
            raise DataError(f"target {m} is degenerate: start {s} >= end {e}")
    starts, ends = span_seconds(T, duration)
    s, e = starts[..., None], ends[..., None]
    inter = np.clip(np.minimum(e, ts[:, 1]) - np.maximum(s, ts[:, 0]), 0.0, None)
    union = np.maximum(e, ts[:, 1]) - np.minimum(s, ts[:, 0])
    raw = inter / union
    raw[~np.triu(np.ones((T, T), dtype=bool))] = 0.0
    scaled = np.clip((raw - cfg.t_min) / (cfg.t_max - cfg.t_min), 0.0, 1.0)
    return IoUTargetMap(raw, scaled)


def score_to_probability(scores, eps=1e-6):
    return tn.clip((scores + 1.0) * 0.5, eps, 1.0 - eps)


def iou_loss(scores, targets, mask=None, eps=1e-6):
    """Mean binary cross-entropy between mapped cosine scores and soft IoU targets.

    ``scores`` and ``targets`` share a shape whose leading axes are cells;
    ``mask`` (boolean, over cells) selects the valid moments.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        rows = np.flatnonzero(mask)
        scores = tn.take(tn.reshape(scores, (mask.size, -1)), rows)
        targets = targets.reshape(mask.size, -1)[rows]
    y = score_to_probability(scores, eps)
    bce = targets * tn.log(y) + (1.0 - targets) * tn.log(1.0 - y)
    return -tn.sum_(bce) * (1.0 / bce.size)


def contrastive_loss(moments, queries, temperature=0.1, reduction="sum"):
    """Symmetric InfoNCE over in-batch pairs; row k of each input is a positive pair.

    Every other row of the batch acts as a negative in both directions.
    """
    moments, queries = tn.as_tensor(moments), tn.as_tensor(queries)
    B = moments.shape[0]
    if B < 2 or queries.shape[0] != B:
        raise ContractError(f"contrastive loss needs >= 2 aligned pairs, got {moments.shape[0]}/{queries.shape[0]}")
    sim = tn.matmul(tn.l2_normalize_rows(queries), tn.transpose(tn.l2_normalize_rows(moments)))
    logits = sim * (1.0 / temperature)
    diag = np.arange(B)
    positive = tn.take(logits, (diag, diag))
    q_terms = tn.logsumexp(logits, axis=1) - positive
    m_terms = tn.logsumexp(logits, axis=0) - positive
    total = tn.sum_(q_terms) + tn.sum_(m_terms)
    if reduction == "mean":
        return total * (1.0 / B)
    if reduction != "sum":
        raise ConfigError(f"unknown reduction {reduction!r}")
    return total
