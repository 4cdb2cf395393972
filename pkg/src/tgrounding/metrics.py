"""Temporal IoU, greedy NMS and recall/mIoU evaluation."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, EvaluationError

RECALL_AT = (1, 5)
IOU_THRESHOLDS = (0.1, 0.3, 0.5, 0.7)


def temporal_iou(a, b):
    (s1, e1), (s2, e2) = a, b
    if not (s1 < e1 and s2 < e2):
        raise ContractError(f"degenerate interval in IoU: {a}, {b}")
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    return inter / (max(e1, e2) - min(s1, s2))


def _pairwise_iou(intervals):
    s, e = intervals[:, 0], intervals[:, 1]
    inter = np.clip(np.minimum(e[:, None], e[None]) - np.maximum(s[:, None], s[None]), 0.0, None)
    union = np.maximum(e[:, None], e[None]) - np.minimum(s[:, None], s[None])
    return inter / union


def rank_candidates(candidates):
    """Sort by score desc, then earlier start, then shorter length."""
    return sorted(candidates, key=lambda c: (-c[1], c[0][0], c[0][1] - c[0][0]))


def nms(candidates, threshold=0.5, top_k=None):
    """Greedy suppression: keep the best, drop everything with IoU > threshold to it.

    ``candidates`` is a sequence of ``((start, end), score)``.
    """
    if not 0 < threshold <= 1:
        raise ContractError(f"NMS threshold must lie in (0, 1], got {threshold}")
    ranked = rank_candidates(candidates)
    if not ranked:
        return []
    iv = np.array([c[0] for c in ranked], dtype=np.float64)
    iou = _pairwise_iou(iv)
    alive = np.ones(len(ranked), dtype=bool)
    kept = []
    for n in range(len(ranked)):
        if not alive[n]:
            continue
        kept.append(ranked[n])
        if top_k is not None and len(kept) == top_k:
            break
        alive &= ~(iou[n] > threshold)
    return [((float(s), float(e)), float(sc)) for (s, e), sc in kept]


@dataclass
class MetricReport:
    recall: dict = field(default_factory=dict)  # {(h, u): percent}
    miou: float = 0.0
    num_queries: int = 0

    @staticmethod
    def key(h, u):
        return f"R@{h}_IoU@{u}"

    def as_dict(self):
        out = {self.key(h, u): v for (h, u), v in sorted(self.recall.items())}
        out["mIoU"] = self.miou
        out["num_queries"] = self.num_queries
        return out

    def to_text(self):
        return "".join(f"{k}={v:.4f}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in self.as_dict().items())

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        recall = {}
        for k, v in data.items():
            if k.startswith("R@"):
                h, u = k[2:].split("_IoU@")
                recall[(int(h), float(u))] = float(v)
        return cls(recall, float(data["mIoU"]), int(data.get("num_queries", 0)))


def evaluate(predictions, groundtruth, recall_at=RECALL_AT, thresholds=IOU_THRESHOLDS):
    """Recall at top-h for each IoU threshold, plus mean top-1 IoU, all in percent.

    ``predictions`` maps query id to a ranked list of ``((start, end), score)``;
    ``groundtruth`` maps query id to its ``(start, end)`` target.  A prediction
    is correct when its IoU is at least the threshold.
    """
    hits = {(h, u): 0 for h in recall_at for u in thresholds}
    top1 = []
    for qid, target in groundtruth.items():
        ranked = predictions.get(qid)
        if not ranked:
            raise EvaluationError(f"no prediction for query {qid!r}")
        ious = [temporal_iou(iv, target) for iv, _ in ranked[:max(recall_at)]]
        top1.append(ious[0])
        for h in recall_at:
            best = max(ious[:h])
            for u in thresholds:
                if best >= u:
                    hits[(h, u)] += 1
    n = len(top1)
    if n == 0:
        return MetricReport({k: 0.0 for k in hits}, 0.0, 0)
    recall = {k: 100.0 * v / n for k, v in hits.items()}
    return MetricReport(recall, 100.0 * float(np.mean(top1)), n)
