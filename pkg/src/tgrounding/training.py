"""Training loop (single- or multi-query batches) and single-query inference."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, NumericError
from .matching import LossConfig, contrastive_loss, gt_iou_map, iou_loss, score_map, span_seconds
from .metrics import evaluate, nms
from .optim import AdamW

log = logging.getLogger(__name__)

MODES = ("single_query", "multi_query")


@dataclass
class TrainConfig:
    mode: str = "multi_query"
    epochs: int = 15
    batch_size: int = 8
    # 64 videos x 15 epochs is only ~120 updates; 3e-3 lets the graph converge in that budget
    learning_rate: float = 3e-3
    weight_decay: float = 1e-2
    seed: int = 0
    nms_threshold: float = 0.5
    contrastive_reduction: str = "mean"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}; choose from {MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


def make_items(corpus, mode):
    """(sample, query indices) units fed to one forward pass."""
    if mode == "multi_query":
        return [(s, np.arange(s.num_queries)) for s in corpus]
    return [(s, np.array([m])) for s in corpus for m in range(s.num_queries)]


def batch_loss(net, items, loss_cfg, reduction="mean"):
    """L_iou (mean over all valid cells and queries) + L_contra over the batch."""
    T = net.cfg.T
    mask = np.triu(np.ones((T, T), dtype=bool)).reshape(-1)
    iou_total, count = None, 0
    pos_moments, pos_queries = [], []
    for sample, idx in items:
        out = net(sample.clip_features, sample.query_features[idx])
        target = gt_iou_map(sample.timestamps[idx], T, sample.duration, loss_cfg)
        n = int(mask.sum()) * len(idx)
        term = iou_loss(out.scores, target.targets.reshape(T * T, -1), mask, loss_cfg.eps) * float(n)
        iou_total = term if iou_total is None else iou_total + term
        count += n
        best = target.raw_iou.reshape(T * T, -1).argmax(axis=0)
        pos_moments.append(tn.take(out.moments, best))
        pos_queries.append(out.queries)
    l_iou = iou_total * (1.0 / count)
    loss = l_iou * loss_cfg.iou_weight
    l_con = None
    if sum(q.shape[0] for q in pos_queries) >= 2 and loss_cfg.contrastive_weight:
        l_con = contrastive_loss(tn.concat_rows(pos_moments), tn.concat_rows(pos_queries),
                                 loss_cfg.temperature, reduction)
        loss = loss + l_con * loss_cfg.contrastive_weight
    return loss, l_iou.item(), (l_con.item() if l_con is not None else 0.0)


def train(net, corpus, cfg, val_corpus=None, callback=None):
    """Optimise ``net`` in place; returns the per-epoch history."""
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(net.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    items = make_items(corpus, cfg.mode)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(items))
        losses, parts = [], []
        for step, start in enumerate(range(0, len(items), cfg.batch_size)):
            batch = [items[k] for k in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            try:
                loss, l_iou, l_con = batch_loss(net, batch, cfg.loss, cfg.contrastive_reduction)
                tn.backward(loss)
                opt.step()
                for p in net.parameters():
                    if not np.all(np.isfinite(p.data)):
                        raise NumericError("parameter update produced non-finite values")
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from exc
            losses.append(loss.item())
            parts.append((l_iou, l_con))
        record = {"epoch": epoch, "loss": float(np.mean(losses)),
                  "iou_loss": float(np.mean([p[0] for p in parts])),
                  "contrastive_loss": float(np.mean([p[1] for p in parts]))}
        if val_corpus is not None:
            report = evaluate(predict(net, val_corpus, cfg.nms_threshold), groundtruth(val_corpus))
            record["val"] = report.as_dict()
        log.info("epoch %d loss %.5f", epoch, record["loss"])
        history.append(record)
        if callback is not None:
            callback(record)
    return history


def predict_query(net, sample, m, nms_threshold=0.5, top_k=5):
    """Ranked ``((start, end), score)`` list for query ``m`` fed alone."""
    T = net.cfg.T
    with tn.no_grad():
        video, query = net.encode(sample.clip_features, sample.query_features[m:m + 1])
        smap = score_map(net.matcher, net.proposal(video), query)
    starts, ends = span_seconds(T, sample.duration)
    ii, jj = np.triu_indices(T)
    cands = [((float(starts[i, j]), float(ends[i, j])), float(smap.scores[i, j, 0]))
             for i, j in zip(ii, jj)]
    return nms(cands, nms_threshold, top_k=top_k)


def predict(net, corpus, nms_threshold=0.5, top_k=5):
    return {qid: predict_query(net, s, m, nms_threshold, top_k)
            for s in corpus for m, qid in enumerate(s.query_ids)}


def groundtruth(corpus):
    return {qid: tuple(map(float, s.timestamps[m]))
            for s in corpus for m, qid in enumerate(s.query_ids)}
