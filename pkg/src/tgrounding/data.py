"""Synthetic grounding corpora, the VFT1 feature format and annotation files.

Corpus layout on disk::

    <root>/annotations.json
    <root>/features/<video_id>.vft     clip features  [T x d_v]
    <root>/queries/<video_id>.vft      query features [M x d_q]

``annotations.json`` maps each video id to its duration, the path of its clip
feature file, the target ``timestamps`` in seconds and a parallel ``queries``
list whose entries reference one row of a query feature file as
``"queries/<video_id>.vft#<row>"``.
"""

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

MAGIC = b"VFT1"
_HEADER = struct.Struct("<4sII")


@dataclass
class SynthConfig:
    num_videos: int = 64
    T: int = 16
    d_v: int = 64
    d_q: int = 48
    events_min: int = 2
    events_max: int = 4
    noise_sigma: float = 0.3
    prototype_dim: int = 8
    duration_min: float = 20.0
    duration_max: float = 120.0
    modality_gap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.events_min < 1 or self.events_max < self.events_min:
            raise ConfigError("need 1 <= events_min <= events_max")
        if self.events_max > self.T:
            raise ConfigError("cannot place more events than clips")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 0 < self.duration_min <= self.duration_max:
            raise ConfigError("need 0 < duration_min <= duration_max")


@dataclass
class GroundingSample:
    video_id: str
    duration: float
    clip_features: np.ndarray
    query_features: np.ndarray
    timestamps: np.ndarray
    query_ids: list = field(default_factory=list)

    @property
    def num_queries(self):
        return len(self.timestamps)


@dataclass
class AnnotationEntry:
    video_id: str
    duration: float
    timestamps: list
    queries: list
    video_features: str = None


def _modality_maps(cfg, rng):
    pd = cfg.prototype_dim
    if cfg.d_v == pd:
        video_map = np.eye(pd)
    else:
        video_map = rng.normal(size=(pd, cfg.d_v)) / np.sqrt(pd)
    if not cfg.modality_gap and cfg.d_q == pd:
        query_map, offset = np.eye(pd), np.zeros(pd)
    else:
        query_map = rng.normal(size=(pd, cfg.d_q)) / np.sqrt(pd)
        offset = 0.5 * rng.normal(size=cfg.d_q)
    return video_map, query_map, offset


def sample_partition(rng, T, k):
    """Cut [0, T) into k contiguous clip spans; returns k+1 boundaries."""
    cuts = np.sort(rng.choice(np.arange(1, T), size=k - 1, replace=False))
    return np.concatenate([[0], cuts, [T]])


SPLITS = {"train": 1, "val": 2, "test": 3}


def generate(cfg, split="train"):
    """Deterministic corpus: every video is a sequence of latent events.

    Clip features are the event prototype plus noise; each event yields one
    query built from the same prototype through a fixed cross-modal map.  The
    seed fixes those maps; ``split`` selects an independent stream of videos
    drawn from the same maps.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; choose from {sorted(SPLITS)}")
    world = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    video_map, query_map, offset = _modality_maps(cfg, world)
    children = np.random.SeedSequence([cfg.seed, SPLITS[split]]).spawn(cfg.num_videos)
    prefix = "v" if split == "train" else split[0]
    corpus = []
    for n, child in enumerate(children):
        rng = np.random.default_rng(child)
        k = int(rng.integers(cfg.events_min, cfg.events_max + 1))
        bounds = sample_partition(rng, cfg.T, k)
        duration = float(rng.uniform(cfg.duration_min, cfg.duration_max))
        step = duration / cfg.T
        protos = rng.normal(size=(k, cfg.prototype_dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        event_of_clip = np.repeat(np.arange(k), np.diff(bounds))
        clips = protos[event_of_clip] @ video_map
        clips = clips + cfg.noise_sigma * rng.normal(size=clips.shape)
        order = rng.permutation(k)
        queries = protos[order] @ query_map + offset
        queries = queries + cfg.noise_sigma * rng.normal(size=queries.shape)
        stamps = np.stack([bounds[order] * step, bounds[order + 1] * step], axis=1)
        stamps[:, 1] = np.minimum(stamps[:, 1], duration)
        vid = f"{prefix}_{n:04d}"
        corpus.append(GroundingSample(vid, duration, clips, queries, stamps,
                                      [f"{vid}_q{m}" for m in range(k)]))
    return corpus


def chance_baseline(cfg, draws=100_000, iou_threshold=0.5, seed=0):
    """Monte-Carlo R@1 (percent) of a uniformly random valid proposal.

    Targets follow the generator's event-span distribution; IoU is computed in
    clip units, which is scale-free.
    """
    rng = np.random.default_rng(seed)
    T = cfg.T
    k = rng.integers(cfg.events_min, cfg.events_max + 1, size=draws)
    keys = rng.random((draws, T - 1))
    cut_order = np.argsort(keys, axis=1) + 1
    event = (rng.random(draws) * k).astype(np.int64)
    lo = np.zeros(draws)
    hi = np.zeros(draws)
    for n in range(draws):
        b = np.concatenate([[0], np.sort(cut_order[n, :k[n] - 1]), [T]])
        lo[n], hi[n] = b[event[n]], b[event[n] + 1]
    cells = np.array([(i, j + 1) for i in range(T) for j in range(i, T)], dtype=np.float64)
    pick = cells[rng.integers(0, len(cells), size=draws)]
    inter = np.clip(np.minimum(pick[:, 1], hi) - np.maximum(pick[:, 0], lo), 0, None)
    union = np.maximum(pick[:, 1], hi) - np.minimum(pick[:, 0], lo)
    return 100.0 * float(np.mean(inter / union >= iou_threshold))


# ----------------------------------------------------------------------------
# VFT1 feature files


def write_features(path, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise DataError("feature matrix contains non-finite values")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols))
        fh.write(matrix.astype("<f4").tobytes(order="C"))


def read_features(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated data, expected {expected} bytes", offset=len(raw))
    if len(raw) > expected:
        raise FormatError(f"{path}: trailing bytes after data", offset=expected)
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=_HEADER.size)
    return data.astype(np.float64).reshape(rows, cols)


# ----------------------------------------------------------------------------
# annotations


def _check_entry(vid, info):
    try:
        duration = float(info["duration"])
        stamps = [tuple(map(float, ts)) for ts in info["timestamps"]]
        queries = list(info["queries"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"video {vid!r}: malformed entry ({exc})") from None
    if duration <= 0:
        raise DataError(f"video {vid!r}: non-positive duration {duration}")
    if not stamps:
        raise DataError(f"video {vid!r}: no queries")
    if len(stamps) != len(queries):
        raise DataError(f"video {vid!r}: {len(stamps)} timestamps but {len(queries)} queries")
    for m, ts in enumerate(stamps):
        if len(ts) != 2:
            raise DataError(f"video {vid!r}, index {m}: timestamp must be [start, end]")
        s, e = ts
        if not s < e:
            raise DataError(f"video {vid!r}, index {m}: inverted timestamp [{s}, {e}]")
        if s < 0 or e > duration:
            raise DataError(f"video {vid!r}, index {m}: timestamp [{s}, {e}] outside [0, {duration}]")
    return AnnotationEntry(vid, duration, stamps, queries, info.get("video_features"))


def parse_annotations(path):
    """Read and validate an annotation file into ``{video_id: AnnotationEntry}``."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: top level must map video ids to entries")
    return {vid: _check_entry(vid, info) for vid, info in raw.items()}


def write_annotations(path, index):
    out = {}
    for vid, entry in index.items():
        item = {"duration": entry.duration,
                "timestamps": [list(ts) for ts in entry.timestamps],
                "queries": list(entry.queries)}
        if entry.video_features is not None:
            item["video_features"] = entry.video_features
        out[vid] = item
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1)


def write_corpus(root, corpus):
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "queries").mkdir(parents=True, exist_ok=True)
    index = {}
    for s in corpus:
        vf = f"features/{s.video_id}.vft"
        qf = f"queries/{s.video_id}.vft"
        write_features(root / vf, s.clip_features)
        write_features(root / qf, s.query_features)
        index[s.video_id] = AnnotationEntry(
            s.video_id, float(s.duration),
            [(float(a), float(b)) for a, b in s.timestamps],
            [f"{qf}#{m}" for m in range(s.num_queries)], vf)
    write_annotations(root / "annotations.json", index)
    return index


def load_corpus(root):
    """Load every video of a corpus directory as :class:`GroundingSample`."""
    root = Path(root)
    ann = root / "annotations.json"
    if not ann.exists():
        raise FileNotFoundError(f"no corpus at {root} (missing annotations.json)")
    index = parse_annotations(ann)
    cache = {}

    def load(rel):
        if rel not in cache:
            cache[rel] = read_features(root / rel)
        return cache[rel]

    corpus = []
    for vid, entry in index.items():
        clips = load(entry.video_features or f"features/{vid}.vft")
        rows = []
        for ref in entry.queries:
            fname, _, row = ref.partition("#")
            mat = load(fname)
            r = int(row or 0)
            if r >= len(mat):
                raise DataError(f"video {vid!r}: query reference {ref!r} beyond {len(mat)} rows")
            rows.append(mat[r])
        corpus.append(GroundingSample(
            vid, entry.duration, clips, np.stack(rows), np.asarray(entry.timestamps, dtype=np.float64),
            [f"{vid}_q{m}" for m in range(len(rows))]))
    return corpus


# ----------------------------------------------------------------------------
# statistics


def corpus_stats(corpus, bins=10):
    """Queries-per-video histogram and normalised start/end position histograms."""
    per_video = Counter()
    starts, ends = [], []
    for item in corpus:
        stamps = np.asarray(item.timestamps, dtype=np.float64).reshape(-1, 2)
        per_video[len(stamps)] += 1
        starts.extend(stamps[:, 0] / item.duration)
        ends.extend(stamps[:, 1] / item.duration)
    n_videos = sum(per_video.values())
    qpv = {k: v / n_videos for k, v in sorted(per_video.items())}
    edges = np.linspace(0.0, 1.0, bins + 1)

    def hist(values):
        if not values:
            return []
        counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=edges)
        return (counts / counts.sum()).tolist()

    return {"queries_per_video": qpv, "start": hist(starts), "end": hist(ends),
            "bin_edges": edges.tolist(), "num_videos": n_videos, "num_queries": len(starts)}


def format_stats(stats):
    lines = [f"videos\t{stats['num_videos']}", f"queries\t{stats['num_queries']}", "",
             "queries_per_video\tfraction"]
    lines += [f"{k}\t{v:.4f}" for k, v in stats["queries_per_video"].items()]
    lines += ["", "position_bin\tstart\tend"]
    edges = stats["bin_edges"]
    for b, (s, e) in enumerate(zip(stats["start"], stats["end"])):
        lines.append(f"[{edges[b]:.2f},{edges[b + 1]:.2f})\t{s:.4f}\t{e:.4f}")
    return "\n".join(lines) + "\n"
