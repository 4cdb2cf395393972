"""Input checks shared by the estimator, the training loop and the CLI."""

import numpy as np

from .data import GroundingSample
from .errors import DataError, DimensionError


def check_matrix(x, name, width=None, rows=None):
    """Return ``x`` as a finite float64 matrix, optionally with fixed shape."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    if width is not None and arr.shape[1] != width:
        raise DimensionError(f"{name}: expected {width} columns, got {arr.shape[1]}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name}: expected {rows} rows, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: contains non-finite values")
    return arr


def check_sample(sample, T=None, d_v=None, d_q=None):
    if not isinstance(sample, GroundingSample):
        raise DataError(f"expected GroundingSample, got {type(sample).__name__}")
    vid = sample.video_id
    check_matrix(sample.clip_features, f"{vid} clip features", d_v, T)
    check_matrix(sample.query_features, f"{vid} query features", d_q, len(sample.timestamps))
    stamps = np.asarray(sample.timestamps, dtype=np.float64).reshape(-1, 2)
    if len(stamps) == 0:
        raise DataError(f"{vid}: needs at least one query")
    bad = ~((stamps[:, 0] >= 0) & (stamps[:, 0] < stamps[:, 1]) & (stamps[:, 1] <= sample.duration))
    if bad.any():
        m = int(np.flatnonzero(bad)[0])
        raise DataError(f"{vid}, index {m}: target {stamps[m].tolist()} outside [0, {sample.duration}] or inverted")
    if sample.query_ids and len(sample.query_ids) != len(stamps):
        raise DataError(f"{vid}: {len(sample.query_ids)} query ids for {len(stamps)} targets")
    return sample


def check_corpus(corpus, T=None, d_v=None, d_q=None):
    """Validate a list of samples; widths default to those of the first sample."""
    corpus = list(corpus)
    if not corpus:
        raise DataError("corpus is empty")
    first = corpus[0]
    T = T if T is not None else np.shape(first.clip_features)[0]
    d_v = d_v if d_v is not None else np.shape(first.clip_features)[1]
    d_q = d_q if d_q is not None else np.shape(first.query_features)[1]
    for s in corpus:
        check_sample(s, T, d_v, d_q)
    return corpus, (T, d_v, d_q)
