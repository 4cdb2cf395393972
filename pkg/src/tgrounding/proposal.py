"""2D temporal proposal map: span features on the upper triangle and a conv encoder.

Cell ``(i, j)`` with ``i <= j`` (0-based) stands for clips ``i..j`` inclusive.
Cells with ``i > j`` are invalid and are kept at exactly zero.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError
from .nn import Conv2d, Linear, Module

FUSIONS = ("content_only", "content_plus_boundary_add", "content_plus_boundary_concat")
POOLINGS = ("maxpool", "conv")


@dataclass
class ProposalConfig:
    fusion: str = "content_plus_boundary_add"
    pooling: str = "maxpool"
    conv_layers: int = 1
    kernel_size: int = 3
    hidden: int = 0  # 0 means: same as the model width
    pool_kernel: int = 3

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}; choose from {FUSIONS}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}; choose from {POOLINGS}")
        if self.conv_layers < 1:
            raise ConfigError("proposal encoder needs at least one conv layer")
        if self.kernel_size % 2 == 0 or self.pool_kernel % 2 == 0:
            raise ConfigError("kernel sizes must be odd")


def enumerate_moments(T):
    """All spans ``(i, j)`` with ``0 <= i <= j < T`` in row-major order."""
    return [(i, j) for i in range(T) for j in range(i, T)]


def valid_mask(T):
    return np.triu(np.ones((T, T), dtype=bool))


def span_argmax(v):
    """Index of the first row attaining the column max over each span: [T, T, d] ints."""
    T, d = v.shape
    idx = np.zeros((T, T, d), dtype=np.int64)
    for i in range(T):
        best = v[i].copy()
        arg = np.full(d, i)
        idx[i, i] = arg
        for j in range(i + 1, T):
            better = v[j] > best
            best = np.where(better, v[j], best)
            arg = np.where(better, j, arg)
            idx[i, j] = arg
    return idx


def _conv_pool_operators(T, kernel):
    """Constant [T*T, T] matrices, one per kernel tap.

    Tap ``o`` (offset ``o - kernel//2``) of a length-preserving 1-D conv over a
    span, zero padded at the span ends and averaged over the span, touches the
    rows ``[i + off, j]`` (off >= 0) or ``[i, j + off]`` (off < 0) with weight
    ``1 / (j - i + 1)``.
    """
    r = kernel // 2
    ops = np.zeros((kernel, T * T, T))
    for i in range(T):
        for j in range(i, T):
            length = j - i + 1
            for o in range(kernel):
                off = o - r
                lo, hi = (i + off, j) if off >= 0 else (i, j + off)
                if lo <= hi:
                    ops[o, i * T + j, lo:hi + 1] = 1.0 / length
    return ops


class ProposalEncoder(Module):
    """Builds the T x T proposal map from clip features and encodes it."""

    def __init__(self, d, T, cfg=None, rng=None):
        self.cfg = cfg or ProposalConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.T = d, T
        self.hidden = self.cfg.hidden or d
        self.mask = valid_mask(T)
        self._mask3 = self.mask[:, :, None].astype(np.float64)
        self._rows = np.broadcast_to(np.arange(T)[:, None], (T, T))
        self._cols = np.broadcast_to(np.arange(T)[None, :], (T, T))
        if self.cfg.pooling == "conv":
            k = self.cfg.pool_kernel
            self.pool_taps = [Linear(d, d, rng, bias=(o == 0)) for o in range(k)]
            self._pool_ops = _conv_pool_operators(T, k)
        if self.cfg.fusion == "content_plus_boundary_concat":
            self.fuse = Linear(2 * d, d, rng)
        widths = [d] + [self.hidden] * self.cfg.conv_layers
        self.convs = [Conv2d(widths[n], widths[n + 1], self.cfg.kernel_size, rng)
                      for n in range(self.cfg.conv_layers)]

    def content(self, v):
        """Span content features as a [T, T, d] tensor (invalid cells unmasked)."""
        if self.cfg.pooling == "maxpool":
            idx = span_argmax(v.data)
            return tn.take(v, (idx, np.arange(self.d)))
        out = None
        for op, tap in zip(self._pool_ops, self.pool_taps):
            term = tap(tn.matmul(op, v))
            out = term if out is None else out + term
        return tn.reshape(out, (self.T, self.T, self.d))

    def build_map(self, v):
        """Populate every valid cell of the [T, T, d] proposal map."""
        v = tn.as_tensor(v)
        fusion = self.cfg.fusion
        feat = self.content(v)
        if fusion != "content_only":
            boundary = tn.take(v, self._rows) + tn.take(v, self._cols)
            if fusion == "content_plus_boundary_add":
                feat = feat + boundary
            else:
                feat = self.fuse(tn.concat([feat, boundary], axis=-1))
        return feat * self._mask3

    def moment_feature(self, v, i, j):
        """Feature of one span before encoding (length d, or 2d for concat fusion)."""
        if i > j:
            raise ContractError(f"moment ({i}, {j}) has start after end")
        v = tn.as_tensor(v)
        span = tn.slice_rows(v, i, j + 1)
        if self.cfg.pooling == "maxpool":
            content = tn.max_over_axis(span, axis=0)
        else:
            content = None
            for op, tap in zip(self._pool_ops, self.pool_taps):
                term = tap(tn.matmul(op[i * self.T + j][None, :], v))
                content = term if content is None else content + term
            content = tn.reshape(content, (self.d,))
        if self.cfg.fusion == "content_only":
            return content
        boundary = tn.reshape(tn.slice_rows(v, i, i + 1) + tn.slice_rows(v, j, j + 1), (self.d,))
        if self.cfg.fusion == "content_plus_boundary_add":
            return content + boundary
        return tn.concat([content, boundary], axis=0)

    def encode(self, feature_map):
        """Conv stack with ReLU after each layer; invalid cells re-zeroed each time."""
        x = feature_map
        for conv in self.convs:
            x = tn.relu(conv(x)) * self._mask3
        return x

    def __call__(self, v):
        return self.encode(self.build_map(v))
