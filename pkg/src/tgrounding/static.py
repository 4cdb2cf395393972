"""Static fusion of clip and query features with residual MLP blocks."""

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, DimensionError
from .nn import LayerNorm, Linear, Module


def positional_encoding(n, d, offset=0):
    """Sinusoidal table: ``[p, 2i] = sin(p / 10000**(2i/d))``, ``[p, 2i+1] = cos(...)``.

    Rows are positions ``offset .. offset + n - 1``.
    """
    return sinusoid_rows(np.arange(offset, offset + n), d)


def sinusoid_rows(positions, d):
    if d % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d}")
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    n = len(pos)
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((n, d))
    table[:, 0::2] = np.sin(pos / freq)
    table[:, 1::2] = np.cos(pos / freq)
    return table


class MLPBlock(Module):
    """LayerNorm -> Linear -> ReLU -> Linear, applied row by row."""

    def __init__(self, d, hidden, rng):
        self.d = d
        self.norm = LayerNorm(d)
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, x):
        if x.shape[-1] != self.d:
            raise DimensionError(f"mlp_block: expected width {self.d}, got {x.shape[-1]}")
        return self.fc2(tn.relu(self.fc1(self.norm(x))))


class StaticNet(Module):
    """Joint residual MLP over the concatenated [clips; queries] sequence.

    ``F~ = F + LN(F) + P`` followed by ``num_blocks`` rounds of
    ``F <- LN(F + MLPBlock(F))``; the result is split back at row T.
    Query positions continue after the clip positions.
    """

    def __init__(self, d, num_blocks=2, hidden=None, rng=None):
        if d <= 0 or num_blocks < 0:
            raise ConfigError("static net needs d > 0 and num_blocks >= 0")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d = d
        self.num_blocks = num_blocks
        self.input_norm = LayerNorm(d)
        self.blocks = [MLPBlock(d, hidden or d, rng) for _ in range(num_blocks)]
        self.block_norms = [LayerNorm(d) for _ in range(num_blocks)]

    def __call__(self, video, query, query_positions=None):
        video, query = tn.as_tensor(video), tn.as_tensor(query)
        if query.shape[0] == 0:
            raise ContractError("static net needs at least one query")
        if video.shape[1] != self.d or query.shape[1] != self.d:
            raise DimensionError(f"static net: widths {video.shape[1]}, {query.shape[1]} vs d={self.d}")
        T, M = video.shape[0], query.shape[0]
        joint = tn.concat_rows([video, query])
        if query_positions is None:
            pos = positional_encoding(T + M, self.d)
        else:
            pos = sinusoid_rows(np.concatenate([np.arange(T), query_positions]), self.d)
        x = joint + self.input_norm(joint) + pos
        for block, norm in zip(self.blocks, self.block_norms):
            x = norm(x + block(x))
        return tn.slice_rows(x, 0, T), tn.slice_rows(x, T, T + M)
