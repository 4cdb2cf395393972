"""Temporal clip graph with Gaussian-filtered message passing.

Nodes are the T clips of one video.  Each layer turns the joint clue
``d_ij = (1 - cos(v_i, v_j)) * |i - j|`` of every edge into an h-dimensional
filter ``exp(-gamma * (d_ij - z_k)**2)`` that gates the message from j to i.

Node indices are 0-based throughout.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError
from .nn import Linear, Module, param

AGGREGATORS = ("tgf", "gcn", "gat", "inv_distance", "mlp_filter")


@dataclass
class GraphConfig:
    num_layers: int = 2
    gamma: float = 10.0
    num_kernels: int = 50
    kernel_step: float = 0.1
    dense_radius: int = 8
    stride_base: int = 2
    aggregator: str = "tgf"
    recompute_filters: bool = True
    init_decay: float = 4.0

    def __post_init__(self):
        if self.gamma <= 0 or self.num_kernels < 1 or self.kernel_step <= 0:
            raise ConfigError("graph config needs gamma > 0, num_kernels >= 1, kernel_step > 0")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}; choose from {AGGREGATORS}")

    @property
    def biases(self):
        return np.arange(self.num_kernels) * self.kernel_step


def connected(distance, dense_radius, stride_base):
    """Diffusive connectivity rule for a temporal distance.

    Dense up to ``dense_radius``; beyond it only integer powers of
    ``stride_base`` survive, so the skips double (for base 2) with distance.
    """
    if distance <= dense_radius:
        return True
    power = stride_base
    while power < distance:
        power *= stride_base
    return power == distance


def build_adjacency(T, dense_radius=8, stride_base=2):
    """Ordered edge list ``(i, j)``, meaning j is a neighbour of i.

    Self-pairs are always present and the relation is symmetric.
    """
    if T < 1 or dense_radius < 1 or stride_base < 2:
        raise ConfigError("adjacency needs T >= 1, dense_radius >= 1, stride_base >= 2")
    return [(i, j) for i in range(T) for j in range(T)
            if connected(abs(i - j), dense_radius, stride_base)]


def joint_clue(v_i, v_j, i, j):
    """Return ``(r, a, d)``: temporal distance, cosine relevance, joint clue."""
    v_i, v_j = np.asarray(v_i, dtype=float), np.asarray(v_j, dtype=float)
    ni, nj = np.linalg.norm(v_i), np.linalg.norm(v_j)
    a = float(v_i @ v_j / (ni * nj)) if ni > 0 and nj > 0 else 0.0
    r = abs(j - i)
    return r, a, (1.0 - a) * r


def gaussian_filter(d, cfg):
    if np.any(np.asarray(d) < 0):
        raise ConfigError("joint clue must be non-negative")
    return np.exp(-cfg.gamma * (np.asarray(d, dtype=float)[..., None] - cfg.biases) ** 2)


class EdgeIndex:
    """Constant index arrays for one edge list."""

    def __init__(self, edges, T):
        arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.T = T
        self.dst = arr[:, 0]
        self.src = arr[:, 1]
        self.distance = np.abs(self.src - self.dst).astype(np.float64)[:, None]
        self.incidence = np.zeros((T, len(arr)))
        self.incidence[self.dst, np.arange(len(arr))] = 1.0
        self.degree = self.incidence.sum(axis=1)

    def clues(self, states):
        """Joint clue of every edge as an [E, 1] tensor (differentiable)."""
        unit = tn.l2_normalize_rows(states)
        rel = tn.sum_(tn.take(unit, self.dst) * tn.take(unit, self.src), axis=1, keepdims=True)
        return (1.0 - rel) * self.distance

    def aggregate(self, messages):
        return tn.matmul(self.incidence, messages)


class GraphLayer(Module):
    """One round of message passing under the configured aggregator."""

    def __init__(self, d, cfg, rng, mean_degree=1.0):
        self.cfg = cfg
        self.node_ffn = Linear(d, d, rng)
        # He-uniform so the ReLU after each sum keeps activations at scale
        self.node_ffn.weight.data = rng.uniform(-1.0, 1.0, size=(d, d)) * np.sqrt(6.0 / d)
        if cfg.aggregator in ("tgf", "mlp_filter"):
            self.filter_ffn = Linear(cfg.num_kernels, d, rng)
            self.filter_ffn.weight.data *= 0.1
            self.filter_ffn.bias.data[:] = 0.0
            if cfg.aggregator == "tgf":
                # the kernel bank sums to ~sqrt(pi/gamma)/step inside its range, so
                # these weights make every gate start near exp(-decay * d): the
                # layer begins as an edge-preserving smoother
                mass = np.sqrt(np.pi / cfg.gamma) / cfg.kernel_step
                self.filter_ffn.weight.data += np.exp(-cfg.init_decay * cfg.biases)[:, None] / mass
        if cfg.aggregator == "mlp_filter":
            self.clue_ffn = Linear(1, cfg.num_kernels, rng)
        if cfg.aggregator == "gat":
            bound = 1.0 / np.sqrt(d)
            self.att_dst = param(rng.uniform(-bound, bound, size=(d, 1)))
            self.att_src = param(rng.uniform(-bound, bound, size=(d, 1)))

    def edge_filters(self, clues):
        """Per-edge [E, d] gates (or [E, 1] scalar weights) from [E, 1] clues."""
        agg = self.cfg.aggregator
        if agg == "tgf":
            diff = clues - self.cfg.biases
            return self.filter_ffn(tn.exp(-self.cfg.gamma * (diff * diff)))
        if agg == "mlp_filter":
            return self.filter_ffn(self.clue_ffn(clues))
        if agg == "inv_distance":
            return 1.0 / (clues + 1.0)
        raise ConfigError(f"aggregator {agg!r} does not use joint clues")

    def __call__(self, states, index, clues=None):
        agg = self.cfg.aggregator
        h = self.node_ffn(states)
        h_src = tn.take(h, index.src)
        if agg == "gcn":
            weight = 1.0 / np.sqrt(index.degree[index.dst] * index.degree[index.src])
            messages = h_src * weight[:, None]
        elif agg == "gat":
            score = tn.leaky_relu(tn.take(h @ self.att_dst, index.dst) + h_src @ self.att_src)
            # per-node max shift; softmax is invariant to it
            shift = np.full(index.T, -np.inf)
            np.maximum.at(shift, index.dst, score.data[:, 0])
            ex = tn.exp(score - shift[index.dst][:, None])
            alpha = ex / tn.take(index.aggregate(ex), index.dst)
            messages = alpha * h_src
        else:
            if clues is None:
                clues = index.clues(states)
            messages = self.edge_filters(clues) * h_src
        return tn.relu(index.aggregate(messages))

    def attention(self, states, index):
        """GAT weights per edge (diagnostic); rows of one destination sum to 1."""
        h = self.node_ffn(states).data
        s = h @ self.att_dst.data
        e = s[index.dst, 0] + (h @ self.att_src.data)[index.src, 0]
        e = np.where(e > 0, e, 0.2 * e)
        ex = np.exp(e - e.max())
        den = index.incidence @ ex
        return ex / den[index.dst]


class DynamicNet(Module):
    """Stack of ``num_layers`` graph layers over a fixed clip graph."""

    def __init__(self, d, T, cfg=None, rng=None):
        self.cfg = cfg or GraphConfig()
        if self.cfg.num_layers < 1:
            raise ConfigError("dynamic net needs at least one layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.T = T
        self.edges = build_adjacency(T, self.cfg.dense_radius, self.cfg.stride_base)
        self.index = EdgeIndex(self.edges, T)
        mean_degree = float(self.index.degree.mean())
        self.layers = [GraphLayer(d, self.cfg, rng, mean_degree) for _ in range(self.cfg.num_layers)]

    def __call__(self, states):
        states = tn.as_tensor(states)
        fixed = None
        if not self.cfg.recompute_filters and self.cfg.aggregator not in ("gcn", "gat"):
            fixed = self.index.clues(states)
        for layer in self.layers:
            states = layer(states, self.index, clues=fixed)
        return states
