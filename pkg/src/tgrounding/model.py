"""The full grounding network: projection, static fusion, clip graph, 2D map, matcher."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .graph import DynamicNet, GraphConfig
from .matching import Matcher
from .nn import Linear, Module
from .proposal import ProposalConfig, ProposalEncoder
from .static import StaticNet


@dataclass
class ModelConfig:
    T: int = 16
    d_v: int = 64
    d_q: int = 48
    hidden: int = 64
    num_blocks: int = 2
    mlp_hidden: int = 0
    static_on: bool = True
    dynamic_on: bool = True
    # dense radius 2 with power-of-two skips reaches distances 4 and 8 at T = 16
    graph: GraphConfig = field(default_factory=lambda: GraphConfig(dense_radius=2))
    proposal: ProposalConfig = field(default_factory=ProposalConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["graph"] = GraphConfig(**data.get("graph", {}))
        data["proposal"] = ProposalConfig(**data.get("proposal", {}))
        return cls(**data)


@dataclass
class Output:
    scores: tn.Tensor      # [T*T, M] cosine scores
    moments: tn.Tensor     # [T*T, d] unit moment vectors
    queries: tn.Tensor     # [M, d] unit query vectors


class GroundingNet(Module):
    """Either module can be switched off; with both off, projected clip
    features go straight into the proposal map."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        d = cfg.hidden
        # one stream per submodule: toggling a module leaves the others' init unchanged
        rng = {name: np.random.default_rng(np.random.SeedSequence([seed, k]))
               for k, name in enumerate(("video", "query", "static", "dynamic", "proposal", "matcher"))}
        self.video_proj = Linear(cfg.d_v, d, rng["video"])
        self.query_proj = Linear(cfg.d_q, d, rng["query"])
        self.static = (StaticNet(d, cfg.num_blocks, cfg.mlp_hidden or d, rng["static"])
                       if cfg.static_on else None)
        self.dynamic = DynamicNet(d, cfg.T, cfg.graph, rng["dynamic"]) if cfg.dynamic_on else None
        self.proposal = ProposalEncoder(d, cfg.T, cfg.proposal, rng["proposal"])
        self.matcher = Matcher(self.proposal.hidden, d, d, rng["matcher"])

    def encode(self, clip_features, query_features):
        """Clip node states after the graph and fused query features."""
        video = self.video_proj(tn.as_tensor(clip_features))
        query = self.query_proj(tn.as_tensor(query_features))
        if self.static is not None:
            video, query = self.static(video, query)
        if self.dynamic is not None:
            video = self.dynamic(video)
        return video, query

    def __call__(self, clip_features, query_features):
        video, query = self.encode(clip_features, query_features)
        scores, moments, queries = self.matcher(self.proposal(video), query)
        return Output(scores, moments, queries)


def build_model(cfg, seed=0):
    return GroundingNet(cfg, seed)
