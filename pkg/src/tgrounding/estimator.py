"""scikit-learn style wrapper around model construction, training and inference.

``X`` is always a corpus: a list of :class:`~tgrounding.data.GroundingSample`.
Targets live inside the samples, so ``y`` is accepted and ignored.
"""

from dataclasses import asdict

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .graph import GraphConfig
from .matching import LossConfig
from .metrics import evaluate
from .model import ModelConfig, build_model
from .proposal import ProposalConfig
from .training import TrainConfig, groundtruth, predict, train
from .validation import check_corpus


class GroundingEstimator(BaseEstimator):
    """Every hyperparameter is a flat constructor argument so that
    ``get_params``/``set_params`` and ``sklearn.base.clone`` work unchanged."""

    def __init__(self, hidden=64, num_blocks=2, static_on=True, dynamic_on=True,
                 aggregator="tgf", num_layers=2, gamma=10.0, num_kernels=50, kernel_step=0.1,
                 dense_radius=2, stride_base=2, recompute_filters=True,
                 fusion="content_plus_boundary_add", pooling="maxpool", conv_layers=1, kernel_size=3,
                 mode="multi_query", epochs=15, batch_size=8, learning_rate=3e-3, weight_decay=1e-2,
                 temperature=0.1, contrastive_reduction="mean", nms_threshold=0.5, top_k=5, seed=0):
        self.hidden = hidden
        self.num_blocks = num_blocks
        self.static_on = static_on
        self.dynamic_on = dynamic_on
        self.aggregator = aggregator
        self.num_layers = num_layers
        self.gamma = gamma
        self.num_kernels = num_kernels
        self.kernel_step = kernel_step
        self.dense_radius = dense_radius
        self.stride_base = stride_base
        self.recompute_filters = recompute_filters
        self.fusion = fusion
        self.pooling = pooling
        self.conv_layers = conv_layers
        self.kernel_size = kernel_size
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.temperature = temperature
        self.contrastive_reduction = contrastive_reduction
        self.nms_threshold = nms_threshold
        self.top_k = top_k
        self.seed = seed

    def model_config(self, T, d_v, d_q):
        graph = GraphConfig(num_layers=self.num_layers, gamma=self.gamma, num_kernels=self.num_kernels,
                            kernel_step=self.kernel_step, dense_radius=self.dense_radius,
                            stride_base=self.stride_base, aggregator=self.aggregator,
                            recompute_filters=self.recompute_filters)
        proposal = ProposalConfig(fusion=self.fusion, pooling=self.pooling,
                                  conv_layers=self.conv_layers, kernel_size=self.kernel_size)
        return ModelConfig(T=T, d_v=d_v, d_q=d_q, hidden=self.hidden, num_blocks=self.num_blocks,
                           static_on=self.static_on, dynamic_on=self.dynamic_on,
                           graph=graph, proposal=proposal)

    def train_config(self):
        return TrainConfig(mode=self.mode, epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           seed=self.seed, nms_threshold=self.nms_threshold,
                           contrastive_reduction=self.contrastive_reduction,
                           loss=LossConfig(temperature=self.temperature))

    def fit(self, X, y=None, val=None, callback=None):
        corpus, dims = check_corpus(X)
        self.net_ = build_model(self.model_config(*dims), self.seed)
        if val is not None:
            val, _ = check_corpus(val, *dims)
        self.history_ = train(self.net_, corpus, self.train_config(), val_corpus=val, callback=callback)
        return self

    def _fitted_corpus(self, X):
        check_is_fitted(self, "net_")
        cfg = self.net_.cfg
        corpus, _ = check_corpus(X, cfg.T, cfg.d_v, cfg.d_q)
        return corpus

    def predict(self, X):
        """Ranked ``[((start, end), score), ...]`` per query id, post-NMS."""
        corpus = self._fitted_corpus(X)
        return predict(self.net_, corpus, self.nms_threshold, self.top_k)

    def evaluate(self, X):
        corpus = self._fitted_corpus(X)
        return evaluate(predict(self.net_, corpus, self.nms_threshold, self.top_k), groundtruth(corpus))

    def score(self, X, y=None):
        """R@1 at IoU 0.5, as a fraction."""
        return self.evaluate(X).recall[(1, 0.5)] / 100.0

    def save(self, path):
        check_is_fitted(self, "net_")
        return checkpoint.save_checkpoint(path, self.net_, self.seed, {"params": self.get_params()})

    @classmethod
    def load(cls, path):
        net, meta = checkpoint.load_checkpoint(path)
        est = cls(**meta.get("extra", {}).get("params", {}))
        est.net_ = net
        return est

    def describe(self):
        """Nested view of the effective configuration."""
        check_is_fitted(self, "net_")
        return {"model": self.net_.cfg.to_dict(), "train": asdict(self.train_config())}
