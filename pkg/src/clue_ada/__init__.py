"""Active domain adaptation at desk scale.

Uncertainty-weighted embedding clustering for label acquisition, minimax
entropy training for semi-supervised alignment, and the standard batch
acquisition baselines, all on a hand-rolled differentiable network.
"""

from .clustering import (
    ClusterConfig,
    ClusterState,
    kmeanspp_init,
    nearest_to_centroids,
    set_variance,
    weighted_kmeans,
    weighted_set_variance,
)
from .data import Dataset, PoolState, ShiftSpec, generate_shift, load_idx, oracle_label
from .driver import ExperimentConfig, OptimizerConfig, RoundRecord, aggregate, run_experiment
from .model import (
    LossWeights,
    NetworkParams,
    OptimizerState,
    evaluate_accuracy,
    forward,
    init_params,
    mme_loss_and_grads,
    optimizer_step,
    supervised_loss_and_grads,
)
from .numerics import pairwise_sq_dists, softmax_rows, squared_euclidean
from .sampling import AcquisitionRequest, StrategyConfig, badge_gradient_embeddings, select
from .uncertainty import (
    DomainnessConfig,
    UncertaintyWeights,
    entropy_rows,
    hard_domain_label,
    margin_rows,
    targetness,
    uncertainty_weights,
)

__version__ = "0.1.0"
