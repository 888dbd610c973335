"""Boosting feature-space clusterings with adaptive k-NN selection and a
discriminative dual-network loss."""

from .data import (
    DatasetBundle,
    FeatureMatrix,
    LabelVector,
    SynthConfig,
    generate_gaussian_mixture,
    l2_normalize,
    load_dataset,
    save_dataset,
)
from .kmeans import KMeansConfig, KMeansModel, assign, kmeans_fit, softmax_assign
from .losses import (
    ClassGroup,
    LossBreakdown,
    WeightMode,
    class_weight,
    compute_prototypes,
    instance_loss,
    negative_loss,
    positive_loss,
    total_loss,
)
from .metrics import (
    MetricsReport,
    acc,
    ari,
    build_report,
    imbalance_ratio,
    intra_inter_similarity,
    knn_accuracy,
    nmi,
    silhouette,
)
from .networks import DualNetworks, MLPNetwork, ema_update, forward, load_networks, save_networks, sgd_step
from .selection import (
    BatchView,
    FilterConfig,
    NeighborTable,
    SelectionResult,
    build_neighbor_table,
    filter_high_confidence,
    select,
    select_adaptive_k,
    selection_scores,
)
from .trainer import (
    AugmentConfig,
    BoostResult,
    TrainerConfig,
    TrainHistory,
    augment,
    pretrain_baseline,
    run_boost,
    train_epoch,
    warmup,
)

__version__ = "0.1.0"
