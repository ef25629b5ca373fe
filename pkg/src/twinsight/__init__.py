"""Desk-scale federated semi-supervised learning with twin models."""
from .data import (
    UNLABELED,
    AugmentPolicy,
    ClientShard,
    Dataset,
    augment,
    blobs_split,
    build_scenario,
    dirichlet_partition,
    generate_blobs,
    load_csv,
    save_csv,
)
from .diagnostics import (
    NEVER,
    UNDEFINED,
    RoundReport,
    evaluate,
    gradient_conflict_probe,
    rounds_to_target,
)
from .federation import (
    ClientUpdate,
    GlobalState,
    MethodConfig,
    fedavg_aggregate,
    init_global_state,
    local_train_lower,
    local_train_pseudo,
    local_train_twin,
    run_federation,
    run_round,
    sample_clients,
)
from .losses import (
    LossValue,
    TwinHyper,
    alignment_loss,
    cross_entropy,
    labeled_objective,
    neighborhood_matrix,
    nt_xent,
    pseudo_label_loss,
    unlabeled_objective,
)
from .numerics import (
    MlpSpec,
    ModelParams,
    SgdState,
    backward,
    cosine_similarity,
    forward,
    init_params,
    l2_normalize_rows,
    sgd_step,
    softmax_rows,
)

from .cli import ConfigError, ExperimentConfig, config_from_dict, parse_config, run_experiment

__version__ = "0.1.0"
