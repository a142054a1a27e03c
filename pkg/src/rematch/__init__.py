"""Robust cross-modal retrieval under partially mismatched pairs.

The library identifies corrupted pairs by mixture-modeling per-pair losses,
rematches them through masked partial optimal transport over a learned cost
map, and trains a compact two-tower retrieval model end to end at desk
scale.
"""

from .costs import CostNetParams, cost_forward, cost_net_step, reconstruct_pairs
from .data import (
    PairDataset,
    corrupt,
    generate,
    identification_score,
    load_dataset,
    make_benchmark,
    recall_at_k,
    save_dataset,
)
from .encoder import EncoderParams, init_params, sgd_step, similarity, similarity_backward
from .flow_oracle import exact_ot_oracle
from .losses import (
    LossConfig,
    final_loss,
    infonce_loss,
    label_smooth,
    matching_probs,
    ot_supervision_loss,
    rce_loss,
    rematch_loss,
    triplet_loss,
    triplet_loss_batch,
)
from .mixture import BetaMixture, beta_log_pdf, fit_bmm, mismatch_probabilities, partition, posterior
from .pipeline import RunState, TrainConfig, load_state, run_experiment, save_state
from .transport import (
    InfeasibleProblemError,
    SinkhornConfig,
    TransportPlan,
    extend_partial,
    normalize_plan,
    partial_ot,
    sinkhorn,
)

__version__ = "0.1.0"

__all__ = [
    "BetaMixture",
    "CostNetParams",
    "EncoderParams",
    "InfeasibleProblemError",
    "LossConfig",
    "PairDataset",
    "RunState",
    "SinkhornConfig",
    "TrainConfig",
    "TransportPlan",
    "beta_log_pdf",
    "corrupt",
    "cost_forward",
    "cost_net_step",
    "exact_ot_oracle",
    "extend_partial",
    "final_loss",
    "fit_bmm",
    "generate",
    "identification_score",
    "infonce_loss",
    "init_params",
    "label_smooth",
    "load_dataset",
    "load_state",
    "make_benchmark",
    "matching_probs",
    "mismatch_probabilities",
    "normalize_plan",
    "ot_supervision_loss",
    "partial_ot",
    "partition",
    "posterior",
    "rce_loss",
    "recall_at_k",
    "reconstruct_pairs",
    "rematch_loss",
    "run_experiment",
    "save_dataset",
    "save_state",
    "sgd_step",
    "similarity",
    "similarity_backward",
    "sinkhorn",
    "triplet_loss",
    "triplet_loss_batch",
]
