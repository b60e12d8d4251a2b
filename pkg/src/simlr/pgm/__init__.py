"""Policy-change graphical model: tables for CT, O, CP and the urgency network."""

from simlr.pgm.chain import (
    PgmConfig,
    chain_from_cases,
    forecast_policy_chain,
    policy_chain,
    policy_path_distribution,
    urgency_sequence,
)
from simlr.pgm.cpt import (
    ConfigError,
    Cpt,
    CptSet,
    cp_distribution,
    ct_distribution,
    default_cpts,
    load_cpts,
    parse_cpts,
    willingness_distribution,
)
from simlr.pgm.nn_cpd import (
    NnCpd,
    SoftLabelDataset,
    TrainingError,
    UrgencyFeatures,
    default_soft_labels,
    loss_and_grad,
    train_nn_cpd,
    urgency_distribution,
    urgency_features,
)

__all__ = [
    "ConfigError",
    "Cpt",
    "CptSet",
    "NnCpd",
    "PgmConfig",
    "SoftLabelDataset",
    "TrainingError",
    "UrgencyFeatures",
    "chain_from_cases",
    "cp_distribution",
    "ct_distribution",
    "default_cpts",
    "default_soft_labels",
    "forecast_policy_chain",
    "load_cpts",
    "loss_and_grad",
    "parse_cpts",
    "policy_chain",
    "policy_path_distribution",
    "train_nn_cpd",
    "urgency_distribution",
    "urgency_features",
    "urgency_sequence",
    "willingness_distribution",
]
