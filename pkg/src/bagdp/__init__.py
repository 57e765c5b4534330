"""Intrinsic differential privacy of Bagging: budgets, training and exact verification."""

from .accountant import (
    BaggingConfig,
    BudgetSource,
    Mode,
    PrivacyBudget,
    budget,
    budget_with_replacement,
    budget_without_replacement,
    composed_budget_with_replacement,
    max_subsample_for_budget,
)
from .data import Dataset, ingest_dataset, make_blobs
from .ensemble import EnsembleModel, evaluate, predict, train
from .learners import (
    KNNLearner,
    LabeledExample,
    LogisticLearner,
    MajorityClassLearner,
    fit_knn,
    fit_logistic,
    fit_majority_class,
)
from .sampler import PartitionMass, Subsample, partition_masses, sample, sample_all
from .verifier import (
    OutcomeDistribution,
    VerificationReport,
    enumerate_mechanism,
    find_violation,
    hockey_stick,
    monte_carlo_gap,
    post_processing_check,
    verify_claim,
)

__version__ = "0.1.0"
