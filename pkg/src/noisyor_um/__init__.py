"""Universal marginalisers for three-layer Noisy-OR networks under different masking schemes."""

__version__ = "0.1.0"

from .inference import brute_force_marginals, evidence_log_probability, exact_conditional_marginals
from .masking import apply_mask, make_scheme, mask_size_histogram
from .model import AdamState, ForwardMode, UmModel, adam_step, init_model, load_model, loss, save_model
from .network import NoisyOrNetwork, generate_random_network, load_canonical_network
from .trainer import TrainingConfig, generate_training_batch, train
from .evaluation import EvaluationReport, build_test_set, evaluate, export_report, linear_fit

__all__ = [
    "AdamState", "EvaluationReport", "ForwardMode", "NoisyOrNetwork", "TrainingConfig", "UmModel",
    "adam_step", "apply_mask", "brute_force_marginals", "build_test_set", "evaluate",
    "evidence_log_probability", "exact_conditional_marginals", "export_report",
    "generate_random_network", "generate_training_batch", "init_model", "linear_fit",
    "load_canonical_network", "load_model", "loss", "make_scheme", "mask_size_histogram",
    "save_model", "train",
]
