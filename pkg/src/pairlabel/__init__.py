"""Semi-supervised cross-modal label prediction.

Paired two-modality data, a small per-modality encoder/decoder network
trained with classification, center, entropy and reconstruction losses,
and an iterative pseudo-labeling loop that grows the labeled set with
confidence- and distance-verified predictions. Ships with a retrieval
evaluation harness, an HTTP service and a CLI.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, parse_config
from .data import PairedDataset, SplitSpec, load_dataset, synth_generate
from .experiment import run_experiment
from .losses import LossWeights
from .selftrain import LpfConfig, run_lpf

__all__ = [
    "ExperimentConfig", "LossWeights", "LpfConfig", "PairedDataset",
    "SplitSpec", "load_config", "load_dataset", "parse_config",
    "run_experiment", "run_lpf", "synth_generate", "__version__",
]
