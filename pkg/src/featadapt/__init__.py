"""Source-free domain adaptation on feature vectors.

A source-trained adapter + classifier stack is adapted to an unlabeled target
domain by re-deriving pseudo-labels each epoch from a handful of trusted
samples and minimizing a temperature-scaled discriminability + diversity
objective. Works on synthetic domain-shift benchmarks or any externally
extracted feature files.
"""

from .data import FeatureDataset, SynthShiftConfig, load_dataset, save_dataset, synth_domain_pair
from .ftsp import FtspConfig, PseudoLabelSet, ftsp_pipeline
from .model import AdapterClassifier, init_model, load_checkpoint, save_checkpoint
from .pipeline import AdaptConfig, RunReport, SourceTrainConfig, adapt, evaluate, pseudo_label_metrics, train_source
from .tsal import TsalConfig, tsal_batch

__version__ = "0.1.0"

__all__ = [
    "AdapterClassifier",
    "AdaptConfig",
    "FeatureDataset",
    "FtspConfig",
    "PseudoLabelSet",
    "RunReport",
    "SourceTrainConfig",
    "SynthShiftConfig",
    "TsalConfig",
    "adapt",
    "evaluate",
    "ftsp_pipeline",
    "init_model",
    "load_checkpoint",
    "load_dataset",
    "pseudo_label_metrics",
    "save_checkpoint",
    "save_dataset",
    "synth_domain_pair",
    "train_source",
    "tsal_batch",
    "__version__",
]
