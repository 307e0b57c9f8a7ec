"""Multi-segment multi-task fusion network for marketing-call classification, in numpy."""
from .augment import AugmentPolicy, HomophoneDict, expand_dataset
from .config import ALL_TASKS, ModelConfig
from .dataio import CallRecord, SegmentRecord, load_examples, load_manifest, synth_dataset, write_manifest
from .errors import MaskError, MSMTError, NumericError, ShapeError, ValidationError
from .gradcheck import grad_check
from .heads import TASKS, merge_label
from .model import MSMTFN
from .tensor import Tensor, no_grad
from .train import AdamW, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ALL_TASKS", "AdamW", "AugmentPolicy", "CallRecord", "HomophoneDict", "MSMTError", "MSMTFN",
    "MaskError", "ModelConfig", "NumericError", "SegmentRecord", "ShapeError", "TASKS", "Tensor",
    "TrainConfig", "ValidationError", "evaluate", "expand_dataset", "grad_check", "load_examples",
    "load_manifest", "merge_label", "no_grad", "synth_dataset", "train", "write_manifest",
]
