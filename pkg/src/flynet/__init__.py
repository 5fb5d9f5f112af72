"""FlyNet: encoder-decoder segmentation of beating fly hearts, from
scratch on numpy, with cardiac function analysis on the predicted masks.
"""

from .cardio import (CardiacReport, Trace, area_trace, cardiac_params,
                     diameter_trace, largest_component, mask_area,
                     mask_diameter, smooth_values, trace_extrema)
from .checkpoint import (BadMagicError, CheckpointError, LengthMismatchError,
                         TruncatedError, VersionError, load_checkpoint,
                         save_checkpoint)
from .data import (AUGMENT_FACTOR, FlyDataset, FoldPlan, FramePair,
                   ManifestError, augment, kfold_split, load_corpus,
                   save_corpus)
from .gradcheck import CheckResult, run_suite
from .metrics import binarize, hard_iou, soft_iou_loss
from .network import (NetworkSpec, backward, build_fcn_baseline, build_flynet,
                      forward, parameter_count)
from .optim import AdamHyper, AdamState, adam_init, adam_step
from .pgm import PgmError, read_pgm, write_pgm
from .synth import SynthParams, make_corpus, synth_generate
from .tensor import Precision, ShapeError
from .training import (Checkpoint, CrossValResult, TrainConfig, TrainError,
                       TrainHistory, cross_validate, early_stop_check,
                       evaluate_iou, predict_probs, train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
