from ._version import __version__
from .dataset import (ClassTaxonomy, GeneratorInfo, ManifestEntry, make_taxonomy, read_manifest,
                      summarize_manifest, validate_manifest, write_manifest)
from .impairments import ImpairmentConfig, apply_impairment, build_dataset, sample_crop
from .splits import assign_folds, fold_view, read_assignment, write_assignment
from .models import ModelConfig, build_model, forward, stem_output_shape
from .augmentations import AugmentConfig, augment
from .training import TrainConfig, lr_at, smoothed_ce, train_fold
from .metrics import EvalReport, balanced_accuracy, evaluate_fold, to_binary
from .ablation import ABLATION_ROWS, format_ablation_table, run_ablation
from .toy_data import ToySpec, artifact_energy, spectral_peak_classifier, synth_dataset
