#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Toy walk-through: forge a dataset, impair it, split it, run the six-row ablation and compare
with the non-learned spectral baseline.

Run cell by cell in an IDE, or as a script to get the plots at the end.
"""
# Standard import
import logging
from pathlib import Path

# Third party imports
import numpy as np
import matplotlib.pyplot as plt

# Local imports
import python_synthetic_image_detector as psid
from python_synthetic_image_detector.impairments import load_image
from python_synthetic_image_detector.logs import setup_logging
from python_synthetic_image_detector.metrics import plot_confusion_matrix
from python_synthetic_image_detector.toy_data import plot_spectrum
from python_synthetic_image_detector.training import plot_training_curves, read_training_log

OUT = Path('./toy_run')
WORKERS = 4


def spectral_baseline(manifest: Path, spec: psid.ToySpec) -> float:
    """Binary balanced accuracy of the spectral peak classifier on a whole manifest."""
    taxonomy, entries = psid.read_manifest(manifest)
    images = [load_image(manifest.parent / e.path) for e in entries]
    truth = np.array([int(e.class_index != taxonomy.real_index) for e in entries])
    predicted = psid.spectral_peak_classifier(images, spec.artifacts())
    return psid.balanced_accuracy(truth, predicted, 2)


# %% forge and impair
setup_logging('INFO')
spec = psid.ToySpec()
raw_manifest = psid.synth_dataset(spec, OUT / 'raw', workers=WORKERS)
impaired = psid.build_dataset(raw_manifest, psid.ImpairmentConfig.from_profile('toy'), OUT / 'impaired',
                              workers=WORKERS)
taxonomy, entries = psid.read_manifest(impaired.manifest_path)
print(psid.summarize_manifest(entries, taxonomy).to_string(index=False))

# %% spectral baseline, before and after the impairment chain
print(f"spectral baseline on raw images:      {spectral_baseline(raw_manifest, spec):.3f}")
print(f"spectral baseline on impaired images: {spectral_baseline(impaired.manifest_path, spec):.3f}")

# %% hybrid split and ablation
assignment = psid.assign_folds(entries, taxonomy, n_folds=spec.n_folds, seed=0)
train_cfg = psid.TrainConfig(epochs=10, lr0=1e-3, threads=1)
table = psid.run_ablation(impaired.manifest_path, assignment, psid.ModelConfig.toy(), train_cfg,
                          out_dir=OUT / 'ablation')
print(psid.format_ablation_table(table))

# ------------------- MAIN ------------------- #
if __name__ == "__main__":
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    sample = entries[-1]
    plot_spectrum(load_image(raw_manifest.parent / sample.path), spec.artifacts())

    logs, labels = [], []
    for row in psid.ABLATION_ROWS:
        log_file = OUT / 'ablation' / row.slug / 'train-log-fold0.csv'
        if log_file.exists():
            logs.append(read_training_log(log_file))
            labels.append(row.method)
    plot_training_curves(logs, labels)

    _, test = psid.fold_view(entries, assignment, 0)
    checkpoint = OUT / 'ablation' / psid.ABLATION_ROWS[-1].slug / 'ckpt-fold0.pt'
    report = psid.evaluate_fold(checkpoint, test, taxonomy, impaired.manifest_path.parent)
    plot_confusion_matrix(report)
    plt.show()
