"""Configuration layering and the psid command line."""
import logging
from fractions import Fraction

import pandas as pd
import pytest

from python_synthetic_image_detector import dataset, models, splits
from python_synthetic_image_detector.cli import main, parse_cli
from python_synthetic_image_detector.config import RunConfig
from python_synthetic_image_detector.errors import ConfigError
from python_synthetic_image_detector.logs import header_lines
from python_synthetic_image_detector.toy_data import ToySpec


def write_yaml(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_flag_beats_file_beats_default(tmp_path):
    config = write_yaml(tmp_path / "run.yaml", "impair:\n  q_max: 95\n  q_min: 70\n")
    _, run_config, args = parse_cli(['build', '--manifest', 'm.tsv', '--out', 'o', '--config', config,
                                     '--qmax', '90'])
    assert run_config['impair.q_max'] == 90 and run_config.origin('impair.q_max') == 'flag'
    assert run_config['impair.q_min'] == 70 and run_config.origin('impair.q_min') == 'file'
    assert run_config.origin('impair.crop_min') == 'default'
    cfg = run_config.impairment_config()
    assert (cfg.q_min, cfg.q_max, cfg.crop_ratio) == (70, 90, Fraction(5, 8))
    assert args.manifest == 'm.tsv'

    lines = header_lines('build', run_config)
    assert lines[1] == "# command build"
    assert "# impair.q_max = 90 (flag)" in lines
    assert "# impair.q_min = 70 (file)" in lines


def test_profiles_fill_default_keys(tmp_path):
    _, run_config, _ = parse_cli(['build', '--manifest', 'm', '--out', 'o', '--profile', 'toy', '--qmax', '90'])
    cfg = run_config.impairment_config()
    assert (cfg.crop_min, cfg.target_size, cfg.q_max) == (48, 64, 90)
    _, toygen_config, _ = parse_cli(['toygen', '--out', 'o'])
    assert toygen_config['impair.profile'] == 'toy'
    _, train_config, _ = parse_cli(['train', '--manifest', 'm', '--assignment', 'a', '--fold', '0', '--out', 'o',
                                    '--model-profile', 'tiny', '--mode', 'binary', '--fsr'])
    model_cfg = train_config.model_config()
    assert model_cfg.stage_widths == (8, 16, 24, 32)
    assert model_cfg.fsr and model_cfg.stem_stride == 2 and model_cfg.num_classes == 2


def test_invalid_and_unknown_values_name_the_field(tmp_path):
    bad = write_yaml(tmp_path / "bad.yaml", "split:\n  n_folds: many\n")
    with pytest.raises(ConfigError) as info:
        parse_cli(['split', '--manifest', 'm', '--out', 'o', '--config', bad])
    assert info.value.field == 'split.n_folds'
    with pytest.raises(ConfigError) as info:
        RunConfig.from_sources(flags={'train.momentum': 0.9})
    assert info.value.field == 'train.momentum'
    with pytest.raises(ConfigError) as info:
        RunConfig.from_sources(flags={'impair.q_min': 70, 'impair.q_max': 60}).impairment_config()
    assert info.value.field == 'impair.q_min'
    with pytest.raises(ConfigError) as info:
        RunConfig.from_sources(flags={'train.lr0': -1.0}).train_config()
    assert info.value.field == 'train.lr0'


def test_environment_sets_worker_default(monkeypatch):
    monkeypatch.setenv('PSID_WORKERS', '3')
    run_config = RunConfig.from_sources()
    assert run_config['run.workers'] == 3 and run_config.origin('run.workers') == 'env'
    assert "# run.workers = 3 (env)" in header_lines('summary', run_config)
    flagged = RunConfig.from_sources(flags={'run.workers': 2})
    assert flagged['run.workers'] == 2 and flagged.origin('run.workers') == 'flag'
    monkeypatch.delenv('PSID_WORKERS')
    assert RunConfig.from_sources().origin('run.workers') == 'default'


def test_environment_sets_log_level_unless_flagged(monkeypatch, tmp_path):
    root = logging.getLogger()
    previous = root.level
    monkeypatch.setenv('PSID_LOG_LEVEL', 'WARNING')
    missing = str(tmp_path / 'missing.tsv')
    try:
        assert RunConfig.from_sources()['run.log_level'] is None
        assert main(['summary', '--manifest', missing]) == 1
        assert root.level == logging.WARNING
        assert main(['summary', '--manifest', missing, '--log-level', 'DEBUG']) == 1
        assert root.level == logging.DEBUG
        monkeypatch.delenv('PSID_LOG_LEVEL')
        assert main(['summary', '--manifest', missing]) == 1
        assert root.level == logging.INFO
    finally:
        root.setLevel(previous)


def test_multiclass_head_is_sized_from_the_taxonomy():
    taxonomy = ToySpec(n_seen=3).taxonomy()
    run_config = RunConfig.from_sources(flags={'model.profile': 'tiny'})
    assert run_config.model_config(taxonomy).num_classes == taxonomy.n_classes == 5
    binary = RunConfig.from_sources(flags={'model.head_mode': 'binary'})
    assert binary.model_config(taxonomy).num_classes == 2


def test_impaired_toygen_fails_when_images_are_below_the_crop_floor(tmp_path, capsys):
    out = tmp_path / "toy"
    assert main(['toygen', '--out', str(out), '--per-class', '2', '--size', '32', '--impair']) == 2
    assert "toy.image_size" in capsys.readouterr().err
    assert not (out / "manifest.tsv").exists()

    raw = tmp_path / "raw"
    assert main(['toygen', '--out', str(raw), '--per-class', '2', '--size', '32']) == 0
    assert main(['build', '--manifest', str(raw / "manifest.tsv"), '--out', str(tmp_path / "built"),
                 '--profile', 'toy']) == 1
    assert "no entry written" in capsys.readouterr().err


def test_exit_codes(tmp_path, capsys):
    assert main([]) == 2
    assert main(['--version']) == 0
    assert capsys.readouterr().out.startswith("psid ")
    assert main(['train', '--manifest', 'm']) == 2
    unknown = write_yaml(tmp_path / "unknown.yaml", "impair:\n  bogus: 1\n")
    assert main(['summary', '--manifest', 'm', '--config', unknown]) == 2
    assert "impair.bogus" in capsys.readouterr().err
    assert main(['summary', '--manifest', str(tmp_path / 'missing.tsv')]) == 1


def test_pipeline_through_the_command_line(tmp_path, capsys):
    data, folds = tmp_path / "toy", tmp_path / "folds.tsv"
    manifest = data / "manifest.tsv"
    assert main(['toygen', '--out', str(data), '--per-class', '8', '--size', '32']) == 0
    assert manifest.read_text(encoding="utf-8").count("# command toygen") == 1

    assert main(['split', '--manifest', str(manifest), '--out', str(folds), '--folds', '4']) == 1
    assert main(['split', '--manifest', str(manifest), '--out', str(folds), '--folds', '2']) == 0
    assert splits.read_assignment(folds).n_folds == 2

    assert main(['train', '--manifest', str(manifest), '--assignment', str(folds), '--fold', '0',
                 '--out', str(tmp_path / "ckpt"), '--epochs', '1', '--batch-size', '8',
                 '--model-profile', 'tiny', '--fsr', '--uf']) == 0
    checkpoint = tmp_path / "ckpt" / "ckpt-fold0.pt"
    model, _, extra = models.load_checkpoint(checkpoint)
    assert model.cfg.fsr and extra["use_uf"] is True
    assert "# train.use_uf = True (flag)" in extra["header"]

    capsys.readouterr()
    assert main(['eval', '--ckpt', str(checkpoint), '--manifest', str(manifest), '--assignment', str(folds),
                 '--fold', '0', '--report', str(tmp_path / "report.txt")]) == 0
    assert "binary balanced accuracy" in capsys.readouterr().out
    assert (tmp_path / "report.txt").read_text(encoding="utf-8").startswith("# psid ")
    assert (tmp_path / "report-predictions.csv").exists()

    assert main(['summary', '--manifest', str(manifest), '--out', str(tmp_path / "summary.csv")]) == 0
    summary = pd.read_csv(tmp_path / "summary.csv", comment="#")
    taxonomy, entries = dataset.read_manifest(manifest)
    assert summary[summary['group'] == 'class']['count'].sum() == len(entries)
