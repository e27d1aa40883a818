"""``psid`` command line: toygen, build, split, train, eval, ablate and summary subcommands."""
# Standard import
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

# Local imports
from ._version import __version__, CHECKPOINT_FORMAT_VERSION, MANIFEST_FORMAT_VERSION
from .ablation import format_ablation_table, run_ablation
from .config import RunConfig
from .dataset import read_manifest, summarize_manifest, validate_manifest
from .errors import ConfigError, DetectorError, ImpairmentError, SchemaError
from .impairments import build_dataset
from .logs import header_lines, log_run_header, setup_logging
from .metrics import evaluate_fold
from .splits import assign_folds, fold_view, read_assignment, write_assignment
from .toy_data import synth_dataset
from .training import train_fold

logger = logging.getLogger(__name__)

# subcommand-specific defaults, reported with 'default' provenance
SUBCOMMAND_DEFAULTS = {
    'toygen': {'impair.profile': 'toy'},
}


def _config_flag(parser, flag: str, key: str, help: str, **kwargs):
    """Flag writing straight into a dotted config key (None when absent)."""
    parser.add_argument(flag, dest=key, default=None, help=help, **kwargs)


def _add_training_flags(parser):
    _config_flag(parser, '--seed', 'train.seed', type=int, help="training seed (shuffling, augmentation, init)")
    _config_flag(parser, '--epochs', 'train.epochs', type=int, help="epochs (default 20)")
    _config_flag(parser, '--batch-size', 'train.batch_size', type=int, help="batch size (default 32)")
    _config_flag(parser, '--lr', 'train.lr0', type=float, help="initial Adam learning rate (default 1e-4)")
    _config_flag(parser, '--gamma', 'train.decay_gamma', type=float,
                 help="exponential decay factor per epoch (default 0.9)")
    _config_flag(parser, '--smoothing', 'train.label_smoothing', type=float,
                 help="label smoothing epsilon (default 0.05)")
    _config_flag(parser, '--no-balanced-sampling', 'train.balanced_sampling', action='store_const', const=False,
                 help="plain shuffling instead of class-balanced sampling")
    _config_flag(parser, '--model-profile', 'model.profile', choices=['base', 'toy', 'tiny'],
                 help="backbone size (default base)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='psid', description="Synthetic image detection: impairment chain, hybrid cross-validation, "
                                 "ConvNeXt detector with FSR stem and unseen-fake class, ablation harness.")
    parser.add_argument('--version', action='version',
                        version=f"psid {__version__} (manifest format {MANIFEST_FORMAT_VERSION}, "
                                f"checkpoint format {CHECKPOINT_FORMAT_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help="YAML file of dotted config keys (flags take precedence)")
    _config_flag(common, '--log-level', 'run.log_level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                 help="logging level (default INFO or $PSID_LOG_LEVEL)")
    _config_flag(common, '--workers', 'run.workers', type=int, help="worker processes (default $PSID_WORKERS or 1)")
    _config_flag(common, '--progress', 'run.progress', action='store_true', help="show progress bars")
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')

    toygen = subparsers.add_parser('toygen', parents=[common], help="generate a procedural toy dataset")
    toygen.add_argument('--out', required=True, help="output directory")
    _config_flag(toygen, '--generators', 'toy.n_generators', type=int, help="pseudo-generators (default 7)")
    _config_flag(toygen, '--seen', 'toy.n_seen', type=int, help="seen generators (default 5)")
    _config_flag(toygen, '--per-class', 'toy.images_per_class', type=int, help="images per class (default 100)")
    _config_flag(toygen, '--size', 'toy.image_size', type=int, help="image side (default 64)")
    _config_flag(toygen, '--seed', 'toy.seed', type=int, help="dataset seed (default 11)")
    _config_flag(toygen, '--amplitude', 'toy.amplitude', type=float,
                 help="artifact amplitude in grey levels, 0 for a negative control (default 8)")
    _config_flag(toygen, '--folds', 'toy.n_folds', type=int, help="folds the dataset is meant for (default 2)")
    toygen.add_argument('--impair', action='store_true',
                        help="pass the images through the impairment chain (toy profile) into OUT, "
                             "raw images go to OUT/raw")
    toygen.set_defaults(func=cmd_toygen)

    build = subparsers.add_parser('build', parents=[common], help="apply the impairment chain to a manifest")
    build.add_argument('--manifest', required=True, help="input manifest")
    build.add_argument('--out', required=True, help="output directory")
    _config_flag(build, '--profile', 'impair.profile', choices=['standard', 'toy'], help="chain profile (default standard)")
    _config_flag(build, '--seed', 'impair.master_seed', type=int, help="master seed (default 0)")
    _config_flag(build, '--ratio', 'impair.crop_ratio', help="crop aspect-ratio floor r (default 5/8)")
    _config_flag(build, '--crop-min', 'impair.crop_min', type=int, help="minimum crop side (default 160)")
    _config_flag(build, '--crop-max', 'impair.crop_max', type=int, help="maximum crop side (default 2048)")
    _config_flag(build, '--target', 'impair.target_size', type=int, help="output side (default 200)")
    _config_flag(build, '--qmin', 'impair.q_min', type=int, help="lowest JPEG quality (default 65)")
    _config_flag(build, '--qmax', 'impair.q_max', type=int, help="highest JPEG quality (default 100)")
    build.set_defaults(func=cmd_build)

    split = subparsers.add_parser('split', parents=[common], help="hybrid cross-validation fold assignment")
    split.add_argument('--manifest', required=True, help="input manifest")
    split.add_argument('--out', required=True, help="assignment file")
    _config_flag(split, '--folds', 'split.n_folds', type=int, help="number of folds (default 4)")
    _config_flag(split, '--seed', 'split.seed', type=int, help="shuffling seed (default 0)")
    split.set_defaults(func=cmd_split)

    train = subparsers.add_parser('train', parents=[common], help="train one fold")
    train.add_argument('--manifest', required=True, help="manifest of the impaired dataset")
    train.add_argument('--assignment', required=True, help="assignment file")
    train.add_argument('--fold', required=True, type=int, help="test fold (trained on the others)")
    train.add_argument('--out', required=True, help="checkpoint directory")
    train.add_argument('--pretrained', default=None, help="named-tensor archive loaded before training (head excluded)")
    _config_flag(train, '--mode', 'model.head_mode', choices=['binary', 'multi'], help="head (default multi)")
    _config_flag(train, '--fsr', 'model.fsr', action='store_true', help="filter stride reduction (stem stride 4 -> 2)")
    _config_flag(train, '--uf', 'train.use_uf', action='store_true', help="train the unseen-fake class")
    _add_training_flags(train)
    train.set_defaults(func=cmd_train)

    evaluate = subparsers.add_parser('eval', parents=[common], help="evaluate a checkpoint on its test fold")
    evaluate.add_argument('--ckpt', required=True, help="checkpoint file")
    evaluate.add_argument('--manifest', required=True, help="manifest of the impaired dataset")
    evaluate.add_argument('--assignment', required=True, help="assignment file")
    evaluate.add_argument('--fold', required=True, type=int, help="test fold")
    evaluate.add_argument('--report', required=True, help="text report; <stem>.csv and <stem>-predictions.csv beside it")
    _config_flag(evaluate, '--batch-size', 'train.batch_size', type=int, help="inference batch size (default 32)")
    evaluate.set_defaults(func=cmd_eval)

    ablate = subparsers.add_parser('ablate', parents=[common], help="six-configuration ablation over all folds")
    ablate.add_argument('--manifest', required=True, help="manifest of the impaired dataset")
    ablate.add_argument('--assignment', required=True, help="assignment file")
    ablate.add_argument('--out', required=True, help="output directory")
    _add_training_flags(ablate)
    ablate.set_defaults(func=cmd_ablate)

    summary = subparsers.add_parser('summary', parents=[common], help="composition table of a manifest")
    summary.add_argument('--manifest', required=True, help="manifest")
    summary.add_argument('--out', default=None, help="also write the table as CSV")
    summary.set_defaults(func=cmd_summary)
    return parser


def parse_cli(argv: List[str], parser: argparse.ArgumentParser = None) -> Tuple[str, RunConfig, argparse.Namespace]:
    """Parse a command line.

    Returns
    -------
    subcommand : str
        The subcommand name.
    run_config : RunConfig
        Defaults overridden by ``--config`` then by flags.
    args : argparse.Namespace
        Non-configuration arguments (paths, fold).

    """
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a subcommand is required")
    flags = {key: value for key, value in vars(args).items() if '.' in key}
    run_config = RunConfig.from_sources(args.config, flags, SUBCOMMAND_DEFAULTS.get(args.command))
    return args.command, run_config, args


def _validated(manifest):
    taxonomy, entries = read_manifest(manifest)
    violations = validate_manifest(entries, taxonomy)
    if violations:
        shown = "; ".join(f"{v.entry_id}: {v.rule}" for v in violations[:5])
        raise SchemaError(f"{len(violations)} manifest violation(s): {shown}")
    return taxonomy, entries


def _built(result):
    if not result.entries:
        raise ImpairmentError(f"no entry written, all {len(result.skipped)} skipped "
                              f"(see {result.manifest_path.parent})", code="nothing-written")
    return result


def cmd_toygen(args, run_config: RunConfig, header: List[str]):
    spec = run_config.toy_spec()
    workers, progress = run_config['run.workers'], run_config['run.progress']
    out = Path(args.out)
    if not args.impair:
        manifest = synth_dataset(spec, out, workers, header, progress)
    else:
        impair_cfg = run_config.impairment_config()
        if spec.image_size < impair_cfg.crop_min:
            raise ConfigError(f"{spec.image_size} px toy images are smaller than the minimum crop "
                              f"({impair_cfg.crop_min} px)", field='toy.image_size')
        raw = synth_dataset(spec, out / 'raw', workers, header, progress)
        manifest = _built(build_dataset(raw, impair_cfg, out, workers, header, progress)).manifest_path
    logger.info("toy manifest written to %s", manifest)


def cmd_build(args, run_config: RunConfig, header: List[str]):
    result = _built(build_dataset(args.manifest, run_config.impairment_config(), args.out,
                                  run_config['run.workers'], header, run_config['run.progress']))
    logger.info("manifest written to %s (%d entries, %d skipped)", result.manifest_path,
                len(result.entries), len(result.skipped))


def cmd_split(args, run_config: RunConfig, header: List[str]):
    cfg = run_config.split_config()
    taxonomy, entries = _validated(args.manifest)
    assignment = assign_folds(entries, taxonomy, cfg.n_folds, cfg.seed)
    write_assignment(assignment, args.out, header)


def cmd_train(args, run_config: RunConfig, header: List[str]):
    taxonomy, entries = _validated(args.manifest)
    train, _ = fold_view(entries, read_assignment(args.assignment), args.fold)
    model_cfg = run_config.model_config(taxonomy).with_head(taxonomy, run_config['model.head_mode'])
    result = train_fold(train, taxonomy, model_cfg, run_config.train_config(), args.fold, Path(args.manifest).parent,
                        use_uf=run_config['train.use_uf'], out_dir=args.out, comments=header,
                        pretrained=args.pretrained, progress=True)
    logger.info("checkpoint written to %s", result.checkpoint_path)


def cmd_eval(args, run_config: RunConfig, header: List[str]):
    taxonomy, entries = _validated(args.manifest)
    _, test = fold_view(entries, read_assignment(args.assignment), args.fold)
    report = evaluate_fold(args.ckpt, test, taxonomy, Path(args.manifest).parent, fold=args.fold,
                           batch_size=run_config['train.batch_size'])
    report.write(args.report, header)
    print(report.to_text(), end="")


def cmd_ablate(args, run_config: RunConfig, header: List[str]):
    taxonomy, _ = _validated(args.manifest)
    table = run_ablation(args.manifest, read_assignment(args.assignment), run_config.model_config(taxonomy),
                         run_config.train_config(), out_dir=args.out, comments=header)
    print(format_ablation_table(table), end="")
    if (table['status'] != 'ok').any():
        raise DetectorError(f"{int((table['status'] != 'ok').sum())} ablation row(s) failed", code="row-failed")


def cmd_summary(args, run_config: RunConfig, header: List[str]):
    taxonomy, entries = read_manifest(args.manifest)
    table = summarize_manifest(entries, taxonomy)
    print(table.to_string(index=False))
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write("".join(line + "\n" for line in header))
            table.to_csv(f, index=False)


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns 0 on success, 1 on runtime failure and 2 on usage errors."""
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        subcommand, run_config, args = parse_cli(argv, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except ConfigError as err:
        print(f"psid: error: {err}", file=sys.stderr)
        return 2

    setup_logging(run_config['run.log_level'])
    log_run_header(logger, subcommand, run_config)
    header = header_lines(subcommand, run_config)
    try:
        args.func(args, run_config, header)
    except ConfigError as err:
        print(f"psid: error: {err}", file=sys.stderr)
        return 2
    except (DetectorError, OSError) as err:
        logger.error("%s failed: %s", subcommand, err)
        print(f"psid: {subcommand} failed: {err}", file=sys.stderr)
        return 1
    return 0
