"""Logging setup and the reproducibility header written by every CLI run."""
# Standard import
import logging
import os

# Local imports
from ._version import __version__, MANIFEST_FORMAT_VERSION, CHECKPOINT_FORMAT_VERSION

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = None, log_file: str = None) -> None:
    """Configure the root logger once for a CLI run.

    Parameters
    ----------
    level : str, optional
        Logging level name. The default is the ``PSID_LOG_LEVEL`` environment variable or INFO.
    log_file : str, optional
        Also write the log to this file. The default is None.

    Returns
    -------
    None.

    """
    if level is None:
        level = os.environ.get("PSID_LOG_LEVEL", "INFO")
    handlers = [logging.StreamHandler()]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, handlers=handlers, force=True)


def header_lines(subcommand: str, run_config=None, extra: dict = None) -> list:
    """Render the reproducibility header as ``#``-prefixed lines.

    The header holds the tool and format versions, the subcommand and every effective
    configuration value with its provenance. It never holds timestamps or host names so that
    re-running a command produces byte-identical artifacts.
    """
    lines = [f"# psid {__version__} manifest-format {MANIFEST_FORMAT_VERSION} "
             f"checkpoint-format {CHECKPOINT_FORMAT_VERSION}",
             f"# command {subcommand}"]
    if run_config is not None:
        for key, value, origin in run_config.items_with_provenance():
            lines.append(f"# {key} = {value!r} ({origin})")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"# {key} = {value!r}")
    return lines


def log_run_header(logger: logging.Logger, subcommand: str, run_config=None, extra: dict = None) -> None:
    for line in header_lines(subcommand, run_config, extra):
        logger.info(line[2:])
