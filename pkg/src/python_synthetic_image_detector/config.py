"""Run configuration: dotted keys merged from defaults, a YAML file and command-line flags."""
# Standard import
import dataclasses
import logging
import os
import re
import typing
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional, Tuple

# Third party imports
import yaml

# Local imports
from .augmentations import AugmentConfig
from .dataset import ClassTaxonomy
from .errors import ConfigError
from .impairments import ImpairmentConfig
from .models import HeadMode, ModelConfig
from .splits import SplitConfig
from .toy_data import ToySpec
from .training import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT, ENV, FILE, FLAG = "default", "env", "file", "flag"

SECTIONS = {
    'impair': ImpairmentConfig,
    'split': SplitConfig,
    'model': ModelConfig,
    'train': TrainConfig,
    'augment': AugmentConfig,
    'toy': ToySpec,
}
# derived from the taxonomy / the FSR switch, or nested sections
EXCLUDED = {'model.num_classes', 'model.in_channels', 'model.stem_stride', 'train.augment'}

MODEL_PROFILES = {'base': ModelConfig, 'toy': ModelConfig.toy, 'tiny': ModelConfig.tiny}
IMPAIR_PROFILES = ('standard', 'toy')


def _section_defaults(prefix: str, cls) -> Dict[str, Tuple[Any, Any]]:
    """``key -> (default value, type hint)`` of every field of a config dataclass."""
    hints = typing.get_type_hints(cls)
    instance = cls()
    out = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key in EXCLUDED:
            continue
        value = getattr(instance, f.name)
        out[key] = (value.value if isinstance(value, Enum) else value, hints[f.name])
    return out


def _schema() -> Dict[str, Tuple[Any, Any]]:
    schema = {}
    for prefix, cls in SECTIONS.items():
        schema.update(_section_defaults(prefix, cls))
    schema['impair.profile'] = ('standard', str)
    schema['model.profile'] = ('base', str)
    schema['train.use_uf'] = (False, bool)
    schema['run.workers'] = (1, int)
    schema['run.log_level'] = (None, Optional[str])
    schema['run.progress'] = (False, bool)
    return schema


SCHEMA = _schema()


def _coerce(value, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None or (isinstance(value, str) and value.lower() in ('none', 'null', '')):
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if origin in (tuple, Tuple):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(',') if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", field=key)
        item_hint = args[0] if args else str
        return tuple(_coerce(v, item_hint, key) for v in value)
    try:
        if hint is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ('1', 'true', 'yes', 'on'):
                return True
            if text in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(value)
        if hint is int:
            if isinstance(value, bool):
                raise ValueError(value)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(value)
                return int(value)
            return int(value)
        if hint is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if hint is Fraction:
            return Fraction(str(value)).limit_denominator(10**6)
        if isinstance(hint, type) and issubclass(hint, Enum):
            return hint(value).value
        if hint is str:
            return str(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(f"invalid value {value!r} for a {getattr(hint, '__name__', hint)}", field=key) from None
    return value


def flatten(mapping: Mapping, prefix: str = "") -> Dict[str, Any]:
    """Flatten nested mappings to dotted keys."""
    out = {}
    for key, value in mapping.items():
        key = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def load_config_file(path) -> Dict[str, Any]:
    """Read a YAML file holding a (possibly nested) mapping of dotted keys."""
    path = Path(path)
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"{path} is not valid YAML: {err}") from None
    if not isinstance(payload, Mapping):
        raise ConfigError(f"{path} must hold a mapping of config keys")
    return flatten(payload)


def _failed_field(prefix: str, names, message: str) -> str:
    """Dotted key of the first field named in a validation message, else the section itself."""
    hits = []
    for name in names:
        match = re.search(rf"\b{re.escape(name)}\b", message)
        if match:
            hits.append((match.start(), name))
    return f"{prefix}.{min(hits)[1]}" if hits else prefix


@dataclasses.dataclass
class RunConfig:
    """Effective configuration of one run, every value with its provenance.

    Parameters
    ----------
    values : dict
        Dotted key -> value.
    provenance : dict
        Dotted key -> 'default', 'env' (``PSID_WORKERS``), 'file' or 'flag'.
    """

    values: Dict[str, Any]
    provenance: Dict[str, str]

    @classmethod
    def from_sources(cls, file=None, flags: Mapping[str, Any] = None,
                     defaults: Mapping[str, Any] = None) -> "RunConfig":
        """Merge defaults, then the config file, then the flags.

        Parameters
        ----------
        file : str or Path, optional
            YAML config file. The default is None.
        flags : mapping, optional
            Dotted key -> value from the command line; None values are ignored.
        defaults : mapping, optional
            Subcommand-specific default overrides (still reported as 'default').

        Returns
        -------
        RunConfig
            The merged configuration; profile keys fill every section value left at default.

        """
        values = {key: default for key, (default, _) in SCHEMA.items()}
        provenance = {key: DEFAULT for key in SCHEMA}
        workers = os.environ.get("PSID_WORKERS")
        if workers:
            values['run.workers'] = _coerce(workers, int, 'run.workers')
            provenance['run.workers'] = ENV
        for layer, origin in ((defaults or {}, DEFAULT),
                              (load_config_file(file) if file is not None else {}, FILE),
                              (flags or {}, FLAG)):
            for key, value in layer.items():
                if value is None:
                    continue
                if key not in SCHEMA:
                    raise ConfigError("unknown configuration key", field=key)
                values[key] = _coerce(value, SCHEMA[key][1], key)
                provenance[key] = origin
        config = cls(values, provenance)
        config._apply_profiles()
        return config

    def _apply_profiles(self):
        impair_profile = self.values['impair.profile']
        if impair_profile not in IMPAIR_PROFILES:
            raise ConfigError(f"unknown profile '{impair_profile}', expected one of {IMPAIR_PROFILES}",
                              field='impair.profile')
        model_profile = self.values['model.profile']
        if model_profile not in MODEL_PROFILES:
            raise ConfigError(f"unknown profile '{model_profile}', expected one of {sorted(MODEL_PROFILES)}",
                              field='model.profile')
        for prefix, instance in (('impair', ImpairmentConfig.from_profile(impair_profile)),
                                 ('model', MODEL_PROFILES[model_profile]())):
            for key in self.values:
                name = key[len(prefix) + 1:]
                if key.startswith(prefix + ".") and self.provenance[key] == DEFAULT and hasattr(instance, name) \
                        and key not in EXCLUDED:
                    value = getattr(instance, name)
                    self.values[key] = value.value if isinstance(value, Enum) else value

    def __getitem__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError("unknown configuration key", field=key) from None

    def origin(self, key: str) -> str:
        return self.provenance[key]

    def items_with_provenance(self) -> Iterator[Tuple[str, Any, str]]:
        for key in sorted(self.values):
            yield key, self.values[key], self.provenance[key]

    def section(self, prefix: str) -> Dict[str, Any]:
        start = prefix + "."
        return {key[len(start):]: value for key, value in self.values.items() if key.startswith(start)}

    def _build(self, prefix: str, factory, drop=(), **extra):
        kwargs = {k: v for k, v in self.section(prefix).items() if k not in drop}
        kwargs.update(extra)
        try:
            return factory(**kwargs)
        except ValueError as err:
            raise ConfigError(str(err), field=_failed_field(prefix, kwargs, str(err))) from None

    def impairment_config(self) -> ImpairmentConfig:
        return self._build('impair', ImpairmentConfig, drop=('profile',))

    def split_config(self) -> SplitConfig:
        return self._build('split', SplitConfig)

    def model_config(self, taxonomy: ClassTaxonomy = None) -> ModelConfig:
        """Backbone and head settings; a multi-class head is sized from ``taxonomy`` when given."""
        extra = {}
        if HeadMode(self.values['model.head_mode']) is HeadMode.BINARY:
            extra['num_classes'] = 2
        elif taxonomy is not None:
            extra['num_classes'] = taxonomy.n_classes
        return self._build('model', ModelConfig, drop=('profile',), **extra)

    def augment_config(self) -> AugmentConfig:
        return self._build('augment', AugmentConfig)

    def train_config(self) -> TrainConfig:
        return self._build('train', TrainConfig, drop=('use_uf',), augment=self.augment_config())

    def toy_spec(self) -> ToySpec:
        return self._build('toy', ToySpec)
