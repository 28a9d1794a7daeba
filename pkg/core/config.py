"""
Run Configuration
Flat namespaced key=value run settings layered as defaults < config file < CLI flags
"""
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional

from dotenv import dotenv_values

from core.baseline import BaselineConfig
from core.errors import AgriGnnError, ConfigError
from core.graph import GraphConfig
from core.synthetic import GeneratorConfig
from core.trainer import HyperGrid, TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbedConfig:
    layer: int = 3
    perplexity: float = 30.0
    iterations: int = 1000

    def __post_init__(self):
        if self.layer not in (1, 2, 3):
            raise ConfigError(f"embed.layer must be 1, 2 or 3, got {self.layer}")
        if self.perplexity <= 0:
            raise ConfigError(f"embed.perplexity must be > 0, got {self.perplexity}")
        if self.iterations < 1:
            raise ConfigError(f"embed.iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True)
class DataConfig:
    input: Optional[str] = None
    timepoint: Optional[str] = None


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "./outputs"


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataConfig = field(default_factory=DataConfig)
    simulate: GeneratorConfig = field(default_factory=GeneratorConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    grid: HyperGrid = field(default_factory=HyperGrid)

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def out_dir(self) -> str:
        return self.run.out

    @property
    def train_config(self) -> TrainConfig:
        """Training settings with the global seed applied"""
        return replace(self.train, seed=self.run.seed)

    def with_overrides(self, values: Mapping[str, Optional[str]]) -> "RunConfig":
        return apply_settings(self, values)

    def to_lines(self) -> List[str]:
        lines = []
        for key in sorted(CONFIG_KEYS):
            spec = CONFIG_KEYS[key]
            value = getattr(getattr(self, spec.section), spec.attribute)
            lines.append(f"{key}={spec.format(value)}")
        return lines

    def write(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            f.write('\n'.join(self.to_lines()) + '\n')
        logger.info(f"Wrote resolved configuration to {path}")


# ======================================================
# === Value parsers ===
# ======================================================
def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_str(raw: str) -> str:
    return raw.strip()


def _parse_optional_str(raw: str) -> Optional[str]:
    return raw.strip() or None


def _list_of(parse: Callable[[str], object]) -> Callable[[str], tuple]:
    def _parse(raw: str) -> tuple:
        return tuple(parse(part) for part in raw.split(',') if part.strip())
    return _parse


def _format(value) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class KeySpec:
    section: str
    attribute: str
    parse: Callable[[str], object]
    format: Callable[[object], str] = _format


CONFIG_KEYS: Dict[str, KeySpec] = {
    'run.seed': KeySpec('run', 'seed', _parse_int),
    'run.out': KeySpec('run', 'out', _parse_str),
    'data.input': KeySpec('data', 'input', _parse_optional_str),
    'data.timepoint': KeySpec('data', 'timepoint', _parse_optional_str),
    'simulate.plots': KeySpec('simulate', 'plots_per_field', _list_of(_parse_int)),
    'simulate.populations': KeySpec('simulate', 'populations_per_field', _parse_int),
    'simulate.columns': KeySpec('simulate', 'columns_per_field', _parse_int),
    'simulate.noise': KeySpec('simulate', 'noise', _parse_float),
    'simulate.ndvi_weight': KeySpec('simulate', 'ndvi_weight', _parse_float),
    'simulate.timepoints': KeySpec('simulate', 'timepoints', _list_of(_parse_str)),
    'simulate.weather': KeySpec('simulate', 'include_weather', _parse_bool),
    'simulate.band_step': KeySpec('simulate', 'band_step_nm', _parse_int),
    'simulate.anomaly_rate': KeySpec('simulate', 'anomaly_rate', _parse_float),
    'graph.mode': KeySpec('graph', 'mode', _parse_str),
    'graph.percentile': KeySpec('graph', 'percentile', _parse_float),
    'graph.closed': KeySpec('graph', 'closed', _parse_bool),
    'graph.metric': KeySpec('graph', 'metric', _parse_str),
    'model.hidden': KeySpec('train', 'hidden_channels', _parse_int),
    'model.dropout': KeySpec('train', 'dropout_rate', _parse_float),
    'model.final_activation': KeySpec('train', 'final_activation', _parse_str),
    'train.lr': KeySpec('train', 'learning_rate', _parse_float),
    'train.epochs': KeySpec('train', 'epochs', _parse_int),
    'train.split': KeySpec('train', 'split_fraction', _parse_float),
    'train.log_every': KeySpec('train', 'log_every', _parse_int),
    'baseline.k_min': KeySpec('baseline', 'k_min', _parse_int),
    'baseline.k_max': KeySpec('baseline', 'k_max', _parse_int),
    'baseline.folds': KeySpec('baseline', 'folds', _parse_int),
    'embed.layer': KeySpec('embed', 'layer', _parse_int),
    'embed.perplexity': KeySpec('embed', 'perplexity', _parse_float),
    'embed.iterations': KeySpec('embed', 'iterations', _parse_int),
    'grid.lr': KeySpec('grid', 'learning_rates', _list_of(_parse_float)),
    'grid.hidden': KeySpec('grid', 'hidden_channels', _list_of(_parse_int)),
    'grid.dropout': KeySpec('grid', 'dropout_rates', _list_of(_parse_float)),
}


def apply_settings(config: RunConfig, values: Mapping[str, Optional[str]]) -> RunConfig:
    """Overlay raw key=value settings; every section is re-validated"""
    changes: Dict[str, Dict[str, object]] = {}
    for key, raw in values.items():
        spec = CONFIG_KEYS.get(key)
        if spec is None:
            raise ConfigError(f"Unknown configuration key '{key}'")
        if raw is None:
            raise ConfigError(f"Configuration key '{key}' has no value")
        try:
            parsed = spec.parse(raw)
        except ValueError as e:
            raise ConfigError(f"Invalid value for '{key}': {raw!r} ({e})") from e
        changes.setdefault(spec.section, {})[spec.attribute] = parsed

    sections = {}
    for section, updates in changes.items():
        try:
            sections[section] = replace(getattr(config, section), **updates)
        except AgriGnnError as e:
            raise ConfigError(f"Invalid [{section}] settings: {e}") from e
    return replace(config, **sections)


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Optional[str]]] = None) -> RunConfig:
    """Defaults, then the config file (if any), then explicit overrides"""
    config = RunConfig()
    if os.getenv('AGRIGNN_OUT'):
        config = apply_settings(config, {'run.out': os.getenv('AGRIGNN_OUT')})
    path = path or os.getenv('AGRIGNN_CONFIG')
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"Config file not found: {path}")
        logger.info(f"Loading run configuration from {path}")
        config = apply_settings(config, dotenv_values(path))
    if overrides:
        config = apply_settings(config, overrides)
    return config
