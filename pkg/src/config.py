"""
Configuration management for the Dirichlet fusion filter.

Settings are layered: dataclass defaults, then FUSION_* environment
variables (a project .env file is loaded when present), then a
key = value config file, then command-line flags.
"""

import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError, FusionError
from .filter import FilterConfig
from .fusion import ClassifierProfile, SchedulePolicy
from .specfn import SpecFnMode
from .streamio import StreamFormat

logger = logging.getLogger(__name__)

# Load from .env file in project root
env_path = Path(__file__).parent.parent / '.env'
if env_path.exists():
    load_dotenv(env_path)

ENV_PREFIX = "FUSION_"


def parse_beta_map(text: str) -> dict[str, float]:
    """Parse 'id=beta,id=beta' into an ordered mapping."""
    beta_map = {}
    for item in text.split(','):
        if not item.strip():
            continue
        name, sep, value = item.partition('=')
        if not sep or not name.strip():
            raise ConfigError(f"beta map entries must look like id=beta, got '{item.strip()}'")
        try:
            beta_map[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"invalid beta for '{name.strip()}': '{value.strip()}'")
    if not beta_map:
        raise ConfigError("beta map is empty")
    return beta_map


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError(f"expected a boolean, got '{text}'")


def _default_beta_map() -> dict[str, float]:
    return {"strong": 1.0, "weak": 0.5}


@dataclass
class Config:
    """Filter, schedule and I/O settings shared by every command."""

    # Filter
    gamma: float = 0.95
    iters: int = 20
    mm_tol: float = 1e-8
    invert_tol: float = 1e-10
    init_eta: float = 1.0
    clamp_eps: float = 1e-6
    specfn: str = "exact"

    # Classifier schedule
    beta_map: dict = field(default_factory=_default_beta_map)
    strong_period: float = 60.0
    weak_period: float = 5.0

    # Simple baseline window
    window: int = 5

    seed: int = 0
    format: Optional[str] = None
    lenient: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.strong_period <= 0 or self.weak_period <= 0:
            raise ConfigError("classifier periods must be positive")
        if self.format is not None:
            try:
                self.format = StreamFormat.parse(self.format).value
            except FusionError as e:
                raise ConfigError(str(e))
        # Fail early on invalid filter or schedule settings
        self.filter_config()
        self.schedule_policy()

    def filter_config(self) -> FilterConfig:
        try:
            return FilterConfig(
                gamma=self.gamma,
                max_mm_iters=self.iters,
                mm_tol=self.mm_tol,
                invert_tol=self.invert_tol,
                init_eta=self.init_eta,
                specfn_mode=SpecFnMode.parse(self.specfn),
                clamp_eps=self.clamp_eps,
            )
        except FusionError as e:
            raise ConfigError(f"invalid filter settings: {e}")

    def schedule_policy(self) -> SchedulePolicy:
        """
        Profiles ordered by decreasing beta. The highest-weight classifier is
        called every strong_period, the others every weak_period.
        """
        ranked = sorted(self.beta_map.items(), key=lambda item: -item[1])
        try:
            profiles = [
                ClassifierProfile(name, beta, self.strong_period if i == 0 and len(ranked) > 1 else self.weak_period)
                for i, (name, beta) in enumerate(ranked)
            ]
            return SchedulePolicy(tuple(profiles))
        except FusionError as e:
            raise ConfigError(f"invalid classifier schedule: {e}")

    def stream_format(self) -> Optional[StreamFormat]:
        return StreamFormat(self.format) if self.format else None


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(name: str, raw: Optional[str]):
    kind = _FIELD_TYPES[name]
    if name == 'beta_map':
        return parse_beta_map(raw or '')
    if kind is bool:
        return True if raw is None else _parse_bool(raw)
    if raw is None:
        raise ConfigError(f"setting '{name}' needs a value")
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for '{name}': '{raw}'")
    return raw.strip()


def _normalize_key(key: str) -> str:
    return key.strip().lower().replace('-', '_')


def read_config_file(path: Path) -> dict:
    """Typed settings from a key = value file."""
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for key, raw in dotenv_values(path).items():
        name = _normalize_key(key)
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown setting '{key}' in {path}")
        values[name] = _convert(name, raw)
    return values


def load_config(
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> Config:
    """
    Build the configuration from environment, config file and overrides.

    Args:
        config_file: Optional key = value file
        overrides: Already-typed values (command-line flags); None entries are ignored
        environ: Environment mapping, os.environ by default

    Raises:
        ConfigError: unknown keys or invalid values
    """
    environ = os.environ if environ is None else environ
    values = {}

    for name in _FIELD_TYPES:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = _convert(name, raw)

    if config_file is not None:
        values.update(read_config_file(Path(config_file)))

    for key, value in (overrides or {}).items():
        name = _normalize_key(key)
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown setting '{key}'")
        if value is not None:
            values[name] = value

    config = Config(**values)
    logger.debug(f"Loaded configuration: {config}")
    return config
