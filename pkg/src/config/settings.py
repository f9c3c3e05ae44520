"""
Configuration management for SpectraLink
Loads YAML run configs, substitutes environment variables and validates every section
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..core.ml.fcnn import FcnnConfig
from ..core.ml.training import PhasePlan
from ..core.spectral.noise import NoiseParams
from ..models.dataset_models import SamplingPlan
from ..models.link_models import TransmitterConfig
from ..utils.errors import ConfigError
from ..utils.logger import get_logger

logger = get_logger(__name__)

RESOLVED_CONFIG_NAME = 'resolved_config.yaml'


class SpectraLinkSettings(BaseSettings):
    """Process-level settings, overridable through SPECTRALINK_* environment variables"""
    model_config = SettingsConfigDict(env_prefix='SPECTRALINK_', case_sensitive=False)

    config: str = 'config/config.yaml'
    out: str = 'runs/latest'
    slow_tests: bool = False


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class LoggingSection(_Section):
    level: str = 'INFO'
    format: Literal['console', 'json'] = 'console'
    file: str = 'logs/spectralink.log'
    max_file_size: str = '20MB'
    backup_count: int = Field(3, ge=0)


class GridSection(_Section):
    """default: 3648 points on 400-850 nm; desk: the same range downsampled by 8"""
    kind: Literal['default', 'desk', 'uniform'] = 'default'
    start_nm: float = 400.0
    stop_nm: float = 850.0
    points: int = Field(3648, ge=2)
    downsample_factor: Optional[int] = Field(None, ge=1)


class BandSection(_Section):
    species: str
    peak_nm: float
    peak_eps: float = Field(gt=0)
    width_nm: float = Field(gt=0)


def _default_bands() -> List[BandSection]:
    return [BandSection(species='IC', peak_nm=608.0, peak_eps=20000.0, width_nm=40.0),
            BandSection(species='NR', peak_nm=496.0, peak_eps=12000.0, width_nm=50.0)]


class ExtinctionSection(_Section):
    """Measured profiles from csv, otherwise Gaussian stand-ins from bands"""
    csv: Optional[str] = None
    bands: List[BandSection] = Field(default_factory=_default_bands)


class NoiseSection(NoiseParams):
    model_config = ConfigDict(frozen=True, extra='forbid')

    enabled: bool = True

    def params(self) -> Optional[NoiseParams]:
        if not self.enabled:
            return None
        return NoiseParams(**self.model_dump(exclude={'enabled'}))


class DatasetSection(_Section):
    output: str = 'dataset.spcd'
    export_csv: bool = False
    comparison: bool = True


class CalibrationSection(_Section):
    dataset: Optional[str] = None
    output: str = 'extinction.csv'
    report: str = 'calibration_report.json'


class ModelSection(_Section):
    block_filters: Tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 3
    dilations: Tuple[int, ...] = (1, 2, 4)
    pool_size: int = 2
    dropout_rate: float = 0.5
    target_scale: float = 1e-5
    checkpoint: Optional[str] = None

    def fcnn_config(self, input_length: int, output_dim: int) -> FcnnConfig:
        return FcnnConfig(input_length=input_length, output_dim=output_dim,
                          **self.model_dump(exclude={'checkpoint'}))


class TrainingSection(_Section):
    dataset: Optional[str] = None
    validation_dataset: Optional[str] = None
    train_fraction: float = Field(0.8, gt=0, lt=1)
    learning_rates: Tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    epochs_per_phase: int = Field(200, ge=0)
    steps_per_epoch: int = Field(100, ge=1)
    batch_size: int = Field(10, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_batch_size: int = Field(256, ge=1)
    checkpoint: str = 'model.fcnn'

    def plan(self, seed: int) -> PhasePlan:
        fields = self.model_dump(include=set(PhasePlan.model_fields) - {'seed'})
        return PhasePlan(seed=seed, **fields)


class LinkSection(_Section):
    transmitters: List[TransmitterConfig] = Field(default_factory=lambda: [
        TransmitterConfig(name='TX1', species_index=0, stock_concentration=2.18e-5),
        TransmitterConfig(name='TX2', species_index=1, stock_concentration=1.15e-4),
    ])
    messages: Dict[str, str] = Field(default_factory=lambda: {'TX1': 'H', 'TX2': 'i'})
    message_format: Literal['text', 'bits'] = 'text'
    sampling_period_s: float = Field(10.0, gt=0)
    tau_s: float = Field(0.0, ge=0)
    noise: bool = True
    predictor: Literal['auto', 'model', 'genie'] = 'auto'
    model: Optional[str] = None

    @property
    def uses_model(self) -> bool:
        """auto picks the fCNN whenever a checkpoint is configured"""
        return self.predictor == 'model' or (self.predictor == 'auto' and bool(self.model))

    @model_validator(mode='after')
    def _check_messages(self):
        names = {tx.name for tx in self.transmitters}
        unknown = set(self.messages) - names
        if unknown:
            raise ValueError(f"messages for unknown transmitters {sorted(unknown)}")
        if self.predictor == 'model' and not self.model:
            raise ValueError("link.predictor 'model' needs link.model (a .fcnn checkpoint path)")
        return self


class EvaluationSection(_Section):
    dataset: Optional[str] = None
    model: Optional[str] = None
    blank_replicas: int = Field(99, ge=0)
    theta: float = Field(1e-7, gt=0)
    clean_dataset: Optional[str] = None
    noisy_dataset: Optional[str] = None


class RunConfig(_Section):
    """One run: every section carries its defaults"""
    seed: int = Field(0, ge=0, lt=2 ** 64)
    logging: LoggingSection = Field(default_factory=LoggingSection)
    grid: GridSection = Field(default_factory=GridSection)
    extinction: ExtinctionSection = Field(default_factory=ExtinctionSection)
    path_length_cm: float = Field(0.25, gt=0)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    sampling: SamplingPlan = Field(default_factory=SamplingPlan)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    calibration: CalibrationSection = Field(default_factory=CalibrationSection)
    model: ModelSection = Field(default_factory=ModelSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    link: LinkSection = Field(default_factory=LinkSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)


def load_config_from_file(config_path) -> Dict[str, Any]:
    """Load a YAML mapping; a missing file is an I/O error, bad YAML a config error"""
    config_file = Path(config_path)
    with open(config_file, 'r') as f:
        try:
            config_data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{config_path}: invalid YAML: {e}") from None
    if config_data is None:
        return {}
    if not isinstance(config_data, dict):
        raise ConfigError(f"{config_path}: top level must be a mapping")
    logger.info(f"Loaded configuration from {config_path}")
    return config_data


def substitute_env_vars(config: Dict[str, Any]) -> Dict[str, Any]:
    """Replace '${NAME}' string values with the environment variable NAME"""
    def substitute_value(value):
        if isinstance(value, str) and value.startswith('${') and value.endswith('}'):
            env_var = value[2:-1]
            if env_var not in os.environ:
                raise ConfigError(f"environment variable {env_var} is not set")
            return os.environ[env_var]
        elif isinstance(value, dict):
            return {k: substitute_value(v) for k, v in value.items()}
        elif isinstance(value, list):
            return [substitute_value(item) for item in value]
        else:
            return value

    return {key: substitute_value(value) for key, value in config.items()}


def build_run_config(data: Optional[Dict[str, Any]] = None, seed: Optional[int] = None) -> RunConfig:
    data = substitute_env_vars(dict(data or {}))
    if seed is not None:
        data['seed'] = seed
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from None
    except ValueError as e:
        raise ConfigError(f"invalid configuration: {e}") from None


def load_run_config(config_path=None, seed: Optional[int] = None) -> RunConfig:
    """RunConfig from a YAML file (defaults only when no path is given); seed overrides the file"""
    data = load_config_from_file(config_path) if config_path else {}
    return build_run_config(data, seed)


def dump_resolved_config(config: RunConfig, out_dir) -> Path:
    """Echo the fully resolved configuration into the run directory"""
    path = Path(out_dir) / RESOLVED_CONFIG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        yaml.safe_dump(config.model_dump(mode='json'), f, sort_keys=False)
    return path
