"""
Molecular link models
Transmitter settings, pump flow traces, received concentration series and decoding results
"""

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .spectral_models import ExtinctionProfileSet, PathLength
from ..core.spectral.noise import NoiseParams
from ..utils.errors import UsageError

BCSK_FLOWS = ((0.0, 40.0), (40.0, 0.0))
QCSK_FLOWS = ((0.0, 60.0), (20.0, 40.0), (40.0, 20.0), (60.0, 0.0))
BITS_PER_SYMBOL = {'BCSK': 1, 'QCSK': 2}


class TransmitterConfig(BaseModel):
    """One transmitter: an information pump and a solvent pump joined at a T-junction"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    name: str = 'TX1'
    species_index: int = Field(0, ge=0)
    stock_concentration: float = Field(2.18e-5, ge=0)
    bit_interval_s: float = Field(900.0, gt=0)
    duty_cycle: float = Field(1.0, gt=0, le=1)
    start_offset_s: float = Field(0.0, ge=0)
    scheme: Literal['BCSK', 'QCSK'] = 'BCSK'
    level_flow_table: Optional[Tuple[Tuple[float, float], ...]] = None

    @model_validator(mode='after')
    def _check_flows(self):
        table = self.flows
        if len(table) != 2 ** self.bits_per_symbol:
            raise ValueError(f"{self.scheme} needs {2 ** self.bits_per_symbol} flow levels, got {len(table)}")
        if any(q < 0 for row in table for q in row):
            raise ValueError("flow rates must be nonnegative")
        totals = {round(info + solvent, 9) for info, solvent in table}
        if len(totals) != 1:
            raise ValueError(f"{self.name}: total flow must be the same for every level, got {sorted(totals)}")
        if self.total_flow <= 0:
            raise ValueError(f"{self.name}: total flow must be positive")
        return self

    @property
    def bits_per_symbol(self) -> int:
        return BITS_PER_SYMBOL[self.scheme]

    @property
    def flows(self) -> Tuple[Tuple[float, float], ...]:
        """(info, solvent) in uL/min per level"""
        if self.level_flow_table is not None:
            return tuple(tuple(float(q) for q in row) for row in self.level_flow_table)
        return BCSK_FLOWS if self.scheme == 'BCSK' else QCSK_FLOWS

    @property
    def total_flow(self) -> float:
        info, solvent = self.flows[0]
        return info + solvent


@dataclass
class FlowTrace:
    """Piecewise-constant pump rates in uL/min; segment k spans breakpoints[k]..breakpoints[k+1] (s)"""
    breakpoints: np.ndarray
    info: np.ndarray
    solvent: np.ndarray

    @classmethod
    def empty(cls) -> "FlowTrace":
        return cls(np.zeros(1), np.zeros(0), np.zeros(0))

    @property
    def horizon_s(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_segments(self) -> int:
        return int(self.info.size)

    def rates_at(self, times) -> Tuple[np.ndarray, np.ndarray]:
        """Right-continuous (info, solvent) rates at the given times"""
        index = np.clip(np.searchsorted(self.breakpoints, times, side='right') - 1, 0, self.n_segments - 1)
        return self.info[index], self.solvent[index]


@dataclass
class ConcentrationSeries:
    """Piecewise-constant per-species concentration (mol/L) at the receiver"""
    breakpoints: np.ndarray
    values: np.ndarray

    @property
    def horizon_s(self) -> float:
        return float(self.breakpoints[-1])

    def at(self, times) -> np.ndarray:
        index = np.clip(np.searchsorted(self.breakpoints, times, side='right') - 1, 0, self.values.shape[0] - 1)
        return self.values[index]


@dataclass
class ObservedSeries:
    """Spectra sampled at the receiver with the concentrations that produced them"""
    times_s: np.ndarray
    absorbances: np.ndarray
    true_concentrations: np.ndarray
    sampling_period_s: float

    @property
    def horizon_s(self) -> float:
        return float(self.times_s.size * self.sampling_period_s)


@dataclass
class LinkConfig:
    transmitters: List[TransmitterConfig]
    eps: ExtinctionProfileSet
    path_length: PathLength = field(default_factory=PathLength)
    sampling_period_s: float = 10.0
    tau_s: float = 0.0
    noise: Optional[NoiseParams] = None

    def __post_init__(self):
        if not self.sampling_period_s > 0:
            raise UsageError(f"sampling period must be positive, got {self.sampling_period_s}")
        if self.tau_s < 0:
            raise UsageError(f"smoothing time constant must be nonnegative, got {self.tau_s}")
        names = [tx.name for tx in self.transmitters]
        if len(set(names)) != len(names):
            raise UsageError(f"transmitter names must be unique, got {names}")
        for tx in self.transmitters:
            if tx.species_index >= self.eps.n_species:
                raise UsageError(f"{tx.name}: species index {tx.species_index} out of range "
                                 f"for {self.eps.n_species} species")


@dataclass
class FrameDecision:
    transmitter: str
    frame: int
    start_s: float
    end_s: float
    n_samples: int
    mean_concentration: float
    level: int
    bits: str


@dataclass
class DecodedMessage:
    bits: Dict[str, str]
    frame_means: Dict[str, List[float]]
    levels: Dict[str, List[int]]
    decisions: List[FrameDecision] = field(default_factory=list)
    ber: Dict[str, float] = field(default_factory=dict)
    overall_ber: Optional[float] = None
    decision_rule: str = 'nearest_level_lower_on_tie'
