"""
Dataset domain models
Labeled spectra, datasets and concentration sampling plans
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .spectral_models import AbsorbanceSpectrum, ConcentrationVector, WavelengthGrid
from ..utils.errors import UsageError


class Provenance(IntEnum):
    """Origin of a dataset, stored as one byte in SPCD files"""
    EXPERIMENTAL = 0
    SIM_CLEAN = 1
    SIM_NOISY = 2

    @property
    def tag(self) -> str:
        return self.name.lower()


class StratumFractions(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    mixed: float = Field(0.70, ge=0)
    pure_per_species: float = Field(0.125, ge=0)
    blank: float = Field(0.05, ge=0)


class SamplingPlan(BaseModel):
    """How simulated concentration labels are drawn"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    n_total: int = 12000
    species: Tuple[str, ...] = ('IC', 'NR')
    c_max: Dict[str, float] = Field(default_factory=lambda: {'IC': 7e-5, 'NR': 2.5e-4})
    overshoot: float = Field(1.3, ge=1.0)
    fractions: StratumFractions = StratumFractions()
    seed: int = 0

    @model_validator(mode='after')
    def _check_plan(self):
        missing = [s for s in self.species if s not in self.c_max]
        if missing:
            raise ValueError(f"c_max missing for species {missing}")
        if any(self.c_max[s] <= 0 for s in self.species):
            raise ValueError("c_max values must be positive")
        if self.n_total < len(self.species) + 1:
            raise ValueError(f"n_total must be at least {len(self.species) + 1}, got {self.n_total}")
        total = (self.fractions.mixed + len(self.species) * self.fractions.pure_per_species
                 + self.fractions.blank)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"stratum fractions sum to {total}, expected 1 "
                             f"(mixed + {len(self.species)} x pure_per_species + blank)")
        return self

    def upper_bounds(self) -> np.ndarray:
        return np.array([self.overshoot * self.c_max[s] for s in self.species])


@dataclass(frozen=True, eq=False)
class LabeledSample:
    conc: ConcentrationVector
    spectrum: AbsorbanceSpectrum


class Dataset:
    """Spectra with ground-truth concentrations, stored as (N, M) and (N, L) blocks"""

    def __init__(self, grid: WavelengthGrid, species: Sequence[str], concentrations: np.ndarray,
                 absorbances: np.ndarray, provenance: Provenance = Provenance.EXPERIMENTAL):
        self.grid = grid
        self.species = tuple(species)
        self.concentrations = np.array(concentrations, dtype=np.float64).reshape(-1, len(self.species))
        self.absorbances = np.array(absorbances, dtype=np.float64).reshape(-1, len(grid))
        self.provenance = Provenance(provenance)

        if self.concentrations.shape[0] != self.absorbances.shape[0]:
            raise UsageError(f"{self.concentrations.shape[0]} labels for {self.absorbances.shape[0]} spectra")
        if np.any(self.concentrations < 0):
            raise UsageError("ground-truth concentrations must be nonnegative")
        if not np.all(np.isfinite(self.absorbances)):
            raise UsageError("dataset spectra must be finite")

    def __len__(self) -> int:
        return int(self.concentrations.shape[0])

    def __repr__(self) -> str:
        return (f"Dataset(n={len(self)}, species={list(self.species)}, points={len(self.grid)}, "
                f"provenance={self.provenance.tag})")

    def sample(self, index: int) -> LabeledSample:
        return LabeledSample(
            ConcentrationVector(self.concentrations[index], self.species),
            AbsorbanceSpectrum(self.grid, self.absorbances[index]),
        )

    @property
    def samples(self) -> List[LabeledSample]:
        return [self.sample(i) for i in range(len(self))]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.grid, self.species, self.concentrations[indices],
                       self.absorbances[indices], self.provenance)

    def require_compatible(self, grid: WavelengthGrid, species: Sequence[str]):
        grid.require_same(self.grid, "dataset")
        if tuple(species) != self.species:
            raise UsageError(f"dataset species {list(self.species)} do not match {list(species)}")
