"""
Spectral domain models
Wavelength grids, spectra, extinction profiles and concentration labels
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from ..utils.errors import UsageError


def _frozen(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class WavelengthGrid:
    """Strictly increasing wavelength axis in nm"""
    wavelengths_nm: np.ndarray

    def __post_init__(self):
        values = _frozen(self.wavelengths_nm)
        if values.ndim != 1 or values.size < 2:
            raise UsageError(f"wavelength grid needs at least 2 points, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise UsageError("wavelength grid contains non-finite values")
        if not np.all(np.diff(values) > 0):
            raise UsageError("wavelength grid must be strictly increasing")
        object.__setattr__(self, 'wavelengths_nm', values)

    def __len__(self) -> int:
        return int(self.wavelengths_nm.size)

    @property
    def start_nm(self) -> float:
        return float(self.wavelengths_nm[0])

    @property
    def stop_nm(self) -> float:
        return float(self.wavelengths_nm[-1])

    def same_as(self, other: "WavelengthGrid") -> bool:
        return self is other or np.array_equal(self.wavelengths_nm, other.wavelengths_nm)

    def require_same(self, other: "WavelengthGrid", what: str = "spectrum"):
        if not self.same_as(other):
            raise UsageError(f"{what} grid ({len(other)} points, {other.start_nm:g}-{other.stop_nm:g} nm) "
                             f"does not match ({len(self)} points, {self.start_nm:g}-{self.stop_nm:g} nm)")


@dataclass(frozen=True, eq=False)
class AbsorbanceSpectrum:
    """Dimensionless base-10 absorbance on a grid"""
    grid: WavelengthGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (len(self.grid),):
            raise UsageError(f"absorbance has shape {values.shape}, grid has {len(self.grid)} points")
        if not np.all(np.isfinite(values)):
            raise UsageError("absorbance spectrum contains non-finite values")
        object.__setattr__(self, 'values', values)


@dataclass(frozen=True, eq=False)
class IntensitySpectrum:
    """Transmitted light intensity in detector counts"""
    grid: WavelengthGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (len(self.grid),):
            raise UsageError(f"intensity has shape {values.shape}, grid has {len(self.grid)} points")
        object.__setattr__(self, 'values', values)


@dataclass(frozen=True, eq=False)
class ExtinctionProfileSet:
    """Molar extinction coefficients eps[i][j] in L/(mol*cm), one row per species"""
    grid: WavelengthGrid
    species: Tuple[str, ...]
    eps: np.ndarray

    def __post_init__(self):
        species = tuple(str(s) for s in self.species)
        eps = _frozen(np.atleast_2d(self.eps))
        if len(species) == 0:
            raise UsageError("extinction profile set needs at least one species")
        if len(set(species)) != len(species):
            raise UsageError(f"duplicate species names: {species}")
        if eps.shape != (len(species), len(self.grid)):
            raise UsageError(f"eps has shape {eps.shape}, expected ({len(species)}, {len(self.grid)})")
        if not np.all(np.isfinite(eps)):
            raise UsageError("extinction profiles contain non-finite values")
        object.__setattr__(self, 'species', species)
        object.__setattr__(self, 'eps', eps)

    @property
    def n_species(self) -> int:
        return len(self.species)


@dataclass(frozen=True, eq=False)
class ConcentrationVector:
    """Per-species concentrations in mol/L, ordered like an ExtinctionProfileSet"""
    values: np.ndarray
    species: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = _frozen(np.atleast_1d(self.values))
        if values.ndim != 1:
            raise UsageError(f"concentration vector must be 1-D, got shape {values.shape}")
        species = tuple(self.species)
        if species and len(species) != values.size:
            raise UsageError(f"{values.size} concentrations for {len(species)} species")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'species', species)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class PathLength:
    """Optical path length through the flow cell"""
    cm: float = 0.25

    def __post_init__(self):
        if not (np.isfinite(self.cm) and self.cm > 0):
            raise UsageError(f"path length must be positive, got {self.cm}")
