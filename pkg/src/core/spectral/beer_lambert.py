"""
Beer-Lambert spectral core
Wavelength grids, absorbance synthesis and absorbance/intensity conversion
"""

from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np
import pandas as pd

from ...models.spectral_models import (
    AbsorbanceSpectrum, ConcentrationVector, ExtinctionProfileSet,
    IntensitySpectrum, PathLength, WavelengthGrid
)
from ...utils.errors import DomainError, UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_GRID_START_NM = 400.0
DEFAULT_GRID_STOP_NM = 850.0
DEFAULT_GRID_POINTS = 3648
DESK_DOWNSAMPLE_FACTOR = 8
MIN_DOWNSAMPLED_POINTS = 16
DEFAULT_I0 = 45000.0


def uniform_grid(start_nm: float = DEFAULT_GRID_START_NM,
                 stop_nm: float = DEFAULT_GRID_STOP_NM,
                 points: int = DEFAULT_GRID_POINTS) -> WavelengthGrid:
    """Uniformly spaced grid including both end points"""
    if points < 2:
        raise UsageError(f"grid needs at least 2 points, got {points}")
    return WavelengthGrid(np.linspace(start_nm, stop_nm, int(points)))


def default_grid() -> WavelengthGrid:
    return uniform_grid()


def desk_grid() -> WavelengthGrid:
    """The 456-point grid used for desk-scale runs"""
    return downsample_grid(default_grid(), DESK_DOWNSAMPLE_FACTOR)


def _as_path_length(l: Union[PathLength, float]) -> float:
    return l.cm if isinstance(l, PathLength) else PathLength(float(l)).cm


def mix_absorbances(eps: ExtinctionProfileSet, concentrations: np.ndarray,
                    l: Union[PathLength, float] = PathLength()) -> np.ndarray:
    """Batched Beer-Lambert law: (N, M) concentrations -> (N, L) absorbances"""
    concentrations = np.asarray(concentrations, dtype=np.float64)
    squeeze = concentrations.ndim == 1
    concentrations = np.atleast_2d(concentrations)
    if concentrations.shape[1] != eps.n_species:
        raise UsageError(f"{concentrations.shape[1]} concentrations given for {eps.n_species} species")
    absorbances = _as_path_length(l) * (concentrations @ eps.eps)
    return absorbances[0] if squeeze else absorbances


def absorbance_mix(eps: ExtinctionProfileSet, conc: ConcentrationVector,
                   l: Union[PathLength, float] = PathLength()) -> AbsorbanceSpectrum:
    """A(lambda) = l * sum_i eps_i(lambda) * C_i"""
    values = conc.values if isinstance(conc, ConcentrationVector) else np.asarray(conc, dtype=np.float64)
    if values.ndim != 1 or values.size != eps.n_species:
        raise UsageError(f"concentration vector of length {values.size} for {eps.n_species} species")
    return AbsorbanceSpectrum(eps.grid, mix_absorbances(eps, values, l))


def absorbance_to_intensity(a: AbsorbanceSpectrum, i0: float = DEFAULT_I0) -> IntensitySpectrum:
    """I = i0 / 10**A"""
    if not i0 > 0:
        raise UsageError(f"incident intensity must be positive, got {i0}")
    return IntensitySpectrum(a.grid, i0 / np.power(10.0, a.values))


def intensity_to_absorbance(i: IntensitySpectrum, i0: float = DEFAULT_I0) -> AbsorbanceSpectrum:
    """A = log10(i0 / I); a nonpositive reading means noise drove the detector to or below zero"""
    if not i0 > 0:
        raise UsageError(f"incident intensity must be positive, got {i0}")
    bad = np.flatnonzero(~(i.values > 0))
    if bad.size:
        j = int(bad[0])
        raise DomainError(f"nonpositive intensity {i.values[j]:g} at {i.grid.wavelengths_nm[j]:.3f} nm "
                          f"({bad.size} wavelengths affected)")
    return AbsorbanceSpectrum(i.grid, np.log10(i0 / i.values))


def gaussian_band(grid: WavelengthGrid, peak_nm: float, peak_eps: float, width_nm: float) -> np.ndarray:
    if not peak_eps > 0:
        raise UsageError(f"peak_eps must be positive, got {peak_eps}")
    if not width_nm > 0:
        raise UsageError(f"width_nm must be positive, got {width_nm}")
    if not grid.start_nm <= peak_nm <= grid.stop_nm:
        raise UsageError(f"peak {peak_nm} nm outside grid range {grid.start_nm:g}-{grid.stop_nm:g} nm")
    offset = grid.wavelengths_nm - peak_nm
    return peak_eps * np.exp(-offset * offset / (2.0 * width_nm * width_nm))


def synthetic_extinction_profile(grid: WavelengthGrid, peak_nm: float, peak_eps: float,
                                 width_nm: float, species: str = "species") -> ExtinctionProfileSet:
    """Single Gaussian absorption band standing in for a measured dye profile"""
    return ExtinctionProfileSet(grid, (species,), gaussian_band(grid, peak_nm, peak_eps, width_nm)[None, :])


def synthetic_profile_set(grid: WavelengthGrid, bands: Iterable[Mapping]) -> ExtinctionProfileSet:
    """Stack several Gaussian stand-ins; each band maps species/peak_nm/peak_eps/width_nm"""
    bands = list(bands)
    rows = [gaussian_band(grid, float(b['peak_nm']), float(b['peak_eps']), float(b['width_nm'])) for b in bands]
    return ExtinctionProfileSet(grid, tuple(b['species'] for b in bands), np.vstack(rows))


def _downsampled_length(length: int, factor: int) -> int:
    if int(factor) != factor or factor < 1:
        raise UsageError(f"downsample factor must be a positive integer, got {factor}")
    reduced = length // int(factor)
    if reduced < MIN_DOWNSAMPLED_POINTS:
        raise UsageError(f"downsampling {length} points by {factor} leaves {reduced} < {MIN_DOWNSAMPLED_POINTS}")
    return reduced


def downsample_grid(grid: WavelengthGrid, factor: int) -> WavelengthGrid:
    """Keep the first point of every factor-wide window"""
    reduced = _downsampled_length(len(grid), factor)
    return WavelengthGrid(grid.wavelengths_nm[:reduced * factor:factor])


def downsample_values(values: np.ndarray, factor: int) -> np.ndarray:
    """Block-average the last axis over factor-wide windows; trailing remainder dropped"""
    values = np.asarray(values, dtype=np.float64)
    reduced = _downsampled_length(values.shape[-1], factor)
    blocks = values[..., :reduced * factor].reshape(values.shape[:-1] + (reduced, int(factor)))
    return blocks.mean(axis=-1)


def downsample_spectrum(a: AbsorbanceSpectrum, factor: int) -> AbsorbanceSpectrum:
    return AbsorbanceSpectrum(downsample_grid(a.grid, factor), downsample_values(a.values, factor))


def downsample_profiles(eps: ExtinctionProfileSet, factor: int) -> ExtinctionProfileSet:
    return ExtinctionProfileSet(downsample_grid(eps.grid, factor), eps.species, downsample_values(eps.eps, factor))


def save_extinction_csv(eps: ExtinctionProfileSet, path: Union[str, Path]) -> Path:
    """Header wavelength_nm,eps_<species>...; 12 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({'wavelength_nm': eps.grid.wavelengths_nm})
    for name, row in zip(eps.species, eps.eps):
        frame[f'eps_{name}'] = row
    frame.to_csv(path, index=False, float_format='%.12g')
    logger.info(f"Wrote extinction profiles for {list(eps.species)} to {path}")
    return path


def load_extinction_csv(path: Union[str, Path]) -> ExtinctionProfileSet:
    path = Path(path)
    frame = pd.read_csv(path)
    if frame.columns[0] != 'wavelength_nm':
        raise UsageError(f"{path}: first column must be 'wavelength_nm', got '{frame.columns[0]}'")
    eps_columns = [c for c in frame.columns[1:]]
    bad = [c for c in eps_columns if not c.startswith('eps_')]
    if bad or not eps_columns:
        raise UsageError(f"{path}: expected eps_<species> columns, got {list(frame.columns[1:])}")
    grid = WavelengthGrid(frame['wavelength_nm'].to_numpy(dtype=np.float64))
    species = tuple(c[len('eps_'):] for c in eps_columns)
    return ExtinctionProfileSet(grid, species, frame[eps_columns].to_numpy(dtype=np.float64).T)
