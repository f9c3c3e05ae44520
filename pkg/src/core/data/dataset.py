"""
Simulated dataset generation
Concentration sampling, Beer-Lambert spectra with optional sensor noise, splits and exports
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..spectral.beer_lambert import mix_absorbances
from ..spectral.noise import NoiseParams, RandomSource, apply_sensor_noise
from ...models.dataset_models import Dataset, Provenance, SamplingPlan
from ...models.spectral_models import (
    ConcentrationVector, ExtinctionProfileSet, PathLength, WavelengthGrid
)
from ...storage.spcd import load_dataset, save_dataset
from ...utils.errors import UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)

__all__ = [
    'stratum_counts', 'sample_concentration_matrix', 'sample_concentrations',
    'generate_simulated_dataset', 'split', 'blank_ensemble', 'spectra_comparison',
    'export_dataset_csv', 'save_dataset', 'load_dataset',
]

DEFAULT_BLANK_REPLICAS = 99


def _largest_remainder(fractions: Sequence[float], total: int) -> List[int]:
    """Integer counts summing to total; leftovers go to the largest fractional parts, earliest first"""
    exact = np.asarray(fractions, dtype=np.float64) * total
    counts = np.floor(exact + 1e-9).astype(int)
    remainders = exact - counts
    leftover = total - int(counts.sum())
    order = sorted(range(len(exact)), key=lambda k: (-remainders[k], k))
    for k in order[:max(leftover, 0)]:
        counts[k] += 1
    return [int(c) for c in counts]


def stratum_counts(plan: SamplingPlan) -> Dict[str, int]:
    """Sample count per stratum: mixed, pure_<species>..., blank"""
    fractions = ([plan.fractions.mixed] + [plan.fractions.pure_per_species] * len(plan.species)
                 + [plan.fractions.blank])
    counts = _largest_remainder(fractions, plan.n_total)
    strata = ['mixed'] + [f'pure_{s}' for s in plan.species] + ['blank']
    return dict(zip(strata, counts))


def sample_concentration_matrix(plan: SamplingPlan, rng: RandomSource) -> np.ndarray:
    """(n_total, M) concentrations in mol/L, strata shuffled together"""
    counts = stratum_counts(plan)
    upper = plan.upper_bounds()
    n_species = len(plan.species)

    blocks = [rng.uniform(0.0, 1.0, (counts['mixed'], n_species)) * upper]
    for i, name in enumerate(plan.species):
        pure = np.zeros((counts[f'pure_{name}'], n_species))
        pure[:, i] = rng.uniform(0.0, upper[i], counts[f'pure_{name}'])
        blocks.append(pure)
    blocks.append(np.zeros((counts['blank'], n_species)))

    stacked = np.vstack(blocks)
    return stacked[rng.permutation(stacked.shape[0])]


def sample_concentrations(plan: SamplingPlan, rng: RandomSource) -> List[ConcentrationVector]:
    return [ConcentrationVector(row, plan.species) for row in sample_concentration_matrix(plan, rng)]


def generate_simulated_dataset(eps: ExtinctionProfileSet, plan: SamplingPlan,
                               l: Union[PathLength, float] = PathLength(),
                               noise: Optional[NoiseParams] = None,
                               rng: Optional[RandomSource] = None) -> Dataset:
    """Sampled labels paired with Beer-Lambert spectra, noise-augmented when noise is given"""
    if tuple(plan.species) != eps.species:
        raise UsageError(f"sampling plan species {list(plan.species)} do not match "
                         f"extinction profiles {list(eps.species)}")
    rng = rng or RandomSource(plan.seed)

    counts = stratum_counts(plan)
    logger.info(f"Sampling {plan.n_total} concentration vectors: {counts}")
    concentrations = sample_concentration_matrix(plan, rng)
    absorbances = mix_absorbances(eps, concentrations, l)

    provenance = Provenance.SIM_CLEAN
    if noise is not None:
        absorbances = apply_sensor_noise(absorbances, noise, rng)
        provenance = Provenance.SIM_NOISY

    ds = Dataset(eps.grid, eps.species, concentrations, absorbances, provenance)
    logger.info(f"Generated {ds!r}")
    return ds


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded shuffle; the first floor(fraction * N) samples train, the rest validate"""
    if len(ds) == 0:
        raise UsageError("cannot split an empty dataset")
    if not 0.0 <= train_fraction <= 1.0:
        raise UsageError(f"train fraction must lie in [0, 1], got {train_fraction}")
    order = RandomSource(seed).permutation(len(ds))
    n_train = int(np.floor(train_fraction * len(ds)))
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


def blank_ensemble(grid: WavelengthGrid, noise: Optional[NoiseParams], rng: RandomSource,
                   replicas: int = DEFAULT_BLANK_REPLICAS) -> np.ndarray:
    """One clean blank followed by noise-augmented blank replicas, shape (1 + replicas, L)"""
    blanks = np.zeros((1 + replicas, len(grid)))
    if noise is not None and replicas > 0:
        blanks[1:] = apply_sensor_noise(blanks[1:], noise, rng)
    return blanks


def spectra_comparison(eps: ExtinctionProfileSet, conc: ConcentrationVector,
                       l: Union[PathLength, float], noise: NoiseParams,
                       rng: RandomSource) -> pd.DataFrame:
    """Clean and noise-augmented spectrum of the same sample, plus the pure-species contributions"""
    clean = mix_absorbances(eps, conc.values, l)
    frame = pd.DataFrame({
        'wavelength_nm': eps.grid.wavelengths_nm,
        'clean': clean,
        'noisy': apply_sensor_noise(clean, noise, rng),
    })
    for i, name in enumerate(eps.species):
        alone = np.zeros(eps.n_species)
        alone[i] = conc.values[i]
        frame[f'pure_{name}'] = mix_absorbances(eps, alone, l)
    return frame


def export_dataset_csv(ds: Dataset, path: Union[str, Path]) -> Path:
    """Inspection export: conc_<species>..., A_0 ... A_{L-1}"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    conc = pd.DataFrame(ds.concentrations, columns=[f'conc_{s}' for s in ds.species])
    spectra = pd.DataFrame(ds.absorbances, columns=[f'A_{j}' for j in range(len(ds.grid))])
    pd.concat([conc, spectra], axis=1).to_csv(path, index=False, float_format='%.12g')
    return path
