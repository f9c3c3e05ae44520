"""
Extinction profile calibration
Per-wavelength least squares A/l = sum_i eps_i * C_i over labeled mixtures
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ...models.spectral_models import (
    AbsorbanceSpectrum, ConcentrationVector, ExtinctionProfileSet, PathLength
)
from ...utils.errors import CalibrationError, UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)

MAX_CONDITION_NUMBER = 1e12
MAX_SPECIES = 8

Sample = Tuple[ConcentrationVector, AbsorbanceSpectrum]


@dataclass
class ConditionReport:
    """Identifiability diagnostics of a calibration design"""
    condition_number: float
    column_norms: Dict[str, float]
    n_samples: int
    negative_eps_counts: Dict[str, int] = field(default_factory=dict)
    residual_rms: float = float('nan')

    @property
    def identifiable(self) -> bool:
        return bool(np.isfinite(self.condition_number) and self.condition_number <= MAX_CONDITION_NUMBER)

    def to_dict(self) -> dict:
        return {
            'condition_number': self.condition_number,
            'identifiable': self.identifiable,
            'column_norms': self.column_norms,
            'n_samples': self.n_samples,
            'negative_eps_counts': self.negative_eps_counts,
            'residual_rms': self.residual_rms,
        }


def _design(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        raise UsageError("calibration needs at least one sample")
    grid = samples[0][1].grid
    conc = np.vstack([np.atleast_1d(c.values) for c, _ in samples])
    for _, spectrum in samples[1:]:
        grid.require_same(spectrum.grid, "calibration sample")
    absorbance = np.vstack([a.values for _, a in samples])
    return conc, absorbance


def _species_names(samples: Sequence[Sample], n_species: int) -> List[str]:
    named = samples[0][0].species
    return list(named) if named else [f"species_{i + 1}" for i in range(n_species)]


def _condition(normal: np.ndarray) -> float:
    with np.errstate(divide='ignore', invalid='ignore'):
        cond = float(np.linalg.cond(normal))
    return cond if np.isfinite(cond) else float('inf')


def condition_report(samples: Sequence[Sample]) -> ConditionReport:
    """Normal-matrix condition number and per-species column norms"""
    conc, _ = _design(samples)
    names = _species_names(samples, conc.shape[1])
    normal = conc.T @ conc
    return ConditionReport(
        condition_number=_condition(normal),
        column_norms={name: float(np.linalg.norm(conc[:, i])) for i, name in enumerate(names)},
        n_samples=conc.shape[0],
    )


def _unidentifiable_species(normal: np.ndarray, names: List[str]) -> List[str]:
    """Species loading on the weakest direction of the normal matrix"""
    _, vectors = np.linalg.eigh(normal)
    weakest = np.abs(vectors[:, 0])
    return [names[i] for i in np.flatnonzero(weakest >= 0.5 * weakest.max())]


def fit_extinction(samples: Sequence[Sample], l: Union[PathLength, float] = PathLength()) -> ExtinctionProfileSet:
    """Least-squares extinction profiles, solved independently at every wavelength"""
    profiles, _ = calibrate(samples, l)
    return profiles


def calibrate(samples: Sequence[Sample], l: Union[PathLength, float] = PathLength()):
    """fit_extinction plus its diagnostics: (ExtinctionProfileSet, ConditionReport)

    Negative fitted values are kept and counted in the report.
    """
    path_cm = l.cm if isinstance(l, PathLength) else PathLength(float(l)).cm
    conc, absorbance = _design(samples)
    n_samples, n_species = conc.shape
    names = _species_names(samples, n_species)
    if n_species > MAX_SPECIES:
        raise UsageError(f"calibration supports at most {MAX_SPECIES} species, got {n_species}")
    if n_samples < n_species:
        raise CalibrationError(f"{n_samples} samples cannot identify {n_species} species", species=names)

    report = condition_report(samples)
    normal = conc.T @ conc
    if not report.identifiable:
        culprits = _unidentifiable_species(normal, names)
        raise CalibrationError(
            f"concentration design is rank deficient (condition number {report.condition_number:.3g}); "
            f"unidentifiable species: {', '.join(culprits)}",
            species=culprits, condition_number=report.condition_number)

    targets = absorbance / path_cm
    factor = cho_factor(normal, lower=False)
    eps = cho_solve(factor, conc.T @ targets)

    residuals = targets - conc @ eps
    report.residual_rms = float(np.sqrt(np.mean(residuals * residuals)))
    report.negative_eps_counts = {name: int(np.sum(eps[i] < 0)) for i, name in enumerate(names)}
    negatives = sum(report.negative_eps_counts.values())
    if negatives:
        logger.warning(f"Fitted profiles contain {negatives} negative coefficients (kept)")
    logger.info(f"Calibrated {n_species} species from {n_samples} samples "
                f"(condition number {report.condition_number:.3g}, residual rms {report.residual_rms:.3g})")
    return ExtinctionProfileSet(samples[0][1].grid, tuple(names), eps), report
