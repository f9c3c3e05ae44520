"""
Sensor noise model
Intensity-dependent Gaussian noise applied in the intensity domain
"""

from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from ...models.spectral_models import AbsorbanceSpectrum
from ...utils.errors import UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)

NOISE_FLOOR_FACTOR = 1e-6


class NoiseParams(BaseModel):
    """Detector noise settings; e_max at i_min falling linearly to e_min at i_max"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    e_max: float = 0.02
    e_min: float = 0.005
    i_min: float = 3000.0
    i_max: float = 45000.0
    i0: float = 45000.0
    noise_law: Literal['amplitude', 'as-printed'] = 'amplitude'

    @model_validator(mode='after')
    def _check_ranges(self):
        # e_min == e_max gives constant relative noise; both 0 disables it
        if not (0 <= self.e_min <= self.e_max < 1):
            raise ValueError(f"need 0 <= e_min <= e_max < 1, got e_min={self.e_min}, e_max={self.e_max}")
        if not (0 < self.i_min < self.i_max):
            raise ValueError(f"need 0 < i_min < i_max, got i_min={self.i_min}, i_max={self.i_max}")
        if not self.i0 > 0:
            raise ValueError(f"i0 must be positive, got {self.i0}")
        return self


class RandomSource:
    """Seeded variate stream; one owner at a time"""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, worker_index: int) -> "RandomSource":
        """Independent source for a worker, seeded base_seed + worker_index"""
        return RandomSource(self.seed + int(worker_index))

    def normal(self, size=None) -> np.ndarray:
        return self._generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed})"


def normalize_intensity(i_value, p: NoiseParams):
    """(I - I_min) / (I_max - I_min), clamped to [0, 1]"""
    normalized = (np.asarray(i_value, dtype=np.float64) - p.i_min) / (p.i_max - p.i_min)
    clamped = np.clip(normalized, 0.0, 1.0)
    return float(clamped) if clamped.ndim == 0 else clamped


def noise_fraction(i_norm, p: NoiseParams):
    """Relative noise standard deviation at a normalized intensity"""
    i_norm = np.asarray(i_norm, dtype=np.float64)
    if p.noise_law == 'as-printed':
        sigma = np.sqrt(i_norm * (p.e_max - p.e_min) + p.e_max)
    else:
        sigma = p.e_max - i_norm * (p.e_max - p.e_min)
    return float(sigma) if sigma.ndim == 0 else sigma


def perturb_absorbance(values: np.ndarray, p: NoiseParams, variates: np.ndarray) -> np.ndarray:
    """Noisy absorbance from clean absorbance and standard-normal variates of the same shape"""
    values = np.asarray(values, dtype=np.float64)
    variates = np.asarray(variates, dtype=np.float64)
    if variates.shape != values.shape:
        raise UsageError(f"variates shape {variates.shape} does not match spectra shape {values.shape}")
    intensity = p.i0 / np.power(10.0, values)
    sigma = noise_fraction(normalize_intensity(intensity, p), p)
    factor = np.maximum(1.0 + sigma * variates, NOISE_FLOOR_FACTOR)
    # log10(i0 / (I * factor)) with I = i0 / 10**A
    return values - np.log10(factor)


def apply_sensor_noise(clean: Union[AbsorbanceSpectrum, np.ndarray], p: NoiseParams,
                       rng: RandomSource) -> Union[AbsorbanceSpectrum, np.ndarray]:
    """Noisy measurement of a clean spectrum, or of an (N, L) block of spectra"""
    values = clean.values if isinstance(clean, AbsorbanceSpectrum) else np.asarray(clean, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise UsageError("clean absorbance must be finite")
    noisy = perturb_absorbance(values, p, rng.normal(values.shape))
    if isinstance(clean, AbsorbanceSpectrum):
        return AbsorbanceSpectrum(clean.grid, noisy)
    return noisy
