# SpectraLink Testing Framework

import json
import math
import os
import struct
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
import yaml

from src.config.settings import (
    RunConfig, SpectraLinkSettings, build_run_config, load_run_config, substitute_env_vars
)
from src.core.application import cmd_eval, cmd_fit_extinction, cmd_gen_dataset, cmd_simulate_link, cmd_train, run_command
from src.core.data.dataset import (
    blank_ensemble, generate_simulated_dataset, sample_concentration_matrix, sample_concentrations,
    spectra_comparison, split, stratum_counts
)
from src.core.ml.fcnn import (
    EVAL, TRAIN, FcnnConfig, FcnnModel, FcnnParams, backward, coefficient_of_determination, conv1d_same,
    forward, fractal_block_forward, half_sum, init_params, maxpool, mse_loss, parameter_shapes
)
from src.core.ml.training import (
    AdamHyper, AdamState, PhasePlan, adam_step, detection_error, evaluate,
    min_detectable_concentration, train_full, validation_mse
)
from src.core.modem.channel import align_traces, channel_observe, mix_at_junction, sample_times
from src.core.modem.demodulator import (
    GenieBeerLambertPredictor, ber, demodulate, nearest_level, reference_levels, run_link
)
from src.core.modem.encoder import (
    ascii7, bits_to_ascii7, dibit_levels, encode_bits, interleave_dibits, split_dibits
)
from src.core.spectral.beer_lambert import (
    absorbance_mix, absorbance_to_intensity, default_grid, desk_grid, downsample_grid, downsample_spectrum,
    downsample_values, intensity_to_absorbance, load_extinction_csv, mix_absorbances, save_extinction_csv,
    synthetic_extinction_profile, synthetic_profile_set, uniform_grid
)
from src.core.spectral.calibration import calibrate, condition_report, fit_extinction
from src.core.spectral.noise import (
    NoiseParams, RandomSource, apply_sensor_noise, noise_fraction, normalize_intensity, perturb_absorbance
)
from src.models.dataset_models import Dataset, Provenance, SamplingPlan
from src.models.link_models import ConcentrationSeries, FlowTrace, LinkConfig, TransmitterConfig
from src.models.spectral_models import (
    AbsorbanceSpectrum, ConcentrationVector, ExtinctionProfileSet, IntensitySpectrum, PathLength, WavelengthGrid
)
from src.storage.checkpoint import load_checkpoint, save_checkpoint
from src.storage.spcd import decode_dataset, encode_dataset, load_dataset, save_dataset
from src.utils.errors import (
    EXIT_DOMAIN, EXIT_IO, EXIT_OK, EXIT_USAGE, CalibrationError, CheckpointFormatError, ConfigError,
    DatasetFormatError, DatasetTruncatedError, DomainError, UsageError
)

SLOW = SpectraLinkSettings().slow_tests
PRESETS = Path(__file__).parent / 'config' / 'presets'

BANDS = [
    {'species': 'IC', 'peak_nm': 608.0, 'peak_eps': 20000.0, 'width_nm': 40.0},
    {'species': 'NR', 'peak_nm': 496.0, 'peak_eps': 12000.0, 'width_nm': 50.0},
]
TINY_FCNN = FcnnConfig(input_length=64, output_dim=2, block_filters=(2, 2, 2, 2))


def tiny_profiles(points: int = 64):
    return synthetic_profile_set(uniform_grid(400.0, 850.0, points), BANDS)


def tiny_dataset(n_total: int = 60, seed: int = 5, noise=None) -> Dataset:
    plan = SamplingPlan(n_total=n_total, seed=seed)
    return generate_simulated_dataset(tiny_profiles(), plan, PathLength(), noise)


def bcsk(name, species_index, stock, t_b=60.0, offset=0.0, flow=40.0):
    return TransmitterConfig(name=name, species_index=species_index, stock_concentration=stock,
                             bit_interval_s=t_b, start_offset_s=offset, scheme='BCSK',
                             level_flow_table=((0.0, flow), (flow, 0.0)))


def qcsk(name, species_index, stock, t_b=60.0):
    return TransmitterConfig(name=name, species_index=species_index, stock_concentration=stock,
                             bit_interval_s=t_b, scheme='QCSK')


def merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        out[key] = merge(out[key], value) if isinstance(value, dict) and isinstance(out.get(key), dict) else value
    return out


TINY_RUN = {
    'seed': 3,
    'logging': {'level': 'WARNING'},
    'grid': {'kind': 'uniform', 'points': 64},
    'sampling': {'n_total': 100},
    'model': {'block_filters': [2, 2, 2, 2]},
    'training': {'epochs_per_phase': 2, 'steps_per_epoch': 3, 'batch_size': 4, 'eval_batch_size': 64},
}


class TempDirTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write_config(self, name: str, **overrides) -> Path:
        path = self.tmp / name
        with open(path, 'w') as f:
            yaml.safe_dump(merge(TINY_RUN, overrides), f)
        return path


class TestBeerLambert(unittest.TestCase):
    """Test grids, absorbance synthesis and intensity conversion"""

    def setUp(self):
        self.eps = tiny_profiles()

    def test_default_and_desk_grids(self):
        """Test the standard grid and its desk-scale reduction"""
        grid = default_grid()
        self.assertEqual(len(grid), 3648)
        self.assertEqual(grid.start_nm, 400.0)
        self.assertEqual(grid.stop_nm, 850.0)
        desk = desk_grid()
        self.assertEqual(len(desk), 456)
        self.assertEqual(desk.start_nm, 400.0)

    def test_zero_concentration_gives_zero_absorbance(self):
        """Test blank spectra"""
        a = absorbance_mix(self.eps, ConcentrationVector([0.0, 0.0]))
        self.assertTrue(np.all(a.values == 0.0))

    def test_single_species_value(self):
        """Test A = l * eps * C for one species"""
        grid = uniform_grid(400.0, 850.0, 16)
        eps = ExtinctionProfileSet(grid, ('X',), np.full((1, 16), 20000.0))
        a = absorbance_mix(eps, ConcentrationVector([1e-5]), PathLength(0.25))
        np.testing.assert_allclose(a.values, 0.05, rtol=1e-12)

    def test_synthetic_profile_peak(self):
        """Test the Gaussian stand-in peaks at its band center with the band height"""
        grid = uniform_grid(400.0, 850.0, 451)
        profile = synthetic_extinction_profile(grid, 608.0, 20000.0, 40.0, 'IC')
        self.assertEqual(profile.species, ('IC',))
        self.assertEqual(grid.wavelengths_nm[int(np.argmax(profile.eps[0]))], 608.0)
        self.assertAlmostEqual(profile.eps[0].max(), 20000.0)
        with self.assertRaises(UsageError):
            synthetic_extinction_profile(grid, 900.0, 20000.0, 40.0)

    def test_mixture_is_additive(self):
        """Test linearity in concentration"""
        c1, c2 = np.array([1e-5, 0.0]), np.array([0.0, 3e-5])
        both = absorbance_mix(self.eps, ConcentrationVector(c1 + c2)).values
        parts = absorbance_mix(self.eps, ConcentrationVector(c1)).values + \
            absorbance_mix(self.eps, ConcentrationVector(c2)).values
        np.testing.assert_allclose(both, parts, rtol=1e-12, atol=1e-15)

    def test_mixture_is_homogeneous(self):
        """Test scaling every concentration by k scales the absorbance by k"""
        conc = ConcentrationVector([2e-5, 7e-5])
        base = absorbance_mix(self.eps, conc).values
        for k in (0.5, 3.0, 10.0):
            scaled = absorbance_mix(self.eps, ConcentrationVector(k * conc.values)).values
            np.testing.assert_allclose(scaled, k * base, rtol=1e-12, atol=0.0)

    def test_nonnegative_inputs_give_nonnegative_absorbance(self):
        """Test nonnegative extinction and concentrations never give negative absorbance"""
        conc = RandomSource(3).uniform(0.0, 1e-4, (50, 2))
        self.assertTrue(np.all(self.eps.eps >= 0.0))
        self.assertTrue(np.all(mix_absorbances(self.eps, conc) >= 0.0))

    def test_intensity_round_trip_is_relative_exact(self):
        """Test absorbance -> intensity -> absorbance within 1e-12 relative"""
        grid = uniform_grid(400.0, 850.0, 200)
        a = AbsorbanceSpectrum(grid, RandomSource(6).uniform(0.01, 3.0, 200))
        back = intensity_to_absorbance(absorbance_to_intensity(a))
        np.testing.assert_allclose(back.values, a.values, rtol=1e-12, atol=0.0)

    def test_batched_mix_matches_single(self):
        """Test a batched mixture row equals the single-sample mixture"""
        conc = np.array([[1e-5, 2e-5], [3e-5, 0.0]])
        batched = mix_absorbances(self.eps, conc)
        single = absorbance_mix(self.eps, ConcentrationVector(conc[1])).values
        np.testing.assert_allclose(batched[1], single, rtol=1e-14)

    def test_wrong_concentration_length(self):
        """Test a concentration vector longer than the species list is rejected"""
        with self.assertRaises(UsageError):
            absorbance_mix(self.eps, ConcentrationVector([1e-5, 0.0, 0.0]))

    def test_intensity_conversion(self):
        """Test I = i0 / 10**A and its inverse"""
        grid = uniform_grid(400.0, 850.0, 16)
        a = AbsorbanceSpectrum(grid, np.r_[0.0, 1.0, np.zeros(14)])
        i = absorbance_to_intensity(a)
        self.assertAlmostEqual(i.values[0], 45000.0)
        self.assertAlmostEqual(i.values[1], 4500.0)
        np.testing.assert_allclose(intensity_to_absorbance(i).values, a.values, atol=1e-12)

    def test_nonpositive_intensity_is_domain_error(self):
        """Test a zero intensity cannot be converted to absorbance"""
        grid = uniform_grid(400.0, 850.0, 16)
        values = np.full(16, 1000.0)
        values[3] = 0.0
        with self.assertRaises(DomainError):
            intensity_to_absorbance(IntensitySpectrum(grid, values))

    def test_downsampling(self):
        """Test block averaging and first-point grid selection"""
        grid = uniform_grid(400.0, 850.0, 70)
        reduced = downsample_grid(grid, 4)
        self.assertEqual(len(reduced), 17)
        self.assertEqual(reduced.wavelengths_nm[1], grid.wavelengths_nm[4])
        values = np.arange(70, dtype=float)
        np.testing.assert_allclose(downsample_values(values, 4)[:2], [1.5, 5.5])
        spectrum = downsample_spectrum(AbsorbanceSpectrum(grid, values), 4)
        self.assertEqual(len(spectrum.values), len(spectrum.grid))
        with self.assertRaises(UsageError):
            downsample_grid(grid, 5)

    def test_grid_must_increase(self):
        """Test repeated wavelengths are rejected"""
        with self.assertRaises(UsageError):
            WavelengthGrid(np.array([400.0, 400.0, 401.0]))

    def test_extinction_csv_round_trip(self):
        """Test extinction profiles survive a CSV write and read"""
        with tempfile.TemporaryDirectory() as tmp:
            path = save_extinction_csv(self.eps, Path(tmp) / 'eps.csv')
            header = path.read_text().splitlines()[0]
            self.assertEqual(header, 'wavelength_nm,eps_IC,eps_NR')
            loaded = load_extinction_csv(path)
        self.assertEqual(loaded.species, ('IC', 'NR'))
        np.testing.assert_allclose(loaded.eps, self.eps.eps, rtol=1e-9, atol=1e-9)


class TestNoiseModel(unittest.TestCase):
    """Test the intensity-dependent sensor noise"""

    def setUp(self):
        self.params = NoiseParams()

    def test_sigma_endpoints(self):
        """Test sigma falls from e_max at i_min to e_min at i_max"""
        self.assertAlmostEqual(noise_fraction(0.0, self.params), 0.02)
        self.assertAlmostEqual(noise_fraction(1.0, self.params), 0.005)
        self.assertAlmostEqual(noise_fraction(0.5, self.params), 0.0125)

    def test_as_printed_law(self):
        """Test the literal law treats the printed expression as a variance"""
        params = NoiseParams(noise_law='as-printed')
        self.assertAlmostEqual(noise_fraction(0.0, params), math.sqrt(0.02))

    def test_normalized_intensity_clamped(self):
        """Test normalized intensity is clamped to [0, 1]"""
        self.assertEqual(normalize_intensity(1000.0, self.params), 0.0)
        self.assertEqual(normalize_intensity(90000.0, self.params), 1.0)
        self.assertAlmostEqual(normalize_intensity(24000.0, self.params), 0.5)

    def test_zero_noise_returns_clean(self):
        """Test zero noise bounds leave the spectrum unchanged"""
        params = NoiseParams(e_max=0.0, e_min=0.0)
        clean = np.linspace(0.0, 1.0, 32)
        np.testing.assert_allclose(apply_sensor_noise(clean, params, RandomSource(1)), clean, atol=1e-15)

    def test_relative_noise_statistics(self):
        """Test relative intensity noise is zero-mean with std sigma(i_norm) across the detector range"""
        n = 100000
        for i_norm in (0.0, 0.25, 0.5, 0.75, 1.0):
            with self.subTest(i_norm=i_norm):
                intensity = self.params.i_min + i_norm * (self.params.i_max - self.params.i_min)
                clean = np.full(n, math.log10(self.params.i0 / intensity))
                noisy = apply_sensor_noise(clean, self.params, RandomSource(42))
                relative = np.power(10.0, clean - noisy) - 1.0
                expected = 0.02 - i_norm * (0.02 - 0.005)
                self.assertLess(abs(relative.std() / expected - 1.0), 0.05)
                self.assertLessEqual(abs(relative.mean()), 3.0 * relative.std() / math.sqrt(n))

    def test_equal_noise_bounds(self):
        """Test e_min == e_max gives intensity-independent noise"""
        params = NoiseParams(e_min=0.01, e_max=0.01)
        for i_norm in (0.0, 0.5, 1.0):
            self.assertAlmostEqual(noise_fraction(i_norm, params), 0.01, places=15)
        clean = np.full(50000, 1.0)
        relative = np.power(10.0, clean - apply_sensor_noise(clean, params, RandomSource(4))) - 1.0
        self.assertLess(abs(relative.std() / 0.01 - 1.0), 0.05)

    def test_wavelength_permutation_commutes(self):
        """Test noise is applied wavelength by wavelength"""
        rng = RandomSource(8)
        clean = rng.uniform(0.0, 1.5, 64)
        variates = rng.normal(64)
        order = rng.permutation(64)
        np.testing.assert_array_equal(perturb_absorbance(clean[order], self.params, variates[order]),
                                      perturb_absorbance(clean, self.params, variates)[order])

    def test_seeded_determinism(self):
        """Test equal seeds give equal noise and spawned sources differ"""
        clean = np.linspace(0.0, 1.0, 64)
        a = apply_sensor_noise(clean, self.params, RandomSource(9))
        b = apply_sensor_noise(clean, self.params, RandomSource(9))
        c = apply_sensor_noise(clean, self.params, RandomSource(9).spawn(1))
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))

    def test_spawn_offsets_seed(self):
        """Test a spawned source is seeded base seed plus worker index"""
        self.assertEqual(RandomSource(10).spawn(3).seed, 13)

    def test_invalid_ranges(self):
        """Test out-of-order or out-of-range noise bounds are rejected"""
        with self.assertRaises(ValueError):
            NoiseParams(e_max=0.001, e_min=0.01)
        with self.assertRaises(ValueError):
            NoiseParams(i_min=50000.0)

    def test_non_finite_clean_spectrum(self):
        """Test NaN absorbance is refused before noise is added"""
        with self.assertRaises(UsageError):
            apply_sensor_noise(np.array([0.1, np.nan]), self.params, RandomSource(0))


class TestCalibration(unittest.TestCase):
    """Test extinction profile fitting"""

    def setUp(self):
        self.eps = tiny_profiles()
        self.rng = RandomSource(21)

    def _samples(self, conc, noise=None):
        absorbances = mix_absorbances(self.eps, conc)
        if noise is not None:
            absorbances = apply_sensor_noise(absorbances, noise, self.rng)
        return [(ConcentrationVector(c, self.eps.species), AbsorbanceSpectrum(self.eps.grid, a))
                for c, a in zip(conc, absorbances)]

    def test_noise_free_recovery(self):
        """Test exact recovery of generating profiles"""
        conc = self.rng.uniform(0.0, 1.0, (50, 2)) * np.array([7e-5, 2.5e-4])
        fitted = fit_extinction(self._samples(conc))
        self.assertEqual(fitted.species, ('IC', 'NR'))
        np.testing.assert_allclose(fitted.eps, self.eps.eps, rtol=1e-9, atol=1e-9 * self.eps.eps.max())

    def test_noisy_peak_recovery(self):
        """Test peak eps within 2% with 200 noisy samples"""
        conc = self.rng.uniform(0.0, 1.0, (200, 2)) * np.array([7e-5, 2.5e-4])
        noise = NoiseParams(e_max=0.01, e_min=0.01)
        fitted, report = calibrate(self._samples(conc, noise))
        for i in range(2):
            peak = int(np.argmax(self.eps.eps[i]))
            self.assertLess(abs(fitted.eps[i, peak] / self.eps.eps[i, peak] - 1.0), 0.02)
        self.assertTrue(report.identifiable)
        self.assertGreater(report.residual_rms, 0.0)

    def test_rank_deficient_design(self):
        """Test proportional concentrations are rejected naming both species"""
        base = self.rng.uniform(1e-6, 5e-5, 20)
        conc = np.column_stack([base, base])
        with self.assertRaises(CalibrationError) as ctx:
            fit_extinction(self._samples(conc))
        self.assertEqual(sorted(ctx.exception.species), ['IC', 'NR'])

    def test_pure_single_species_design(self):
        """Test a design that never varies NR is rejected naming NR only"""
        conc = np.column_stack([self.rng.uniform(1e-6, 7e-5, 20), np.zeros(20)])
        with self.assertRaises(CalibrationError) as ctx:
            fit_extinction(self._samples(conc))
        self.assertEqual(list(ctx.exception.species), ['NR'])

    def test_too_few_samples(self):
        """Test a single sample cannot identify two profiles"""
        with self.assertRaises(CalibrationError):
            fit_extinction(self._samples(np.array([[1e-5, 2e-5]])))

    def _noisy_design(self, n: int = 200):
        conc = self.rng.uniform(0.0, 1.0, (n, 2)) * np.array([7e-5, 2.5e-4])
        noisy = apply_sensor_noise(mix_absorbances(self.eps, conc), NoiseParams(e_max=0.01, e_min=0.01), self.rng)
        return conc, noisy

    def _pairs(self, conc, absorbances, grid=None):
        grid = self.eps.grid if grid is None else grid
        return [(ConcentrationVector(c, self.eps.species), AbsorbanceSpectrum(grid, a))
                for c, a in zip(conc, absorbances)]

    def test_joint_scaling_leaves_profiles_unchanged(self):
        """Test doubling both concentrations and absorbances gives the same fit"""
        conc, noisy = self._noisy_design()
        base = fit_extinction(self._pairs(conc, noisy))
        doubled = fit_extinction(self._pairs(2.0 * conc, 2.0 * noisy))
        np.testing.assert_allclose(doubled.eps, base.eps, rtol=1e-12, atol=1e-12 * np.abs(base.eps).max())

    def test_fit_minimizes_residual(self):
        """Test nudging any fitted coefficient never lowers the per-wavelength residual"""
        conc, noisy = self._noisy_design()
        fitted = fit_extinction(self._pairs(conc, noisy))
        targets = noisy / PathLength().cm

        def residual(eps):
            diff = targets - conc @ eps
            return np.sum(diff * diff, axis=0)

        best = residual(fitted.eps)
        step = 1e-6 * np.abs(fitted.eps).max()
        for species in range(2):
            for sign in (1.0, -1.0):
                nudged = fitted.eps.copy()
                nudged[species] += sign * step
                self.assertTrue(np.all(residual(nudged) >= best), f"species {species}, sign {sign}")

    def test_sub_grid_fit_matches(self):
        """Test each wavelength is fitted independently of the others"""
        conc, noisy = self._noisy_design()
        full = fit_extinction(self._pairs(conc, noisy))
        sub_grid = WavelengthGrid(self.eps.grid.wavelengths_nm[::4])
        sub = fit_extinction(self._pairs(conc, noisy[:, ::4], sub_grid))
        np.testing.assert_allclose(sub.eps, full.eps[:, ::4], rtol=1e-12, atol=1e-12 * np.abs(full.eps).max())

    def test_condition_report(self):
        """Test the conditioning summary of a well-posed design"""
        conc = np.array([[1e-5, 0.0], [0.0, 1e-5], [1e-5, 1e-5]])
        report = condition_report(self._samples(conc))
        self.assertEqual(report.n_samples, 3)
        self.assertTrue(report.identifiable)
        self.assertIn('IC', report.column_norms)

    def test_condition_number_extremes(self):
        """Test orthogonal equal-norm columns give 1 and duplicated columns exceed the limit"""
        orthogonal = condition_report(self._samples(np.array([[1e-5, 0.0], [0.0, 1e-5]])))
        self.assertAlmostEqual(orthogonal.condition_number, 1.0, places=12)
        base = self.rng.uniform(1e-6, 5e-5, 20)
        duplicated = condition_report(self._samples(np.column_stack([base, base])))
        self.assertGreaterEqual(duplicated.condition_number, 1e12)
        self.assertFalse(duplicated.identifiable)


class TestDataset(unittest.TestCase):
    """Test simulated dataset generation"""

    def test_default_stratum_counts(self):
        """Test the default 12000-sample plan splits 70/12.5/12.5/5"""
        counts = stratum_counts(SamplingPlan())
        self.assertEqual(counts, {'mixed': 8400, 'pure_IC': 1500, 'pure_NR': 1500, 'blank': 600})

    def test_largest_remainder_counts(self):
        """Test rounded stratum counts still add up to the total"""
        counts = stratum_counts(SamplingPlan(n_total=100))
        self.assertEqual(sum(counts.values()), 100)
        self.assertEqual(counts, {'mixed': 70, 'pure_IC': 13, 'pure_NR': 12, 'blank': 5})

    def test_strata_and_bounds(self):
        """Test label ranges and stratum membership"""
        plan = SamplingPlan(n_total=200, seed=4)
        ds = generate_simulated_dataset(tiny_profiles(), plan)
        counts = stratum_counts(plan)
        upper = plan.upper_bounds()
        self.assertTrue(np.all(ds.concentrations >= 0))
        self.assertTrue(np.all(ds.concentrations <= upper))
        nonzero = (ds.concentrations > 0).sum(axis=1)
        self.assertEqual(int((nonzero == 0).sum()), counts['blank'])
        self.assertEqual(int((nonzero == 1).sum()), counts['pure_IC'] + counts['pure_NR'])

    def test_clean_and_noisy_provenance(self):
        """Test noise changes the provenance tag but not the labels"""
        clean = tiny_dataset()
        noisy = tiny_dataset(noise=NoiseParams())
        self.assertEqual(clean.provenance, Provenance.SIM_CLEAN)
        self.assertEqual(noisy.provenance, Provenance.SIM_NOISY)
        np.testing.assert_array_equal(clean.concentrations, noisy.concentrations)
        np.testing.assert_allclose(clean.absorbances, mix_absorbances(tiny_profiles(), clean.concentrations))

    def test_generation_is_deterministic(self):
        """Test equal seeds give equal datasets and other seeds differ"""
        a, b = tiny_dataset(noise=NoiseParams()), tiny_dataset(noise=NoiseParams())
        np.testing.assert_array_equal(a.absorbances, b.absorbances)
        self.assertFalse(np.array_equal(a.absorbances, tiny_dataset(seed=6, noise=NoiseParams()).absorbances))

    def test_sample_concentrations(self):
        """Test sampled vectors match the concentration matrix for the same seed"""
        plan = SamplingPlan(n_total=40, seed=1)
        vectors = sample_concentrations(plan, RandomSource(1))
        self.assertEqual(len(vectors), 40)
        self.assertEqual(vectors[0].species, ('IC', 'NR'))
        np.testing.assert_array_equal(np.vstack([v.values for v in vectors]),
                                      sample_concentration_matrix(plan, RandomSource(1)))

    def test_species_mismatch(self):
        """Test a plan whose species order differs from the profiles is rejected"""
        with self.assertRaises(UsageError):
            generate_simulated_dataset(tiny_profiles(), SamplingPlan(species=('NR', 'IC')))

    def test_split(self):
        """Test the split sizes and that an empty dataset cannot be split"""
        ds = tiny_dataset(n_total=50)
        train, val = split(ds, 0.8, seed=1)
        self.assertEqual((len(train), len(val)), (40, 10))
        with self.assertRaises(UsageError):
            split(ds.subset([]), 0.8)

    def test_blank_ensemble(self):
        """Test the blank ensemble starts with one clean blank"""
        blanks = blank_ensemble(uniform_grid(400.0, 850.0, 32), NoiseParams(), RandomSource(0))
        self.assertEqual(blanks.shape, (100, 32))
        self.assertTrue(np.all(blanks[0] == 0.0))
        self.assertGreater(np.abs(blanks[1:]).max(), 0.0)

    def test_blank_noise_is_zero_mean(self):
        """Test noisy blanks carry zero-mean relative intensity noise at e_min"""
        blanks = blank_ensemble(uniform_grid(400.0, 850.0, 32), NoiseParams(), RandomSource(12), replicas=4000)
        relative = np.power(10.0, -blanks[1:]) - 1.0
        self.assertLess(abs(relative.std() / 0.005 - 1.0), 0.05)
        self.assertLessEqual(abs(relative.mean()), 3.0 * relative.std() / math.sqrt(relative.size))

    def test_spectra_comparison_columns(self):
        """Test the comparison table columns and that pure parts add to the clean mixture"""
        frame = spectra_comparison(tiny_profiles(), ConcentrationVector([3e-5, 1e-4]), PathLength(),
                                   NoiseParams(), RandomSource(0))
        self.assertEqual(list(frame.columns), ['wavelength_nm', 'clean', 'noisy', 'pure_IC', 'pure_NR'])
        np.testing.assert_allclose(frame['pure_IC'] + frame['pure_NR'], frame['clean'], atol=1e-15)


class TestSpcdFormat(unittest.TestCase):
    """Test the SPCD binary dataset format"""

    def setUp(self):
        self.ds = tiny_dataset(n_total=12, noise=NoiseParams())

    def test_header_layout(self):
        """Test the little-endian SPCD header fields"""
        payload = encode_dataset(self.ds)
        magic, version, provenance, n_points, n_species, n_samples = struct.unpack_from('<4sHBIII', payload)
        self.assertEqual((magic, version, provenance), (b'SPCD', 1, 2))
        self.assertEqual((n_points, n_species, n_samples), (64, 2, 12))

    def test_file_round_trip(self):
        """Test a dataset survives a save and load"""
        with tempfile.TemporaryDirectory() as tmp:
            path = save_dataset(self.ds, Path(tmp) / 'd.spcd')
            loaded = load_dataset(path)
        self.assertEqual(loaded.species, self.ds.species)
        self.assertEqual(loaded.provenance, Provenance.SIM_NOISY)
        np.testing.assert_array_equal(loaded.absorbances, self.ds.absorbances)
        np.testing.assert_array_equal(loaded.grid.wavelengths_nm, self.ds.grid.wavelengths_nm)

    def test_utf8_species_names(self):
        """Test non-ASCII species names are stored as UTF-8"""
        ds = Dataset(self.ds.grid, ('Indigo carmine', 'Neutral réd'), self.ds.concentrations,
                     self.ds.absorbances, Provenance.EXPERIMENTAL)
        self.assertEqual(decode_dataset(encode_dataset(ds)).species, ('Indigo carmine', 'Neutral réd'))

    def test_bad_magic(self):
        """Test a file without the SPCD magic is rejected"""
        payload = b'XXXX' + encode_dataset(self.ds)[4:]
        with self.assertRaises(DatasetFormatError):
            decode_dataset(payload)

    def test_bad_version(self):
        """Test an unknown format version is rejected"""
        payload = bytearray(encode_dataset(self.ds))
        payload[4:6] = struct.pack('<H', 9)
        with self.assertRaises(DatasetFormatError):
            decode_dataset(bytes(payload))

    def test_truncated_records(self):
        """Test a short record section raises the truncation error"""
        with self.assertRaises(DatasetTruncatedError):
            decode_dataset(encode_dataset(self.ds)[:-8])

    def test_trailing_bytes(self):
        """Test bytes after the last record are rejected"""
        with self.assertRaises(DatasetFormatError):
            decode_dataset(encode_dataset(self.ds) + b'\x00')

    def test_missing_file_is_os_error(self):
        """Test a missing dataset file surfaces as an OS error"""
        with self.assertRaises(OSError):
            load_dataset('/nonexistent/dataset.spcd')


class TestFcnnLayers(unittest.TestCase):
    """Test convolution, merge and pooling primitives"""

    def test_same_length_identity(self):
        """Test a centered unit tap reproduces the input at the same length"""
        x = np.arange(10, dtype=float)[None, :]
        kernel = np.zeros((3, 1, 1))
        kernel[1, 0, 0] = 1.0
        np.testing.assert_array_equal(conv1d_same(x, kernel, np.zeros(1)), x)

    def test_dilated_tap_offsets(self):
        """Test tap k reads x[n + k*d - left] with left = (k-1)*d // 2"""
        x = np.arange(1, 11, dtype=float)[None, :]
        kernel = np.zeros((3, 1, 1))
        kernel[0, 0, 0] = 1.0
        out = conv1d_same(x, kernel, np.zeros(1), dilation=2)
        np.testing.assert_array_equal(out[0], np.r_[0.0, 0.0, x[0, :-2]])

    def test_relu_activation(self):
        """Test the relu activation and rejection of unknown activations"""
        x = np.array([[-1.0, 2.0, -3.0]])
        kernel = np.ones((1, 1, 1))
        np.testing.assert_array_equal(conv1d_same(x, kernel, np.zeros(1), activation='relu'), [[0.0, 2.0, 0.0]])
        with self.assertRaises(UsageError):
            conv1d_same(x, kernel, np.zeros(1), activation='tanh')

    def test_half_sum(self):
        """Test half-sum folds 2F channels into F and rejects odd counts"""
        x = np.arange(12, dtype=float).reshape(4, 3)
        np.testing.assert_array_equal(half_sum(x), x[:2] + x[2:])
        with self.assertRaises(UsageError):
            half_sum(np.zeros((3, 5)))

    def test_maxpool(self):
        """Test pooling keeps window maxima and drops the ragged tail"""
        np.testing.assert_array_equal(maxpool(np.array([[1.0, 3.0, 2.0, 5.0, 4.0]]), 2), [[3.0, 5.0]])

    def test_fractal_block_shape(self):
        """Test a fractal block keeps length and outputs F channels"""
        params = init_params(TINY_FCNN, 0)
        convs = [(params[f'block1.conv{k}.kernel'], params[f'block1.conv{k}.bias']) for k in (1, 2, 3)]
        shortcut = (params['block1.shortcut.kernel'], params['block1.shortcut.bias'])
        out, _ = fractal_block_forward(np.ones((1, 64)), convs, shortcut, (1, 2, 4))
        self.assertEqual(out.shape, (2, 64))

    def test_parameter_shapes(self):
        """Test tensor shapes for the desk-length network"""
        shapes = parameter_shapes(FcnnConfig(input_length=456))
        self.assertEqual(shapes['block1.conv1.kernel'], (3, 1, 32))
        self.assertEqual(shapes['block2.conv2.kernel'], (3, 32, 64))
        self.assertEqual(shapes['block4.shortcut.kernel'], (1, 64, 128))
        self.assertEqual(shapes['head.kernel'], (28 * 128, 2))

    def test_init_is_seeded_glorot(self):
        """Test seeded Glorot-uniform weights and zero biases"""
        a, b = init_params(TINY_FCNN, 3), init_params(TINY_FCNN, 3)
        for name, value in a.items():
            np.testing.assert_array_equal(value, b[name])
        self.assertTrue(np.all(a['head.bias'] == 0.0))
        limit = math.sqrt(6.0 / (3 * 1 + 3 * 4))
        self.assertLessEqual(np.abs(a['block1.conv1.kernel']).max(), limit)

    def test_forward_modes(self):
        """Test eval returns no trace and train returns one"""
        params = init_params(TINY_FCNN, 1)
        x = RandomSource(0).uniform(0.0, 1.0, (5, 64))
        out, trace = forward(params, TINY_FCNN, x, EVAL)
        self.assertEqual(out.shape, (5, 2))
        self.assertIsNone(trace)
        again, _ = forward(params, TINY_FCNN, x, EVAL)
        np.testing.assert_array_equal(out, again)
        with self.assertRaises(UsageError):
            forward(params, TINY_FCNN, x, TRAIN)
        with self.assertRaises(UsageError):
            forward(params, TINY_FCNN, np.zeros((1, 63)), EVAL)

    def test_dilation_four_matches_direct_sum(self):
        """Test dilation 4 against an explicit tap-by-tap sum with zero padding"""
        rng = RandomSource(31)
        x = rng.normal((2, 20))
        kernel = rng.normal((3, 2, 3))
        bias = rng.normal(3)
        left = (3 - 1) * 4 // 2
        expected = np.zeros((3, 20))
        for o in range(3):
            for n in range(20):
                total = bias[o]
                for k in range(3):
                    j = n + k * 4 - left
                    if 0 <= j < 20:
                        total += sum(kernel[k, c, o] * x[c, j] for c in range(2))
                expected[o, n] = total
        np.testing.assert_allclose(conv1d_same(x, kernel, bias, dilation=4), expected, rtol=1e-12, atol=1e-12)

    def test_block_lengths_halve_per_block(self):
        """Test pooled lengths floor-halve after each block and set the flatten width"""
        full = FcnnConfig(input_length=3648)
        self.assertEqual(full.block_lengths(), [1824, 912, 456, 228])
        self.assertEqual(full.flatten_dim, 29184)
        self.assertEqual(FcnnConfig(input_length=100, block_filters=(2, 2, 2, 2)).block_lengths(), [50, 25, 12, 6])
        _, trace = forward(init_params(TINY_FCNN, 0), TINY_FCNN, np.ones((2, 64)), TRAIN, RandomSource(0))
        self.assertEqual([block.pre_pool_length for block in trace.blocks], [64, 32, 16, 8])
        self.assertEqual(trace.pooled_shape, (2, 2, 4))

    def test_inverted_dropout_is_unbiased(self):
        """Test kept activations are rescaled so the mask averages to one"""
        config = FcnnConfig(input_length=64, output_dim=2, block_filters=(2, 2, 2, 8))
        spectra = np.tile(RandomSource(2).uniform(0.0, 1.0, 64), (10000, 1))
        _, trace = forward(init_params(config, 0), config, spectra, TRAIN, RandomSource(5))
        mask = trace.dropout_mask
        self.assertEqual(mask.shape, (10000, config.flatten_dim))
        self.assertTrue(np.all((mask == 0.0) | (mask == 2.0)))
        self.assertLess(abs(mask.mean() - 1.0), 0.01)

    def test_d_falls_as_prediction_drifts(self):
        """Test D is 1 on target and strictly decreasing with distance"""
        rng = RandomSource(14)
        targets = rng.uniform(0.0, 5.0, (6, 2))
        direction = rng.normal((6, 2))
        scores = [coefficient_of_determination(targets + t * direction, targets) for t in (0.0, 0.1, 0.5, 1.0, 2.0)]
        self.assertEqual(scores[0], 1.0)
        for nearer, farther in zip(scores, scores[1:]):
            self.assertGreater(nearer, farther)

    def test_config_rejects_short_input(self):
        """Test an input too short for four pooled blocks is rejected"""
        with self.assertRaises(ValueError):
            FcnnConfig(input_length=40, block_filters=(2, 2, 2, 2))

    def test_coefficient_of_determination(self):
        """Test D on a hand-computed case"""
        targets = np.array([[1.0, 2.0], [3.0, 4.0]])
        self.assertEqual(coefficient_of_determination(targets, targets), 1.0)
        mean = np.full_like(targets, targets.mean())
        self.assertAlmostEqual(coefficient_of_determination(mean, targets), 0.0, places=6)


class TestGradient(unittest.TestCase):
    """Test analytic gradients against central finite differences"""

    STEP = 1e-6
    TOLERANCE = 1e-4

    def _loss(self, params, x, targets):
        pred, _ = forward(params, TINY_FCNN, x, TRAIN, RandomSource(99))
        return mse_loss(pred, targets)

    def test_gradients_match_finite_differences(self):
        """Test analytic gradients against central differences"""
        for seed in range(5):
            rng = RandomSource(100 + seed)
            params = init_params(TINY_FCNN, seed)
            x = rng.uniform(0.0, 1.0, (3, 64))
            targets = rng.uniform(0.0, 5.0, (3, 2))
            _, trace = forward(params, TINY_FCNN, x, TRAIN, RandomSource(99))
            grads = backward(params, TINY_FCNN, targets, trace)

            for name, value in params.items():
                numeric = np.zeros_like(value)
                for index in np.ndindex(value.shape):
                    shifted = params.copy()
                    shifted.tensors[name][index] += self.STEP
                    up = self._loss(shifted, x, targets)
                    shifted.tensors[name][index] -= 2 * self.STEP
                    down = self._loss(shifted, x, targets)
                    numeric[index] = (up - down) / (2 * self.STEP)
                scale = max(np.linalg.norm(grads[name]) + np.linalg.norm(numeric), 1e-10)
                error = np.linalg.norm(grads[name] - numeric) / scale
                self.assertLess(error, self.TOLERANCE, f"seed {seed}, tensor {name}")

    def test_duplicated_batch_keeps_gradient(self):
        """Test the batch-mean loss gives the same gradient for a batch stacked on itself"""
        config = FcnnConfig(input_length=64, output_dim=2, block_filters=(2, 2, 2, 2), dropout_rate=0.0)
        rng = RandomSource(55)
        params = init_params(config, 1)
        x = rng.uniform(0.0, 1.0, (3, 64))
        targets = rng.uniform(0.0, 5.0, (3, 2))
        _, trace = forward(params, config, x, TRAIN)
        single = backward(params, config, targets, trace)
        _, trace = forward(params, config, np.vstack([x, x]), TRAIN)
        doubled = backward(params, config, np.vstack([targets, targets]), trace)
        for name, value in single.items():
            np.testing.assert_allclose(doubled[name], value, rtol=1e-10, atol=1e-13 * max(1.0, np.abs(value).max()))


class TestAdam(unittest.TestCase):
    """Test the Adam update"""

    def test_matches_reference_update(self):
        """Test Adam against a direct implementation of its update"""
        rng = RandomSource(0)
        params = FcnnParams({'w': rng.normal((4, 3)), 'b': rng.normal(3)})
        hyper = AdamHyper(lr=1e-3)
        state = AdamState.fresh(params)
        m = {k: np.zeros_like(v) for k, v in params.items()}
        v = {k: np.zeros_like(val) for k, val in params.items()}
        expected = {k: val.copy() for k, val in params.items()}
        for t in range(1, 4):
            grads = FcnnParams({'w': rng.normal((4, 3)), 'b': rng.normal(3)})
            params, state = adam_step(params, grads, state, hyper)
            for k in expected:
                g = grads[k]
                m[k] = 0.9 * m[k] + 0.1 * g
                v[k] = 0.999 * v[k] + 0.001 * g * g
                m_hat, v_hat = m[k] / (1 - 0.9 ** t), v[k] / (1 - 0.999 ** t)
                expected[k] = expected[k] - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8)
                np.testing.assert_allclose(params[k], expected[k], rtol=1e-12, atol=1e-15)
        self.assertEqual(state.t, 3)

    def test_first_step_moves_by_learning_rate(self):
        """Test the first Adam step moves each weight by the learning rate"""
        params = FcnnParams({'w': np.zeros(3)})
        grads = FcnnParams({'w': np.array([0.5, -2.0, 10.0])})
        new, _ = adam_step(params, grads, AdamState.fresh(params), AdamHyper(lr=0.01))
        np.testing.assert_allclose(new['w'], [-0.01, 0.01, -0.01], rtol=1e-6)


class TestTraining(unittest.TestCase):
    """Test the three-phase schedule and evaluation metrics"""

    def setUp(self):
        self.train_ds, self.val_ds = split(tiny_dataset(n_total=60, noise=NoiseParams()), 0.8, seed=2)
        self.plan = PhasePlan(epochs_per_phase=2, steps_per_epoch=3, batch_size=4, eval_batch_size=16, seed=8)

    def test_zero_epochs_returns_initial_model(self):
        """Test training with zero epochs keeps the initial weights"""
        plan = self.plan.model_copy(update={'epochs_per_phase': 0})
        result = train_full(TINY_FCNN, self.train_ds, self.val_ds, plan)
        initial = init_params(TINY_FCNN, plan.seed)
        for name, value in initial.items():
            np.testing.assert_array_equal(result.model.params[name], value)
        self.assertEqual(result.history, [])

    def test_history_and_determinism(self):
        """Test the phase schedule and that reruns give equal histories"""
        a = train_full(TINY_FCNN, self.train_ds, self.val_ds, self.plan)
        b = train_full(TINY_FCNN, self.train_ds, self.val_ds, self.plan)
        self.assertEqual(len(a.history), 3 * 2)
        self.assertEqual([p.lr for p in a.phases], [1e-3, 1e-4, 1e-5])
        self.assertEqual(a.history_records(), b.history_records())
        for name, value in a.model.params.items():
            np.testing.assert_array_equal(value, b.model.params[name])

    def test_checkpoint_monotonicity(self):
        """Test each phase keeps its best checkpoint and the best never worsens"""
        result = train_full(TINY_FCNN, self.train_ds, self.val_ds, self.plan)
        previous = math.inf
        for phase in result.phases:
            self.assertLessEqual(phase.best_val_mse, phase.initial_val_mse)
            self.assertLessEqual(phase.best_val_mse, previous)
            previous = phase.best_val_mse
        self.assertAlmostEqual(validation_mse(result.model, self.val_ds, 16), result.phases[-1].best_val_mse,
                               places=12)
        self.assertEqual(result.model.metadata['checkpoint_criterion'], 'validation_mse')

    def test_evaluate_matches_direct_sums(self):
        """Test evaluation metrics against direct numpy sums"""
        model = FcnnModel.initialized(TINY_FCNN, ('IC', 'NR'), seed=4)
        report = evaluate(model, self.val_ds)
        preds = model.predict(self.val_ds.absorbances)
        diff = preds - self.val_ds.concentrations
        self.assertAlmostEqual(report.mse, float(np.mean(diff ** 2)), delta=1e-12 * max(report.mse, 1e-30))
        self.assertAlmostEqual(report.rmse['NR'], float(np.sqrt(np.mean(diff[:, 1] ** 2))),
                               delta=1e-12 * report.rmse['NR'])
        self.assertEqual(report.n_samples, len(self.val_ds))

    def test_zero_model_on_blanks(self):
        """Test a model that predicts zero: rmse 0, D 1, zero minimum detectable concentration"""
        params = init_params(TINY_FCNN).zeros_like()
        model = FcnnModel(TINY_FCNN, params, ('IC', 'NR'))
        blanks = Dataset(self.val_ds.grid, ('IC', 'NR'), np.zeros((5, 2)), np.zeros((5, 64)))
        report = evaluate(model, blanks)
        self.assertEqual(report.rmse, {'IC': 0.0, 'NR': 0.0})
        self.assertEqual(report.d, 1.0)
        self.assertEqual(min_detectable_concentration(model, np.zeros((3, 64))), {'IC': 0.0, 'NR': 0.0})

    def test_min_detectable_single_blank(self):
        """Test the detection limit for a single blank is its raw prediction"""
        model = FcnnModel.initialized(TINY_FCNN, ('IC', 'NR'), seed=4)
        blank = RandomSource(1).uniform(0.0, 0.01, (1, 64))
        mdc = min_detectable_concentration(model, blank)
        self.assertAlmostEqual(mdc['IC'], float(model.predict(blank)[0, 0]))
        with self.assertRaises(UsageError):
            min_detectable_concentration(model, np.zeros((0, 64)))

    def test_detection_error_empty_subset_is_flagged(self):
        """Test a species with no samples under its limit is flagged"""
        model = FcnnModel.initialized(TINY_FCNN, ('IC', 'NR'), seed=4)
        result = detection_error(model, self.val_ds, {'IC': 1.0, 'NR': 0.0})
        self.assertTrue(result['IC'].flagged)
        self.assertIsNone(result['IC'].to_dict()['rmse'])
        self.assertFalse(result['NR'].flagged)

    def test_incompatible_dataset(self):
        """Test evaluation refuses a dataset of another length"""
        model = FcnnModel.initialized(FcnnConfig(input_length=128, block_filters=(2, 2, 2, 2)), ('IC', 'NR'))
        with self.assertRaises(UsageError):
            evaluate(model, self.val_ds)


class TestCheckpoint(unittest.TestCase):
    """Test the .fcnn checkpoint format"""

    def test_round_trip(self):
        """Test a model survives a checkpoint save and load"""
        model = FcnnModel.initialized(TINY_FCNN, ('IC', 'NR'), seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(model, Path(tmp) / 'm.fcnn')
            self.assertEqual(path.read_bytes()[:4], b'FCNN')
            loaded = load_checkpoint(path)
        self.assertEqual(loaded.config, TINY_FCNN)
        self.assertEqual(loaded.species, ('IC', 'NR'))
        for name, value in model.params.items():
            np.testing.assert_array_equal(loaded.params[name], value)

    def test_saving_twice_gives_identical_bytes(self):
        """Test the checkpoint bytes depend only on the model, not on when it was saved"""
        model = FcnnModel.initialized(TINY_FCNN, ('IC', 'NR'), seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            first = save_checkpoint(model, Path(tmp) / 'a.fcnn').read_bytes()
            second = save_checkpoint(model, Path(tmp) / 'b.fcnn').read_bytes()
        self.assertEqual(first, second)
        self.assertNotIn(b'created_at', first)

    def test_corrupt_files(self):
        """Test truncated or foreign checkpoint files are rejected"""
        model = FcnnModel.initialized(TINY_FCNN, ('IC', 'NR'))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(model, Path(tmp) / 'm.fcnn')
            payload = path.read_bytes()
            path.write_bytes(payload[:-16])
            with self.assertRaises(CheckpointFormatError):
                load_checkpoint(path)
            path.write_bytes(b'NOPE' + payload[4:])
            with self.assertRaises(CheckpointFormatError):
                load_checkpoint(path)


class TestEncoder(unittest.TestCase):
    """Test CSK encoding and message helpers"""

    def test_ascii7(self):
        """Test 7-bit ASCII encoding and decoding"""
        self.assertEqual(ascii7('H'), '1001000')
        self.assertEqual(ascii7('i'), '1101001')
        self.assertEqual(ascii7('!'), '0100001')
        self.assertEqual(bits_to_ascii7('10010001101001'), 'Hi')
        with self.assertRaises(UsageError):
            ascii7('é')
        with self.assertRaises(UsageError):
            bits_to_ascii7('101')

    def test_interleave_dibits(self):
        """Test seq_a supplies the high bit of each level"""
        stream = interleave_dibits('1001011', '1000011')
        self.assertEqual(dibit_levels(stream), [3, 0, 0, 2, 0, 3, 3])
        self.assertEqual(dibit_levels(interleave_dibits('0', '0')), [0])
        self.assertEqual(dibit_levels(interleave_dibits('1', '1')), [3])
        self.assertEqual(split_dibits(stream), ('1001011', '1000011'))
        with self.assertRaises(UsageError):
            interleave_dibits('10', '1')

    def test_bcsk_bit_zero(self):
        """Test a BCSK zero bit sends solvent only"""
        trace = encode_bits(bcsk('TX1', 0, 2.18e-5, t_b=900.0), '0')
        np.testing.assert_array_equal(trace.breakpoints, [0.0, 900.0])
        self.assertEqual((trace.info[0], trace.solvent[0]), (0.0, 40.0))

    def test_qcsk_pair_eleven(self):
        """Test a QCSK 11 dibit sends the top flow level"""
        trace = encode_bits(qcsk('TX1', 0, 7.2e-5), '11')
        self.assertEqual((trace.info[0], trace.solvent[0]), (60.0, 0.0))
        with self.assertRaises(UsageError):
            encode_bits(qcsk('TX1', 0, 7.2e-5), '101')

    def test_empty_message(self):
        """Test an empty message gives an empty flow trace"""
        trace = encode_bits(bcsk('TX1', 0, 2.18e-5), '')
        self.assertEqual(trace.horizon_s, 0.0)
        self.assertEqual(trace.n_segments, 0)

    def test_flow_conservation(self):
        """Test info + solvent stays at the transmitter's total"""
        bits = ''.join(str(b) for b in RandomSource(5).integers(0, 2, 40))
        for tx in (bcsk('TX1', 0, 1e-5, offset=30.0),
                   qcsk('TX2', 1, 1e-4),
                   TransmitterConfig(name='TX3', duty_cycle=0.5, bit_interval_s=100.0)):
            trace = encode_bits(tx, bits)
            np.testing.assert_allclose(trace.info + trace.solvent, tx.total_flow)
            self.assertTrue(np.all(trace.info >= 0) and np.all(trace.solvent >= 0))

    def test_duty_cycle_and_offset(self):
        """Test duty cycle and start offset shape the flow schedule"""
        tx = TransmitterConfig(name='TX1', duty_cycle=0.5, bit_interval_s=100.0, start_offset_s=20.0)
        trace = encode_bits(tx, '1')
        np.testing.assert_array_equal(trace.breakpoints, [0.0, 20.0, 70.0, 120.0])
        np.testing.assert_array_equal(trace.info, [0.0, 40.0, 0.0])

    def test_transmitter_validation(self):
        """Test inconsistent transmitter flow tables are rejected"""
        with self.assertRaises(ValueError):
            TransmitterConfig(level_flow_table=((0.0, 40.0), (30.0, 0.0)))
        with self.assertRaises(ValueError):
            TransmitterConfig(scheme='QCSK', level_flow_table=((0.0, 40.0), (40.0, 0.0)))
        with self.assertRaises(ValueError):
            TransmitterConfig(bit_interval_s=0.0)


class TestChannel(unittest.TestCase):
    """Test T-junction dilution and receiver observation"""

    def setUp(self):
        self.eps = tiny_profiles()

    def test_sync_bcsk_dilution(self):
        """Test IC stock 2.18e-5 at 40 of 80 uL/min"""
        txs = [bcsk('TX1', 0, 2.18e-5), bcsk('TX2', 1, 1.15e-4)]
        traces = [encode_bits(txs[0], '1'), encode_bits(txs[1], '0')]
        series = mix_at_junction(traces, [2.18e-5, 1.15e-4], [0, 1], 2)
        self.assertAlmostEqual(series.values[0, 0], 1.09e-5, delta=1e-20)
        self.assertEqual(series.values[0, 1], 0.0)

    def test_qcsk_received_levels(self):
        """Test received QCSK levels for the derived stocks"""
        levels = reference_levels([qcsk('TX1', 0, 7.2e-5), qcsk('TX2', 1, 1.72e-4)])
        expected = {'TX1': [1.2e-5, 2.4e-5, 3.6e-5], 'TX2': [2.9e-5, 5.7e-5, 8.6e-5]}
        for name, values in expected.items():
            self.assertEqual(levels[name][0], 0.0)
            for got, want in zip(levels[name][1:], values):
                self.assertLessEqual(abs(got - want), 0.05e-5)

    def test_dilution_inverts_to_stock(self):
        """Test junction concentrations invert back to the stock via the flow ratio"""
        txs = [qcsk('TX1', 0, 7.2e-5), qcsk('TX2', 1, 1.72e-4)]
        traces = [encode_bits(txs[0], '01101100'), encode_bits(txs[1], '11100100')]
        series = mix_at_junction(traces, [7.2e-5, 1.72e-4], [0, 1], 2)
        for k in range(series.values.shape[0]):
            for trace, stock, species in zip(traces, (7.2e-5, 1.72e-4), (0, 1)):
                info, _ = trace.rates_at(series.breakpoints[k])
                if info > 0:
                    recovered = series.values[k, species] * 120.0 / info
                    self.assertLess(abs(recovered / stock - 1.0), 1e-12)

    def test_zero_total_flow(self):
        """Test a junction with no flow is a domain error"""
        dry = FlowTrace(np.array([0.0, 10.0]), np.zeros(1), np.zeros(1))
        with self.assertRaises(DomainError):
            mix_at_junction([dry], [1e-5], [0], 2)

    def test_misaligned_horizons(self):
        """Test unequal horizons are refused at the junction until padded with zero flow"""
        short = encode_bits(bcsk('TX1', 0, 1e-5), '1')
        long = encode_bits(bcsk('TX2', 1, 1e-5), '10')
        with self.assertRaises(UsageError):
            mix_at_junction([short, long], [1e-5, 1e-5], [0, 1], 2)
        aligned = align_traces([short, long], [40.0, 40.0])
        self.assertEqual(aligned[0].horizon_s, 120.0)
        self.assertEqual(aligned[0].info[-1], 0.0)

    def test_sample_times(self):
        """Test sampling instants stop before the horizon"""
        np.testing.assert_array_equal(sample_times(60.0, 10.0), [0, 10, 20, 30, 40, 50])

    def test_ideal_observation_matches_beer_lambert(self):
        """Test noise-free observation equals the Beer-Lambert mixture"""
        series = ConcentrationSeries(np.array([0.0, 30.0, 60.0]), np.array([[1e-5, 0.0], [2e-5, 5e-5]]))
        link = LinkConfig([], self.eps)
        observed = channel_observe(series, link)
        self.assertEqual(observed.absorbances.shape, (6, 64))
        np.testing.assert_allclose(observed.absorbances[4], mix_absorbances(self.eps, [2e-5, 5e-5], link.path_length))
        np.testing.assert_array_equal(observed.absorbances[0], observed.absorbances[2])

    def test_first_order_lag_step(self):
        """Test 1 - 1/e of the final value after one time constant"""
        series = ConcentrationSeries(np.array([0.0, 1000.0]), np.array([[1e-5, 0.0]]))
        observed = channel_observe(series, LinkConfig([], self.eps, tau_s=50.0))
        self.assertAlmostEqual(observed.true_concentrations[5, 0] / 1e-5, 1.0 - math.exp(-1.0), places=12)
        self.assertEqual(observed.true_concentrations[0, 0], 0.0)

    def test_noise_needs_random_source(self):
        """Test a noisy channel refuses to run without a random source"""
        series = ConcentrationSeries(np.array([0.0, 30.0]), np.array([[1e-5, 0.0]]))
        with self.assertRaises(UsageError):
            channel_observe(series, LinkConfig([], self.eps, noise=NoiseParams()))

    def test_link_config_validation(self):
        """Test link settings are validated"""
        with self.assertRaises(UsageError):
            LinkConfig([], self.eps, sampling_period_s=0.0)
        with self.assertRaises(UsageError):
            LinkConfig([bcsk('TX1', 5, 1e-5)], self.eps)


class TestDemodulator(unittest.TestCase):
    """Test framing, level decisions and genie round trips"""

    def setUp(self):
        self.eps = tiny_profiles()
        self.genie = GenieBeerLambertPredictor(self.eps)

    def test_ber(self):
        """Test the bit error rate and length mismatch handling"""
        self.assertEqual(ber('1010', '1010'), 0.0)
        self.assertEqual(ber('1010', '0101'), 1.0)
        self.assertAlmostEqual(ber('11110000000000', '00000000000000'), 4 / 14)
        with self.assertRaises(UsageError):
            ber('10', '1')

    def test_nearest_level_ties_go_low(self):
        """Test nearest-level decisions and that ties pick the lower level"""
        self.assertEqual(nearest_level(0.5, [0.0, 1.0]), 0)
        self.assertEqual(nearest_level(0.51, [0.0, 1.0]), 1)
        self.assertEqual(nearest_level(2.6, [0.0, 1.2, 2.4, 3.6]), 2)

    def test_hi_sync_bcsk(self):
        """Test the synchronized "H"/"i" transmission decodes exactly"""
        link = LinkConfig([bcsk('TX1', 0, 2.18e-5), bcsk('TX2', 1, 1.15e-4)], self.eps)
        run = run_link(link, {'TX1': ascii7('H'), 'TX2': ascii7('i')}, self.genie)
        self.assertEqual(run.decoded.bits, {'TX1': '1001000', 'TX2': '1101001'})
        self.assertEqual(run.decoded.overall_ber, 0.0)

    def test_all_zero_series(self):
        """Test all-zero messages decode as zeros"""
        link = LinkConfig([bcsk('TX1', 0, 2.18e-5), bcsk('TX2', 1, 1.15e-4)], self.eps)
        run = run_link(link, {'TX1': '0000', 'TX2': '000'}, self.genie)
        self.assertEqual(run.decoded.bits, {'TX1': '0000', 'TX2': '000'})

    def test_frame_past_series(self):
        """Test asking for more frames than the series holds is a usage error"""
        txs = [bcsk('TX1', 0, 2.18e-5)]
        link = LinkConfig(txs, self.eps)
        run = run_link(link, {'TX1': '10'}, self.genie)
        with self.assertRaises(UsageError):
            demodulate(self.genie, run.observed, txs, reference_levels(txs), {'TX1': 3})

    def test_genie_round_trips(self):
        """Test random messages survive sync, desync and QCSK links without noise"""
        rng = RandomSource(77)
        cases = [
            [bcsk('TX1', 0, 2.18e-5), bcsk('TX2', 1, 1.15e-4)],
            [bcsk('TX1', 0, 2.18e-5, t_b=1500.0, offset=300.0, flow=25.0),
             bcsk('TX2', 1, 1.15e-4, t_b=900.0, offset=1200.0)],
            [qcsk('TX1', 0, 7.2e-5), qcsk('TX2', 1, 1.72e-4)],
        ]
        for txs in cases:
            messages = {tx.name: ''.join(str(b) for b in rng.integers(0, 2, 12)) for tx in txs}
            run = run_link(LinkConfig(txs, self.eps), messages, self.genie)
            self.assertEqual(run.decoded.bits, messages)
            self.assertEqual(run.decoded.overall_ber, 0.0)
            for tx in txs:
                frames = [d for d in run.decoded.decisions if d.transmitter == tx.name]
                self.assertEqual(len(frames), 12 // tx.bits_per_symbol)

    def test_level_means_recorded(self):
        """Test decoded frame means are kept alongside the reference levels"""
        link = LinkConfig([qcsk('TX1', 0, 7.2e-5), qcsk('TX2', 1, 1.72e-4)], self.eps)
        bits = interleave_dibits(ascii7('K'), ascii7('C'))
        run = run_link(link, {'TX1': bits, 'TX2': interleave_dibits(ascii7('L'), ascii7('!'))}, self.genie)
        self.assertEqual(len(run.decoded.bits['TX1']), 14)
        np.testing.assert_allclose(run.decoded.frame_means['TX1'][0], run.reference['TX1'][3], rtol=1e-9)


class TestConfiguration(unittest.TestCase):
    """Test configuration loading and validation"""

    def test_defaults(self):
        """Test the full-scale configuration defaults"""
        config = RunConfig()
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.noise.e_max, 0.02)
        self.assertEqual(config.sampling.n_total, 12000)
        self.assertEqual(config.training.plan(0).learning_rates, (1e-3, 1e-4, 1e-5))
        self.assertEqual(config.path_length_cm, 0.25)
        self.assertFalse(config.link.uses_model)

    def test_env_substitution(self):
        """Test environment substitution and its missing-variable error"""
        with patch.dict(os.environ, {'SPECTRALINK_TEST_DATASET': '/data/x.spcd'}):
            self.assertEqual(substitute_env_vars({'training': {'dataset': '${SPECTRALINK_TEST_DATASET}'}}),
                             {'training': {'dataset': '/data/x.spcd'}})
        with patch.dict(os.environ, {}, clear=True):
            with self.assertRaises(ConfigError):
                build_run_config({'training': {'dataset': '${SPECTRALINK_TEST_DATASET}'}})

    def test_invalid_values(self):
        """Test invalid configuration values raise ConfigError"""
        with self.assertRaises(ConfigError):
            build_run_config({'noise': {'e_max': 2.0}})
        with self.assertRaises(ConfigError):
            build_run_config({'grid': {'colour': 'blue'}})
        with self.assertRaises(ConfigError):
            build_run_config({'link': {'messages': {'TX9': 'x'}}})

    def test_seed_override(self):
        """Test the command-line seed overrides the file seed"""
        self.assertEqual(build_run_config({'seed': 4}, seed=9).seed, 9)

    def test_settings_from_environment(self):
        """Test environment settings feed the CLI defaults"""
        with patch.dict(os.environ, {'SPECTRALINK_OUT': 'runs/elsewhere'}):
            self.assertEqual(SpectraLinkSettings().out, 'runs/elsewhere')

    def test_presets_load(self):
        """Test every shipped preset parses"""
        for name in ('desk', 'bcsk_sync', 'bcsk_desync', 'qcsk_sync', 'calibration'):
            config = load_run_config(PRESETS / f'{name}.yaml')
            self.assertIsInstance(config, RunConfig, name)
        desk = load_run_config(PRESETS / 'desk.yaml')
        self.assertEqual((desk.grid.kind, desk.sampling.n_total, desk.training.epochs_per_phase), ('desk', 4000, 20))
        qcsk_preset = load_run_config(PRESETS / 'qcsk_sync.yaml')
        self.assertEqual([tx.scheme for tx in qcsk_preset.link.transmitters], ['QCSK', 'QCSK'])


class TestCommandLine(TempDirTestCase):
    """Test the CLI commands end to end on tiny runs"""

    def gen(self, name='gen', **overrides):
        out = self.tmp / name
        code = cmd_gen_dataset(self.write_config(f'{name}.yaml', **overrides), out, quiet=True)
        self.assertEqual(code, EXIT_OK)
        return out / 'dataset.spcd'

    def test_gen_dataset_is_reproducible(self):
        """Test two gen-dataset runs give byte-identical files"""
        first = self.gen('a')
        second = self.gen('b')
        self.assertEqual(first.read_bytes(), second.read_bytes())
        ds = load_dataset(first)
        self.assertEqual(len(ds), 100)
        self.assertEqual(ds.provenance.tag, 'sim_noisy')
        self.assertTrue((self.tmp / 'a' / 'resolved_config.yaml').exists())
        self.assertTrue((self.tmp / 'a' / 'spectra_comparison.csv').exists())

    def test_gen_dataset_without_noise(self):
        """Test disabling noise writes a clean dataset"""
        path = self.gen('clean', noise={'enabled': False})
        self.assertEqual(load_dataset(path).provenance, Provenance.SIM_CLEAN)

    def test_gen_dataset_plots(self):
        """Test the plots flag writes the spectra comparison figure"""
        out = self.tmp / 'plots'
        code = run_command('gen-dataset', self.write_config('p.yaml'), out, quiet=True, plots=True)
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((out / 'spectra_comparison.png').exists())

    def test_fit_extinction(self):
        """Test the CLI fit recovers the generating profiles"""
        dataset = self.gen('clean', noise={'enabled': False})
        out = self.tmp / 'fit'
        code = cmd_fit_extinction(self.write_config('fit.yaml', calibration={'dataset': str(dataset)}), out)
        self.assertEqual(code, EXIT_OK)
        fitted = load_extinction_csv(out / 'extinction.csv')
        np.testing.assert_allclose(fitted.eps, tiny_profiles().eps, rtol=1e-9, atol=1e-6)
        report = json.loads((out / 'calibration_report.json').read_text())
        self.assertTrue(report['identifiable'])

    def test_fit_extinction_rank_deficient(self):
        """Test an unidentifiable design exits with the domain code"""
        eps = tiny_profiles()
        base = np.linspace(1e-6, 5e-5, 10)
        conc = np.column_stack([base, 3.0 * base])
        path = save_dataset(Dataset(eps.grid, eps.species, conc, mix_absorbances(eps, conc)),
                            self.tmp / 'bad.spcd')
        out = self.tmp / 'fit'
        code = cmd_fit_extinction(self.write_config('fit.yaml', calibration={'dataset': str(path)}), out)
        self.assertEqual(code, EXIT_DOMAIN)
        self.assertFalse((out / 'extinction.csv').exists())

    def test_fit_extinction_missing_dataset(self):
        """Test a missing calibration dataset exits with the I/O code"""
        config = self.write_config('fit.yaml', calibration={'dataset': str(self.tmp / 'missing.spcd')})
        self.assertEqual(cmd_fit_extinction(config, self.tmp / 'fit'), EXIT_IO)

    def test_train_zero_epochs(self):
        """Test training with zero epochs saves the initial weights and an empty history"""
        dataset = self.gen()
        out = self.tmp / 'train0'
        config = self.write_config('t.yaml', training={'dataset': str(dataset), 'epochs_per_phase': 0})
        self.assertEqual(cmd_train(config, out), EXIT_OK)
        model = load_checkpoint(out / 'model.fcnn')
        for name, value in init_params(model.config, 3).items():
            np.testing.assert_array_equal(model.params[name], value)
        self.assertEqual(len(pd.read_csv(out / 'history.csv')), 0)

    def test_train_history_is_reproducible(self):
        """Test two train runs write identical histories"""
        dataset = self.gen()
        config = self.write_config('t.yaml', training={'dataset': str(dataset)})
        self.assertEqual(cmd_train(config, self.tmp / 'r1'), EXIT_OK)
        self.assertEqual(cmd_train(config, self.tmp / 'r2'), EXIT_OK)
        history = pd.read_csv(self.tmp / 'r1' / 'history.csv')
        self.assertEqual(len(history), 6)
        self.assertEqual(list(history.columns), ['phase', 'epoch', 'train_mse', 'val_mse'])
        self.assertEqual((self.tmp / 'r1' / 'history.csv').read_bytes(),
                         (self.tmp / 'r2' / 'history.csv').read_bytes())

    def test_desk_run_is_bitwise_reproducible(self):
        """Test a repeated desk-grid generate and train run writes identical files"""
        runs = []
        for name in ('r1', 'r2'):
            out = self.tmp / name
            config = self.write_config(f'{name}.yaml', grid={'kind': 'desk'},
                                       training={'dataset': str(out / 'dataset.spcd')})
            self.assertEqual(cmd_gen_dataset(config, out, quiet=True), EXIT_OK)
            self.assertEqual(cmd_train(config, out, quiet=True), EXIT_OK)
            runs.append(out)
        for artifact in ('dataset.spcd', 'model.fcnn', 'history.csv', 'training_summary.json'):
            self.assertEqual((runs[0] / artifact).read_bytes(), (runs[1] / artifact).read_bytes(), artifact)

    def _zero_model(self) -> Path:
        model = FcnnModel(TINY_FCNN, init_params(TINY_FCNN).zeros_like(), ('IC', 'NR'))
        return save_checkpoint(model, self.tmp / 'zero.fcnn')

    def test_eval_oracle_fixture(self):
        """Test a zero-predicting model on an all-blank dataset"""
        grid = uniform_grid(400.0, 850.0, 64)
        dataset = save_dataset(Dataset(grid, ('IC', 'NR'), np.zeros((8, 2)), np.zeros((8, 64))),
                               self.tmp / 'blank.spcd')
        out = self.tmp / 'eval'
        self.assertEqual(cmd_eval(self._zero_model(), dataset, out, quiet=True), EXIT_OK)
        metrics = json.loads((out / 'metrics.json').read_text())
        for key in ('mse', 'rmse', 'd', 'min_detectable', 'detection_error'):
            self.assertIn(key, metrics)
        self.assertEqual(metrics['rmse'], {'IC': 0.0, 'NR': 0.0})
        self.assertEqual(metrics['d'], 1.0)

    def test_eval_grid_mismatch(self):
        """Test evaluating on a different grid exits with the usage code"""
        grid = uniform_grid(400.0, 850.0, 128)
        dataset = save_dataset(Dataset(grid, ('IC', 'NR'), np.zeros((4, 2)), np.zeros((4, 128))),
                               self.tmp / 'wide.spcd')
        self.assertEqual(cmd_eval(self._zero_model(), dataset, self.tmp / 'eval', quiet=True), EXIT_USAGE)

    def test_simulate_link_bcsk(self):
        """Test a noise-free BCSK link decodes Hi"""
        out = self.tmp / 'link'
        config = self.write_config('link.yaml', link={
            'transmitters': [bcsk('TX1', 0, 2.18e-5).model_dump(mode='json'),
                             bcsk('TX2', 1, 1.15e-4).model_dump(mode='json')],
            'messages': {'TX1': 'H', 'TX2': 'i'}, 'noise': False, 'predictor': 'genie'})
        self.assertEqual(cmd_simulate_link(config, out, quiet=True), EXIT_OK)
        summary = json.loads((out / 'link_summary.json').read_text())
        self.assertEqual(summary['ber'], 0.0)
        self.assertEqual(summary['decoded_message'], 'Hi')
        self.assertEqual(summary['decision_rule'], 'nearest_level_lower_on_tie')
        self.assertEqual(summary['n_bits_total'], 14)
        decisions = pd.read_csv(out / 'decisions.csv')
        self.assertEqual(len(decisions), 14)
        trace = pd.read_csv(out / 'link_trace.csv')
        self.assertEqual(list(trace.columns), ['time_s', 'true_IC', 'true_NR', 'pred_IC', 'pred_NR'])

    def test_simulate_link_qcsk(self):
        """Test a noise-free QCSK link decodes KCL! and reports bit counts"""
        out = self.tmp / 'qcsk'
        config = self.write_config('qcsk.yaml', link={
            'transmitters': [qcsk('TX1', 0, 7.2e-5).model_dump(mode='json'),
                             qcsk('TX2', 1, 1.72e-4).model_dump(mode='json')],
            'messages': {'TX1': 'KC', 'TX2': 'L!'}, 'noise': False, 'predictor': 'genie'})
        self.assertEqual(cmd_simulate_link(config, out, quiet=True), EXIT_OK)
        summary = json.loads((out / 'link_summary.json').read_text())
        self.assertEqual(summary['decoded_message'], 'KCL!')
        self.assertEqual(summary['transmitters']['TX1']['n_bits'], 14)
        self.assertEqual(summary['n_bits_per_transmitter'], {'TX1': 14, 'TX2': 14})
        self.assertEqual(summary['n_bits_total'], 28)
        self.assertTrue(0.0 <= summary['ber'] <= 1.0)

    def test_exit_codes_for_bad_inputs(self):
        """Test exit codes for a missing file, a bad value and a missing dataset"""
        self.assertEqual(run_command('gen-dataset', self.tmp / 'missing.yaml', self.tmp / 'x'), EXIT_IO)
        bad = self.write_config('bad.yaml', noise={'e_max': 5.0})
        self.assertEqual(run_command('gen-dataset', bad, self.tmp / 'x'), EXIT_USAGE)
        self.assertEqual(run_command('train', self.write_config('t.yaml'), self.tmp / 'x'), EXIT_USAGE)

    def test_argument_parsing(self):
        """Test command-line arguments map onto the command options"""
        import main
        args = main.parse_arguments(['train', '--config', 'c.yaml', '--out', 'o', '--seed', '5', '--quiet'])
        self.assertEqual((args.command, args.config, args.out, args.seed, args.quiet), ('train', 'c.yaml', 'o', 5, True))
        args = main.parse_arguments(['eval', '--model', 'm.fcnn', '--dataset', 'd.spcd'])
        self.assertIsNone(args.config)


@unittest.skipUnless(SLOW, "set SPECTRALINK_SLOW_TESTS=1 for desk-scale runs")
class TestDeskScaleAcceptance(unittest.TestCase):
    """Desk-scale training and trained-model links"""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.tmp = Path(cls._tmp.name)
        cls.desk = load_run_config(PRESETS / 'desk.yaml').model_dump(mode='json')
        cls.desk['logging'] = {'level': 'WARNING'}
        cls.desk['training']['dataset'] = str(cls.tmp / 'noisy' / 'dataset.spcd')
        cls.config = cls.write('desk.yaml', cls.desk)
        assert cmd_gen_dataset(cls.config, cls.tmp / 'noisy', quiet=True) == EXIT_OK
        assert cmd_train(cls.config, cls.tmp / 'noisy', quiet=True) == EXIT_OK
        cls.model_path = cls.tmp / 'noisy' / 'model.fcnn'

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    @classmethod
    def write(cls, name, data) -> Path:
        path = cls.tmp / name
        with open(path, 'w') as f:
            yaml.safe_dump(data, f)
        return path

    def test_validation_accuracy(self):
        """Test the desk model reaches D above 0.95 on validation"""
        summary = json.loads((self.tmp / 'noisy' / 'training_summary.json').read_text())
        self.assertGreater(summary['validation']['d'], 0.95)
        c_max = self.desk['sampling']['c_max']
        for name, rmse in summary['validation']['rmse'].items():
            self.assertLess(rmse, 0.1 * c_max[name])
        phase1 = summary['phases'][0]
        self.assertLess(phase1['best_val_mse'], phase1['initial_val_mse'])

    def _link(self, preset):
        data = load_run_config(PRESETS / f'{preset}.yaml').model_dump(mode='json')
        data['logging'] = {'level': 'WARNING'}
        data['link']['model'] = str(self.model_path)
        out = self.tmp / preset
        self.assertEqual(cmd_simulate_link(self.write(f'{preset}.yaml', data), out, quiet=True), EXIT_OK)
        return json.loads((out / 'link_summary.json').read_text())

    def test_bcsk_sync_link(self):
        """Test the trained model decodes the synchronized BCSK link"""
        summary = self._link('bcsk_sync')
        self.assertEqual(summary['ber'], 0.0)
        self.assertEqual(summary['decoded_message'], 'Hi')

    def test_bcsk_desync_link(self):
        """Test the trained model decodes the desynchronized BCSK link"""
        self.assertEqual(self._link('bcsk_desync')['ber'], 0.0)

    def test_qcsk_link(self):
        """Test the trained model decodes the QCSK link"""
        summary = self._link('qcsk_sync')
        self.assertEqual(summary['ber'], 0.0)
        self.assertEqual(summary['decoded_message'], 'KCL!')

    def test_noise_ablation(self):
        """Test clean-trained models detect worse on noisy spectra"""
        clean = dict(self.desk, noise={'enabled': False})
        assert cmd_gen_dataset(self.write('clean.yaml', clean), self.tmp / 'clean', quiet=True) == EXIT_OK
        compare = dict(self.desk, evaluation={'clean_dataset': str(self.tmp / 'clean' / 'dataset.spcd'),
                                              'noisy_dataset': str(self.tmp / 'noisy' / 'dataset.spcd')})
        out = self.tmp / 'compare'
        self.assertEqual(run_command('compare', self.write('compare.yaml', compare), out, quiet=True), EXIT_OK)
        results = json.loads((out / 'comparison.json').read_text())
        for name in ('IC', 'NR'):
            self.assertGreater(results['clean']['evaluation']['rmse'][name],
                               results['noisy']['evaluation']['rmse'][name])
            self.assertGreater(results['clean']['min_detectable'][name], results['noisy']['min_detectable'][name])


if __name__ == '__main__':
    unittest.main()
