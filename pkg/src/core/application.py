"""
SpectraLink core application
Orchestrates the spectral, dataset, training and link components behind each CLI command
"""

from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from .data.dataset import (
    blank_ensemble, export_dataset_csv, generate_simulated_dataset, load_dataset,
    save_dataset, spectra_comparison, split, stratum_counts
)
from .ml.fcnn import FcnnModel
from .ml.training import assess, compare_training_sets, evaluate, train_full
from .modem.demodulator import GenieBeerLambertPredictor, level_means, run_link
from .modem.encoder import ascii7, bits_to_ascii7, interleave_dibits, split_dibits
from .spectral.beer_lambert import (
    DESK_DOWNSAMPLE_FACTOR, default_grid, downsample_profiles, load_extinction_csv,
    save_extinction_csv, synthetic_profile_set, uniform_grid
)
from .spectral.calibration import calibrate
from .spectral.noise import RandomSource
from ..config.settings import RunConfig, dump_resolved_config, load_run_config
from ..models.dataset_models import Dataset, SamplingPlan
from ..models.link_models import LinkConfig, TransmitterConfig
from ..models.spectral_models import ConcentrationVector, ExtinctionProfileSet, PathLength, WavelengthGrid
from ..storage.checkpoint import load_checkpoint, save_checkpoint
from ..utils.errors import EXIT_OK, CalibrationError, UsageError, exit_code_for
from ..utils.logger import DEFAULT_LOGGING, get_logger, setup_logging
from ..utils.reporting import (
    flow_trace_frame, history_frame, link_trace_frame, write_json, write_records, write_table
)

logger = get_logger(__name__)

# Independent variate streams per purpose, all derived from the run seed
STREAM_COMPARISON = 2
STREAM_BLANKS = 3
STREAM_LINK = 4


class SpectraLinkApplication:
    """One configured run writing its artifacts under out_dir"""

    def __init__(self, config: RunConfig, out_dir: Union[str, Path], plots: bool = False):
        self.config = config
        self.out_dir = Path(out_dir)
        self.plots = plots
        self.rng_root = RandomSource(config.seed)

    # -- building blocks -------------------------------------------------------

    @property
    def path_length(self) -> PathLength:
        return PathLength(self.config.path_length_cm)

    def profiles(self) -> ExtinctionProfileSet:
        """Extinction profiles on the configured grid"""
        section, grid_section = self.config.extinction, self.config.grid
        if section.csv:
            eps = load_extinction_csv(section.csv)
        else:
            base = (uniform_grid(grid_section.start_nm, grid_section.stop_nm, grid_section.points)
                    if grid_section.kind == 'uniform' else default_grid())
            eps = synthetic_profile_set(base, [band.model_dump() for band in section.bands])
        if grid_section.kind == 'desk':
            eps = downsample_profiles(eps, DESK_DOWNSAMPLE_FACTOR)
        if grid_section.downsample_factor and grid_section.downsample_factor > 1:
            eps = downsample_profiles(eps, grid_section.downsample_factor)
        logger.debug(f"Extinction profiles {list(eps.species)} on {len(eps.grid)} points")
        return eps

    def sampling_plan(self, species) -> SamplingPlan:
        plan = self.config.sampling.model_copy(update={'seed': self.config.seed})
        if tuple(plan.species) != tuple(species):
            raise UsageError(f"sampling species {list(plan.species)} do not match profiles {list(species)}")
        return plan

    def out(self, name: str) -> Path:
        return self.out_dir / name

    def _grid_metadata(self, grid: WavelengthGrid) -> dict:
        return {'start_nm': grid.start_nm, 'stop_nm': grid.stop_nm, 'points': len(grid)}

    def _check_model_grid(self, model: FcnnModel, grid: WavelengthGrid, what: str):
        if model.config.input_length != len(grid):
            raise UsageError(f"model expects {model.config.input_length} points, {what} has {len(grid)}")
        stored = model.metadata.get('grid')
        if stored and not np.allclose([stored['start_nm'], stored['stop_nm']], [grid.start_nm, grid.stop_nm]):
            raise UsageError(f"model trained on {stored['start_nm']:g}-{stored['stop_nm']:g} nm, {what} covers "
                             f"{grid.start_nm:g}-{grid.stop_nm:g} nm")

    def _blanks(self, grid: WavelengthGrid) -> np.ndarray:
        return blank_ensemble(grid, self.config.noise.params(), self.rng_root.spawn(STREAM_BLANKS),
                              self.config.evaluation.blank_replicas)

    # -- commands ----------------------------------------------------------------

    def fit_extinction(self) -> Dict[str, Any]:
        section = self.config.calibration
        if not section.dataset:
            raise UsageError("calibration.dataset is required to fit extinction profiles")
        ds = load_dataset(section.dataset)
        samples = [(s.conc, s.spectrum) for s in ds.samples]
        try:
            eps, report = calibrate(samples, self.path_length)
        except CalibrationError as e:
            write_json({'error': str(e), 'species': e.species, 'condition_number': e.condition_number,
                        'n_samples': len(ds)}, self.out(section.report))
            raise
        save_extinction_csv(eps, self.out(section.output))
        write_json(report.to_dict(), self.out(section.report))
        return {'species': list(eps.species), **report.to_dict()}

    def gen_dataset(self) -> Dict[str, Any]:
        eps = self.profiles()
        plan = self.sampling_plan(eps.species)
        noise = self.config.noise.params()
        counts = stratum_counts(plan)
        ds = generate_simulated_dataset(eps, plan, self.path_length, noise, RandomSource(plan.seed))
        path = save_dataset(ds, self.out(self.config.dataset.output))
        print(f"Generated {len(ds)} samples ({ds.provenance.tag}): "
              + ", ".join(f"{k}={v}" for k, v in counts.items()))

        if self.config.dataset.export_csv:
            export_dataset_csv(ds, path.with_suffix('.csv'))
        if self.config.dataset.comparison and noise is not None:
            middle = ConcentrationVector(plan.upper_bounds() / (2 * plan.overshoot), eps.species)
            frame = spectra_comparison(eps, middle, self.path_length, noise,
                                       self.rng_root.spawn(STREAM_COMPARISON))
            write_table(frame, self.out('spectra_comparison.csv'))
            if self.plots:
                from ..utils.plotting import plot_spectra_comparison
                plot_spectra_comparison(frame, self.out('spectra_comparison.png'))
        return {'path': str(path), 'n_samples': len(ds), 'provenance': ds.provenance.tag, 'strata': counts}

    def _training_sets(self) -> Tuple[Dataset, Dataset]:
        section = self.config.training
        if not section.dataset:
            raise UsageError("training.dataset is required")
        ds = load_dataset(section.dataset)
        if section.validation_dataset:
            val = load_dataset(section.validation_dataset)
            val.require_compatible(ds.grid, ds.species)
            return ds, val
        return split(ds, section.train_fraction, self.config.seed)

    def train(self) -> Dict[str, Any]:
        train_ds, val_ds = self._training_sets()
        fcnn_config = self.config.model.fcnn_config(len(train_ds.grid), len(train_ds.species))
        plan = self.config.training.plan(self.config.seed)
        result = train_full(fcnn_config, train_ds, val_ds, plan)
        model = result.model
        model.metadata['grid'] = self._grid_metadata(train_ds.grid)

        save_checkpoint(model, self.out(self.config.training.checkpoint))
        history = history_frame(result.history_records())
        write_table(history, self.out('history.csv'))
        report = evaluate(model, val_ds, self.config.evaluation.theta)
        summary = {
            'final_val_mse': model.metadata['final_val_mse'],
            'batch_sampling': model.metadata['batch_sampling'],
            'validation': report.to_dict(),
            'phases': [{'phase': p.phase, 'lr': p.lr, 'best_epoch': p.best_epoch,
                        'initial_val_mse': p.initial_val_mse, 'best_val_mse': p.best_val_mse}
                       for p in result.phases],
        }
        write_json(summary, self.out('training_summary.json'))
        print(f"Final validation MSE {summary['final_val_mse']:.6g} (internal units), D = {report.d:.6f}")
        if self.plots:
            from ..utils.plotting import plot_history
            plot_history(history, self.out('history.png'))
        return summary

    def eval(self, model_path: Optional[str] = None, dataset_path: Optional[str] = None) -> Dict[str, Any]:
        model_path = model_path or self.config.evaluation.model
        dataset_path = dataset_path or self.config.evaluation.dataset
        if not model_path or not dataset_path:
            raise UsageError("evaluation needs a model and a dataset")
        model = load_checkpoint(model_path)
        ds = load_dataset(dataset_path)
        self._check_model_grid(model, ds.grid, 'dataset')

        comparison = assess(model, Path(model_path).stem, ds, self._blanks(ds.grid))
        metrics = {
            'mse': comparison.evaluation.mse,
            'rmse': comparison.evaluation.rmse,
            'd': comparison.evaluation.d,
            'min_detectable': comparison.min_detectable,
            'detection_error': {k: v.to_dict() for k, v in comparison.detection.items()},
            'n_samples': comparison.evaluation.n_samples,
            'model': str(model_path),
            'dataset': str(dataset_path),
        }
        write_json(metrics, self.out('metrics.json'))
        print(f"MSE {metrics['mse']:.6g}, D {metrics['d']:.6f}, RMSE {metrics['rmse']}")
        return metrics

    def _messages(self, txs) -> Dict[str, str]:
        section = self.config.link
        bits = {}
        for tx in txs:
            message = section.messages.get(tx.name, '')
            if section.message_format == 'bits':
                bits[tx.name] = message
            elif tx.scheme == 'QCSK':
                if len(message) % 2:
                    raise UsageError(f"{tx.name}: QCSK text needs an even number of characters, got {message!r}")
                bits[tx.name] = interleave_dibits(ascii7(message[0::2]), ascii7(message[1::2]))
            else:
                bits[tx.name] = ascii7(message)
        return bits

    @staticmethod
    def decoded_text(tx: TransmitterConfig, bits: str) -> str:
        if tx.scheme == 'QCSK':
            high, low = split_dibits(bits)
            return ''.join(a + b for a, b in zip(bits_to_ascii7(high), bits_to_ascii7(low)))
        return bits_to_ascii7(bits)

    def simulate_link(self) -> Dict[str, Any]:
        section = self.config.link
        eps = self.profiles()
        link = LinkConfig(section.transmitters, eps, self.path_length, section.sampling_period_s,
                          section.tau_s, self.config.noise.params() if section.noise else None)
        if section.uses_model:
            model = load_checkpoint(section.model)
            self._check_model_grid(model, eps.grid, 'link profiles')
            if model.species != eps.species:
                raise UsageError(f"model species {list(model.species)} do not match profiles {list(eps.species)}")
            predictor, predictor_name = model, 'fcnn'
        else:
            predictor, predictor_name = GenieBeerLambertPredictor(eps, self.path_length), 'genie'

        messages = self._messages(section.transmitters)
        run = run_link(link, messages, predictor, self.rng_root.spawn(STREAM_LINK))
        decoded = run.decoded

        trace = link_trace_frame(run.observed.times_s, run.observed.true_concentrations, run.predictions,
                                 eps.species)
        flows = flow_trace_frame(run.traces)
        write_table(trace, self.out('link_trace.csv'))
        write_table(flows, self.out('flows.csv'))
        write_records([vars(d) for d in decoded.decisions], self.out('decisions.csv'),
                      columns=['transmitter', 'frame', 'start_s', 'end_s', 'n_samples',
                               'mean_concentration', 'level', 'bits'])

        transmitters = {}
        for tx in section.transmitters:
            entry = {'scheme': tx.scheme, 'sent_bits': messages[tx.name], 'decoded_bits': decoded.bits[tx.name],
                     'n_bits': len(decoded.bits[tx.name]), 'ber': decoded.ber[tx.name],
                     'reference_levels': run.reference[tx.name],
                     'level_means': level_means(decoded, run.sent_levels)[tx.name]}
            if section.message_format == 'text':
                entry['sent_text'] = section.messages.get(tx.name, '')
                entry['decoded_text'] = self.decoded_text(tx, decoded.bits[tx.name])
            transmitters[tx.name] = entry
        summary = {'predictor': predictor_name, 'decision_rule': decoded.decision_rule,
                   'ber': decoded.overall_ber, 'n_bits_total': sum(len(b) for b in decoded.bits.values()),
                   'n_bits_per_transmitter': {name: len(b) for name, b in decoded.bits.items()},
                   'transmitters': transmitters}
        if section.message_format == 'text':
            summary['decoded_message'] = ''.join(t.get('decoded_text', '') for t in transmitters.values())
        write_json(summary, self.out('link_summary.json'))
        print(f"Link BER {decoded.overall_ber:.4f} over {summary['n_bits_total']} bits: "
              + ", ".join(f"{n}={e['decoded_bits']}" for n, e in transmitters.items()))
        if self.plots:
            from ..utils.plotting import plot_link
            plot_link(trace, flows, self.out('link.png'))
        return summary

    def compare(self) -> Dict[str, Any]:
        """Train on clean and on noise-augmented data, assess both on the same noisy validation set"""
        section = self.config.evaluation
        if not section.clean_dataset or not section.noisy_dataset:
            raise UsageError("evaluation.clean_dataset and evaluation.noisy_dataset are required")
        fraction, seed = self.config.training.train_fraction, self.config.seed
        noisy_train, noisy_val = split(load_dataset(section.noisy_dataset), fraction, seed)
        clean_train, clean_val = split(load_dataset(section.clean_dataset), fraction, seed)
        clean_train.require_compatible(noisy_train.grid, noisy_train.species)
        eval_ds = load_dataset(section.dataset) if section.dataset else noisy_val

        fcnn_config = self.config.model.fcnn_config(len(noisy_train.grid), len(noisy_train.species))
        results = compare_training_sets(fcnn_config,
                                        {'clean': (clean_train, clean_val), 'noisy': (noisy_train, noisy_val)},
                                        eval_ds, self._blanks(eval_ds.grid), self.config.training.plan(seed))
        rows = []
        for label, comparison in results.items():
            for name in noisy_train.species:
                detection = comparison.detection[name]
                rows.append({'training_set': label, 'species': name,
                             'rmse': comparison.evaluation.rmse[name], 'd': comparison.evaluation.d,
                             'min_detectable': comparison.min_detectable[name],
                             'detection_error': None if detection.flagged else detection.rmse})
        write_records(rows, self.out('comparison.csv'))
        summary = {label: c.to_dict() for label, c in results.items()}
        write_json(summary, self.out('comparison.json'))
        for row in rows:
            print(f"{row['training_set']:>5} {row['species']}: rmse={row['rmse']:.3g} "
                  f"min_detectable={row['min_detectable']:.3g}")
        return summary


COMMANDS: Dict[str, Callable[..., Dict[str, Any]]] = {
    'fit-extinction': SpectraLinkApplication.fit_extinction,
    'gen-dataset': SpectraLinkApplication.gen_dataset,
    'train': SpectraLinkApplication.train,
    'eval': SpectraLinkApplication.eval,
    'simulate-link': SpectraLinkApplication.simulate_link,
    'compare': SpectraLinkApplication.compare,
}


def run_command(command: str, config_path=None, out_dir='runs/latest', seed: Optional[int] = None,
                quiet: bool = False, debug: bool = False, plots: bool = False, **kwargs) -> int:
    """Load config, run one command and map any failure to its exit code"""
    out_dir = Path(out_dir)
    console_level = 'DEBUG' if debug else ('WARNING' if quiet else None)
    log_file = str(out_dir / 'logs' / 'spectralink.log')
    setup_logging({**DEFAULT_LOGGING, 'file': log_file}, console_level)
    try:
        config = load_run_config(config_path, seed)
        setup_logging({**config.logging.model_dump(), 'file': log_file}, console_level)
        dump_resolved_config(config, out_dir)
        logger.info(f"Running {command} (seed {config.seed}) into {out_dir}")
        app = SpectraLinkApplication(config, out_dir, plots)
        COMMANDS[command](app, **kwargs)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{command} failed with exit code {code}: {type(e).__name__}: {e}")
        logger.debug("Traceback", exc_info=True)
        return code
    logger.info(f"{command} finished")
    return EXIT_OK


def cmd_fit_extinction(config_path, out_dir, **options) -> int:
    return run_command('fit-extinction', config_path, out_dir, **options)


def cmd_gen_dataset(config_path, out_dir, **options) -> int:
    return run_command('gen-dataset', config_path, out_dir, **options)


def cmd_train(config_path, out_dir, **options) -> int:
    return run_command('train', config_path, out_dir, **options)


def cmd_eval(model_path, dataset_path, out_dir, config_path=None, **options) -> int:
    return run_command('eval', config_path, out_dir, model_path=model_path, dataset_path=dataset_path, **options)


def cmd_simulate_link(config_path, out_dir, **options) -> int:
    return run_command('simulate-link', config_path, out_dir, **options)


def cmd_compare(config_path, out_dir, **options) -> int:
    return run_command('compare', config_path, out_dir, **options)
