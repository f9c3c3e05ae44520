"""
fCNN training
Adam optimizer, three-phase schedule with best-checkpoint selection, and evaluation metrics
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.metrics import mean_squared_error

from .fcnn import (
    DEFAULT_THETA, TRAIN, FcnnConfig, FcnnModel, FcnnParams, backward,
    coefficient_of_determination, forward, init_params, mse_loss
)
from ..spectral.noise import RandomSource
from ...models.dataset_models import Dataset
from ...utils.errors import UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)

CHECKPOINT_CRITERION = 'validation_mse'
BATCH_SAMPLING = 'uniform_with_replacement'


class AdamHyper(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    lr: float = Field(0.001, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)


class PhasePlan(BaseModel):
    """Consecutive Adam phases, each starting from the previous phase's best checkpoint"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    learning_rates: Tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    epochs_per_phase: int = Field(200, ge=0)
    steps_per_epoch: int = Field(100, ge=1)
    batch_size: int = Field(10, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_batch_size: int = Field(256, ge=1)
    seed: int = 0

    @model_validator(mode='after')
    def _check_rates(self):
        if not self.learning_rates or any(lr <= 0 for lr in self.learning_rates):
            raise ValueError(f"learning rates must be positive, got {self.learning_rates}")
        return self

    def hyper_for(self, phase: int) -> AdamHyper:
        return AdamHyper(lr=self.learning_rates[phase], beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass
class AdamState:
    m: FcnnParams
    v: FcnnParams
    t: int = 0

    @classmethod
    def fresh(cls, params: FcnnParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(params: FcnnParams, grads: FcnnParams, state: AdamState,
              hyper: AdamHyper) -> Tuple[FcnnParams, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state"""
    params.require_same_layout(grads)
    t = state.t + 1
    m_correction = 1.0 - hyper.beta1 ** t
    v_correction = 1.0 - hyper.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        m = hyper.beta1 * state.m[name] + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v[name] + (1.0 - hyper.beta2) * g * g
        new_params[name] = value - hyper.lr * (m / m_correction) / (np.sqrt(v / v_correction) + hyper.eps)
        new_m[name], new_v[name] = m, v
    return FcnnParams(new_params), AdamState(FcnnParams(new_m), FcnnParams(new_v), t)


@dataclass
class HistoryRow:
    phase: int
    epoch: int
    train_mse: float
    val_mse: float


@dataclass
class PhaseResult:
    phase: int
    lr: float
    params: FcnnParams
    initial_val_mse: float
    best_val_mse: float
    best_epoch: int
    history: List[HistoryRow] = field(default_factory=list)


@dataclass
class TrainingResult:
    model: FcnnModel
    phases: List[PhaseResult]

    @property
    def history(self) -> List[HistoryRow]:
        return [row for phase in self.phases for row in phase.history]

    def history_records(self) -> List[dict]:
        return [asdict(row) for row in self.history]


def _internal_targets(model: FcnnModel, ds: Dataset) -> np.ndarray:
    return ds.concentrations / model.config.target_scale


def _require_trainable(model: FcnnModel, ds: Dataset, role: str):
    if len(ds) == 0:
        raise UsageError(f"{role} dataset is empty")
    if ds.absorbances.shape[1] != model.config.input_length:
        raise UsageError(f"{role} spectra have {ds.absorbances.shape[1]} points, model expects "
                         f"{model.config.input_length}")
    if ds.species != model.species:
        raise UsageError(f"{role} species {list(ds.species)} do not match model species {list(model.species)}")


def validation_mse(model: FcnnModel, ds: Dataset, batch_size: int = 256) -> float:
    """Eval-mode MSE in internal units"""
    return mse_loss(model.predict_internal(ds.absorbances, batch_size), _internal_targets(model, ds))


def train_phase(model: FcnnModel, train_ds: Dataset, val_ds: Dataset, hyper: AdamHyper,
                epochs: int, steps_per_epoch: int, batch_size: int, rng: RandomSource,
                phase: int = 1, eval_batch_size: int = 256) -> PhaseResult:
    """Adam on with-replacement batches; keeps the parameters with the lowest validation MSE"""
    _require_trainable(model, train_ds, 'training')
    _require_trainable(model, val_ds, 'validation')
    config = model.config
    targets = _internal_targets(model, train_ds)

    params = model.params.copy()
    state = AdamState.fresh(params)
    best_params = params.copy()
    best_val = initial_val = validation_mse(model, val_ds, eval_batch_size)
    best_epoch = 0
    history = []

    for epoch in range(1, epochs + 1):
        step_losses = []
        for _ in range(steps_per_epoch):
            batch = rng.integers(0, len(train_ds), batch_size)
            pred, trace = forward(params, config, train_ds.absorbances[batch], TRAIN, rng)
            step_losses.append(mse_loss(pred, targets[batch]))
            grads = backward(params, config, targets[batch], trace)
            params, state = adam_step(params, grads, state, hyper)

        val = validation_mse(model.with_params(params), val_ds, eval_batch_size)
        history.append(HistoryRow(phase, epoch, float(np.mean(step_losses)), val))
        if val < best_val:
            best_val, best_epoch, best_params = val, epoch, params.copy()
        logger.info(f"phase {phase} epoch {epoch}/{epochs}: train_mse={history[-1].train_mse:.6g} "
                    f"val_mse={val:.6g}")

    logger.info(f"Phase {phase} (lr={hyper.lr:g}) best val_mse={best_val:.6g} at epoch {best_epoch}")
    return PhaseResult(phase, hyper.lr, best_params, initial_val, best_val, best_epoch, history)


def train_full(config: FcnnConfig, train_ds: Dataset, val_ds: Dataset, plan: PhasePlan,
               species: Optional[Sequence[str]] = None,
               initial: Optional[FcnnModel] = None) -> TrainingResult:
    """Run every phase in order; phase k+1 starts from phase k's best checkpoint"""
    model = initial or FcnnModel(config, init_params(config, plan.seed), species or train_ds.species,
                                 {'init_seed': plan.seed})
    rng = RandomSource(plan.seed).spawn(1)
    phases = []
    for index in range(len(plan.learning_rates)):
        result = train_phase(model, train_ds, val_ds, plan.hyper_for(index), plan.epochs_per_phase,
                             plan.steps_per_epoch, plan.batch_size, rng, phase=index + 1,
                             eval_batch_size=plan.eval_batch_size)
        model = model.with_params(result.params)
        phases.append(result)

    model.metadata.update({
        'checkpoint_criterion': CHECKPOINT_CRITERION,
        'batch_sampling': BATCH_SAMPLING,
        'phase_plan': plan.model_dump(mode='json'),
        'final_val_mse': phases[-1].best_val_mse if phases else None,
    })
    return TrainingResult(model, phases)


# -- metrics ----------------------------------------------------------------

@dataclass
class EvaluationReport:
    """Metrics in mol/L"""
    mse: float
    rmse: Dict[str, float]
    d: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model: FcnnModel, ds: Dataset, theta: float = DEFAULT_THETA) -> EvaluationReport:
    if len(ds) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    _require_trainable(model, ds, 'evaluation')
    preds = model.predict(ds.absorbances)
    per_species = mean_squared_error(ds.concentrations, preds, multioutput='raw_values')
    return EvaluationReport(
        mse=float(np.mean((preds - ds.concentrations) ** 2)),
        rmse={name: float(math.sqrt(value)) for name, value in zip(model.species, per_species)},
        d=coefficient_of_determination(preds, ds.concentrations, theta),
        n_samples=len(ds),
    )


def min_detectable_concentration(model: FcnnModel, blank_ensemble: np.ndarray) -> Dict[str, float]:
    """Highest concentration the model reports on zero-concentration spectra, per species"""
    blank_ensemble = np.atleast_2d(np.asarray(blank_ensemble, dtype=np.float64))
    if blank_ensemble.shape[0] == 0:
        raise UsageError("blank ensemble is empty")
    preds = model.predict(blank_ensemble)
    return {name: float(preds[:, i].max()) for i, name in enumerate(model.species)}


@dataclass
class DetectionError:
    rmse: float
    n_samples: int
    threshold: float

    @property
    def flagged(self) -> bool:
        """No sample exceeded the detection threshold"""
        return self.n_samples == 0

    def to_dict(self) -> dict:
        return {'rmse': None if self.flagged else self.rmse, 'n_samples': self.n_samples,
                'threshold': self.threshold, 'empty_subset': self.flagged}


def detection_error(model: FcnnModel, ds: Dataset,
                    min_detectable: Dict[str, float]) -> Dict[str, DetectionError]:
    """Per-species RMSE over samples whose true concentration exceeds the minimum detectable one"""
    if len(ds) == 0:
        raise UsageError("cannot compute detection error on an empty dataset")
    preds = model.predict(ds.absorbances)
    results = {}
    for i, name in enumerate(model.species):
        threshold = float(min_detectable[name])
        above = ds.concentrations[:, i] > threshold
        if not above.any():
            logger.warning(f"No {name} sample above {threshold:.3g} mol/L; detection error undefined")
            results[name] = DetectionError(float('nan'), 0, threshold)
            continue
        err = preds[above, i] - ds.concentrations[above, i]
        results[name] = DetectionError(float(np.sqrt(np.mean(err * err))), int(above.sum()), threshold)
    return results


@dataclass
class ModelComparison:
    label: str
    evaluation: EvaluationReport
    min_detectable: Dict[str, float]
    detection: Dict[str, DetectionError]

    def to_dict(self) -> dict:
        return {
            'label': self.label,
            'evaluation': self.evaluation.to_dict(),
            'min_detectable': self.min_detectable,
            'detection_error': {k: v.to_dict() for k, v in self.detection.items()},
        }


def assess(model: FcnnModel, label: str, val_ds: Dataset, blanks: np.ndarray) -> ModelComparison:
    """All validation metrics of one model: evaluation, min-detectable and detection error"""
    mdc = min_detectable_concentration(model, blanks)
    return ModelComparison(label, evaluate(model, val_ds), mdc, detection_error(model, val_ds, mdc))


def compare_training_sets(config: FcnnConfig, training_sets: Dict[str, Tuple[Dataset, Dataset]],
                          eval_ds: Dataset, blanks: np.ndarray, plan: PhasePlan) -> Dict[str, ModelComparison]:
    """Train one model per labeled (train, val) pair and assess all on the same evaluation set"""
    results = {}
    for label, (train_ds, val_ds) in training_sets.items():
        logger.info(f"Training '{label}' model on {train_ds!r}")
        trained = train_full(config, train_ds, val_ds, plan)
        results[label] = assess(trained.model, label, eval_ds, blanks)
        logger.info(f"'{label}': D={results[label].evaluation.d:.4f} rmse={results[label].evaluation.rmse} "
                    f"min_detectable={results[label].min_detectable}")
    return results
