"""
CSK demodulator
Genie-timed frame averaging, nearest-level decisions, bit error rate and full link runs
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Union

import numpy as np

from .channel import align_traces, channel_observe, mix_at_junction
from .encoder import Bits, encode_bits, level_bits, normalize_bits
from ..spectral.noise import RandomSource
from ...models.link_models import (
    ConcentrationSeries, DecodedMessage, FlowTrace, FrameDecision,
    LinkConfig, ObservedSeries, TransmitterConfig
)
from ...models.spectral_models import ExtinctionProfileSet, PathLength
from ...utils.errors import UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)

DECISION_RULE = 'nearest_level_lower_on_tie'
_FRAME_TOLERANCE_S = 1e-9


class ConcentrationPredictor(Protocol):
    def predict(self, spectra) -> np.ndarray:
        """(S, L) absorbances -> (S, M) concentrations in mol/L"""


class GenieBeerLambertPredictor:
    """Least-squares inversion of the known Beer-Lambert forward model"""

    def __init__(self, eps: ExtinctionProfileSet, l: Union[PathLength, float] = PathLength()):
        self.eps = eps
        self.path_length_cm = l.cm if isinstance(l, PathLength) else float(l)
        self.species = eps.species

    def predict(self, spectra) -> np.ndarray:
        spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
        design = self.path_length_cm * self.eps.eps.T
        solution, *_ = np.linalg.lstsq(design, spectra.T, rcond=None)
        return solution.T


def reference_levels(txs: Sequence[TransmitterConfig]) -> Dict[str, List[float]]:
    """Expected frame-mean concentration per level of each transmitter

    Every pump of every transmitter runs at its constant total, so a level's
    received concentration is stock * q_info / sum of totals, scaled by the duty cycle.
    """
    total = sum(tx.total_flow for tx in txs)
    if total <= 0:
        raise UsageError("transmitters carry no flow")
    return {tx.name: [tx.stock_concentration * info / total * tx.duty_cycle for info, _ in tx.flows] for tx in txs}


def nearest_level(value: float, levels: Sequence[float]) -> int:
    """Index of the closest level; ties go to the lower concentration"""
    best, best_distance = 0, None
    for index in sorted(range(len(levels)), key=lambda k: levels[k]):
        distance = abs(value - levels[index])
        if best_distance is None or distance < best_distance:
            best, best_distance = index, distance
    return best


def ber(decoded: Bits, truth: Bits) -> float:
    """Hamming distance over length"""
    decoded, truth = normalize_bits(decoded), normalize_bits(truth)
    if len(decoded) != len(truth):
        raise UsageError(f"decoded has {len(decoded)} bits, truth has {len(truth)}")
    if not truth:
        return 0.0
    return sum(a != b for a, b in zip(decoded, truth)) / len(truth)


def demodulate(model: ConcentrationPredictor, observed: ObservedSeries, txs: Sequence[TransmitterConfig],
               levels: Mapping[str, Sequence[float]], symbol_counts: Mapping[str, int],
               predictions: Optional[np.ndarray] = None) -> DecodedMessage:
    """Average each transmitter's species over its frames and pick the nearest reference level"""
    if predictions is None and len(observed.times_s):
        predictions = np.atleast_2d(model.predict(observed.absorbances))
    horizon = observed.horizon_s
    bits, means, chosen, decisions = {}, {}, {}, []

    for tx in txs:
        tx_levels = levels[tx.name]
        if len(tx_levels) != len(tx.flows):
            raise UsageError(f"{tx.name}: {len(tx_levels)} reference levels for {len(tx.flows)} flow levels")
        tx_bits, tx_means, tx_chosen = [], [], []
        for k in range(symbol_counts.get(tx.name, 0)):
            start = tx.start_offset_s + k * tx.bit_interval_s
            end = start + tx.bit_interval_s
            if end > horizon + _FRAME_TOLERANCE_S:
                raise UsageError(f"{tx.name} frame {k} [{start:g}, {end:g}) s extends past the "
                                 f"{horizon:g} s series")
            inside = (observed.times_s >= start - _FRAME_TOLERANCE_S) & (observed.times_s < end - _FRAME_TOLERANCE_S)
            if not inside.any():
                raise UsageError(f"{tx.name} frame {k} [{start:g}, {end:g}) s holds no samples")
            mean = float(predictions[inside, tx.species_index].mean())
            level = nearest_level(mean, tx_levels)
            symbol = level_bits(level, tx.bits_per_symbol)
            tx_bits.append(symbol)
            tx_means.append(mean)
            tx_chosen.append(level)
            decisions.append(FrameDecision(tx.name, k, start, end, int(inside.sum()), mean, level, symbol))
        bits[tx.name] = ''.join(tx_bits)
        means[tx.name] = tx_means
        chosen[tx.name] = tx_chosen

    return DecodedMessage(bits, means, chosen, decisions, decision_rule=DECISION_RULE)


def score(decoded: DecodedMessage, truth: Mapping[str, Bits]) -> DecodedMessage:
    """Fill per-transmitter and overall BER against the transmitted bits"""
    errors, total = 0, 0
    for name, sent in truth.items():
        sent = normalize_bits(sent)
        decoded.ber[name] = ber(decoded.bits[name], sent)
        errors += round(decoded.ber[name] * len(sent))
        total += len(sent)
    decoded.overall_ber = errors / total if total else 0.0
    return decoded


def level_means(decoded: DecodedMessage, sent_levels: Mapping[str, Sequence[int]]) -> Dict[str, Dict[int, float]]:
    """Mean detected concentration per transmitted level"""
    table = {}
    for name, levels in sent_levels.items():
        by_level: Dict[int, List[float]] = {}
        for level, mean in zip(levels, decoded.frame_means[name]):
            by_level.setdefault(level, []).append(mean)
        table[name] = {level: float(np.mean(values)) for level, values in sorted(by_level.items())}
    return table


@dataclass
class LinkRun:
    link: LinkConfig
    messages: Dict[str, str]
    traces: Dict[str, FlowTrace]
    series: ConcentrationSeries
    observed: ObservedSeries
    predictions: np.ndarray
    decoded: DecodedMessage
    reference: Dict[str, List[float]]

    @property
    def sent_levels(self) -> Dict[str, List[int]]:
        out = {}
        for tx in self.link.transmitters:
            bits = self.messages[tx.name]
            step = tx.bits_per_symbol
            out[tx.name] = [int(bits[i:i + step], 2) for i in range(0, len(bits), step)]
        return out


def run_link(link: LinkConfig, messages: Mapping[str, Bits], model: ConcentrationPredictor,
             rng: Optional[RandomSource] = None) -> LinkRun:
    """Encode, mix, observe and demodulate one transmission per transmitter"""
    messages = {name: normalize_bits(bits) for name, bits in messages.items()}
    missing = [tx.name for tx in link.transmitters if tx.name not in messages]
    if missing:
        raise UsageError(f"no message for transmitters {missing}")

    traces = [encode_bits(tx, messages[tx.name]) for tx in link.transmitters]
    traces = align_traces(traces, [tx.total_flow for tx in link.transmitters])
    series = mix_at_junction(traces, [tx.stock_concentration for tx in link.transmitters],
                             [tx.species_index for tx in link.transmitters], link.eps.n_species)
    observed = channel_observe(series, link, rng)

    reference = reference_levels(link.transmitters)
    counts = {tx.name: len(messages[tx.name]) // tx.bits_per_symbol for tx in link.transmitters}
    predictions = (np.atleast_2d(model.predict(observed.absorbances)) if len(observed.times_s)
                   else np.zeros((0, link.eps.n_species)))
    decoded = score(demodulate(model, observed, link.transmitters, reference, counts, predictions), messages)
    for tx in link.transmitters:
        logger.info(f"{tx.name} ({tx.scheme}): sent {messages[tx.name]} decoded {decoded.bits[tx.name]} "
                    f"BER {decoded.ber[tx.name]:.4f}")
    return LinkRun(link, messages, dict(zip((tx.name for tx in link.transmitters), traces)),
                   series, observed, predictions, decoded, reference)
