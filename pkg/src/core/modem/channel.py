"""
Flow channel
T-junction dilution and receiver-side observation of the concentration series
"""

from typing import Optional, Sequence

import numpy as np

from .encoder import extend_trace
from ..spectral.beer_lambert import mix_absorbances
from ..spectral.noise import RandomSource, apply_sensor_noise
from ...models.link_models import ConcentrationSeries, FlowTrace, LinkConfig, ObservedSeries
from ...utils.errors import DomainError, UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)


def align_traces(traces: Sequence[FlowTrace], totals: Sequence[float]) -> list:
    """Pad every trace with solvent-only flow to the longest horizon"""
    horizon = max((t.horizon_s for t in traces), default=0.0)
    return [extend_trace(t, horizon, total) for t, total in zip(traces, totals)]


def mix_at_junction(traces: Sequence[FlowTrace], stocks: Sequence[float],
                    species_indices: Sequence[int], n_species: int) -> ConcentrationSeries:
    """C_species(t) = stock * q_info(t) / q_total(t) over all pumps of all transmitters"""
    if not (len(traces) == len(stocks) == len(species_indices)):
        raise UsageError("need one stock concentration and species index per trace")
    if not traces:
        raise UsageError("no transmitter traces to mix")
    horizons = {round(t.horizon_s, 9) for t in traces}
    if len(horizons) != 1:
        raise UsageError(f"traces end at different times {sorted(horizons)}; align them first")
    horizon = traces[0].horizon_s
    if horizon == 0:
        return ConcentrationSeries(np.zeros(1), np.zeros((0, n_species)))

    breakpoints = np.unique(np.concatenate([t.breakpoints for t in traces]))
    starts = breakpoints[:-1]
    q_total = np.zeros(starts.size)
    infos = []
    for trace in traces:
        info, solvent = trace.rates_at(starts)
        q_total += info + solvent
        infos.append(info)

    dry = np.flatnonzero(q_total <= 0)
    if dry.size:
        raise DomainError(f"zero total flow from t={starts[dry[0]]:g} s")

    values = np.zeros((starts.size, n_species))
    for info, stock, species in zip(infos, stocks, species_indices):
        values[:, species] += stock * info / q_total
    return ConcentrationSeries(breakpoints, values)


def first_order_lag(series: ConcentrationSeries, times: np.ndarray, tau_s: float) -> np.ndarray:
    """Exact response of dy/dt = (u - y) / tau to the piecewise-constant input, y(0) = 0"""
    times = np.asarray(times, dtype=np.float64)
    if tau_s == 0:
        return series.at(times)
    out = np.zeros((times.size, series.values.shape[1]))
    state = np.zeros(series.values.shape[1])
    for k, u in enumerate(series.values):
        start, end = series.breakpoints[k], series.breakpoints[k + 1]
        inside = (times >= start) & (times < end)
        if k == series.values.shape[0] - 1:
            inside |= times >= end
        if inside.any():
            decay = np.exp(-(times[inside] - start) / tau_s)[:, None]
            out[inside] = u + (state - u) * decay
        state = u + (state - u) * np.exp(-(end - start) / tau_s)
    return out


def sample_times(horizon_s: float, period_s: float) -> np.ndarray:
    """k * period for every k with k * period < horizon"""
    return np.arange(int(np.ceil(horizon_s / period_s - 1e-9))) * period_s


def channel_observe(series: ConcentrationSeries, link: LinkConfig,
                    rng: Optional[RandomSource] = None) -> ObservedSeries:
    """Absorbance spectra sampled every sampling period, smoothed and noisy as configured"""
    times = sample_times(series.horizon_s, link.sampling_period_s)
    if times.size == 0:
        return ObservedSeries(times, np.zeros((0, len(link.eps.grid))),
                              np.zeros((0, link.eps.n_species)), link.sampling_period_s)

    concentrations = first_order_lag(series, times, link.tau_s)
    absorbances = mix_absorbances(link.eps, concentrations, link.path_length)
    if link.noise is not None:
        if rng is None:
            raise UsageError("a random source is required when sensor noise is enabled")
        absorbances = apply_sensor_noise(absorbances, link.noise, rng)
    logger.info(f"Observed {times.size} spectra over {series.horizon_s:g} s "
                f"(tau={link.tau_s:g} s, noise={'on' if link.noise else 'off'})")
    return ObservedSeries(times, absorbances, concentrations, link.sampling_period_s)
