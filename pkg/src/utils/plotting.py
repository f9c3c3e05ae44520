"""
Optional run figures
Spectra comparison, training convergence and link traces rendered off-screen
"""

from pathlib import Path
from typing import Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd

from .logger import get_logger

logger = get_logger(__name__)


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Saved figure {path}")
    return path


def plot_spectra_comparison(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(frame['wavelength_nm'], frame['noisy'], lw=0.8, color='tab:gray', label='with sensor noise')
    ax.plot(frame['wavelength_nm'], frame['clean'], lw=1.5, color='k', label='clean')
    for column in frame.columns:
        if column.startswith('pure_'):
            ax.plot(frame['wavelength_nm'], frame[column], lw=1.0, ls='--', label=column[len('pure_'):])
    ax.set_xlabel('Wavelength (nm)')
    ax.set_ylabel('Absorbance')
    ax.legend()
    return _save(fig, path)


def plot_history(history: pd.DataFrame, path: Union[str, Path]) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    if not history.empty:
        x = range(1, len(history) + 1)
        ax.semilogy(x, history['train_mse'], label='train')
        ax.semilogy(x, history['val_mse'], label='validation')
        boundaries = history.index[history['epoch'] == 1][1:]
        for b in boundaries:
            ax.axvline(b + 0.5, color='k', lw=0.5, ls=':')
    ax.set_xlabel('Epoch (all phases)')
    ax.set_ylabel('MSE (internal units)')
    ax.legend()
    return _save(fig, path)


def plot_link(trace: pd.DataFrame, flows: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Pump schedules above, true and detected concentrations below"""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    for name, group in flows.groupby('transmitter', sort=False):
        edges = list(group['start_s']) + [group['end_s'].iloc[-1]]
        values = list(group['info_flow']) + [group['info_flow'].iloc[-1]]
        top.step([e / 60.0 for e in edges], values, where='post', label=f'{name} info')
    top.set_ylabel('Flow (uL/min)')
    top.legend()

    minutes = trace['time_s'] / 60.0
    for column in trace.columns:
        if column.startswith('true_'):
            bottom.plot(minutes, trace[column], lw=1.2, label=column)
        elif column.startswith('pred_'):
            bottom.plot(minutes, trace[column], lw=0.8, ls='--', label=column)
    bottom.set_xlabel('Time (min)')
    bottom.set_ylabel('Concentration (mol/L)')
    bottom.legend()
    return _save(fig, path)
