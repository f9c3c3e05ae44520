"""
Run artifact writers
CSV tables through pandas, JSON summaries with numpy-safe encoding
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from .logger import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = '%.12g'


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(data: Mapping[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.debug(f"Wrote {path}")
    return path


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def write_records(records: Sequence[Mapping[str, Any]], path: Union[str, Path],
                  columns: Iterable[str] = None) -> Path:
    """Rows of dicts as CSV; columns fixes the header when records is empty"""
    frame = pd.DataFrame.from_records(list(records), columns=list(columns) if columns else None)
    return write_table(frame, path)


def history_frame(records: List[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame.from_records(records, columns=['phase', 'epoch', 'train_mse', 'val_mse'])


def link_trace_frame(times_s: np.ndarray, true_conc: np.ndarray, predicted: np.ndarray,
                     species: Sequence[str]) -> pd.DataFrame:
    """time_s, true_<species>..., pred_<species>..."""
    frame = pd.DataFrame({'time_s': times_s})
    for i, name in enumerate(species):
        frame[f'true_{name}'] = true_conc[:, i]
    for i, name in enumerate(species):
        frame[f'pred_{name}'] = predicted[:, i]
    return frame


def flow_trace_frame(traces: Mapping[str, Any]) -> pd.DataFrame:
    """Long-format pump schedule: transmitter, start_s, end_s, info_flow, solvent_flow"""
    rows = []
    for name, trace in traces.items():
        for k in range(trace.n_segments):
            rows.append({'transmitter': name, 'start_s': trace.breakpoints[k], 'end_s': trace.breakpoints[k + 1],
                         'info_flow': trace.info[k], 'solvent_flow': trace.solvent[k]})
    return pd.DataFrame.from_records(rows, columns=['transmitter', 'start_s', 'end_s', 'info_flow', 'solvent_flow'])
