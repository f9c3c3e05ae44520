"""
SPCD binary dataset format

Layout, all little-endian:
    magic 'SPCD' | u16 version | u8 provenance | u32 L | u32 M | u32 N
    L x f64 wavelengths
    M x (u16 byte length + UTF-8 species name)
    N x (M x f64 concentrations, L x f64 absorbances)
"""

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..models.dataset_models import Dataset, Provenance
from ..models.spectral_models import WavelengthGrid
from ..utils.errors import DatasetFormatError, DatasetTruncatedError
from ..utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b'SPCD'
VERSION = 1
_HEADER = struct.Struct('<4sHBIII')
_NAME_LENGTH = struct.Struct('<H')
_F64 = np.dtype('<f8')


def encode_dataset(ds: Dataset) -> bytes:
    n_points, n_species, n_samples = len(ds.grid), len(ds.species), len(ds)
    parts = [_HEADER.pack(MAGIC, VERSION, int(ds.provenance), n_points, n_species, n_samples),
             ds.grid.wavelengths_nm.astype(_F64).tobytes()]
    for name in ds.species:
        encoded = name.encode('utf-8')
        parts.append(_NAME_LENGTH.pack(len(encoded)))
        parts.append(encoded)
    records = np.hstack([ds.concentrations, ds.absorbances]).astype(_F64)
    parts.append(records.tobytes())
    return b''.join(parts)


def decode_dataset(payload: bytes, source: str = '<bytes>') -> Dataset:
    if len(payload) < _HEADER.size:
        if payload[:4] != MAGIC[:len(payload[:4])]:
            raise DatasetFormatError(f"{source}: not an SPCD file (bad magic)")
        raise DatasetTruncatedError(f"{source}: header truncated ({len(payload)} bytes)")

    magic, version, provenance, n_points, n_species, n_samples = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{source}: not an SPCD file (magic {magic!r})")
    if version != VERSION:
        raise DatasetFormatError(f"{source}: unsupported SPCD version {version}")
    try:
        provenance = Provenance(provenance)
    except ValueError:
        raise DatasetFormatError(f"{source}: unknown provenance code {provenance}") from None

    offset = _HEADER.size
    need = offset + 8 * n_points
    if len(payload) < need:
        raise DatasetTruncatedError(f"{source}: wavelength block truncated")
    wavelengths = np.frombuffer(payload, dtype=_F64, count=n_points, offset=offset)
    offset = need

    species = []
    for _ in range(n_species):
        if len(payload) < offset + _NAME_LENGTH.size:
            raise DatasetTruncatedError(f"{source}: species table truncated")
        (length,) = _NAME_LENGTH.unpack_from(payload, offset)
        offset += _NAME_LENGTH.size
        if len(payload) < offset + length:
            raise DatasetTruncatedError(f"{source}: species table truncated")
        try:
            species.append(payload[offset:offset + length].decode('utf-8'))
        except UnicodeDecodeError:
            raise DatasetFormatError(f"{source}: species name is not valid UTF-8") from None
        offset += length

    record_width = n_species + n_points
    expected = offset + 8 * record_width * n_samples
    if len(payload) < expected:
        raise DatasetTruncatedError(f"{source}: {n_samples} records announced, payload holds "
                                    f"{(len(payload) - offset) // max(8 * record_width, 1)}")
    if len(payload) > expected:
        raise DatasetFormatError(f"{source}: {len(payload) - expected} trailing bytes after last record")

    records = np.frombuffer(payload, dtype=_F64, count=record_width * n_samples, offset=offset)
    records = records.reshape(n_samples, record_width).astype(np.float64)
    try:
        grid = WavelengthGrid(wavelengths)
    except ValueError as e:
        raise DatasetFormatError(f"{source}: invalid wavelength grid: {e}") from None
    return Dataset(grid, species, records[:, :n_species], records[:, n_species:], provenance)


def save_dataset(ds: Dataset, path: Union[str, Path]) -> Path:
    """Write atomically so a failed write never leaves a partial file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + '.tmp')
    with open(tmp_path, 'wb') as f:
        f.write(encode_dataset(ds))
    os.replace(tmp_path, path)
    logger.info(f"Saved {ds!r} to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    with open(path, 'rb') as f:
        payload = f.read()
    ds = decode_dataset(payload, str(path))
    logger.info(f"Loaded {ds!r} from {path}")
    return ds
