"""
.fcnn checkpoint format

    magic 'FCNN' | u32 manifest byte length | UTF-8 JSON manifest | float64 blob

The manifest lists config, species, target scale, training metadata and the
tensor names/shapes in blob order. All binary values are little-endian; saving
the same model twice gives identical bytes.
"""

import json
import os
import struct
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from ..core.ml.fcnn import FcnnConfig, FcnnModel, FcnnParams
from ..utils.errors import CheckpointFormatError, UsageError
from ..utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b'FCNN'
FORMAT_VERSION = 1
_PREFIX = struct.Struct('<4sI')
_F64 = np.dtype('<f8')


def build_manifest(model: FcnnModel) -> dict:
    return {
        'format_version': FORMAT_VERSION,
        'config': model.config.model_dump(mode='json'),
        'species': list(model.species),
        'target_scale': model.config.target_scale,
        'tensors': [{'name': name, 'shape': list(value.shape)} for name, value in model.params.items()],
        'metadata': dict(model.metadata),
    }


def save_checkpoint(model: FcnnModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = json.dumps(build_manifest(model), sort_keys=True).encode('utf-8')
    blob = b''.join(value.astype(_F64).tobytes() for _, value in model.params.items())
    tmp_path = path.with_name(path.name + '.tmp')
    with open(tmp_path, 'wb') as f:
        f.write(_PREFIX.pack(MAGIC, len(manifest)))
        f.write(manifest)
        f.write(blob)
    os.replace(tmp_path, path)
    logger.info(f"Saved checkpoint ({model.params.count()} parameters) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> FcnnModel:
    path = Path(path)
    with open(path, 'rb') as f:
        payload = f.read()

    if len(payload) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: file too short for a checkpoint")
    magic, manifest_length = _PREFIX.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a .fcnn checkpoint (magic {magic!r})")
    offset = _PREFIX.size + manifest_length
    try:
        manifest = json.loads(payload[_PREFIX.size:offset].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable manifest: {e}") from None
    if manifest.get('format_version') != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {manifest.get('format_version')}")

    try:
        config = FcnnConfig(**manifest['config'])
    except (KeyError, TypeError, ValidationError) as e:
        raise CheckpointFormatError(f"{path}: invalid model config: {e}") from None

    tensors = {}
    for entry in manifest.get('tensors', []):
        shape = tuple(entry['shape'])
        count = int(np.prod(shape))
        if len(payload) < offset + 8 * count:
            raise CheckpointFormatError(f"{path}: tensor blob truncated at '{entry['name']}'")
        tensors[entry['name']] = np.frombuffer(payload, dtype=_F64, count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(payload):
        raise CheckpointFormatError(f"{path}: {len(payload) - offset} unexpected trailing bytes")

    try:
        model = FcnnModel(config, FcnnParams(tensors), manifest['species'], manifest.get('metadata'))
    except (KeyError, UsageError) as e:
        raise CheckpointFormatError(f"{path}: tensors do not match config: {e}") from None
    logger.info(f"Loaded checkpoint {path} (species {list(model.species)}, input length {config.input_length})")
    return model
