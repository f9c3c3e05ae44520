"""
1-D fractal convolutional network
Parameters, forward pass, analytic backward pass, loss and the D metric

Feature maps are (batch, channels, length) float64 arrays. Each fractal block
chains three dilated convolutions, each followed by a half-sum merge over the
channel axis; the three merged outputs and a 1x1 shortcut are added. Every
block is followed by max pooling, then flatten, dropout and a linear head.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..spectral.noise import RandomSource
from ...models.spectral_models import AbsorbanceSpectrum
from ...utils.errors import UsageError
from ...utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_THETA = 1e-7
TRAIN = 'train'
EVAL = 'eval'


class FcnnConfig(BaseModel):
    """Architecture of the fractal network"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    input_length: int = 3648
    output_dim: int = 2
    block_filters: Tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 3
    dilations: Tuple[int, ...] = (1, 2, 4)
    pool_size: int = 2
    dropout_rate: float = Field(0.5, ge=0.0, lt=1.0)
    target_scale: float = Field(1e-5, gt=0.0)

    @model_validator(mode='after')
    def _check_shapes(self):
        if not self.block_filters or any(f <= 0 for f in self.block_filters):
            raise ValueError(f"block filters must be positive, got {self.block_filters}")
        if not self.dilations or any(d <= 0 for d in self.dilations):
            raise ValueError(f"dilations must be positive, got {self.dilations}")
        if self.kernel_size < 1 or self.pool_size < 1 or self.output_dim < 1:
            raise ValueError("kernel size, pool size and output dim must be positive")
        minimum = self.pool_size ** len(self.block_filters) * self.kernel_size
        if self.input_length < minimum:
            raise ValueError(f"input length {self.input_length} too short for "
                             f"{len(self.block_filters)} pooled blocks (need >= {minimum})")
        return self

    def block_lengths(self) -> List[int]:
        """Feature length after each block's pooling"""
        lengths, n = [], self.input_length
        for _ in self.block_filters:
            n //= self.pool_size
            lengths.append(n)
        return lengths

    @property
    def flatten_dim(self) -> int:
        return self.block_lengths()[-1] * self.block_filters[-1]


class FcnnParams:
    """Named float64 tensors in a fixed order"""

    def __init__(self, tensors: Dict[str, np.ndarray]):
        self.tensors: Dict[str, np.ndarray] = OrderedDict(
            (name, np.asarray(value, dtype=np.float64)) for name, value in tensors.items())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> List[str]:
        return list(self.tensors)

    def copy(self) -> "FcnnParams":
        return FcnnParams({name: value.copy() for name, value in self.tensors.items()})

    def zeros_like(self) -> "FcnnParams":
        return FcnnParams({name: np.zeros_like(value) for name, value in self.tensors.items()})

    def count(self) -> int:
        return int(sum(value.size for value in self.tensors.values()))

    def require_same_layout(self, other: "FcnnParams"):
        if self.names() != other.names():
            raise UsageError("parameter sets have different tensor names")
        for name in self.tensors:
            if self.tensors[name].shape != other.tensors[name].shape:
                raise UsageError(f"tensor '{name}' has shape {other.tensors[name].shape}, "
                                 f"expected {self.tensors[name].shape}")


def conv_name(block: int, conv: int) -> str:
    return f"block{block}.conv{conv}"


def shortcut_name(block: int) -> str:
    return f"block{block}.shortcut"


def parameter_shapes(config: FcnnConfig) -> Dict[str, Tuple[int, ...]]:
    """Kernel shapes are (taps, in_channels, out_channels)"""
    shapes: Dict[str, Tuple[int, ...]] = OrderedDict()
    in_channels = 1
    for b, filters in enumerate(config.block_filters, start=1):
        conv_in = in_channels
        for k in range(1, len(config.dilations) + 1):
            shapes[f"{conv_name(b, k)}.kernel"] = (config.kernel_size, conv_in, 2 * filters)
            shapes[f"{conv_name(b, k)}.bias"] = (2 * filters,)
            conv_in = filters
        shapes[f"{shortcut_name(b)}.kernel"] = (1, in_channels, filters)
        shapes[f"{shortcut_name(b)}.bias"] = (filters,)
        in_channels = filters
    shapes["head.kernel"] = (config.flatten_dim, config.output_dim)
    shapes["head.bias"] = (config.output_dim,)
    return shapes


def init_params(config: FcnnConfig, seed: int = 0) -> FcnnParams:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases"""
    rng = RandomSource(seed)
    tensors = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith('.bias'):
            tensors[name] = np.zeros(shape)
            continue
        if len(shape) == 3:
            taps, c_in, c_out = shape
            fan_in, fan_out = taps * c_in, taps * c_out
        else:
            fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-limit, limit, shape)
    return FcnnParams(tensors)


# -- layers -----------------------------------------------------------------

def _same_padding(kernel_size: int, dilation: int) -> Tuple[int, int]:
    total = (kernel_size - 1) * dilation
    return total // 2, total - total // 2


def _im2col(x: np.ndarray, kernel_size: int, dilation: int) -> np.ndarray:
    """(B, C, N) -> (B, taps * C, N) with zero 'same' padding"""
    batch, channels, length = x.shape
    left, right = _same_padding(kernel_size, dilation)
    padded = np.pad(x, ((0, 0), (0, 0), (left, right)))
    taps = [padded[:, :, k * dilation:k * dilation + length] for k in range(kernel_size)]
    return np.stack(taps, axis=1).reshape(batch, kernel_size * channels, length)


def _conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                  dilation: int) -> Tuple[np.ndarray, np.ndarray]:
    taps, c_in, c_out = kernel.shape
    if x.shape[1] != c_in:
        raise UsageError(f"convolution expects {c_in} input channels, got {x.shape[1]}")
    cols = _im2col(x, taps, dilation)
    z = np.matmul(kernel.reshape(taps * c_in, c_out).T, cols) + bias[:, None]
    return z, cols


def _conv_backward(dz: np.ndarray, cols: np.ndarray, kernel: np.ndarray,
                   dilation: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    taps, c_in, c_out = kernel.shape
    batch, _, length = dz.shape
    dkernel = np.tensordot(cols, dz, axes=([0, 2], [0, 2])).reshape(kernel.shape)
    dbias = dz.sum(axis=(0, 2))
    dcols = np.matmul(kernel.reshape(taps * c_in, c_out), dz).reshape(batch, taps, c_in, length)

    left, right = _same_padding(taps, dilation)
    dpadded = np.zeros((batch, c_in, length + left + right))
    for k in range(taps):
        dpadded[:, :, k * dilation:k * dilation + length] += dcols[:, k]
    return dpadded[:, :, left:left + length], dkernel, dbias


def _batched(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise UsageError(f"feature map must be (C, N) or (B, C, N), got shape {x.shape}")
    return x, False


def conv1d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, dilation: int = 1,
                activation: str = 'linear') -> np.ndarray:
    """Zero-padded dilated cross-correlation keeping the input length"""
    if activation not in ('relu', 'linear'):
        raise UsageError(f"unknown activation '{activation}'")
    batch, squeeze = _batched(x)
    if batch.shape[-1] < 1:
        raise UsageError("convolution input must have at least one sample")
    z, _ = _conv_forward(batch, np.asarray(kernel, dtype=np.float64), np.asarray(bias, dtype=np.float64), dilation)
    if activation == 'relu':
        z = np.maximum(z, 0.0)
    return z[0] if squeeze else z


def half_sum(x: np.ndarray) -> np.ndarray:
    """Sum the first and second halves of the channel axis: 2F channels -> F"""
    x = np.asarray(x, dtype=np.float64)
    channels = x.shape[-2]
    if channels % 2:
        raise UsageError(f"half-sum needs an even channel count, got {channels}")
    half = channels // 2
    return x[..., :half, :] + x[..., half:, :]


def _pool_forward(x: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray]:
    batch, channels, length = x.shape
    if length < size:
        raise UsageError(f"cannot pool length {length} with window {size}")
    reduced = length // size
    windows = x[:, :, :reduced * size].reshape(batch, channels, reduced, size)
    winners = windows.argmax(axis=-1)
    return np.take_along_axis(windows, winners[..., None], axis=-1)[..., 0], winners


def _pool_backward(dout: np.ndarray, winners: np.ndarray, size: int, length: int) -> np.ndarray:
    batch, channels, reduced = dout.shape
    dwindows = np.zeros((batch, channels, reduced, size))
    np.put_along_axis(dwindows, winners[..., None], dout[..., None], axis=-1)
    dx = np.zeros((batch, channels, length))
    dx[:, :, :reduced * size] = dwindows.reshape(batch, channels, reduced * size)
    return dx


def maxpool(x: np.ndarray, size: int = 2) -> np.ndarray:
    """Non-overlapping window max with stride = size; trailing remainder dropped"""
    batch, squeeze = _batched(x)
    pooled, _ = _pool_forward(batch, size)
    return pooled[0] if squeeze else pooled


# -- network ----------------------------------------------------------------

@dataclass
class BlockTrace:
    input_shape: Tuple[int, ...]
    conv_cols: List[np.ndarray] = field(default_factory=list)
    conv_pre: List[np.ndarray] = field(default_factory=list)
    shortcut_cols: Optional[np.ndarray] = None
    pool_winners: Optional[np.ndarray] = None
    pre_pool_length: int = 0


@dataclass
class ForwardTrace:
    """Activations cached by a train-mode forward pass for backward()"""
    batch_size: int
    blocks: List[BlockTrace]
    pooled_shape: Tuple[int, ...]
    dropout_mask: np.ndarray
    dropped: np.ndarray
    output: np.ndarray


def _block_params(params: FcnnParams, block: int, n_convs: int):
    convs = [(params[f"{conv_name(block, k)}.kernel"], params[f"{conv_name(block, k)}.bias"])
             for k in range(1, n_convs + 1)]
    return convs, (params[f"{shortcut_name(block)}.kernel"], params[f"{shortcut_name(block)}.bias"])


def fractal_block_forward(x: np.ndarray, convs: Sequence[Tuple[np.ndarray, np.ndarray]],
                          shortcut: Tuple[np.ndarray, np.ndarray],
                          dilations: Sequence[int]) -> Tuple[np.ndarray, BlockTrace]:
    """p_k = half_sum(relu(conv_k(p_{k-1}))), out = sum_k p_k + conv1x1(x)"""
    batch, squeeze = _batched(x)
    trace = BlockTrace(input_shape=batch.shape)
    h = batch
    out = None
    for (kernel, bias), dilation in zip(convs, dilations):
        z, cols = _conv_forward(h, kernel, bias, dilation)
        trace.conv_cols.append(cols)
        trace.conv_pre.append(z)
        h = half_sum(np.maximum(z, 0.0))
        out = h if out is None else out + h
    s, trace.shortcut_cols = _conv_forward(batch, shortcut[0], shortcut[1], 1)
    out = out + s
    return (out[0] if squeeze else out), trace


def _fractal_block_backward(dout: np.ndarray, trace: BlockTrace,
                            convs: Sequence[Tuple[np.ndarray, np.ndarray]],
                            shortcut: Tuple[np.ndarray, np.ndarray],
                            dilations: Sequence[int]):
    dx, dshortcut_kernel, dshortcut_bias = _conv_backward(dout, trace.shortcut_cols, shortcut[0], 1)
    conv_grads = [None] * len(convs)
    # the deepest merged output feeds only the Add; shallower ones also feed the next conv
    dh = dout
    for k in reversed(range(len(convs))):
        z = trace.conv_pre[k]
        dz = np.concatenate([dh, dh], axis=1) * (z > 0)
        dinput, dkernel, dbias = _conv_backward(dz, trace.conv_cols[k], convs[k][0], dilations[k])
        conv_grads[k] = (dkernel, dbias)
        if k > 0:
            dh = dout + dinput
        else:
            dx = dx + dinput
    return dx, conv_grads, (dshortcut_kernel, dshortcut_bias)


def _as_batch(spectrum, config: FcnnConfig) -> np.ndarray:
    values = spectrum.values if isinstance(spectrum, AbsorbanceSpectrum) else np.asarray(spectrum, dtype=np.float64)
    values = np.atleast_2d(values)
    if values.ndim != 2 or values.shape[1] != config.input_length:
        raise UsageError(f"spectrum length {values.shape[-1]} does not match model input length "
                         f"{config.input_length}")
    return values[:, None, :]


def forward(params: FcnnParams, config: FcnnConfig, spectrum, mode: str = EVAL,
            rng: Optional[RandomSource] = None) -> Tuple[np.ndarray, Optional[ForwardTrace]]:
    """Predictions in internal units, shape (B, M); the trace is returned in train mode only"""
    if mode not in (TRAIN, EVAL):
        raise UsageError(f"unknown mode '{mode}'")
    x = _as_batch(spectrum, config)
    batch = x.shape[0]
    n_convs = len(config.dilations)

    block_traces = []
    for b in range(1, len(config.block_filters) + 1):
        convs, shortcut = _block_params(params, b, n_convs)
        out, trace = fractal_block_forward(x, convs, shortcut, config.dilations)
        trace.pre_pool_length = out.shape[-1]
        x, trace.pool_winners = _pool_forward(out, config.pool_size)
        block_traces.append(trace)

    flat = x.reshape(batch, -1)
    if mode == TRAIN and config.dropout_rate > 0:
        if rng is None:
            raise UsageError("train-mode forward needs a RandomSource for dropout")
        keep = 1.0 - config.dropout_rate
        mask = (rng.uniform(0.0, 1.0, flat.shape) < keep) / keep
    else:
        mask = np.ones_like(flat)
    dropped = flat * mask
    output = dropped @ params["head.kernel"] + params["head.bias"]

    if mode == EVAL:
        return output, None
    return output, ForwardTrace(batch, block_traces, x.shape, mask, dropped, output)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over batch and species of the squared error"""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise UsageError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def backward(params: FcnnParams, config: FcnnConfig, targets: np.ndarray,
             trace: ForwardTrace) -> FcnnParams:
    """Exact gradient of the batch MSE (internal units) for every parameter"""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if trace is None:
        raise UsageError("backward needs a train-mode forward trace")
    if targets.shape != trace.output.shape:
        raise UsageError(f"targets of shape {targets.shape} do not match traced batch {trace.output.shape}")

    grads: Dict[str, np.ndarray] = {}
    doutput = 2.0 * (trace.output - targets) / targets.size
    grads["head.kernel"] = trace.dropped.T @ doutput
    grads["head.bias"] = doutput.sum(axis=0)
    dx = ((doutput @ params["head.kernel"].T) * trace.dropout_mask).reshape(trace.pooled_shape)

    n_convs = len(config.dilations)
    for b in reversed(range(1, len(config.block_filters) + 1)):
        block = trace.blocks[b - 1]
        convs, shortcut = _block_params(params, b, n_convs)
        dout = _pool_backward(dx, block.pool_winners, config.pool_size, block.pre_pool_length)
        dx, conv_grads, (dsk, dsb) = _fractal_block_backward(dout, block, convs, shortcut, config.dilations)
        for k, (dkernel, dbias) in enumerate(conv_grads, start=1):
            grads[f"{conv_name(b, k)}.kernel"] = dkernel
            grads[f"{conv_name(b, k)}.bias"] = dbias
        grads[f"{shortcut_name(b)}.kernel"] = dsk
        grads[f"{shortcut_name(b)}.bias"] = dsb

    return FcnnParams({name: grads[name] for name in params})


def coefficient_of_determination(preds, targets, theta: float = DEFAULT_THETA) -> float:
    """D = 1 - sum (C - C')^2 / (theta + sum (C - mean C)^2) over all entries"""
    preds = np.asarray(preds, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if preds.shape != targets.shape or targets.size == 0:
        raise UsageError(f"need equal, nonempty prediction/target sets, got {preds.size} and {targets.size}")
    residual = targets - preds
    spread = targets - targets.mean()
    return float(1.0 - np.sum(residual * residual) / (theta + np.sum(spread * spread)))


class FcnnModel:
    """A configured network with its parameters and species labels; speaks mol/L"""

    def __init__(self, config: FcnnConfig, params: FcnnParams, species: Sequence[str],
                 metadata: Optional[dict] = None):
        if len(species) != config.output_dim:
            raise UsageError(f"{len(species)} species for a model with {config.output_dim} outputs")
        params.require_same_layout(init_params_layout(config))
        self.config = config
        self.params = params
        self.species = tuple(species)
        self.metadata = dict(metadata or {})

    @classmethod
    def initialized(cls, config: FcnnConfig, species: Sequence[str], seed: int = 0) -> "FcnnModel":
        return cls(config, init_params(config, seed), species, {'init_seed': seed})

    def with_params(self, params: FcnnParams) -> "FcnnModel":
        return FcnnModel(self.config, params, self.species, self.metadata)

    def predict_internal(self, spectra, batch_size: int = 256) -> np.ndarray:
        batch = _as_batch(spectra, self.config)[:, 0, :]
        outputs = [forward(self.params, self.config, batch[i:i + batch_size], EVAL)[0]
                   for i in range(0, batch.shape[0], batch_size)]
        return np.vstack(outputs) if outputs else np.zeros((0, self.config.output_dim))

    def predict(self, spectra, batch_size: int = 256) -> np.ndarray:
        """Concentrations in mol/L, shape (N, M); not clamped to be nonnegative"""
        return self.predict_internal(spectra, batch_size) * self.config.target_scale


def init_params_layout(config: FcnnConfig) -> FcnnParams:
    return FcnnParams({name: np.empty(shape) for name, shape in parameter_shapes(config).items()})
