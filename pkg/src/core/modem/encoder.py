"""
CSK encoder
Bit strings to pump flow traces for binary and quadruple concentration shift keying
"""

from typing import List, Sequence, Tuple, Union

import numpy as np

from ...models.link_models import FlowTrace, TransmitterConfig
from ...utils.errors import UsageError

Bits = Union[str, Sequence[int]]

ASCII_BITS = 7


def normalize_bits(bits: Bits) -> str:
    """'0'/'1' string from a string or an integer sequence"""
    text = bits if isinstance(bits, str) else ''.join(str(int(b)) for b in bits)
    text = text.replace(' ', '')
    if set(text) - {'0', '1'}:
        raise UsageError(f"bit string may only contain 0 and 1, got {text!r}")
    return text


def ascii7(text: str) -> str:
    """MSB-first 7-bit code per character"""
    codes = []
    for position, char in enumerate(text):
        if ord(char) >= 1 << ASCII_BITS:
            raise UsageError(f"character {char!r} at position {position} is not 7-bit ASCII")
        codes.append(format(ord(char), f'0{ASCII_BITS}b'))
    return ''.join(codes)


def bits_to_ascii7(bits: Bits) -> str:
    bits = normalize_bits(bits)
    if len(bits) % ASCII_BITS:
        raise UsageError(f"{len(bits)} bits is not a whole number of 7-bit characters")
    return ''.join(chr(int(bits[i:i + ASCII_BITS], 2)) for i in range(0, len(bits), ASCII_BITS))


def interleave_dibits(seq_a: Bits, seq_b: Bits) -> str:
    """Pair stream a0 b0 a1 b1 ...; seq_a supplies the high bit of each level index"""
    seq_a, seq_b = normalize_bits(seq_a), normalize_bits(seq_b)
    if len(seq_a) != len(seq_b):
        raise UsageError(f"sequences differ in length: {len(seq_a)} vs {len(seq_b)}")
    return ''.join(a + b for a, b in zip(seq_a, seq_b))


def split_dibits(bits: Bits) -> Tuple[str, str]:
    bits = normalize_bits(bits)
    if len(bits) % 2:
        raise UsageError(f"odd bit count {len(bits)} cannot be split into pairs")
    return bits[0::2], bits[1::2]


def symbol_levels(bits: Bits, bits_per_symbol: int) -> List[int]:
    """Level index per symbol, consuming bits_per_symbol bits MSB-first"""
    bits = normalize_bits(bits)
    if len(bits) % bits_per_symbol:
        raise UsageError(f"{len(bits)} bits is not a multiple of {bits_per_symbol} bits per symbol")
    return [int(bits[i:i + bits_per_symbol], 2) for i in range(0, len(bits), bits_per_symbol)]


def dibit_levels(bits: Bits) -> List[int]:
    return symbol_levels(bits, 2)


def level_bits(level: int, bits_per_symbol: int) -> str:
    return format(level, f'0{bits_per_symbol}b')


def encode_bits(tx: TransmitterConfig, bits: Bits) -> FlowTrace:
    """Flow trace for a message; the symbol train starts at the transmitter's start offset

    Each symbol holds its level's info flow for duty_cycle * T_b and then shuts the
    info pump, while the solvent pump keeps the total flow constant. The stretch
    before the offset carries solvent only.
    """
    levels = symbol_levels(bits, tx.bits_per_symbol)
    if not levels:
        return FlowTrace.empty()

    total = tx.total_flow
    t_b = tx.bit_interval_s
    on_time = tx.duty_cycle * t_b
    breakpoints, info = [0.0], []

    if tx.start_offset_s > 0:
        breakpoints.append(tx.start_offset_s)
        info.append(0.0)
    for k, level in enumerate(levels):
        start = tx.start_offset_s + k * t_b
        level_info = tx.flows[level][0]
        if on_time < t_b:
            breakpoints.extend([start + on_time, start + t_b])
            info.extend([level_info, 0.0])
        else:
            breakpoints.append(start + t_b)
            info.append(level_info)

    info = np.asarray(info)
    return FlowTrace(np.asarray(breakpoints), info, total - info)


def extend_trace(trace: FlowTrace, horizon_s: float, total_flow: float) -> FlowTrace:
    """Pad with solvent-only flow up to horizon_s"""
    if horizon_s < trace.horizon_s:
        raise UsageError(f"cannot shorten a {trace.horizon_s:g} s trace to {horizon_s:g} s")
    if horizon_s == trace.horizon_s:
        return trace
    return FlowTrace(np.append(trace.breakpoints, horizon_s),
                     np.append(trace.info, 0.0), np.append(trace.solvent, total_flow))
