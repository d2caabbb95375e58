"""Bit-level helpers shared by the coding, reconciliation and hashing stages.

Bit strings are numpy uint8 arrays holding 0/1 values.  Packing is
big-endian (MSB first), matching the wire layout of frames and records.
"""

from __future__ import annotations

import numpy as np

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x):
    """Finalizing mix of splitmix64 applied elementwise to uint64 input.

    Accepts a scalar or ndarray; returns the same shape as uint64.
    """
    z = (np.asarray(x, dtype=np.uint64) + _SM_GAMMA) & MASK64
    z = ((z ^ (z >> np.uint64(30))) * _SM_MIX1) & MASK64
    z = ((z ^ (z >> np.uint64(27))) * _SM_MIX2) & MASK64
    return z ^ (z >> np.uint64(31))


def mix_seed(*parts) -> int:
    """Derive a 64-bit stream seed from an arbitrary tuple of integers/strings.

    Used to give every consumer (per batch, per block, per purpose) its own
    independent deterministic stream from one session seed.
    """
    acc = np.uint64(0x243F6A8885A308D3)
    for part in parts:
        if isinstance(part, str):
            for ch in part.encode():
                acc = splitmix64(acc ^ np.uint64(ch))
        else:
            acc = splitmix64(acc ^ (np.uint64(int(part) & 0xFFFFFFFFFFFFFFFF)))
    return int(acc)


def words_to_bits(words: np.ndarray) -> np.ndarray:
    """Expand uint64 words into bits, MSB first within each word."""
    as_bytes = words.astype(">u8").view(np.uint8)
    return np.unpackbits(as_bytes)


def pack_bits(bits: np.ndarray) -> bytes:
    """Pack a 0/1 array into bytes, MSB first, zero-padding the tail."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    """Unpack `count` bits from bytes produced by pack_bits."""
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count)
    return bits.astype(np.uint8)


def bits_to_int(bits: np.ndarray) -> int:
    """Interpret a short MSB-first bit array as an unsigned integer."""
    value = 0
    for b in np.asarray(bits, dtype=np.uint8):
        value = (value << 1) | int(b)
    return value
