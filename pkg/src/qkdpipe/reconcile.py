"""Iterative error correction with segment parities and Hamming syndromes.

Each iteration splits both keys into power-of-two segments, the reference
side (Alice) discloses one parity per segment, and every mismatched
segment is repaired by exchanging the k-bit Hamming syndrome (the XOR of
the in-segment indices of set bits): the XOR of the two syndromes points
at the differing position, which the receiver flips.  A seeded
permutation is applied between iterations so residual even-weight error
groups get split up.  No bits are discarded; every disclosed parity,
syndrome and CRC bit is counted and charged to privacy amplification.

A CRC-32 comparison runs whenever an iteration sees zero parity
mismatches or the schedule is exhausted.  A failed check with iterations
left resumes correcting; a failed check at exhaustion discards the block
on both sides.

Segment lengths may be fixed by configuration or derived from the current
error-rate estimate (short segments while errors are dense, long cheap
segments for cleanup).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .bitops import splitmix64

CRC_BITS = 32

# CRC-32/IEEE as implemented by zlib; check value crc("123456789") = 0xCBF43926.
CRC32_POLY = 0x04C11DB7
CRC32_INIT = 0xFFFFFFFF
CRC32_FINAL_XOR = 0xFFFFFFFF


class ChannelClosed(RuntimeError):
    """The peer went away mid-session."""


def binary_entropy(e: float) -> float:
    """H2(e), the Shannon bound for reconciliation disclosure per bit."""
    if e <= 0.0 or e >= 1.0:
        return 0.0
    return -e * math.log2(e) - (1.0 - e) * math.log2(1.0 - e)


def efficiency(leaked_bits: int, n: int, qber: float) -> float:
    """Disclosure ratio f = leaked / (n * H2(qber)); 1.0 is the Shannon limit."""
    if not 0.0 < qber < 0.5:
        raise ValueError("qber must lie in (0, 0.5)")
    if n <= 0:
        raise ValueError("key length must be positive")
    return leaked_bits / (n * binary_entropy(qber))


@dataclass(frozen=True)
class ReconcileConfig:
    schedule: tuple = (8, 8, 16, 16, 32, 64, 128)
    max_iterations: int = 7
    permutation_seed_base: int = 0x5DEECE66D
    crc_polynomial: int = CRC32_POLY
    crc_init: int = CRC32_INIT
    crc_final_xor: int = CRC32_FINAL_XOR
    crc_reflected: bool = True

    def __post_init__(self):
        if len(self.schedule) != self.max_iterations:
            raise ValueError("schedule length must equal max_iterations")
        for seg in self.schedule:
            if seg < 8 or seg & (seg - 1):
                raise ValueError("segment lengths must be powers of two >= 8")
        if (
            self.crc_polynomial != CRC32_POLY
            or self.crc_init != CRC32_INIT
            or self.crc_final_xor != CRC32_FINAL_XOR
            or not self.crc_reflected
        ):
            raise ValueError("only the CRC-32/IEEE parameterization is supported")


@dataclass
class ReconciledKeyBlock:
    bits: np.ndarray
    leaked_bits: int
    iterations_used: int
    crc_ok: bool


def derive_schedule(qber: float, n: int, max_iterations: int = 7) -> tuple:
    """Segment lengths tuned to the current error rate.

    The opening length keeps the expected errors per segment around 1/3
    (short enough for mostly single-error segments), the second pass
    repeats or widens it, and the tail switches to long cheap segments
    for cleanup.  Lengths never exceed the key size.
    """
    e = min(max(qber, 1e-4), 0.25)
    l1 = 2 ** int(round(math.log2(0.35 / e)))
    l1 = max(8, min(64, l1))
    l2 = 32 if l1 == 8 else l1
    cap = 256
    schedule = [l1, l2, min(4 * l2, cap)] + [cap] * (max_iterations - 3)
    limit = 2 ** int(math.floor(math.log2(max(8, n))))
    return tuple(min(s, limit) for s in schedule[:max_iterations])


def permutation(n: int, seed: int) -> np.ndarray:
    """Deterministic pseudorandom permutation of range(n) from a 64-bit seed."""
    keys = splitmix64(
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        ^ (np.arange(n, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15))
    )
    return np.argsort(keys, kind="stable")


def permute(key: np.ndarray, seed: int) -> np.ndarray:
    """Apply the seeded permutation; both parties derive the same one."""
    return np.asarray(key)[permutation(len(key), seed)]


def invert_permute(key: np.ndarray, seed: int) -> np.ndarray:
    out = np.empty_like(key)
    out[permutation(len(key), seed)] = key
    return out


def parity_vector(key: np.ndarray, seg_len: int) -> np.ndarray:
    """One parity bit per segment; the final segment is zero-padded."""
    key = np.asarray(key, dtype=np.uint8)
    n_seg = -(-len(key) // seg_len)
    padded = np.zeros(n_seg * seg_len, dtype=np.uint8)
    padded[: len(key)] = key
    return (padded.reshape(n_seg, seg_len).sum(axis=1) & 1).astype(np.uint8)


def hamming_syndrome(segment: np.ndarray) -> int:
    """XOR of the indices of set bits over positions 1..2^k-1.

    Position 0 carries no syndrome weight (the segment parity covers it);
    a zero syndrome therefore means either no error or an error at
    position 0, which the parity comparison disambiguates.
    """
    segment = np.asarray(segment, dtype=np.uint8)
    length = len(segment)
    if length < 8 or length & (length - 1):
        raise ValueError("segment length must be a power of two >= 8")
    idx = np.where(segment != 0)[0]
    return int(np.bitwise_xor.reduce(idx)) if len(idx) else 0


def syndrome_bits(seg_len: int) -> int:
    return int(math.log2(seg_len))


def _syndromes_bulk(segments: np.ndarray) -> np.ndarray:
    """Hamming syndromes of many equal-length segments at once."""
    s, length = segments.shape
    k = syndrome_bits(length)
    pos = np.arange(length)
    out = np.zeros(s, dtype=np.int64)
    for b in range(k):
        mask = (pos >> b) & 1 == 1
        out |= (segments[:, mask].sum(axis=1) & 1) << b
    return out


def _pad_length(n: int, schedule) -> int:
    unit = max(schedule)
    return -(-n // unit) * unit


def _crc(working: np.ndarray) -> int:
    return zlib.crc32(np.packbits(working).tobytes()) & 0xFFFFFFFF


class _PartyState:
    """Per-endpoint working state shared by both protocol roles."""

    def __init__(self, key: np.ndarray, schedule, seed_base: int):
        self.n = len(key)
        self.schedule = tuple(schedule)
        self.seed_base = seed_base
        n_pad = _pad_length(self.n, schedule)
        self.working = np.zeros(n_pad, dtype=np.uint8)
        self.working[: self.n] = np.asarray(key, dtype=np.uint8)
        self.position_map = np.arange(n_pad)
        self.leaked = 0
        self.iteration = -1

    def begin_iteration(self, index: int) -> int:
        """Advance to iteration `index`, permuting between iterations."""
        self.iteration = index
        if index > 0:
            perm = permutation(len(self.working), self.seed_base + index)
            self.working = self.working[perm]
            self.position_map = self.position_map[perm]
        return self.schedule[index]

    def segments(self, seg_len: int) -> np.ndarray:
        return self.working.reshape(-1, seg_len)

    def final_bits(self) -> np.ndarray:
        restored = np.empty_like(self.working)
        restored[self.position_map] = self.working
        return restored[: self.n]


class AliceReconciler:
    """Reference side: discloses parities and syndromes."""

    def __init__(self, key, cfg: ReconcileConfig, seed_base: int, schedule=None):
        self.cfg = cfg
        self.state = _PartyState(key, schedule or cfg.schedule, seed_base)

    def parity_message(self, iteration: int) -> dict:
        seg_len = self.state.begin_iteration(iteration)
        parities = parity_vector(self.state.working, seg_len)
        self.state.leaked += len(parities)
        return {"iteration": iteration, "seg_len": seg_len, "parities": parities}

    def syndrome_message(self, indices: np.ndarray) -> dict:
        seg_len = self.state.schedule[self.state.iteration]
        k = syndrome_bits(seg_len)
        segs = self.state.segments(seg_len)[indices]
        syn = _syndromes_bulk(segs) if len(indices) else np.empty(0, dtype=np.int64)
        self.state.leaked += k * len(indices)
        return {"iteration": self.state.iteration, "syndromes": syn}

    def crc_message(self) -> dict:
        self.state.leaked += CRC_BITS
        return {"crc": _crc(self.state.working)}

    def result(self, crc_ok: bool) -> ReconciledKeyBlock:
        return ReconciledKeyBlock(
            bits=self.state.final_bits(),
            leaked_bits=self.state.leaked,
            iterations_used=self.state.iteration + 1,
            crc_ok=crc_ok,
        )


class BobReconciler:
    """Noisy side: compares parities, applies syndrome-directed flips."""

    def __init__(self, key, cfg: ReconcileConfig, seed_base: int, schedule=None):
        self.cfg = cfg
        self.state = _PartyState(key, schedule or cfg.schedule, seed_base)

    def handle_parity(self, msg: dict) -> dict:
        seg_len = self.state.begin_iteration(msg["iteration"])
        if seg_len != msg["seg_len"]:
            raise ValueError("schedule mismatch between endpoints")
        mine = parity_vector(self.state.working, seg_len)
        mismatch = np.where(mine != msg["parities"])[0]
        self.state.leaked += len(mine)
        self._pending = mismatch
        return {"iteration": msg["iteration"], "indices": mismatch}

    def handle_syndromes(self, msg: dict) -> None:
        seg_len = self.state.schedule[self.state.iteration]
        k = syndrome_bits(seg_len)
        indices = self._pending
        segs = self.state.segments(seg_len)[indices]
        mine = _syndromes_bulk(segs) if len(indices) else np.empty(0, dtype=np.int64)
        diff = mine ^ np.asarray(msg["syndromes"], dtype=np.int64)
        flip = indices * seg_len + diff
        self.state.working[flip] ^= 1
        self.state.leaked += k * len(indices)

    def handle_crc(self, msg: dict) -> bool:
        self.state.leaked += CRC_BITS
        return _crc(self.state.working) == msg["crc"]

    def result(self, crc_ok: bool) -> ReconciledKeyBlock:
        return ReconciledKeyBlock(
            bits=self.state.final_bits(),
            leaked_bits=self.state.leaked,
            iterations_used=self.state.iteration + 1,
            crc_ok=crc_ok,
        )


def reconcile_session(
    key_a: np.ndarray,
    key_b: np.ndarray,
    cfg: ReconcileConfig | None = None,
    qber_hint: float | None = None,
    seed_base: int | None = None,
    trace: list | None = None,
):
    """Run the full protocol in-process and return both parties' blocks.

    With qber_hint the segment schedule is derived from the error rate,
    otherwise the configured schedule is used.  `trace`, when a list, gets
    one dict per iteration with the true residual error count (test
    introspection only; a real deployment cannot observe it).
    """
    cfg = cfg or ReconcileConfig()
    if len(key_a) != len(key_b):
        raise ValueError("keys must have equal length")
    if len(key_a) == 0:
        raise ValueError("keys must be non-empty")
    schedule = (
        derive_schedule(qber_hint, len(key_a), cfg.max_iterations)
        if qber_hint is not None
        else cfg.schedule
    )
    seed = cfg.permutation_seed_base if seed_base is None else seed_base
    alice = AliceReconciler(key_a, cfg, seed, schedule)
    bob = BobReconciler(key_b, cfg, seed, schedule)

    crc_ok = False
    for it in range(len(schedule)):
        req = bob.handle_parity(alice.parity_message(it))
        mismatches = len(req["indices"])
        if mismatches:
            bob.handle_syndromes(alice.syndrome_message(req["indices"]))
        if trace is not None:
            trace.append(
                {
                    "iteration": it,
                    "seg_len": schedule[it],
                    "mismatches": mismatches,
                    "residual_errors": int(
                        np.count_nonzero(alice.state.working != bob.state.working)
                    ),
                }
            )
        if mismatches == 0 or it == len(schedule) - 1:
            crc_ok = bob.handle_crc(alice.crc_message())
            if crc_ok:
                break
    block_a = alice.result(crc_ok)
    block_b = bob.result(crc_ok)
    assert block_a.leaked_bits == block_b.leaked_bits
    return block_a, block_b
