"""Seedable random-bit supply with bias correction and statistical self-tests.

A counter-based splitmix64 generator stands in for the hardware entropy
source so that every run is reproducible from a 64-bit seed.  The bias
corrector is a pluggable stage (none / Von Neumann / XOR of pairs); the
Von Neumann extractor turns any i.i.d. biased Bernoulli stream into an
unbiased one at the cost of throughput.

Samplers map raw bits onto the transmitter's per-slot choices: pulse class
with exact 6:1:1 odds (3 bits per draw) and polarization with 1:1:1:1 odds
(2 bits per draw).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from math import erfc, sqrt

import numpy as np
from scipy.special import gammaincc

from .bitops import splitmix64, words_to_bits

ALPHA = 0.01
MIN_SELFTEST_BITS = 10_000


class InsufficientBits(ValueError):
    """Raised when a statistical test is asked to run on too few bits."""


class Corrector(Enum):
    NONE = "none"
    VON_NEUMANN = "von_neumann"
    XOR_PAIRS = "xor_pairs"


class PulseClass(IntEnum):
    SIGNAL = 0
    DECOY = 1
    VACUUM = 2


class Polarization(IntEnum):
    H = 0
    V = 1
    P = 2
    N = 3


class Basis(IntEnum):
    RECT = 0  # H/V
    DIAG = 1  # P/N


def basis_of(polarization) -> int:
    """Rectilinear for H/V, diagonal for P/N."""
    return int(polarization) >> 1


def bit_of(polarization) -> int:
    """Key-bit convention: H=0, V=1, P=0, N=1."""
    return int(polarization) & 1


@dataclass(frozen=True)
class PulseDescriptor:
    """Alice's per-slot truth: pulse class plus polarization."""

    pulse_class: PulseClass
    polarization: Polarization
    slot_index: int

    @property
    def basis(self) -> int:
        return basis_of(self.polarization)

    @property
    def bit(self) -> int:
        return bit_of(self.polarization)

    @property
    def coding_word(self) -> int:
        """4-bit coding word: 2 class bits then 2 polarization bits."""
        return (int(self.pulse_class) << 2) | int(self.polarization)


def von_neumann_extract(bits: np.ndarray) -> np.ndarray:
    """Debias a bit stream: per pair keep the first bit of 01/10, drop 00/11.

    Output length is at most half the input length.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits) // 2
    pairs = bits[: 2 * n].reshape(n, 2)
    keep = pairs[:, 0] != pairs[:, 1]
    return pairs[keep, 0]


def xor_pairs(bits: np.ndarray) -> np.ndarray:
    """Halve the stream by XORing adjacent bit pairs."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits) // 2
    pairs = bits[: 2 * n].reshape(n, 2)
    return pairs[:, 0] ^ pairs[:, 1]


_CORRECTOR_FN = {
    Corrector.NONE: lambda bits: bits,
    Corrector.VON_NEUMANN: von_neumann_extract,
    Corrector.XOR_PAIRS: xor_pairs,
}


@dataclass
class EntropySource:
    """Deterministic bit stream: splitmix64 of a word counter, then correction.

    The emitted stream depends only on (seed, corrector); chunking of the
    next_bits calls does not change it.
    """

    seed: int
    corrector: Corrector = Corrector.NONE
    bits_emitted: int = 0
    _word_index: int = 0
    _buffer: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))

    def _raw_words(self, count: int) -> np.ndarray:
        idx = np.arange(self._word_index, self._word_index + count, dtype=np.uint64)
        self._word_index += count
        return splitmix64(np.uint64(self.seed) ^ (idx * np.uint64(0x632BE59BD9B4E019)))

    def next_bits(self, count: int) -> np.ndarray:
        """Return exactly `count` bits as a uint8 0/1 array."""
        if count < 0:
            raise ValueError("bit count must be >= 0")
        out = []
        have = len(self._buffer)
        if have:
            out.append(self._buffer)
        fn = _CORRECTOR_FN[self.corrector]
        while have < count:
            # Von Neumann keeps ~1/4 of raw bits on an unbiased input, so
            # overdraw to limit loop trips.
            need = count - have
            words = self._raw_words(max(64, (need * 5) // 64 + 1))
            chunk = fn(words_to_bits(words))
            out.append(chunk)
            have += len(chunk)
        stream = np.concatenate(out) if out else np.empty(0, dtype=np.uint8)
        self._buffer = stream[count:]
        self.bits_emitted += count
        return stream[:count]

    def next_uint(self, n_bits: int) -> int:
        bits = self.next_bits(n_bits)
        value = 0
        for b in bits:
            value = (value << 1) | int(b)
        return value


# 3-bit mapping for the 6:1:1 class ratio: 0..5 signal, 6 decoy, 7 vacuum.
_CLASS_LUT = np.array(
    [PulseClass.SIGNAL] * 6 + [PulseClass.DECOY, PulseClass.VACUUM], dtype=np.uint8
)


def sample_pulse_class(source: EntropySource) -> PulseClass:
    """Draw one pulse class; consumes 3 bits, exact 6:1:1 odds."""
    return PulseClass(int(_CLASS_LUT[source.next_uint(3)]))


def sample_polarization(source: EntropySource) -> Polarization:
    """Draw one polarization; consumes 2 bits, uniform over H/V/P/N."""
    return Polarization(source.next_uint(2))


def sample_pulse_classes(source: EntropySource, count: int) -> np.ndarray:
    """Vectorized class draws (uint8 array of PulseClass values)."""
    bits = source.next_bits(3 * count).reshape(count, 3)
    idx = bits[:, 0] * 4 + bits[:, 1] * 2 + bits[:, 2]
    return _CLASS_LUT[idx]


def sample_polarizations(source: EntropySource, count: int) -> np.ndarray:
    """Vectorized polarization draws (uint8 array of Polarization values)."""
    bits = source.next_bits(2 * count).reshape(count, 2)
    return (bits[:, 0] * 2 + bits[:, 1]).astype(np.uint8)


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: float
    passed: bool


@dataclass(frozen=True)
class TestReport:
    n_bits: int
    results: tuple[TestResult, ...]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "n_bits": self.n_bits,
            "all_passed": self.all_passed,
            "tests": [
                {
                    "name": r.name,
                    "statistic": r.statistic,
                    "p_value": r.p_value,
                    "passed": r.passed,
                }
                for r in self.results
            ],
        }


def monobit_test(bits: np.ndarray) -> TestResult:
    """Frequency test: standardized excess of ones vs zeros."""
    n = len(bits)
    s = abs(2 * int(np.count_nonzero(bits)) - n)
    s_obs = s / sqrt(n)
    p = erfc(s_obs / sqrt(2))
    return TestResult("monobit", s_obs, p, p >= ALPHA)


def runs_test(bits: np.ndarray) -> TestResult:
    """Total-runs test; fails outright when the ones fraction is off."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits)
    pi = np.count_nonzero(bits) / n
    if abs(pi - 0.5) >= 2.0 / sqrt(n):
        return TestResult("runs", float("inf"), 0.0, False)
    v = 1 + int(np.count_nonzero(np.diff(bits)))
    denom = 2.0 * sqrt(2.0 * n) * pi * (1.0 - pi)
    stat = abs(v - 2.0 * n * pi * (1.0 - pi)) / denom
    p = erfc(stat)
    return TestResult("runs", stat, p, p >= ALPHA)


def block_frequency_test(bits: np.ndarray, block_size: int = 128) -> TestResult:
    """Per-block ones-proportion chi-square test."""
    n = len(bits)
    n_blocks = n // block_size
    if n_blocks < 1:
        raise InsufficientBits(f"need at least {block_size} bits")
    trimmed = np.asarray(bits[: n_blocks * block_size], dtype=np.uint8)
    props = trimmed.reshape(n_blocks, block_size).mean(axis=1)
    chi2 = 4.0 * block_size * float(np.sum((props - 0.5) ** 2))
    p = float(gammaincc(n_blocks / 2.0, chi2 / 2.0))
    return TestResult("block_frequency", chi2, p, p >= ALPHA)


def self_test_report(bits: np.ndarray) -> TestReport:
    """Run the monobit, runs and block-frequency tests on a fixed stream."""
    if len(bits) < MIN_SELFTEST_BITS:
        raise InsufficientBits(
            f"need >= {MIN_SELFTEST_BITS} bits, got {len(bits)}"
        )
    results = (monobit_test(bits), runs_test(bits), block_frequency_test(bits))
    return TestReport(len(bits), results)


def run_self_tests(source: EntropySource, n_bits: int) -> TestReport:
    """Draw n_bits from the source and run the self-test battery."""
    if n_bits < MIN_SELFTEST_BITS:
        raise InsufficientBits(
            f"need >= {MIN_SELFTEST_BITS} bits, got {n_bits}"
        )
    return self_test_report(source.next_bits(n_bits))
