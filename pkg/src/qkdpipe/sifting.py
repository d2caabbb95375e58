"""Basis reconciliation over the classical channel.

Three-step flow per batch of frames:

1. the receiver announces (slot, basis) for every detection;
2. the transmitter compares against her stored coding data, answers with
   the retained slots and their pulse class (signal / decoy / vacuum);
3. the receiver keeps the matching records; every stride-th matched
   signal bit plus all matched decoy bits are disclosed by the receiver
   for error statistics, and the transmitter answers with aggregate
   counts so both ends share identical tallies.

Key material is only ever the non-disclosed matched signal bits.  The
transmitter's bit values never cross the channel: she sends slots, class
tags and counters, nothing else.  Matched vacuum-slot clicks are tallied
as background yield data and never enter the key.

Both parties cut the accumulated key into fixed 4096-bit blocks whose slot
sequences are identical by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .entropy import PulseClass

SAMPLE_STRIDE = 10
BLOCK_BITS = 4096


class LocationUnknown(KeyError):
    """The receiver referenced a slot the transmitter never emitted."""


class EmptySample(ValueError):
    """No disclosed bits available for a QBER estimate."""


def sifted_rate(f_hz: float, p_click: float, c: float, p1: float, p2: float) -> float:
    """Sifted key rate: pulse rate x click x basis keep x sampling x decoy keep."""
    return f_hz * p_click * c * p1 * p2


@dataclass
class SiftStats:
    """Shared tallies; both endpoints hold identical copies after step 3."""

    emitted: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    detected: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    matched: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    sample_count: int = 0
    sample_errors: int = 0
    decoy_count: int = 0
    decoy_errors: int = 0
    vacuum_clicks: int = 0

    def add(self, other: "SiftStats") -> None:
        self.emitted += other.emitted
        self.detected += other.detected
        self.matched += other.matched
        self.sample_count += other.sample_count
        self.sample_errors += other.sample_errors
        self.decoy_count += other.decoy_count
        self.decoy_errors += other.decoy_errors
        self.vacuum_clicks += other.vacuum_clicks

    @property
    def sample_qber(self) -> float:
        if self.sample_count == 0:
            raise EmptySample("no disclosed signal sample bits")
        return self.sample_errors / self.sample_count

    def to_payload(self) -> dict:
        return {
            "emitted": self.emitted.tolist(),
            "detected": self.detected.tolist(),
            "matched": self.matched.tolist(),
            "sample_count": self.sample_count,
            "sample_errors": self.sample_errors,
            "decoy_count": self.decoy_count,
            "decoy_errors": self.decoy_errors,
            "vacuum_clicks": self.vacuum_clicks,
        }

    @classmethod
    def from_payload(cls, d: dict) -> "SiftStats":
        return cls(
            emitted=np.array(d["emitted"], dtype=np.int64),
            detected=np.array(d["detected"], dtype=np.int64),
            matched=np.array(d["matched"], dtype=np.int64),
            sample_count=int(d["sample_count"]),
            sample_errors=int(d["sample_errors"]),
            decoy_count=int(d["decoy_count"]),
            decoy_errors=int(d["decoy_errors"]),
            vacuum_clicks=int(d["vacuum_clicks"]),
        )


@dataclass(frozen=True)
class DecoyStatistics:
    """Per-class gains and error rates consumed by the secure-fraction bound."""

    q_signal: float | None
    q_decoy: float | None
    q_vacuum: float | None
    e_signal: float | None
    e_decoy: float | None
    n_signal: int
    n_decoy: int
    n_vacuum: int


def decoy_statistics(stats: SiftStats) -> DecoyStatistics:
    """Gains (detections / emissions) and disclosed error rates per class."""
    det = stats.detected

    def gain(cls_idx):
        if stats.emitted[cls_idx] == 0:
            return None
        return float(det[cls_idx] / stats.emitted[cls_idx])

    e_signal = (
        stats.sample_errors / stats.sample_count if stats.sample_count else None
    )
    e_decoy = stats.decoy_errors / stats.decoy_count if stats.decoy_count else None
    return DecoyStatistics(
        q_signal=gain(PulseClass.SIGNAL),
        q_decoy=gain(PulseClass.DECOY),
        q_vacuum=gain(PulseClass.VACUUM),
        e_signal=e_signal,
        e_decoy=e_decoy,
        n_signal=int(det[PulseClass.SIGNAL]),
        n_decoy=int(det[PulseClass.DECOY]),
        n_vacuum=int(det[PulseClass.VACUUM]),
    )


@dataclass
class SiftedKeyBlock:
    bits: np.ndarray
    slot_indices: np.ndarray
    class_tally: np.ndarray
    sample_qber_signal: float | None
    sample_qber_decoy: float | None
    gain_signal: float | None
    gain_decoy: float | None


def estimate_qber(
    bits_a: np.ndarray, bits_b: np.ndarray, stride: int = SAMPLE_STRIDE
) -> tuple[float, np.ndarray, np.ndarray]:
    """Disclose every stride-th bit, estimate the QBER, strip the sample.

    Returns (qber, remaining_a, remaining_b).  The disclosed positions are
    removed from both keys since they are public now.
    """
    bits_a = np.asarray(bits_a, dtype=np.uint8)
    bits_b = np.asarray(bits_b, dtype=np.uint8)
    if len(bits_a) != len(bits_b):
        raise ValueError("blocks must be aligned")
    sample = np.zeros(len(bits_a), dtype=bool)
    sample[::stride] = True
    if not sample.any():
        raise EmptySample("no positions sampled")
    qber = float(np.mean(bits_a[sample] != bits_b[sample]))
    return qber, bits_a[~sample], bits_b[~sample]


class _KeyAccumulator:
    """Collects matched signal bits and cuts fixed-size blocks."""

    def __init__(self, block_bits: int):
        self.block_bits = block_bits
        self._bits: list[np.ndarray] = []
        self._slots: list[np.ndarray] = []
        self._held = 0

    def push(self, bits: np.ndarray, slots: np.ndarray) -> None:
        if len(bits):
            self._bits.append(bits.astype(np.uint8))
            self._slots.append(slots.astype(np.int64))
            self._held += len(bits)

    def pop_blocks(self, stats: SiftStats) -> list[SiftedKeyBlock]:
        if self._held < self.block_bits:
            return []
        bits = np.concatenate(self._bits)
        slots = np.concatenate(self._slots)
        blocks = []
        n_full = self._held // self.block_bits
        decoy = decoy_statistics(stats)
        for i in range(n_full):
            lo, hi = i * self.block_bits, (i + 1) * self.block_bits
            blocks.append(
                SiftedKeyBlock(
                    bits=bits[lo:hi].copy(),
                    slot_indices=slots[lo:hi].copy(),
                    class_tally=stats.detected.copy(),
                    sample_qber_signal=decoy.e_signal,
                    sample_qber_decoy=decoy.e_decoy,
                    gain_signal=decoy.q_signal,
                    gain_decoy=decoy.q_decoy,
                )
            )
        rest = n_full * self.block_bits
        self._bits = [bits[rest:]] if rest < self._held else []
        self._slots = [slots[rest:]] if rest < self._held else []
        self._held -= rest
        return blocks

    def reset(self) -> None:
        self._bits, self._slots, self._held = [], [], 0


class AliceSifter:
    """Transmitter-side protocol state."""

    def __init__(self, sample_stride: int = SAMPLE_STRIDE, block_bits: int = BLOCK_BITS):
        self.sample_stride = sample_stride
        self.stats = SiftStats()
        self._acc = _KeyAccumulator(block_bits)
        self._signal_ordinal = 0
        self._truth_slots = np.empty(0, dtype=np.int64)
        self._truth_class = np.empty(0, dtype=np.uint8)
        self._truth_pol = np.empty(0, dtype=np.uint8)
        self._pending_sample: np.ndarray | None = None
        self._pending_decoy: np.ndarray | None = None

    def load_truth(self, slots, classes, pols, emissions) -> None:
        """Store this batch's coding data (sorted by slot) and emission counts."""
        self._truth_slots = np.asarray(slots, dtype=np.int64)
        self._truth_class = np.asarray(classes, dtype=np.uint8)
        self._truth_pol = np.asarray(pols, dtype=np.uint8)
        self._batch_stats = SiftStats()
        self._batch_stats.emitted += np.asarray(emissions, dtype=np.int64)

    def handle_basis_loc(self, slots, basis):
        """Step 2: compare bases, decide retained slots and their classes."""
        slots = np.asarray(slots, dtype=np.int64)
        basis = np.asarray(basis, dtype=np.int64)
        idx = np.searchsorted(self._truth_slots, slots)
        hit = np.zeros(len(slots), dtype=bool)
        in_range = idx < len(self._truth_slots)
        hit[in_range] = self._truth_slots[idx[in_range]] == slots[in_range]
        if not hit.all():
            missing = slots[~hit][0]
            raise LocationUnknown(f"slot {missing} not in stored coding data")
        cls = self._truth_class[idx]
        pol = self._truth_pol[idx]
        np.add.at(self._batch_stats.detected, cls, 1)

        is_vacuum = cls == PulseClass.VACUUM
        matched = ((pol >> 1) == basis) & ~is_vacuum
        keep = matched | is_vacuum
        self._batch_stats.vacuum_clicks += int(np.count_nonzero(is_vacuum))
        np.add.at(self._batch_stats.matched, cls[matched], 1)

        r_slots = slots[keep]
        r_cls = cls[keep]
        r_bits = (pol & 1)[keep]

        sig = r_cls == PulseClass.SIGNAL
        sig_bits = r_bits[sig]
        sig_slots = r_slots[sig]
        ordinals = self._signal_ordinal + np.arange(len(sig_bits))
        self._signal_ordinal += len(sig_bits)
        sampled = ordinals % self.sample_stride == 0
        self._pending_sample = sig_bits[sampled].astype(np.uint8)
        self._pending_decoy = r_bits[r_cls == PulseClass.DECOY].astype(np.uint8)
        self._acc.push(sig_bits[~sampled], sig_slots[~sampled])
        return r_slots, r_cls

    def handle_sample_disclose(self, sample_bits, decoy_bits) -> SiftStats:
        """Compare the receiver's disclosed bits; emit this batch's tallies."""
        sample_bits = np.asarray(sample_bits, dtype=np.uint8)
        decoy_bits = np.asarray(decoy_bits, dtype=np.uint8)
        if len(sample_bits) != len(self._pending_sample) or len(decoy_bits) != len(
            self._pending_decoy
        ):
            raise ValueError("disclosure length mismatch")
        self._batch_stats.sample_count += len(sample_bits)
        self._batch_stats.sample_errors += int(
            np.count_nonzero(sample_bits != self._pending_sample)
        )
        self._batch_stats.decoy_count += len(decoy_bits)
        self._batch_stats.decoy_errors += int(
            np.count_nonzero(decoy_bits != self._pending_decoy)
        )
        self._pending_sample = None
        self._pending_decoy = None
        batch = self._batch_stats
        self.stats.add(batch)
        return batch

    def pop_blocks(self) -> list[SiftedKeyBlock]:
        return self._acc.pop_blocks(self.stats)

    def reset_inflight(self) -> None:
        self._acc.reset()
        self._signal_ordinal = 0


class BobSifter:
    """Receiver-side protocol state."""

    def __init__(self, sample_stride: int = SAMPLE_STRIDE, block_bits: int = BLOCK_BITS):
        self.sample_stride = sample_stride
        self.stats = SiftStats()
        self._acc = _KeyAccumulator(block_bits)
        self._signal_ordinal = 0
        self._rec_slots = np.empty(0, dtype=np.int64)
        self._rec_bits = np.empty(0, dtype=np.uint8)
        self._rec_basis = np.empty(0, dtype=np.uint8)

    def load_records(self, slots, basis, bits) -> None:
        self._rec_slots = np.asarray(slots, dtype=np.int64)
        self._rec_basis = np.asarray(basis, dtype=np.uint8)
        self._rec_bits = np.asarray(bits, dtype=np.uint8)

    def basis_loc(self):
        """Step 1 payload: slot and basis of every stored detection."""
        return self._rec_slots, self._rec_basis

    def handle_retain(self, retain_slots, retain_classes):
        """Step 3: keep matching records, disclose sample and decoy bits."""
        retain_slots = np.asarray(retain_slots, dtype=np.int64)
        retain_classes = np.asarray(retain_classes, dtype=np.uint8)
        idx = np.searchsorted(self._rec_slots, retain_slots)
        bits = self._rec_bits[idx]

        sig = retain_classes == PulseClass.SIGNAL
        sig_bits = bits[sig]
        sig_slots = retain_slots[sig]
        ordinals = self._signal_ordinal + np.arange(len(sig_bits))
        self._signal_ordinal += len(sig_bits)
        sampled = ordinals % self.sample_stride == 0
        sample_bits = sig_bits[sampled].astype(np.uint8)
        decoy_bits = bits[retain_classes == PulseClass.DECOY].astype(np.uint8)
        self._acc.push(sig_bits[~sampled], sig_slots[~sampled])
        return sample_bits, decoy_bits

    def apply_stats(self, batch: SiftStats) -> None:
        self.stats.add(batch)

    def pop_blocks(self) -> list[SiftedKeyBlock]:
        return self._acc.pop_blocks(self.stats)

    def reset_inflight(self) -> None:
        self._acc.reset()
        self._signal_ordinal = 0


def sift(
    alice_classes: np.ndarray,
    alice_pols: np.ndarray,
    bob_slots: np.ndarray,
    bob_basis: np.ndarray,
    bob_bits: np.ndarray,
    sample_stride: int = SAMPLE_STRIDE,
    block_bits: int = BLOCK_BITS,
):
    """Run the full three-step protocol in-process over one event log.

    alice_classes/alice_pols are dense per-slot arrays (the transmitter's
    whole pulse train); bob_* are his detection records.  Returns
    (blocks_a, blocks_b, stats, message_log); the log is a list of
    (sender, msg_type, payload) triples for disclosure auditing.
    """
    n_slots = len(alice_classes)
    alice = AliceSifter(sample_stride, block_bits)
    bob = BobSifter(sample_stride, block_bits)
    emissions = np.bincount(np.asarray(alice_classes, dtype=np.uint8), minlength=3)
    alice.load_truth(
        np.arange(n_slots, dtype=np.int64), alice_classes, alice_pols, emissions
    )
    bob.load_records(bob_slots, bob_basis, bob_bits)

    log = []
    slots, basis = bob.basis_loc()
    log.append(("bob", "BASIS_LOC", {"slots": slots, "basis": basis}))
    r_slots, r_cls = alice.handle_basis_loc(slots, basis)
    log.append(("alice", "RETAIN", {"slots": r_slots, "classes": r_cls}))
    sample_bits, decoy_bits = bob.handle_retain(r_slots, r_cls)
    log.append(
        ("bob", "SAMPLE_DISCLOSE", {"sample": sample_bits, "decoy": decoy_bits})
    )
    batch = alice.handle_sample_disclose(sample_bits, decoy_bits)
    log.append(("alice", "SAMPLE_DISCLOSE", batch.to_payload()))
    bob.apply_stats(batch)

    blocks_a = alice.pop_blocks()
    blocks_b = bob.pop_blocks()
    return blocks_a, blocks_b, alice.stats, log
