"""Frame-format codec and synchronization helpers.

The sync channel is organized as fixed cycles of K signal clocks followed
by N low clocks.  Global pulse slots count only signal clocks, so frame f
covers pulse slots [f*K, (f+1)*K) and slot_index = head * K + slot_in_frame.

Each detection is stored as a 16-bit record, MSB first:

    bits 15..6  slot position inside the frame (10 bits)
    bit  5      measurement basis (0 rectilinear, 1 diagonal)
    bit  4      measured bit value
    bits 3..0   flags (carry the detector id)

A frame serializes as a 32-bit big-endian head (the frame counter)
followed by the records; its byte length alone determines the record
count.  On the physical channel frame boundaries are recovered from the
low-clock gap, which is what makes one lossy frame recoverable at the
next boundary (see resync_stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SlotOutOfRange(ValueError):
    """A record's slot position does not fit the frame's signal clocks."""


class HeadNotFound(ValueError):
    """The stream cannot be re-delimited into frames."""


class NoAlignment(ValueError):
    """No candidate offset exhibits a sub-threshold error rate."""


@dataclass(frozen=True)
class FrameFormat:
    k_signal_clocks: int = 1018
    n_low_clocks: int = 6
    head_bits: int = 32
    record_bits: int = 16

    def __post_init__(self):
        if self.k_signal_clocks < 1 or self.n_low_clocks < 0:
            raise ValueError("need k >= 1 and n >= 0")
        pos_bits = max(1, int(np.ceil(np.log2(max(2, self.k_signal_clocks)))))
        if self.record_bits < pos_bits + 2:
            raise ValueError("record too narrow for slot position + basis + bit")
        if self.head_bits != 32 or self.record_bits != 16:
            raise ValueError("only the 32-bit head / 16-bit record layout is supported")

    @property
    def cycle_clocks(self) -> int:
        return self.k_signal_clocks + self.n_low_clocks


@dataclass(frozen=True)
class FrameRecord:
    slot_in_frame: int
    basis: int
    bit: int
    flags: int = 0


@dataclass
class FrameData:
    frame_index: int
    records: list = field(default_factory=list)

    def to_bytes(self, fmt: FrameFormat) -> bytes:
        words = pack_records(
            np.array([r.slot_in_frame for r in self.records], dtype=np.int64),
            np.array([r.basis for r in self.records], dtype=np.int64),
            np.array([r.bit for r in self.records], dtype=np.int64),
            np.array([r.flags for r in self.records], dtype=np.int64),
            fmt,
        )
        head = int(self.frame_index).to_bytes(4, "big")
        return head + words.astype(">u2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, fmt: FrameFormat) -> "FrameData":
        if len(data) < 4 or (len(data) - 4) % 2 != 0:
            raise ValueError("frame byte length must be 4 + 2*records")
        head = int.from_bytes(data[:4], "big")
        words = np.frombuffer(data[4:], dtype=">u2").astype(np.uint16)
        slot, basis, bit, flags = unpack_records(words, fmt)
        records = [
            FrameRecord(int(s), int(a), int(b), int(f))
            for s, a, b, f in zip(slot, basis, bit, flags)
        ]
        return cls(head, records)


def pack_records(slot_in_frame, basis, bit, flags, fmt: FrameFormat) -> np.ndarray:
    """Pack parallel record fields into 16-bit words."""
    slot_in_frame = np.asarray(slot_in_frame, dtype=np.int64)
    if len(slot_in_frame) and (
        slot_in_frame.min() < 0 or slot_in_frame.max() >= fmt.k_signal_clocks
    ):
        raise SlotOutOfRange(
            f"slot positions must lie in [0, {fmt.k_signal_clocks})"
        )
    words = (
        (slot_in_frame << 6)
        | (np.asarray(basis, dtype=np.int64) << 5)
        | (np.asarray(bit, dtype=np.int64) << 4)
        | (np.asarray(flags, dtype=np.int64) & 0xF)
    )
    return words.astype(np.uint16)


def unpack_records(words: np.ndarray, fmt: FrameFormat):
    """Inverse of pack_records."""
    words = np.asarray(words, dtype=np.uint16).astype(np.int64)
    slot = words >> 6
    basis = (words >> 5) & 1
    bit = (words >> 4) & 1
    flags = words & 0xF
    if len(slot) and slot.max() >= fmt.k_signal_clocks:
        raise SlotOutOfRange("decoded slot position out of range")
    return slot, basis, bit, flags


def encode_frame(frame_index: int, events, fmt: FrameFormat) -> FrameData:
    """Build a frame from detection events that belong to it.

    Events must carry global slot indices inside [frame_index*K,
    (frame_index+1)*K); records come out sorted by slot position.
    """
    base = frame_index * fmt.k_signal_clocks
    records = []
    for ev in events:
        pos = ev.slot_index - base
        if not 0 <= pos < fmt.k_signal_clocks:
            raise SlotOutOfRange(
                f"event slot {ev.slot_index} outside frame {frame_index}"
            )
        records.append(FrameRecord(pos, ev.basis, ev.bit, ev.detector_id & 0xF))
    records.sort(key=lambda r: r.slot_in_frame)
    return FrameData(frame_index, records)


def decode_frame(data: bytes, fmt: FrameFormat) -> FrameData:
    return FrameData.from_bytes(data, fmt)


def overhead_fraction(fmt: FrameFormat) -> float:
    """Throughput fraction lost to the low clocks: n / (k + n)."""
    return fmt.n_low_clocks / fmt.cycle_clocks


def coding_rate_bob(f_hz: float, p_click: float, fmt: FrameFormat) -> float:
    """Receiver coding data rate in bits/s.

    Per detected datum the average cost is record_bits plus the head
    amortized over the expected detections per frame:
    rate = F * P * (record_bits + head_bits / (K * P)).
    """
    if p_click <= 0.0:
        raise ValueError("p_click must be > 0")
    per_datum = fmt.record_bits + fmt.head_bits / (fmt.k_signal_clocks * p_click)
    return f_hz * p_click * per_datum


def inject_clock_loss(cells: np.ndarray, n_clocks: int, rng) -> np.ndarray:
    """Drop n random clock cells from one frame body (simulated sync loss)."""
    drop = rng.choice(len(cells), size=n_clocks, replace=False)
    return np.delete(cells, drop)


def resync_stream(stream, fmt: FrameFormat):
    """Decode a clock-cell stream with per-frame corruption flags.

    `stream` is a list of (head, cells) pairs where cells is a uint16 array
    of length <= K; cell value 0xFFFF means an idle clock, anything else is
    the 6 content bits (basis/bit/flags) of a detection at that position.
    A frame whose cell count differs from K lost clocks in transit: its
    positions cannot be trusted, so it is flagged corrupt and skipped,
    and decoding re-acquires at the next frame boundary.
    """
    frames: list[FrameData] = []
    corrupt: list[bool] = []
    for head, cells in stream:
        cells = np.asarray(cells, dtype=np.uint16)
        if len(cells) > fmt.k_signal_clocks:
            raise HeadNotFound(
                f"frame {head} has {len(cells)} cells, boundary lost"
            )
        if len(cells) != fmt.k_signal_clocks:
            frames.append(FrameData(int(head), []))
            corrupt.append(True)
            continue
        pos = np.where(cells != 0xFFFF)[0]
        content = cells[pos].astype(np.int64)
        records = [
            FrameRecord(int(p), int((c >> 5) & 1), int((c >> 4) & 1), int(c & 0xF))
            for p, c in zip(pos, content)
        ]
        frames.append(FrameData(int(head), records))
        corrupt.append(False)
    return frames, corrupt


def cells_from_frame(frame: FrameData, fmt: FrameFormat) -> np.ndarray:
    """Render a frame as its K clock cells (inverse of resync_stream)."""
    cells = np.full(fmt.k_signal_clocks, 0xFFFF, dtype=np.uint16)
    for r in frame.records:
        cells[r.slot_in_frame] = (r.basis << 5) | (r.bit << 4) | (r.flags & 0xF)
    return cells


def align_offset(
    bob_slots: np.ndarray,
    bob_basis: np.ndarray,
    bob_bits: np.ndarray,
    alice_pol: np.ndarray,
    search_range: int,
    min_comparisons: int = 500,
    qber_accept: float = 0.25,
) -> int:
    """Recover the receiver-to-transmitter slot offset by a QBER scan.

    Tries every candidate d in [-search_range, search_range], compares the
    receiver's matched-basis bits against transmitter truth at slot - d and
    returns the candidate with minimal error rate.  A candidate needs
    min_comparisons matched-basis pairs to qualify.  Raises NoAlignment
    when no qualified candidate dips below qber_accept (a desynchronized
    stream sits near 50% everywhere).
    """
    bob_slots = np.asarray(bob_slots, dtype=np.int64)
    bob_basis = np.asarray(bob_basis, dtype=np.int64)
    bob_bits = np.asarray(bob_bits, dtype=np.int64)
    alice_pol = np.asarray(alice_pol, dtype=np.int64)
    best_d, best_q = None, 1.0
    for d in range(-search_range, search_range + 1):
        shifted = bob_slots - d
        valid = (shifted >= 0) & (shifted < len(alice_pol))
        if not np.any(valid):
            continue
        pol = alice_pol[shifted[valid]]
        matched = (pol >> 1) == bob_basis[valid]
        n = int(np.count_nonzero(matched))
        if n < min_comparisons:
            continue
        errors = np.count_nonzero((pol & 1)[matched] != bob_bits[valid][matched])
        q = errors / n
        if q < best_q:
            best_d, best_q = d, q
    if best_d is None or best_q >= qber_accept:
        raise NoAlignment(f"minimal QBER {best_q:.3f} over +/-{search_range}")
    return best_d
