"""Hidden per-record timestamps assigned by the storage engine.

An active timestamp is a (micros, seq) pair drawn from a node-local strictly
monotonic source. Its binary form is exactly 9 bytes: one type-tag byte plus
8 value bytes packing 48 bits of microseconds relative to the engine epoch
and a 16-bit sequence counter, big-endian, so bytewise order equals logical
order.
"""

from __future__ import annotations

from dataclasses import dataclass

TAG_BYTE = 0x41
ENCODED_SIZE = 9
_MICROS_BITS = 48
_SEQ_BITS = 16
_MICROS_MAX = (1 << _MICROS_BITS) - 1
SEQ_MAX = (1 << _SEQ_BITS) - 1


@dataclass(frozen=True, order=True)
class ActiveTimestamp:
    micros: int
    seq: int = 0

    def encode(self, epoch_micros: int = 0) -> bytes:
        rel = self.micros - epoch_micros
        if not 0 <= rel <= _MICROS_MAX:
            raise ValueError(f"timestamp {self.micros} out of 48-bit range for epoch {epoch_micros}")
        if not 0 <= self.seq <= SEQ_MAX:
            raise ValueError(f"sequence {self.seq} out of 16-bit range")
        return bytes([TAG_BYTE]) + ((rel << _SEQ_BITS) | self.seq).to_bytes(8, "big")

    @classmethod
    def decode(cls, data: bytes, epoch_micros: int = 0) -> "ActiveTimestamp":
        if len(data) != ENCODED_SIZE or data[0] != TAG_BYTE:
            raise ValueError("not an encoded active timestamp")
        packed = int.from_bytes(data[1:], "big")
        return cls(micros=(packed >> _SEQ_BITS) + epoch_micros, seq=packed & SEQ_MAX)


class MonotonicSource:
    """Strictly increasing timestamp source over an underlying clock.

    Both record-timestamp assignment and channel-time sampling draw from the
    same source under the owning node's lock, so a sampled channel time can
    never be matched or preceded by a later-assigned record timestamp.
    Callers must hold that lock; this class itself is not thread-safe.
    """

    def __init__(self, clock_micros_fn) -> None:
        self._clock_micros = clock_micros_fn
        self._last = ActiveTimestamp(-1, 0)

    def next(self) -> ActiveTimestamp:
        now = self._clock_micros()
        if now > self._last.micros:
            ts = ActiveTimestamp(now, 0)
        elif self._last.seq < SEQ_MAX:
            ts = ActiveTimestamp(self._last.micros, self._last.seq + 1)
        else:
            ts = ActiveTimestamp(self._last.micros + 1, 0)
        self._last = ts
        return ts
