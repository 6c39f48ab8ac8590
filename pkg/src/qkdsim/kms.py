"""Paired key-manager model for one QKD link: mirrored buffers, rate-limited
generation, and initiator/responder key delivery (key plus key-ID, redeemed once
per side)."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .engine import RngStream, deterministic_uuid

KEY_BYTES = 32  # 256-bit symmetric keys


class NotAnEndpoint(Exception):
    """The requesting node is not attached to this link."""


@dataclass(frozen=True)
class KeyRecord:
    key_id: str  # UUID string
    key: bytes  # 32 bytes


class _Slot:
    __slots__ = ("record", "consumed_a", "consumed_b")

    def __init__(self, record: KeyRecord):
        self.record = record
        self.consumed_a = False
        self.consumed_b = False


class QkdLink:
    """Both endpoint key managers of one QKD link, kept mirrored by construction.

    Generation accrues as an exact fraction of keys per elapsed millisecond so
    repeated fractional ticks never drift. A non-operational link stops both
    generation and delivery; set ``drain_residual=True`` to keep serving the
    remaining buffer after an outage instead. Delivery is FIFO per side with
    amortized O(1) lookups.
    """

    def __init__(
        self,
        a: str,
        b: str,
        rate_keys_per_s: float,
        buffer_cap: int,
        stream: RngStream,
        drain_residual: bool = False,
    ):
        if buffer_cap < 1:
            raise ValueError("buffer_cap must be >= 1")
        self.a = a
        self.b = b
        self.rate = Fraction(str(rate_keys_per_s))
        self.buffer_cap = buffer_cap
        self.stream = stream
        self.drain_residual = drain_residual
        self.operational = True
        self.generated = 0
        self._accum = Fraction(0)
        self._slots: dict[int, _Slot] = {}  # generation seq -> slot
        self._by_id: dict[str, int] = {}
        self._front = 0
        self._cursor = {a: 0, b: 0}  # next FIFO candidate per side
        self._avail = {a: 0, b: 0}
        self._last_tick_ms: Optional[int] = None

    # -- generation ---------------------------------------------------------

    def tick_generate(self, dt_ms: int) -> int:
        """Advance generation by dt_ms; returns how many fresh keys appeared."""
        if dt_ms < 0:
            raise ValueError("dt_ms must be >= 0")
        if not self.operational:
            return 0
        if len(self._slots) >= self.buffer_cap:
            # Full buffer halts generation; pending fractional progress lapses.
            self._accum = Fraction(0)
            return 0
        self._accum += self.rate * dt_ms / 1000
        fresh = 0
        while self._accum >= 1 and len(self._slots) < self.buffer_cap:
            self._accum -= 1
            rec = KeyRecord(deterministic_uuid(self.stream), self.stream.randbytes(KEY_BYTES))
            seq = self.generated
            self._slots[seq] = _Slot(rec)
            self._by_id[rec.key_id] = seq
            self.generated += 1
            self._avail[self.a] += 1
            self._avail[self.b] += 1
            fresh += 1
        if self._accum >= 1:
            self._accum = Fraction(0)
        return fresh

    def tick_to(self, now_ms: int) -> None:
        """Lazy generation: catch up to an absolute clock reading."""
        if self._last_tick_ms is None:
            self._last_tick_ms = 0
        if now_ms > self._last_tick_ms:
            self.tick_generate(now_ms - self._last_tick_ms)
            self._last_tick_ms = now_ms

    def set_operational(self, flag: bool, now_ms: Optional[int] = None) -> None:
        """Flip liveness; pass now_ms on revival so the outage window yields no keys."""
        if flag and not self.operational and now_ms is not None:
            self._last_tick_ms = now_ms
        self.operational = flag

    # -- delivery -----------------------------------------------------------

    def _check_endpoint(self, requester: str) -> None:
        if requester not in (self.a, self.b):
            raise NotAnEndpoint(f"{requester} is not an endpoint of {self.a}~{self.b}")

    def _deliverable(self) -> bool:
        return self.operational or self.drain_residual

    def _consumed(self, slot: _Slot, side: str) -> bool:
        return slot.consumed_a if side == self.a else slot.consumed_b

    def _mark(self, slot: _Slot, side: str) -> None:
        if side == self.a:
            slot.consumed_a = True
        else:
            slot.consumed_b = True
        self._avail[side] -= 1

    def get_enc_key(self, requester: str) -> Optional[KeyRecord]:
        """Oldest key not yet consumed on the requester's side, or None."""
        self._check_endpoint(requester)
        if not self._deliverable():
            return None
        seq = max(self._cursor[requester], self._front)
        while seq < self.generated:
            slot = self._slots.get(seq)
            if slot is not None and not self._consumed(slot, requester):
                self._cursor[requester] = seq
                self._mark(slot, requester)
                self._prune()
                return slot.record
            seq += 1
        self._cursor[requester] = seq
        return None

    def get_dec_key(self, requester: str, key_id: str) -> Optional[bytes]:
        """Redeem a key by ID on the requester's side; None if unknown or spent."""
        self._check_endpoint(requester)
        if not self._deliverable():
            return None
        seq = self._by_id.get(key_id)
        if seq is None:
            return None
        slot = self._slots[seq]
        if self._consumed(slot, requester):
            return None
        self._mark(slot, requester)
        self._prune()
        return slot.record.key

    def stored_key_count(self, side: str) -> int:
        self._check_endpoint(side)
        return self._avail[side]

    def _prune(self) -> None:
        while self._front < self.generated:
            slot = self._slots.get(self._front)
            if slot is None or (slot.consumed_a and slot.consumed_b):
                if slot is not None:
                    del self._slots[self._front]
                    del self._by_id[slot.record.key_id]
                self._front += 1
            else:
                break
