"""Per-hop PSK rotation agent pair.

The initiator fetches a key from its local key manager, sends the key ID (never
the key itself) to the peer over the plain classical channel, and the peer
redeems the ID at its own manager. Both tunnel ends are then armed with the
shared key. After 180 s without a successful rotation each side injects an
independent random PSK, deliberately breaking the hop to prevent downgrade.
"""

from __future__ import annotations

from typing import Callable, Optional

from .engine import Simulator
from .kms import KEY_BYTES, QkdLink
from .network import LinkSpec, Network
from .tunnel import Tunnel

# One negotiation is 2 packets, 78 bytes total.
NEGO_PACKETS = 2
NEGO_BYTES = 78
_MSG_SIZES = (39, 39)


def channel_properties() -> dict:
    """Descriptor of the negotiation channel as an adversary sees it."""
    return {
        "encrypted": False,
        "authenticated": False,
        "observable": True,
        "key_material_exposed": False,
    }


class RotationAgentPair:
    """Both ends of one hop's rotation agents, interacting only through
    modeled packets on the hop's classical link."""

    def __init__(
        self,
        sim: Simulator,
        net: Network,
        hop_id: str,
        kms_link: QkdLink,
        tunnel: Tunnel,
        link: LinkSpec,
        period_ms: int = 120_000,
        failsafe_ms: int = 180_000,
        poll_ms: int = 1_000,
        nego_timeout_ms: int = 10_000,
        phase_offset_ms: int = 0,
    ):
        self.sim = sim
        self.net = net
        self.id = f"agent:{hop_id}"
        self.hop_id = hop_id
        self.kms = kms_link
        self.tunnel = tunnel
        self.link = link
        self.initiator, self.responder = sorted((kms_link.a, kms_link.b))
        self.period_ms = period_ms
        self.failsafe_ms = failsafe_ms
        self.poll_ms = poll_ms
        self.nego_timeout_ms = nego_timeout_ms
        self.phase_offset_ms = phase_offset_ms

        self.last_success_at: Optional[int] = None
        self.rot_seq = 0
        self.transcript: list[dict] = []  # adversary-observable wire payloads
        self.corrupt_key_id: Optional[Callable[[str], str]] = None  # test seam
        self._attempt_handle = None
        self._failsafe_handle = None
        self._busy = False

    def start(self) -> None:
        self._schedule_attempt(self.sim.now())

    def negotiation_channel_properties(self) -> dict:
        return channel_properties()

    def _next_grid_instant(self, after: int) -> int:
        t = self.phase_offset_ms
        while t <= after:
            t += self.period_ms
        return t

    def _schedule_attempt(self, at: int) -> None:
        if self._attempt_handle is not None:
            self._attempt_handle.cancel()
        self._attempt_handle = self.sim.schedule(at, self.id, "rotation_attempt", self.rotate)

    def _stream(self, side: str):
        return self.sim.stream(f"{self.id}:{side}")

    # -- rotation -----------------------------------------------------------

    def rotate(self) -> None:
        if self._busy:
            return
        now = self.sim.now()
        self.kms.tick_to(now)
        record = self.kms.get_enc_key(self.initiator)
        if record is None:
            self._finish(False, "no_key", 0, None)
            return

        self._busy = True
        self.rot_seq += 1
        payload = {"hop": self.hop_id, "key_id": record.key_id, "rot_seq": self.rot_seq}
        if self.corrupt_key_id is not None:
            payload = dict(payload, key_id=self.corrupt_key_id(record.key_id))
        self.transcript.append(dict(payload, direction="to_responder"))

        out1 = self.net.traverse([self.initiator, self.responder], _MSG_SIZES[0], "arnika_nego")
        if not out1.delivered:
            # Peer never sees the ID; the initiator gives up after its timeout.
            self._finish(False, "negotiation_timeout", self.nego_timeout_ms, None)
            return

        # The whole exchange is decided here; only state changes are deferred
        # to the packets' arrival instants.
        key = self.kms.get_dec_key(self.responder, payload["key_id"])
        ack = {"hop": self.hop_id, "rot_seq": self.rot_seq, "ok": key is not None}
        self.transcript.append(dict(ack, direction="to_initiator"))
        out2 = self.net.traverse([self.responder, self.initiator], _MSG_SIZES[1], "arnika_nego")

        if key is not None:
            # The responder arms its end once the key ID reaches it, whether or
            # not the acknowledgment survives the return trip.
            self.sim.schedule_in(
                out1.elapsed_ms, self.id, "redeemed", lambda: self.tunnel.set_psk(self.responder, key)
            )

        if not out2.delivered:
            self._finish(False, "ack_lost", self.nego_timeout_ms, None)
        elif key is None:
            self._finish(False, "unknown_key_id", out1.elapsed_ms + out2.elapsed_ms, None)
        else:
            self._finish(True, "ok", out1.elapsed_ms + out2.elapsed_ms, record.key)

    def _finish(self, success: bool, reason: str, delay_ms: int, key: Optional[bytes]) -> None:
        def apply():
            self._busy = False
            now = self.sim.now()
            if success:
                self.tunnel.set_psk(self.initiator, key)
                self.last_success_at = now
                self.sim.log(self.id, "rotation_ok", {"rot_seq": self.rot_seq})
                self._arm_failsafe()
                self._schedule_attempt(self._next_grid_instant(now))
            else:
                self.sim.log(self.id, "rotation_fail", {"reason": reason})
                self._schedule_attempt(now + self.poll_ms)

        # Always defer through the queue, even for zero delay: state changes
        # apply strictly after every handler already pending at this instant.
        self.sim.schedule_in(delay_ms, self.id, "rotation_done", apply)

    # -- fail-safe ------------------------------------------------------------

    def _arm_failsafe(self) -> None:
        if self._failsafe_handle is not None:
            self._failsafe_handle.cancel()
        deadline = self.last_success_at + self.failsafe_ms
        self._failsafe_handle = self.sim.schedule(deadline, self.id, "failsafe_timer", self._on_failsafe)

    def _on_failsafe(self) -> None:
        now = self.sim.now()
        if self.last_success_at is None or now - self.last_success_at < self.failsafe_ms:
            return
        # Each side draws its own key, guaranteeing a mismatch.
        self.tunnel.set_psk(self.initiator, self._stream(self.initiator).randbytes(KEY_BYTES))
        self.tunnel.set_psk(self.responder, self._stream(self.responder).randbytes(KEY_BYTES))
        self.sim.log(self.id, "random_psk_injected", {"hop": self.hop_id})
