"""VPN tunnel state machine with PSK mixing, periodic rekey and a grace window.

The classical part of the handshake is modeled as always-correct: an attempt
succeeds exactly when both sides hold the same 32-byte PSK and every handshake
packet survives the path. Sessions are tracked as an epoch counter; actual
payload encryption is out of scope (confidentiality is judged symbolically in
the security module).
"""

from __future__ import annotations

from typing import Callable, Optional

from .engine import Simulator
from .network import Delivery, Network

PSK_BYTES = 32

# Per-handshake wire constants: 3 packets, 398 bytes total (remainder on the last).
HANDSHAKE_PACKETS = 3
HANDSHAKE_BYTES = 398
_PKT_SIZES = (132, 132, 134)

DOWN = "down"
ESTABLISHED = "established"


class BadKeyLength(Exception):
    pass


class TunnelDown(Exception):
    """Raised by transmit() when no live session exists."""


class Tunnel:
    """One tunnel instance covering both sides' state.

    ``path_provider`` returns the node chain the tunnel's packets traverse
    right now (two nodes for a hop tunnel, the live underlay route for the
    end-to-end data tunnel), or None when there is no usable path.
    """

    def __init__(
        self,
        sim: Simulator,
        net: Network,
        tunnel_id: str,
        a: str,
        b: str,
        path_provider: Callable[[], Optional[list[str]]],
        layer_tag: str,
        rekey_period_ms: int = 120_000,
        grace_ms: int = 60_000,
        poll_ms: int = 1_000,
        phase_offset_ms: int = 0,
        on_established: Optional[Callable[[], None]] = None,
    ):
        self.sim = sim
        self.net = net
        self.id = tunnel_id
        self.initiator, self.responder = sorted((a, b))
        self.path_provider = path_provider
        self.layer_tag = layer_tag
        self.rekey_period_ms = rekey_period_ms
        self.grace_ms = grace_ms
        self.poll_ms = poll_ms
        self.phase_offset_ms = phase_offset_ms
        self.on_established = on_established

        self.phase = DOWN
        self.psk: dict[str, Optional[bytes]] = {self.initiator: None, self.responder: None}
        self.session_epoch = 0
        self.last_session_at: Optional[int] = None
        self._grace_handle = None
        self._attempt_handle = None
        self._busy = False

    # -- key management -------------------------------------------------------

    def set_psk(self, side: str, psk: bytes) -> None:
        """Arm a PSK for one side; takes effect at the next handshake attempt."""
        if len(psk) != PSK_BYTES:
            raise BadKeyLength(f"psk must be {PSK_BYTES} bytes, got {len(psk)}")
        if side not in self.psk:
            raise ValueError(f"{side} is not a side of tunnel {self.id}")
        self.psk[side] = psk

    def psks_match(self) -> bool:
        pi, pr = self.psk[self.initiator], self.psk[self.responder]
        return pi is not None and pi == pr

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        self._schedule_attempt(self.sim.now())

    def _next_grid_instant(self, after: int) -> int:
        period = self.rekey_period_ms
        k = max(0, (after - self.phase_offset_ms) // period + 1)
        t = self.phase_offset_ms + k * period
        while t <= after:
            t += period
        return t

    def _schedule_attempt(self, at: int) -> None:
        if self._attempt_handle is not None:
            self._attempt_handle.cancel()
        self._attempt_handle = self.sim.schedule(at, self.id, "handshake_attempt", self.attempt_handshake)

    def attempt_handshake(self) -> None:
        """Initiate one handshake; the outcome is computed now and applied after
        the sampled packet flight time."""
        if self._busy:
            return
        now = self.sim.now()
        if self.psk[self.initiator] is None or self.psk[self.responder] is None:
            # Not yet keyed: nothing goes on the wire, check again shortly.
            self._schedule_attempt(now + self.poll_ms)
            return
        path = self.path_provider()
        if path is None:
            self._finish(now, False, "no_path")
            return
        psk_ok = self.psks_match()
        # On a PSK mismatch the responder silently rejects the first packet, so
        # only the initiation is ever on the wire.
        count = HANDSHAKE_PACKETS if psk_ok else 1
        elapsed = 0
        delivered = True
        reason = "ok"
        for i in range(count):
            forward = i % 2 == 0
            hop_path = path if forward else list(reversed(path))
            out = self.net.traverse(hop_path, _PKT_SIZES[i], self.layer_tag)
            elapsed += out.elapsed_ms
            if not out.delivered:
                delivered = False
                reason = out.reason
                break
        success = psk_ok and delivered
        if not psk_ok:
            reason = "psk_mismatch"
        self._busy = True
        self.sim.schedule_in(elapsed, self.id, "handshake_done", lambda: self._finish(self.sim.now(), success, reason))

    def _finish(self, now: int, success: bool, reason: str) -> None:
        self._busy = False
        if success:
            was_down = self.phase == DOWN
            self.phase = ESTABLISHED
            self.session_epoch += 1
            self.last_session_at = now
            self.sim.log(self.id, "tunnel_up", {"epoch": self.session_epoch})
            self._arm_grace()
            self._schedule_attempt(self._next_grid_instant(now))
            if was_down and self.on_established is not None:
                self.on_established()
        else:
            self.sim.log(self.id, "rekey_fail", {"reason": reason})
            if self.phase == ESTABLISHED:
                # Failed rekeys wait for the next period; the old session keeps
                # carrying traffic until the grace window runs out.
                self._schedule_attempt(self._next_grid_instant(now))
            else:
                self._schedule_attempt(now + self.poll_ms)

    def _arm_grace(self) -> None:
        if self._grace_handle is not None:
            self._grace_handle.cancel()
        deadline = self.last_session_at + self.rekey_period_ms + self.grace_ms
        self._grace_handle = self.sim.schedule(deadline, self.id, "grace_timer", self._on_grace)

    def _on_grace(self) -> None:
        now = self.sim.now()
        if self.last_session_at is not None and now - self.last_session_at >= self.rekey_period_ms + self.grace_ms:
            self.phase = DOWN
            self.sim.log(self.id, "tunnel_down", {"last_session_at": self.last_session_at})
            self._schedule_attempt(now + self.poll_ms)

    # -- data plane --------------------------------------------------------------

    def transmit(self, size_bytes: int, tag: str = "data") -> Delivery:
        """Forward a payload over the tunnel's current path. Raises TunnelDown
        when no live session exists."""
        if self.phase != ESTABLISHED:
            raise TunnelDown(self.id)
        path = self.path_provider()
        if path is None:
            raise TunnelDown(self.id)
        return self.net.traverse(path, size_bytes, tag)
