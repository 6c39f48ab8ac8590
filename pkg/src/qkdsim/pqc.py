"""End-to-end KEM handshake agents over a chain of established hop tunnels.

Each exchange runs a 4-message handshake (4772 bytes total) every 120 s and
yields a fresh 32-byte output key on both ends. A session may run several
exchanges over disjoint paths with incompatible suites; the per-path keys are
folded into one data-tunnel PSK with SHA-256 over the concatenation in
ascending path-id order. Persistent failure triggers independent random key
injection on each end after 180 s, mirroring the hop-layer fail-safe.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional

from .engine import RngStream, Simulator
from .network import Network, link_id
from .tunnel import ESTABLISHED, Tunnel

OSK_BYTES = 32

# One handshake is 4 messages, 4772 bytes total, split evenly.
HANDSHAKE_MESSAGES = 4
HANDSHAKE_BYTES = 4772
_MSG_SIZES = (1193, 1193, 1193, 1193)


class BadKeyLength(Exception):
    pass


class MissingKey(Exception):
    pass


class KemError(Exception):
    """Decapsulation rejected the ciphertext (wrong suite or corrupted)."""


class StubKem:
    """Deterministic stand-in KEM, explicitly non-cryptographic.

    Secrets are hashes over the suite id and fresh nonce material, which keeps
    the correctness contract (decaps of an encaps ciphertext returns the same
    shared key) and makes distinct suite ids mutually incompatible. Real
    implementations plug in through the same three calls.
    """

    def __init__(self, suite_id: str):
        self.suite_id = suite_id

    def _h(self, *parts: bytes) -> bytes:
        h = hashlib.sha256()
        h.update(self.suite_id.encode())
        for p in parts:
            h.update(p)
        return h.digest()

    def keygen(self, rng: RngStream) -> tuple[bytes, bytes]:
        secret = rng.randbytes(32)
        public = self._h(b"pub", secret)
        return public, secret

    def encaps(self, public: bytes, rng: RngStream) -> tuple[bytes, bytes]:
        nonce = rng.randbytes(32)
        shared = self._h(b"shared", public, nonce)
        tag = self._h(b"confirm", shared)[:8]
        return nonce + tag, shared

    def decaps(self, secret: bytes, ciphertext: bytes) -> bytes:
        public = self._h(b"pub", secret)
        nonce, tag = ciphertext[:32], ciphertext[32:]
        shared = self._h(b"shared", public, nonce)
        if self._h(b"confirm", shared)[:8] != tag:
            raise KemError(f"ciphertext does not match suite {self.suite_id}")
        return shared


_REGISTRY: dict[str, object] = {}


def register_suite(suite) -> None:
    _REGISTRY[suite.suite_id] = suite


def get_suite(suite_id: str):
    if suite_id not in _REGISTRY:
        raise KeyError(f"unknown KEM suite {suite_id!r}")
    return _REGISTRY[suite_id]


register_suite(StubKem("stub-v1"))
register_suite(StubKem("stub-v2"))


def combine_paths(keys: list[tuple[str, bytes]]) -> bytes:
    """Fold per-path keys into one 32-byte PSK: SHA-256 over the concatenation
    in ascending path-id order, so both endpoints agree regardless of arrival
    order."""
    if not keys:
        raise ValueError("need at least one constituent key")
    for _, k in keys:
        if len(k) != OSK_BYTES:
            raise BadKeyLength(f"constituent keys must be {OSK_BYTES} bytes")
    h = hashlib.sha256()
    for _, k in sorted(keys, key=lambda kv: kv[0]):
        h.update(k)
    return h.digest()


@dataclass
class CompletionReport:
    """Analytic serialized-service model for many peers on one instance."""

    peers: int
    service_time_ms: int
    period_ms: int
    makespan_ms: int
    overflowed: list[int]

    @property
    def all_within_period(self) -> bool:
        return not self.overflowed


def schedule_many(peers: int, service_time_ms: int, period_ms: int = 120_000) -> CompletionReport:
    """Whether `peers` serialized handshakes at `service_time_ms` apiece all
    finish inside one rekey period. The service time is a model input, not a
    measured quantity."""
    if peers < 1:
        raise ValueError("peers must be >= 1")
    overflowed = [i for i in range(peers) if (i + 1) * service_time_ms > period_ms]
    return CompletionReport(
        peers=peers,
        service_time_ms=service_time_ms,
        period_ms=period_ms,
        makespan_ms=peers * service_time_ms,
        overflowed=overflowed,
    )


class E2eExchange:
    """One KEM handshake instance between two end nodes over one path."""

    def __init__(
        self,
        sim: Simulator,
        net: Network,
        exchange_id: str,
        endpoints: tuple[str, str],
        path_id: str,
        suite_initiator: str,
        suite_responder: str,
        path_provider: Callable[[], Optional[list[str]]],
        hop_tunnel_for_link: Callable[[str], Optional[Tunnel]],
        on_osk: Callable[["E2eExchange"], None],
        period_ms: int = 120_000,
        failsafe_ms: int = 180_000,
        poll_ms: int = 1_000,
        phase_offset_ms: int = 0,
    ):
        self.sim = sim
        self.net = net
        self.id = exchange_id
        self.initiator, self.responder = sorted(endpoints)
        self.path_id = path_id
        self.suite_initiator = suite_initiator
        self.suite_responder = suite_responder
        self.path_provider = path_provider
        self.hop_tunnel_for_link = hop_tunnel_for_link
        self.on_osk = on_osk
        self.period_ms = period_ms
        self.failsafe_ms = failsafe_ms
        self.poll_ms = poll_ms
        self.phase_offset_ms = phase_offset_ms

        self.osk: dict[str, Optional[bytes]] = {self.initiator: None, self.responder: None}
        self.last_success_at: Optional[int] = None
        self.links_used: set[str] = set()
        self._attempt_handle = None
        self._failsafe_handle = None
        self._busy = False

    def start(self) -> None:
        self._schedule_attempt(self.sim.now())

    def _next_grid_instant(self, after: int) -> int:
        t = self.phase_offset_ms
        while t <= after:
            t += self.period_ms
        return t

    def _schedule_attempt(self, at: int) -> None:
        if self._attempt_handle is not None:
            self._attempt_handle.cancel()
        self._attempt_handle = self.sim.schedule(at, self.id, "pqc_attempt", self.attempt)

    def _hop_live(self, lid: str) -> bool:
        tun = self.hop_tunnel_for_link(lid)
        return tun is not None and tun.phase == ESTABLISHED

    def _hops_established(self, path: list[str]) -> bool:
        return all(self._hop_live(link_id(path[i], path[i + 1])) for i in range(len(path) - 1))

    def attempt(self) -> None:
        """Run one handshake; messages ride the hop tunnels, so every hop on
        the path must hold a live session."""
        if self._busy:
            return
        now = self.sim.now()
        path = self.path_provider()
        if path is None:
            self._finish(0, False, "no_route")
            return
        if self.suite_initiator != self.suite_responder:
            self._finish(0, False, "suite_mismatch")
            return
        if not self._hops_established(path):
            self._finish(0, False, "hop_down")
            return

        elapsed = 0
        delivered = True
        reason = "ok"
        for i in range(HANDSHAKE_MESSAGES):
            forward = i % 2 == 0
            msg_path = path if forward else list(reversed(path))
            out = self.net.traverse(msg_path, _MSG_SIZES[i], "pqc_handshake", link_ok=self._hop_live)
            elapsed += out.elapsed_ms
            if not out.delivered:
                delivered = False
                reason = out.reason
                break
        for i in range(len(path) - 1):
            self.links_used.add(link_id(path[i], path[i + 1]))

        if delivered:
            suite = get_suite(self.suite_initiator)
            rng = self.sim.stream(f"{self.id}:kem")
            public, secret = suite.keygen(rng)
            ciphertext, shared = suite.encaps(public, rng)
            if suite.decaps(secret, ciphertext) != shared:
                raise AssertionError("KEM correctness violated")
            self._busy = True
            self.sim.schedule_in(elapsed, self.id, "pqc_done", lambda: self._apply_success(shared))
        else:
            self._finish(elapsed, False, reason)

    def _apply_success(self, shared: bytes) -> None:
        self._busy = False
        now = self.sim.now()
        self.osk[self.initiator] = shared
        self.osk[self.responder] = shared
        self.last_success_at = now
        self.sim.log(self.id, "pqc_ok", {"path": self.path_id})
        self._arm_failsafe()
        self._schedule_attempt(self._next_grid_instant(now))
        self.on_osk(self)

    def _finish(self, delay_ms: int, success: bool, reason: str) -> None:
        assert not success

        def apply():
            now = self.sim.now()
            self.sim.log(self.id, "pqc_fail", {"reason": reason, "path": self.path_id})
            if self.last_success_at is not None:
                self._schedule_attempt(self._next_grid_instant(now))
            else:
                self._schedule_attempt(now + self.poll_ms)

        if delay_ms <= 0:
            apply()
        else:
            self.sim.schedule_in(delay_ms, self.id, "pqc_done", apply)

    def inject_osk_random(self) -> None:
        """Fail-safe: each endpoint independently replaces its output key."""
        for end in (self.initiator, self.responder):
            self.osk[end] = self.sim.stream(f"{self.id}:failsafe:{end}").randbytes(OSK_BYTES)
        self.sim.log(self.id, "pqc_random_injected", {"path": self.path_id})
        self.on_osk(self)

    def _arm_failsafe(self) -> None:
        if self._failsafe_handle is not None:
            self._failsafe_handle.cancel()
        deadline = self.last_success_at + self.failsafe_ms
        self._failsafe_handle = self.sim.schedule(deadline, self.id, "failsafe_timer", self._on_failsafe)

    def _on_failsafe(self) -> None:
        now = self.sim.now()
        if self.last_success_at is None or now - self.last_success_at < self.failsafe_ms:
            return
        self.inject_osk_random()
