"""Standalone HTTP front-end for the key-manager model, for interop testing.

Endpoint shapes follow the standard key-delivery API (ETSI GS QKD 014):

    GET  /api/v1/keys/{peer_id}/status
    POST /api/v1/keys/{peer_id}/enc_keys      body: {"number": n} (optional)
    POST /api/v1/keys/{peer_id}/dec_keys      body: {"key_IDs": [{"key_ID": "..."}]}

Keys are served base64-encoded. TLS and caller authentication are out of
scope. Buffer mutation is serialized under one lock so consume-once holds
under concurrent requests.
"""

from __future__ import annotations

import base64
import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .engine import RngStream
from .kms import KEY_BYTES, QkdLink

_PATH_RE = re.compile(r"^/api/v1/keys/([^/]+)/(status|enc_keys|dec_keys)$")


class KmsState:
    """One node's local key manager: a mirrored link per configured peer."""

    def __init__(self, node_id: str, seed: int = 0):
        self.node_id = node_id
        self.seed = seed
        self.links: dict[str, QkdLink] = {}
        self.lock = threading.Lock()
        self._t0 = time.monotonic()

    def add_peer(self, peer_id: str, rate_keys_per_s: float = 10.0, buffer_cap: int = 1000) -> None:
        stream = RngStream(self.seed, f"kms:{self.node_id}:{peer_id}")
        self.links[peer_id] = QkdLink(self.node_id, peer_id, rate_keys_per_s, buffer_cap, stream)

    def _now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def status(self, peer_id: str) -> Optional[dict]:
        with self.lock:
            link = self.links.get(peer_id)
            if link is None:
                return None
            link.tick_to(self._now_ms())
            return {"stored_key_count": link.stored_key_count(self.node_id), "key_size": KEY_BYTES * 8}

    def enc_keys(self, peer_id: str, number: int) -> Optional[list[dict]]:
        with self.lock:
            link = self.links.get(peer_id)
            if link is None:
                return None
            link.tick_to(self._now_ms())
            out = []
            for _ in range(number):
                rec = link.get_enc_key(self.node_id)
                if rec is None:
                    break
                out.append({"key_ID": rec.key_id, "key": base64.b64encode(rec.key).decode()})
            return out

    def dec_keys(self, peer_id: str, key_ids: list[str]) -> Optional[list[dict]]:
        with self.lock:
            link = self.links.get(peer_id)
            if link is None:
                return None
            link.tick_to(self._now_ms())
            out = []
            for kid in key_ids:
                key = link.get_dec_key(peer_id, kid)
                if key is not None:
                    out.append({"key_ID": kid, "key": base64.b64encode(key).decode()})
            return out


class _Handler(BaseHTTPRequestHandler):
    state: KmsState  # installed by make_server

    def _reply(self, code: int, body: dict) -> None:
        data = json.dumps(body).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _read_json(self) -> Optional[dict]:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            return None

    def do_GET(self):  # noqa: N802 (http.server API)
        m = _PATH_RE.match(self.path)
        if not m or m.group(2) != "status":
            self._reply(404, {"message": "not found"})
            return
        status = self.state.status(m.group(1))
        if status is None:
            self._reply(404, {"message": f"unknown peer {m.group(1)!r}"})
            return
        self._reply(200, status)

    def do_POST(self):  # noqa: N802
        m = _PATH_RE.match(self.path)
        if not m or m.group(2) not in ("enc_keys", "dec_keys"):
            self._reply(404, {"message": "not found"})
            return
        peer, op = m.group(1), m.group(2)
        body = self._read_json()
        if body is None:
            self._reply(400, {"message": "malformed JSON body"})
            return

        if op == "enc_keys":
            number = body.get("number", 1)
            if not isinstance(number, int) or number < 1:
                self._reply(400, {"message": "number must be a positive integer"})
                return
            keys = self.state.enc_keys(peer, number)
            if keys is None:
                self._reply(404, {"message": f"unknown peer {peer!r}"})
                return
            if not keys:
                self._reply(503, {"message": "no key available"})
                return
            self._reply(200, {"keys": keys})
        else:
            ids = body.get("key_IDs")
            if not isinstance(ids, list) or not all(isinstance(e, dict) and "key_ID" in e for e in ids):
                self._reply(400, {"message": "key_IDs must be a list of {key_ID: ...}"})
                return
            keys = self.state.dec_keys(peer, [e["key_ID"] for e in ids])
            if keys is None:
                self._reply(404, {"message": f"unknown peer {peer!r}"})
                return
            if not keys:
                self._reply(404, {"message": "unknown or already consumed key ID"})
                return
            self._reply(200, {"keys": keys})

    def log_message(self, fmt, *args):  # silence per-request stderr noise
        pass


def make_server(state: KmsState, port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def state_from_config(doc: dict) -> KmsState:
    """Build server state from a link-config document:

    {"node": "alice", "seed": 7,
     "links": [{"peer": "t01", "rate_keys_per_s": 10, "buffer_cap": 1000}]}
    """
    state = KmsState(doc["node"], seed=int(doc.get("seed", 0)))
    for entry in doc.get("links", []):
        state.add_peer(
            entry["peer"],
            rate_keys_per_s=float(entry.get("rate_keys_per_s", 10.0)),
            buffer_cap=int(entry.get("buffer_cap", 1000)),
        )
    return state


def serve(config: dict, port: int) -> None:
    server = make_server(state_from_config(config), port)
    host, bound_port = server.server_address
    print(f"kms-serve: listening on {host}:{bound_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
