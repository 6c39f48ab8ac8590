import base64
import json
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import pytest

from qkdsim.kms_http import KmsState, make_server, state_from_config


@pytest.fixture()
def server():
    state = KmsState("alice", seed=3)
    state.add_peer("t01", rate_keys_per_s=1000.0, buffer_cap=500)
    srv = make_server(state, port=0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv, state
    srv.shutdown()


def url(srv, path):
    host, port = srv.server_address
    return f"http://{host}:{port}{path}"


def get(srv, path):
    with urllib.request.urlopen(url(srv, path)) as resp:
        return resp.status, json.loads(resp.read())


def post(srv, path, body):
    req = urllib.request.Request(
        url(srv, path), data=json.dumps(body).encode(), headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req) as resp:
        return resp.status, json.loads(resp.read())


def test_status_shape(server):
    srv, _ = server
    code, doc = get(srv, "/api/v1/keys/t01/status")
    assert code == 200
    assert doc["key_size"] == 256
    assert doc["stored_key_count"] >= 0


def test_enc_then_dec_round_trip(server):
    srv, _ = server
    _, enc = post(srv, "/api/v1/keys/t01/enc_keys", {"number": 1})
    key = enc["keys"][0]
    assert len(base64.b64decode(key["key"])) == 32
    _, dec = post(srv, "/api/v1/keys/t01/dec_keys", {"key_IDs": [{"key_ID": key["key_ID"]}]})
    assert dec["keys"][0]["key"] == key["key"]


def test_double_redemption_rejected(server):
    srv, _ = server
    _, enc = post(srv, "/api/v1/keys/t01/enc_keys", {})
    kid = enc["keys"][0]["key_ID"]
    post(srv, "/api/v1/keys/t01/dec_keys", {"key_IDs": [{"key_ID": kid}]})
    with pytest.raises(urllib.error.HTTPError) as err:
        post(srv, "/api/v1/keys/t01/dec_keys", {"key_IDs": [{"key_ID": kid}]})
    assert err.value.code == 404


def test_unknown_peer_404(server):
    srv, _ = server
    with pytest.raises(urllib.error.HTTPError) as err:
        get(srv, "/api/v1/keys/mallory/status")
    assert err.value.code == 404


def test_malformed_body_400(server):
    srv, _ = server
    req = urllib.request.Request(
        url(srv, "/api/v1/keys/t01/enc_keys"), data=b"{broken", headers={"Content-Type": "application/json"}
    )
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(req)
    assert err.value.code == 400


def test_concurrent_enc_keys_never_reuse_ids(server):
    srv, _ = server

    def fetch(_):
        try:
            _, doc = post(srv, "/api/v1/keys/t01/enc_keys", {"number": 1})
            return doc["keys"][0]["key_ID"]
        except urllib.error.HTTPError:
            return None

    with ThreadPoolExecutor(max_workers=16) as pool:
        ids = [kid for kid in pool.map(fetch, range(200)) if kid is not None]
    assert len(ids) == len(set(ids)), "a key ID was issued twice"
    assert len(ids) >= 100


def test_state_from_config():
    state = state_from_config(
        {"node": "alice", "seed": 7, "links": [{"peer": "t01", "rate_keys_per_s": 5, "buffer_cap": 10}]}
    )
    assert "t01" in state.links
    assert state.links["t01"].buffer_cap == 10
