import pytest

from qkdsim.engine import Simulator
from qkdsim.network import LinkSpec, Network, link_id
from qkdsim.tunnel import DOWN, ESTABLISHED, BadKeyLength, Tunnel, TunnelDown

K1 = bytes(range(32))
K2 = bytes(32)


def make_tunnel(loss=0.0, latency=0, phase_offset=0, seed=1):
    sim = Simulator(seed=seed)
    net = Network(sim, ["a", "b"], [LinkSpec("a", "b", latency_ms=latency, loss_prob=loss)])
    tun = Tunnel(
        sim,
        net,
        "hop:a~b",
        "a",
        "b",
        path_provider=lambda: ["a", "b"],
        layer_tag="wg_handshake",
        phase_offset_ms=phase_offset,
    )
    return sim, net, tun


class TestPsk:
    def test_set_psk_validates_length(self):
        _, _, tun = make_tunnel()
        with pytest.raises(BadKeyLength):
            tun.set_psk("a", b"short")

    def test_set_same_psk_twice_no_epoch_change(self):
        sim, _, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(10)
        epoch = tun.session_epoch
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        assert tun.session_epoch == epoch

    def test_unknown_side_rejected(self):
        _, _, tun = make_tunnel()
        with pytest.raises(ValueError):
            tun.set_psk("mallory", K1)


class TestHandshake:
    def test_matched_psks_establish_and_account_bytes(self):
        sim, net, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(10)
        assert tun.phase == ESTABLISHED
        assert tun.session_epoch == 1
        assert net.counters.get(link_id("a", "b"), "wg_handshake") == (3, 398)

    def test_mismatched_psks_keep_old_session_until_grace(self):
        sim, net, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(10)
        tun.set_psk("a", K2)  # one side rotated to an unrelated key
        sim.run_until(120_000)
        assert tun.phase == ESTABLISHED  # failed rekey, old session persists
        assert any(r["kind"] == "rekey_fail" for r in sim.trace)

    def test_total_loss_means_failure(self):
        sim, _, tun = make_tunnel(loss=1.0)
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(10_000)
        assert tun.phase == DOWN
        assert tun.session_epoch == 0

    def test_epoch_strictly_increases(self):
        sim, _, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(500_000)
        # establishment plus rekeys at 120k, 240k, 360k, 480k
        assert tun.session_epoch == 5


class TestGrace:
    def test_down_at_exactly_last_success_plus_180s(self):
        sim, _, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(120_000)  # rekey succeeds at 120 s
        assert tun.last_session_at == 120_000
        tun.set_psk("a", K2)  # every later handshake fails
        sim.run_until(299_999)
        assert tun.phase == ESTABLISHED
        sim.run_until(300_000)
        assert tun.phase == DOWN
        down = [r for r in sim.trace if r["kind"] == "tunnel_down"]
        assert down[0]["t_ms"] == 300_000

    def test_data_tunnel_timeline_success_360_fail_480_down_540(self):
        sim, _, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(360_000)
        assert tun.last_session_at == 360_000
        tun.set_psk("b", K2)
        sim.run_until(539_999)
        assert tun.phase == ESTABLISHED
        sim.run_until(540_000)
        assert tun.phase == DOWN

    def test_continuous_success_never_down(self):
        sim, _, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(1_000_000)
        assert tun.phase == ESTABLISHED
        assert not any(r["kind"] == "tunnel_down" for r in sim.trace)

    def test_never_established_without_recent_success(self):
        # no successful handshake in (t-180s, t] implies not established at t
        sim, _, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(10)
        tun.set_psk("b", K2)
        sim.run_until(1_000_000)
        for rec in sim.trace:
            if rec["kind"] == "tunnel_down":
                assert rec["t_ms"] - tun.last_session_at == 180_000


class TestTransmit:
    def test_established_delivers_after_path_delay(self):
        sim, _, tun = make_tunnel(latency=25)
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(10_000)
        out = tun.transmit(64)
        assert out.delivered and out.elapsed_ms == 25

    def test_down_raises(self):
        _, _, tun = make_tunnel()
        with pytest.raises(TunnelDown):
            tun.transmit(64)

    def test_recovers_after_down_when_keys_match_again(self):
        sim, _, tun = make_tunnel()
        tun.set_psk("a", K1)
        tun.set_psk("b", K1)
        tun.start()
        sim.run_until(10)
        tun.set_psk("a", K2)
        sim.run_until(200_000)
        assert tun.phase == DOWN
        tun.set_psk("b", K2)  # keys agree again
        sim.run_until(205_000)
        assert tun.phase == ESTABLISHED
