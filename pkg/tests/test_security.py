import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closure_oracle import (
    oracle_data_compromised,
    oracle_hop_readable,
    oracle_pqc_key_compromised,
)
from qkdsim.network import link_id
from qkdsim.security import (
    AdversaryCapabilities,
    SecurityTopology,
    UnknownHop,
    UnknownPath,
    data_compromised,
    enumerate_matrix,
    hop_readable,
    pqc_key_compromised,
)

CHAIN = SecurityTopology.build(
    {"alice": "end", "bob": "end", "t1": "trusted", "t2": "trusted"},
    [("alice", "t1"), ("t1", "t2"), ("t2", "bob")],
    {"main": ["alice", "t1", "t2", "bob"]},
)

DUAL = SecurityTopology.build(
    {"alice": "end", "bob": "end", "a1": "trusted", "b1": "trusted"},
    [("alice", "a1"), ("a1", "bob"), ("alice", "b1"), ("b1", "bob")],
    {"pa": ["alice", "a1", "bob"], "pb": ["alice", "b1", "bob"]},
)

HOP = link_id("alice", "t1")


def caps(c=False, p=False, q=False, nodes=()):
    return AdversaryCapabilities(c, p, q, frozenset(nodes))


class TestHopReadable:
    def test_classical_and_pqc_break_without_key_plane_is_safe(self):
        assert hop_readable(CHAIN, HOP, caps(c=True, p=True)) is False

    def test_compromised_endpoint_exposes_hop(self):
        assert hop_readable(CHAIN, link_id("t1", "t2"), caps(nodes={"t1"})) is True

    def test_no_capabilities_safe(self):
        assert hop_readable(CHAIN, HOP, caps()) is False

    def test_classical_plus_key_plane_break_reads_hop(self):
        assert hop_readable(CHAIN, HOP, caps(c=True, q=True)) is True

    def test_unknown_hop(self):
        with pytest.raises(UnknownHop):
            hop_readable(CHAIN, "x~y", caps())

    def test_compromised_end_node_rejected(self):
        with pytest.raises(ValueError):
            hop_readable(CHAIN, HOP, caps(nodes={"alice"}))


class TestPqcKeyCompromised:
    def test_relay_compromise_without_kem_break_is_safe(self):
        assert pqc_key_compromised(CHAIN, "main", caps(nodes={"t1"})) is False

    def test_relay_compromise_with_kem_break_falls(self):
        assert pqc_key_compromised(CHAIN, "main", caps(p=True, nodes={"t1"})) is True

    def test_kem_break_alone_no_transcript_safe(self):
        assert pqc_key_compromised(CHAIN, "main", caps(p=True)) is False

    def test_unknown_path(self):
        with pytest.raises(UnknownPath):
            pqc_key_compromised(CHAIN, "nope", caps())


class TestDataCompromised:
    def test_full_conjunction_breaches(self):
        verdict = data_compromised(CHAIN, ["main"], caps(c=True, p=True, nodes={"t1"}))
        assert verdict.data_compromised is True
        assert any("combined PSK recovered" in w for w in verdict.witness)

    def test_without_classical_break_safe(self):
        verdict = data_compromised(CHAIN, ["main"], caps(p=True, nodes={"t1", "t2"}))
        assert verdict.data_compromised is False

    def test_dual_path_single_chain_compromise_safe(self):
        verdict = data_compromised(DUAL, ["pa", "pb"], caps(c=True, p=True, nodes={"a1"}))
        assert verdict.data_compromised is False
        assert verdict.pqc_key_compromised == {"pa": True, "pb": False}

    def test_dual_path_both_chains_compromise_breaches(self):
        verdict = data_compromised(DUAL, ["pa", "pb"], caps(c=True, p=True, nodes={"a1", "b1"}))
        assert verdict.data_compromised is True


class TestPublishedAdversaryModels:
    """The three documented adversary classes all stay safe; only the full
    conjunction breaches."""

    def test_passive_quantum_capable_eavesdropper(self):
        # breaks classical and KEM asymmetric crypto, no node access
        assert data_compromised(CHAIN, ["main"], caps(c=True, p=True)).data_compromised is False

    def test_node_compromise_without_kem_break(self):
        assert data_compromised(CHAIN, ["main"], caps(c=True, nodes={"t1"})).data_compromised is False

    def test_node_compromise_with_kem_break_without_classical(self):
        assert data_compromised(CHAIN, ["main"], caps(p=True, nodes={"t1"})).data_compromised is False

    def test_full_conjunction(self):
        assert data_compromised(CHAIN, ["main"], caps(c=True, p=True, nodes={"t1"})).data_compromised is True


class TestMatrix:
    def test_zero_capability_row_safe(self):
        rows = enumerate_matrix(CHAIN, ["main"], [frozenset()])
        base = [r for r in rows if not any((r["breaks_classical"], r["breaks_pqc"], r["breaks_qkd"]))]
        assert all(not r["data_compromised"] for r in base)

    def test_top_row_with_all_relays_compromised(self):
        rows = enumerate_matrix(CHAIN, ["main"], [frozenset({"t1", "t2"})])
        top = [r for r in rows if r["breaks_classical"] and r["breaks_pqc"] and r["breaks_qkd"]]
        assert all(r["data_compromised"] for r in top)

    def test_monotone_in_capabilities(self):
        rows = enumerate_matrix(CHAIN, ["main"], [frozenset(), frozenset({"t1"}), frozenset({"t1", "t2"})])
        by_key = {
            (r["breaks_classical"], r["breaks_pqc"], r["breaks_qkd"], tuple(r["compromised_nodes"])): r[
                "data_compromised"
            ]
            for r in rows
        }
        for (c, p, q, nodes), breached in by_key.items():
            for c2, p2, q2 in [(True, p, q), (c, True, q), (c, p, True)]:
                if breached:
                    assert by_key[(c2, p2, q2, nodes)]


def random_topology(rng):
    n_relays = rng.randint(1, 4)
    relays = [f"t{i}" for i in range(1, n_relays + 1)]
    nodes = {"alice": "end", "bob": "end", **{t: "trusted" for t in relays}}
    # random connected-ish graph: a backbone chain plus extra edges
    chain = ["alice"] + rng.sample(relays, len(relays)) + ["bob"]
    edges = {(chain[i], chain[i + 1]) for i in range(len(chain) - 1)}
    all_nodes = list(nodes)
    for _ in range(rng.randint(0, 4)):
        a, b = rng.sample(all_nodes, 2)
        if a != b and {a, b} != {"alice", "bob"}:
            edges.add((a, b))
    # one or two paths along existing edges
    paths = {"p0": chain}
    if rng.random() < 0.5 and len(relays) >= 2:
        alt = ["alice"] + rng.sample(relays, rng.randint(1, len(relays))) + ["bob"]
        for i in range(len(alt) - 1):
            edges.add((alt[i], alt[i + 1]))
        paths["p1"] = alt
    topo = SecurityTopology.build(nodes, sorted(edges), paths)
    return topo, relays, list(paths)


def test_checker_matches_closure_oracle_on_random_topologies():
    rng = random.Random(20240)
    checked = 0
    for _ in range(120):
        topo, relays, path_ids = random_topology(rng)
        for _ in range(8):
            cap = caps(
                c=rng.random() < 0.5,
                p=rng.random() < 0.5,
                q=rng.random() < 0.3,
                nodes={t for t in relays if rng.random() < 0.35},
            )
            got = data_compromised(topo, path_ids, cap).data_compromised
            want = oracle_data_compromised(topo, path_ids, cap)
            assert got == want, (topo.paths, cap)
            for hop in topo.hops:
                assert hop_readable(topo, hop, cap) == oracle_hop_readable(topo, hop, cap)
            for p in path_ids:
                assert pqc_key_compromised(topo, p, cap) == oracle_pqc_key_compromised(
                    topo, path_ids, p, cap
                )
            checked += 1
    assert checked >= 100


@settings(max_examples=150, deadline=None)
@given(
    c1=st.booleans(), p1=st.booleans(), q1=st.booleans(),
    extra=st.sampled_from(["c", "p", "q", "t1", "t2"]),
    base_nodes=st.sets(st.sampled_from(["t1", "t2"])),
)
def test_monotonicity_property(c1, p1, q1, extra, base_nodes):
    small = caps(c1, p1, q1, base_nodes)
    big = caps(
        c1 or extra == "c",
        p1 or extra == "p",
        q1 or extra == "q",
        base_nodes | ({extra} if extra in ("t1", "t2") else set()),
    )
    v_small = data_compromised(CHAIN, ["main"], small)
    v_big = data_compromised(CHAIN, ["main"], big)
    if v_small.data_compromised:
        assert v_big.data_compromised
    for hop, readable in v_small.hop_readable.items():
        if readable:
            assert v_big.hop_readable[hop]
    for p, broken in v_small.pqc_key_compromised.items():
        if broken:
            assert v_big.pqc_key_compromised[p]
