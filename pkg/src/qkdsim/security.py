"""Symbolic breach checker for the layered architecture.

Evaluates, for a concrete topology and adversary capability assignment, which
hop tunnels are readable, which per-path end-to-end keys fall, and whether the
data tunnel's confidentiality breaks. The checker is a boolean composition
argument over the layering, not a computational proof: reading the data tunnel
requires breaking its own classical key exchange AND recovering the combined
PSK, which in turn requires every constituent path's end-to-end key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .network import link_id


class UnknownHop(Exception):
    pass


class UnknownPath(Exception):
    pass


@dataclass(frozen=True)
class AdversaryCapabilities:
    breaks_classical: bool = False
    breaks_pqc: bool = False
    breaks_qkd: bool = False
    compromised_nodes: frozenset = frozenset()

    def with_nodes(self, nodes: Iterable[str]) -> "AdversaryCapabilities":
        return AdversaryCapabilities(
            self.breaks_classical, self.breaks_pqc, self.breaks_qkd, frozenset(nodes)
        )

    def flags(self) -> tuple[bool, bool, bool]:
        return (self.breaks_classical, self.breaks_pqc, self.breaks_qkd)


@dataclass
class ConfidentialityVerdict:
    hop_readable: dict
    pqc_key_compromised: dict
    data_compromised: bool
    witness: list = field(default_factory=list)


@dataclass
class SecurityTopology:
    """Nodes, hop links and the candidate end-to-end paths under analysis."""

    end_nodes: frozenset
    trusted_nodes: frozenset
    hops: frozenset  # of link ids
    paths: dict  # path id -> tuple of node ids

    @classmethod
    def build(cls, nodes: dict, hop_pairs: Iterable[tuple[str, str]], paths: dict) -> "SecurityTopology":
        ends = frozenset(n for n, kind in nodes.items() if kind == "end")
        trusted = frozenset(n for n, kind in nodes.items() if kind == "trusted")
        hops = frozenset(link_id(a, b) for a, b in hop_pairs)
        return cls(ends, trusted, hops, {p: tuple(chain) for p, chain in paths.items()})

    def hop_endpoints(self, hop: str) -> tuple[str, str]:
        a, b = hop.split("~")
        return a, b

    def path_hops(self, path_id: str) -> list[str]:
        chain = self.paths[path_id]
        return [link_id(chain[i], chain[i + 1]) for i in range(len(chain) - 1)]

    def path_intermediates(self, path_id: str) -> list[str]:
        return list(self.paths[path_id][1:-1])


def _check_caps(topo: SecurityTopology, caps: AdversaryCapabilities) -> None:
    bad = caps.compromised_nodes & topo.end_nodes
    if bad:
        raise ValueError(f"end nodes cannot be compromised: {sorted(bad)}")


def hop_readable(topo: SecurityTopology, hop: str, caps: AdversaryCapabilities) -> bool:
    """A hop's traffic is exposed when its tunnel's own exchange and its PSK
    source both fall, or when either endpoint is a compromised node (which
    holds the hop's keys outright)."""
    _check_caps(topo, caps)
    if hop not in topo.hops:
        raise UnknownHop(hop)
    a, b = topo.hop_endpoints(hop)
    if a in caps.compromised_nodes or b in caps.compromised_nodes:
        return True
    return caps.breaks_classical and caps.breaks_qkd


def pqc_key_compromised(topo: SecurityTopology, path_id: str, caps: AdversaryCapabilities) -> bool:
    """The per-path end-to-end key falls only if the KEM breaks AND the
    adversary can read its handshake transcript somewhere along the path."""
    _check_caps(topo, caps)
    if path_id not in topo.paths:
        raise UnknownPath(path_id)
    if not caps.breaks_pqc:
        return False
    transcript_visible = any(hop_readable(topo, h, caps) for h in topo.path_hops(path_id)) or any(
        n in caps.compromised_nodes for n in topo.path_intermediates(path_id)
    )
    return transcript_visible


def data_compromised(
    topo: SecurityTopology, path_ids: list[str], caps: AdversaryCapabilities
) -> ConfidentialityVerdict:
    """Verdict for a session whose data PSK combines the keys of `path_ids`."""
    _check_caps(topo, caps)
    if not path_ids:
        raise UnknownPath("session has no paths")
    hops = {}
    for p in path_ids:
        for h in topo.path_hops(p):
            hops[h] = hop_readable(topo, h, caps)
    per_path = {p: pqc_key_compromised(topo, p, caps) for p in path_ids}
    breached = caps.breaks_classical and all(per_path.values())

    witness = []
    for h, r in sorted(hops.items()):
        if r:
            witness.append(f"hop {h} readable")
    for p, c in sorted(per_path.items()):
        witness.append(f"path {p} end-to-end key {'compromised' if c else 'safe'}")
    if breached:
        witness.append("data tunnel: classical exchange broken and combined PSK recovered")
    else:
        if not caps.breaks_classical:
            witness.append("data tunnel safe: classical exchange holds")
        else:
            safe_paths = sorted(p for p, c in per_path.items() if not c)
            witness.append(f"data tunnel safe: PSK constituents intact on {safe_paths}")

    return ConfidentialityVerdict(
        hop_readable=hops,
        pqc_key_compromised=per_path,
        data_compromised=breached,
        witness=witness,
    )


def enumerate_matrix(
    topo: SecurityTopology,
    path_ids: list[str],
    node_sets: Optional[list[Iterable[str]]] = None,
) -> list[dict]:
    """Verdicts for all 8 capability-flag combinations crossed with the chosen
    compromised-node sets. The verdict is monotone: granting a capability never
    flips a breached item back to safe."""
    if node_sets is None:
        node_sets = [frozenset()]
    rows = []
    for nodes in node_sets:
        for c in (False, True):
            for p in (False, True):
                for q in (False, True):
                    caps = AdversaryCapabilities(c, p, q, frozenset(nodes))
                    verdict = data_compromised(topo, path_ids, caps)
                    rows.append(
                        {
                            "breaks_classical": c,
                            "breaks_pqc": p,
                            "breaks_qkd": q,
                            "compromised_nodes": sorted(nodes),
                            "data_compromised": verdict.data_compromised,
                            "paths_compromised": verdict.pqc_key_compromised,
                        }
                    )
    return rows
