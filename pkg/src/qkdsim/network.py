"""Classical link model: latency/jitter/loss, TTL-limited forwarding, routing, traffic counters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .engine import RngStream, Simulator

LayerTag = str  # one of: wg_handshake, arnika_nego, pqc_handshake, data, wg_data_handshake

LAYER_TAGS = ("wg_handshake", "arnika_nego", "pqc_handshake", "data", "wg_data_handshake")


def link_id(a: str, b: str) -> str:
    return "~".join(sorted((a, b)))


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    latency_ms: int = 0
    jitter_ms: int = 0
    loss_prob: float = 0.0

    @property
    def id(self) -> str:
        return link_id(self.a, self.b)

    def endpoints(self) -> frozenset:
        return frozenset((self.a, self.b))


@dataclass
class Packet:
    src: str
    dst: str
    ttl: int
    size_bytes: int
    layer_tag: LayerTag
    payload: object = None


class TrafficCounters:
    """Per (link, layer_tag) packet and byte totals. Monotonically non-decreasing."""

    def __init__(self):
        self._counts: dict[tuple[str, str], list[int]] = {}

    def add(self, lid: str, tag: LayerTag, packets: int, nbytes: int) -> None:
        cell = self._counts.setdefault((lid, tag), [0, 0])
        cell[0] += packets
        cell[1] += nbytes

    def get(self, lid: str, tag: LayerTag) -> tuple[int, int]:
        cell = self._counts.get((lid, tag), [0, 0])
        return cell[0], cell[1]

    def snapshot(self) -> dict:
        out: dict[str, dict[str, dict[str, int]]] = {}
        for (lid, tag), (pkts, nbytes) in sorted(self._counts.items()):
            out.setdefault(lid, {})[tag] = {"packets": pkts, "bytes": nbytes}
        return out


@dataclass
class Delivery:
    """Outcome of pushing one packet across one link or one multi-hop path."""

    delivered: bool
    elapsed_ms: int
    reason: str = "ok"  # ok | loss | ttl | node_down | no_link | tunnel_down
    dropped_at: Optional[str] = None


@dataclass
class RouteTable:
    """Shortest-hop routes; ties broken by lowest lexicographic node sequence."""

    paths: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)

    def next_hop(self, at: str, dst: str) -> Optional[str]:
        p = self.paths.get((at, dst))
        return p[1] if p and len(p) > 1 else None

    def route(self, src: str, dst: str) -> Optional[list[str]]:
        p = self.paths.get((src, dst))
        return list(p) if p else None


def _adjacency(nodes: Iterable[str], links: Iterable[tuple[str, str]]) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in links:
        adj[a].append(b)
        adj[b].append(a)
    for n in adj:
        adj[n].sort()
    return adj


def _bfs_paths(adj: dict[str, list[str]], src: str, stop_at: Optional[str] = None) -> dict[str, tuple[str, ...]]:
    # Lexicographically smallest shortest path per destination. Because all
    # candidate predecessors of a node sit at the same BFS depth, comparing
    # predecessor paths first yields the lexicographic minimum overall.
    best: dict[str, tuple[str, ...]] = {src: (src,)}
    frontier = [src]
    while frontier:
        nxt: dict[str, tuple[str, ...]] = {}
        for u in frontier:
            for v in adj[u]:
                if v in best:
                    continue
                cand = best[u] + (v,)
                if v not in nxt or cand < nxt[v]:
                    nxt[v] = cand
        best.update(nxt)
        if stop_at is not None and stop_at in best:
            break
        frontier = list(nxt)
    return best


def compute_routes(nodes: Iterable[str], links: Iterable[tuple[str, str]]) -> RouteTable:
    """BFS per source over the given adjacency. Unreachable destinations are absent."""
    adj = _adjacency(nodes, links)
    table = RouteTable()
    for src in sorted(adj):
        for dst, path in _bfs_paths(adj, src).items():
            if dst != src:
                table.paths[(src, dst)] = path
    return table


def shortest_route(
    nodes: Iterable[str], links: Iterable[tuple[str, str]], src: str, dst: str
) -> Optional[list[str]]:
    """Single-pair variant of compute_routes with early exit."""
    adj = _adjacency(nodes, links)
    if src not in adj or dst not in adj:
        return None
    path = _bfs_paths(adj, src, stop_at=dst).get(dst)
    return list(path) if path else None


class Network:
    """Holds links, node liveness, and the shared traffic counters for one run."""

    def __init__(self, sim: Simulator, nodes: Iterable[str], links: Iterable[LinkSpec], ttl_default: int = 64):
        self.sim = sim
        self.nodes = set(nodes)
        self.links: dict[str, LinkSpec] = {l.id: l for l in links}
        self.node_up: dict[str, bool] = {n: True for n in self.nodes}
        self.ttl_default = ttl_default
        self.counters = TrafficCounters()

    def link(self, a: str, b: str) -> Optional[LinkSpec]:
        return self.links.get(link_id(a, b))

    def set_node_up(self, node: str, up: bool) -> None:
        self.node_up[node] = up

    def _stream(self, lid: str) -> RngStream:
        return self.sim.stream(f"link:{lid}")

    def sample_delay(self, link: LinkSpec) -> int:
        if link.jitter_ms == 0:
            return link.latency_ms
        d = self._stream(link.id).uniform_int(
            link.latency_ms - link.jitter_ms, link.latency_ms + link.jitter_ms
        )
        return max(0, d)

    def _loss_draw(self, link: LinkSpec) -> bool:
        if link.loss_prob <= 0.0:
            return False
        return self._stream(link.id).random() < link.loss_prob

    def send(self, packet: Packet, link: LinkSpec, on_delivered: Optional[Callable[[], None]] = None) -> Delivery:
        """Push one packet onto one link; counters update on send, loss is an outcome."""
        self.counters.add(link.id, packet.layer_tag, 1, packet.size_bytes)
        delay = self.sample_delay(link)
        if self._loss_draw(link):
            return Delivery(delivered=False, elapsed_ms=delay, reason="loss", dropped_at=link.id)
        if on_delivered is not None:
            self.sim.schedule_in(delay, f"link:{link.id}", "delivered", on_delivered)
        return Delivery(delivered=True, elapsed_ms=delay)

    def traverse(
        self,
        path: list[str],
        size_bytes: int,
        tag: LayerTag,
        ttl: Optional[int] = None,
        link_ok: Optional[Callable[[str], bool]] = None,
    ) -> Delivery:
        """Forward one packet along a node chain, decrementing TTL at each forwarder.

        A forwarder that receives the packet with ttl 0 drops it before
        forwarding. `link_ok` can veto individual links (e.g. a carrying
        tunnel that is down); vetoed links transmit nothing.
        """
        ttl = self.ttl_default if ttl is None else ttl
        elapsed = 0
        for i in range(len(path) - 1):
            u, v = path[i], path[i + 1]
            if not (self.node_up.get(u) and self.node_up.get(v)):
                return Delivery(False, elapsed, "node_down", dropped_at=u if not self.node_up.get(u) else v)
            if i > 0:
                # u is a forwarding node: drop on arrival with ttl 0, else decrement.
                if ttl == 0:
                    return Delivery(False, elapsed, "ttl", dropped_at=u)
                ttl -= 1
            link = self.link(u, v)
            if link is None:
                return Delivery(False, elapsed, "no_link", dropped_at=u)
            if link_ok is not None and not link_ok(link.id):
                return Delivery(False, elapsed, "tunnel_down", dropped_at=link.id)
            out = self.send(Packet(path[0], path[-1], ttl, size_bytes, tag), link)
            elapsed += out.elapsed_ms
            if not out.delivered:
                return Delivery(False, elapsed, out.reason, dropped_at=out.dropped_at)
        return Delivery(True, elapsed)

    def up_classical_links(self) -> list[tuple[str, str]]:
        return [
            (l.a, l.b)
            for l in self.links.values()
            if self.node_up.get(l.a) and self.node_up.get(l.b)
        ]

    def route(self, src: str, dst: str) -> Optional[list[str]]:
        """Current shortest underlay route over live classical links."""
        live_nodes = [n for n in self.nodes if self.node_up.get(n)]
        return shortest_route(live_nodes, self.up_classical_links(), src, dst)
