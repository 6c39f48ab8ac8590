"""Scenario schema, validation, and the wiring that turns a topology file into
a runnable simulation.

Scenario files are JSON with a versioned ``schema_version`` field; see the
README for the full field reference. A run builds one simulator instance, one
key-manager pair per QKD link, one rotation agent pair and hop tunnel per
link, and per session the end-to-end exchanges plus the data tunnel. Faults
are armed one millisecond early so that a fault landing exactly on a rekey
boundary dispatches after that instant's refreshes, matching the convention
that a component observed failing "at" its refresh time had just refreshed.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from .engine import Simulator
from .kms import QkdLink
from .network import LinkSpec, Network, link_id, shortest_route
from .pqc import E2eExchange, MissingKey, combine_paths, get_suite
from .rotation import RotationAgentPair
from .tunnel import ESTABLISHED, Tunnel, TunnelDown

SCHEMA_VERSION = 1
PROBE_BYTES = 64

RANDOMIZED = "randomized"
ALIGNED = "aligned"


class ParseError(Exception):
    pass


class ValidationError(Exception):
    pass


class UnknownTarget(Exception):
    pass


@dataclass(frozen=True)
class TimerConfig:
    rekey_period_s: float = 120.0
    grace_s: float = 60.0
    startup_poll_s: float = 1.0
    nego_timeout_s: float = 10.0

    @property
    def period_ms(self) -> int:
        return int(round(self.rekey_period_s * 1000))

    @property
    def grace_ms(self) -> int:
        return int(round(self.grace_s * 1000))

    @property
    def failsafe_ms(self) -> int:
        return self.period_ms + self.grace_ms

    @property
    def poll_ms(self) -> int:
        return int(round(self.startup_poll_s * 1000))

    @property
    def nego_timeout_ms(self) -> int:
        return int(round(self.nego_timeout_s * 1000))


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str  # end | trusted


@dataclass(frozen=True)
class QkdLinkSpec:
    a: str
    b: str
    rate_keys_per_s: float = 10.0
    buffer_cap: int = 1000

    @property
    def id(self) -> str:
        return link_id(self.a, self.b)


@dataclass(frozen=True)
class ExchangeSpec:
    path: str  # path name, or "auto" for dynamic routing over live hops
    suite: str = "stub-v1"


@dataclass(frozen=True)
class SessionSpec:
    id: str
    endpoints: tuple
    exchanges: tuple


@dataclass(frozen=True)
class FaultSpec:
    at_s: float
    action: str  # kill_qkd | revive_qkd | kill_node | revive_node
    link: Optional[tuple] = None
    node: Optional[str] = None


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    seed: int = 1
    ttl_default: int = 64
    phases: str = RANDOMIZED
    timers: TimerConfig = TimerConfig()
    nodes: tuple = ()
    qkd_links: tuple = ()
    classical_links: tuple = ()
    paths: dict = field(default_factory=dict)
    sessions: tuple = ()
    faults: tuple = ()
    until_s: float = 60.0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "seed": self.seed,
            "ttl_default": self.ttl_default,
            "phases": self.phases,
            "timers": {
                "rekey_period_s": self.timers.rekey_period_s,
                "grace_s": self.timers.grace_s,
                "startup_poll_s": self.timers.startup_poll_s,
                "nego_timeout_s": self.timers.nego_timeout_s,
            },
            "nodes": [{"id": n.id, "kind": n.kind} for n in self.nodes],
            "qkd_links": [
                {"a": l.a, "b": l.b, "rate_keys_per_s": l.rate_keys_per_s, "buffer_cap": l.buffer_cap}
                for l in self.qkd_links
            ],
            "classical_links": [
                {
                    "a": l.a,
                    "b": l.b,
                    "latency_ms": l.latency_ms,
                    "jitter_ms": l.jitter_ms,
                    "loss_prob": l.loss_prob,
                }
                for l in self.classical_links
            ],
            "paths": {name: list(chain) for name, chain in self.paths.items()},
            "sessions": [
                {
                    "id": s.id,
                    "endpoints": list(s.endpoints),
                    "exchanges": [{"path": x.path, "suite": x.suite} for x in s.exchanges],
                }
                for s in self.sessions
            ],
            "faults": [
                {
                    "at_s": f.at_s,
                    "action": f.action,
                    **({"link": list(f.link)} if f.link else {}),
                    **({"node": f.node} if f.node else {}),
                }
                for f in self.faults
            ],
            "until_s": self.until_s,
        }


def serialize(spec: ScenarioSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _build_spec(doc: dict) -> ScenarioSpec:
    if not isinstance(doc, dict):
        raise ValidationError("top level must be an object")
    version = doc.get("schema_version")
    _require(version == SCHEMA_VERSION, f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    _require(isinstance(doc.get("name"), str) and doc["name"], "name: required non-empty string")

    timers_doc = doc.get("timers", {})
    timers = TimerConfig(
        rekey_period_s=float(timers_doc.get("rekey_period_s", 120.0)),
        grace_s=float(timers_doc.get("grace_s", 60.0)),
        startup_poll_s=float(timers_doc.get("startup_poll_s", 1.0)),
        nego_timeout_s=float(timers_doc.get("nego_timeout_s", 10.0)),
    )
    _require(timers.rekey_period_s > 0, "timers.rekey_period_s: must be > 0")
    _require(timers.grace_s >= 0, "timers.grace_s: must be >= 0")

    nodes = []
    seen = set()
    for i, nd in enumerate(doc.get("nodes", [])):
        nid, kind = nd.get("id"), nd.get("kind")
        _require(isinstance(nid, str) and nid, f"nodes[{i}].id: required non-empty string")
        _require(kind in ("end", "trusted"), f"nodes[{i}].kind: must be 'end' or 'trusted'")
        _require(nid not in seen, f"nodes[{i}].id: duplicate node id {nid!r}")
        _require("~" not in nid, f"nodes[{i}].id: '~' is reserved")
        seen.add(nid)
        nodes.append(NodeSpec(nid, kind))
    _require(len(nodes) >= 2, "nodes: need at least two nodes")
    node_ids = {n.id for n in nodes}

    qkd_links = []
    qkd_pairs = set()
    for i, ld in enumerate(doc.get("qkd_links", [])):
        a, b = ld.get("a"), ld.get("b")
        _require(a in node_ids and b in node_ids, f"qkd_links[{i}]: unknown endpoint {a!r}/{b!r}")
        _require(a != b, f"qkd_links[{i}]: endpoints must differ")
        lid = link_id(a, b)
        _require(lid not in qkd_pairs, f"qkd_links[{i}]: duplicate link {lid}")
        qkd_pairs.add(lid)
        rate = float(ld.get("rate_keys_per_s", 10.0))
        cap = int(ld.get("buffer_cap", 1000))
        _require(rate >= 0, f"qkd_links[{i}].rate_keys_per_s: must be >= 0")
        _require(cap >= 1, f"qkd_links[{i}].buffer_cap: must be >= 1")
        qkd_links.append(QkdLinkSpec(a, b, rate, cap))

    classical = []
    classical_pairs = set()
    for i, ld in enumerate(doc.get("classical_links", [])):
        a, b = ld.get("a"), ld.get("b")
        _require(a in node_ids and b in node_ids, f"classical_links[{i}]: unknown endpoint {a!r}/{b!r}")
        _require(a != b, f"classical_links[{i}]: endpoints must differ")
        lid = link_id(a, b)
        _require(lid not in classical_pairs, f"classical_links[{i}]: duplicate link {lid}")
        classical_pairs.add(lid)
        latency = int(ld.get("latency_ms", 0))
        jitter = int(ld.get("jitter_ms", 0))
        loss = float(ld.get("loss_prob", 0.0))
        _require(latency >= 0, f"classical_links[{i}].latency_ms: must be >= 0")
        _require(jitter >= 0, f"classical_links[{i}].jitter_ms: must be >= 0")
        _require(0.0 <= loss <= 1.0, f"classical_links[{i}].loss_prob: must be in [0, 1]")
        classical.append(LinkSpec(a, b, latency, jitter, loss))

    for lid in sorted(qkd_pairs):
        _require(lid in classical_pairs, f"qkd link {lid} has no classical link for its signaling")

    paths = {}
    for name, chain in doc.get("paths", {}).items():
        _require(isinstance(chain, list) and len(chain) >= 2, f"paths[{name}]: need >= 2 nodes")
        for n in chain:
            _require(n in node_ids, f"paths[{name}]: unknown node {n!r}")
        for i in range(len(chain) - 1):
            hop = link_id(chain[i], chain[i + 1])
            _require(hop in qkd_pairs, f"paths[{name}]: hop {hop} is not a declared qkd_link")
        paths[name] = tuple(chain)

    phases = doc.get("phases", RANDOMIZED)
    _require(phases in (RANDOMIZED, ALIGNED), "phases: must be 'randomized' or 'aligned'")

    ttl = int(doc.get("ttl_default", 64))
    _require(1 <= ttl <= 255, "ttl_default: must be in [1, 255]")

    sessions = []
    session_ids = set()
    for i, sd in enumerate(doc.get("sessions", [])):
        sid = sd.get("id")
        _require(isinstance(sid, str) and sid, f"sessions[{i}].id: required non-empty string")
        _require(sid not in session_ids, f"sessions[{i}].id: duplicate {sid!r}")
        session_ids.add(sid)
        eps = sd.get("endpoints", [])
        _require(len(eps) == 2 and eps[0] != eps[1], f"sessions[{i}].endpoints: need two distinct nodes")
        for e in eps:
            _require(e in node_ids, f"sessions[{i}].endpoints: unknown node {e!r}")
        exchanges = []
        xpaths = set()
        for j, xd in enumerate(sd.get("exchanges", [])):
            pname = xd.get("path")
            suite = xd.get("suite", "stub-v1")
            if pname != "auto":
                _require(pname in paths, f"sessions[{i}].exchanges[{j}].path: unknown path {pname!r}")
                chain = paths[pname]
                _require(
                    {chain[0], chain[-1]} == set(eps),
                    f"sessions[{i}].exchanges[{j}]: path {pname!r} does not join the session endpoints",
                )
            _require(pname not in xpaths, f"sessions[{i}].exchanges[{j}]: duplicate path {pname!r}")
            xpaths.add(pname)
            try:
                get_suite(suite)
            except KeyError:
                raise ValidationError(f"sessions[{i}].exchanges[{j}].suite: unknown suite {suite!r}")
            exchanges.append(ExchangeSpec(pname, suite))
        _require(len(exchanges) >= 1, f"sessions[{i}].exchanges: need at least one")
        sessions.append(SessionSpec(sid, tuple(eps), tuple(exchanges)))

    faults = []
    for i, fd in enumerate(doc.get("faults", [])):
        action = fd.get("action")
        _require(
            action in ("kill_qkd", "revive_qkd", "kill_node", "revive_node"),
            f"faults[{i}].action: unknown action {action!r}",
        )
        at_s = float(fd.get("at_s", 0))
        _require(at_s >= 0, f"faults[{i}].at_s: must be >= 0")
        flink = fnode = None
        if action.endswith("_qkd"):
            pair = fd.get("link")
            _require(isinstance(pair, list) and len(pair) == 2, f"faults[{i}].link: need [a, b]")
            _require(link_id(*pair) in qkd_pairs, f"faults[{i}].link: unknown qkd link {pair}")
            flink = tuple(pair)
        else:
            fnode = fd.get("node")
            _require(fnode in node_ids, f"faults[{i}].node: unknown node {fnode!r}")
        faults.append(FaultSpec(at_s, action, flink, fnode))

    until_s = float(doc.get("until_s", 60.0))
    _require(until_s > 0, "until_s: must be > 0")

    return ScenarioSpec(
        name=doc["name"],
        seed=int(doc.get("seed", 1)),
        ttl_default=ttl,
        phases=phases,
        timers=timers,
        nodes=tuple(nodes),
        qkd_links=tuple(qkd_links),
        classical_links=tuple(classical),
        paths=paths,
        sessions=tuple(sessions),
        faults=tuple(faults),
        until_s=until_s,
        schema_version=SCHEMA_VERSION,
    )


def load_scenario(text: str) -> ScenarioSpec:
    """Parse and validate scenario text; raises ParseError / ValidationError."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    return _build_spec(doc)


def load_scenario_file(path) -> ScenarioSpec:
    return load_scenario(Path(path).read_text())


def builtin_scenario_path(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.scn"


@dataclass
class RunSummary:
    name: str
    seed: int
    until_s: float
    setup_time_s: Optional[float]
    disruption_time_s: Optional[float]
    traffic: dict
    event_counts: dict

    def to_dict(self) -> dict:
        return asdict(self)


class _SessionRuntime:
    """One session: its end-to-end exchanges plus the data tunnel they key."""

    def __init__(self, run: "ScenarioRun", spec: SessionSpec):
        self.run = run
        self.spec = spec
        self.a, self.b = sorted(spec.endpoints)
        sim, net = run.sim, run.net
        timers = run.spec.timers

        self.data_tunnel = Tunnel(
            sim,
            net,
            f"data:{spec.id}",
            self.a,
            self.b,
            path_provider=lambda: net.route(self.a, self.b),
            layer_tag="wg_data_handshake",
            rekey_period_ms=timers.period_ms,
            grace_ms=timers.grace_ms,
            poll_ms=timers.poll_ms,
            phase_offset_ms=run.phase_offset(f"data:{spec.id}"),
            on_established=self._on_data_up,
        )

        self.exchanges: list[E2eExchange] = []
        for x in spec.exchanges:
            path_id = x.path
            provider = self._auto_provider() if x.path == "auto" else self._static_provider(run.spec.paths[x.path])
            self.exchanges.append(
                E2eExchange(
                    sim,
                    net,
                    f"pqc:{spec.id}:{path_id}",
                    (self.a, self.b),
                    path_id,
                    suite_initiator=x.suite,
                    suite_responder=x.suite,
                    path_provider=provider,
                    hop_tunnel_for_link=run.hop_tunnels.get,
                    on_osk=lambda _x: self.reinject(),
                    period_ms=timers.period_ms,
                    failsafe_ms=timers.failsafe_ms,
                    poll_ms=timers.poll_ms,
                    phase_offset_ms=run.phase_offset(f"pqc:{spec.id}:{path_id}"),
                )
            )
        self._probe_pending = False

    def _static_provider(self, chain: tuple) -> Callable[[], Optional[list[str]]]:
        return lambda: list(chain)

    def _auto_provider(self) -> Callable[[], Optional[list[str]]]:
        def provider():
            live = [
                (t.initiator, t.responder)
                for t in self.run.hop_tunnels.values()
                if t.phase == ESTABLISHED
                and self.run.net.node_up.get(t.initiator)
                and self.run.net.node_up.get(t.responder)
            ]
            nodes = [n for n in self.run.net.nodes if self.run.net.node_up.get(n)]
            return shortest_route(nodes, live, self.a, self.b)

        return provider

    def combined_psk(self, end: str) -> bytes:
        keys = []
        for x in self.exchanges:
            osk = x.osk.get(end)
            if osk is None:
                raise MissingKey(f"{x.id} has no output key for {end}")
            keys.append((x.path_id, osk))
        return combine_paths(keys)

    def inject_osk(self, end: str) -> None:
        """Install the current combined key as this end's data-tunnel PSK."""
        self.data_tunnel.set_psk(end, self.combined_psk(end))

    def reinject(self) -> None:
        for end in (self.a, self.b):
            try:
                self.inject_osk(end)
            except MissingKey:
                pass

    def start(self) -> None:
        for x in self.exchanges:
            x.start()
        self.data_tunnel.start()

    # -- probe: detects the first successful end-to-end transmission ----------

    def _on_data_up(self) -> None:
        if self.run.first_data_delivery_ms is None and not self._probe_pending:
            self._send_probe()

    def _send_probe(self) -> None:
        self._probe_pending = True
        sim = self.run.sim
        try:
            out = self.data_tunnel.transmit(PROBE_BYTES, "data")
        except TunnelDown:
            sim.schedule_in(self.run.spec.timers.poll_ms, f"data:{self.spec.id}", "probe_retry", self._retry)
            return
        if out.delivered:
            sim.schedule_in(out.elapsed_ms, f"data:{self.spec.id}", "probe_delivered", self._probe_done)
        else:
            sim.schedule_in(self.run.spec.timers.poll_ms, f"data:{self.spec.id}", "probe_retry", self._retry)

    def _retry(self) -> None:
        self._probe_pending = False
        if self.run.first_data_delivery_ms is None:
            self._send_probe()

    def _probe_done(self) -> None:
        self._probe_pending = False
        sim = self.run.sim
        sim.log(f"data:{self.spec.id}", "data_delivered", {"session": self.spec.id})
        if self.run.first_data_delivery_ms is None:
            self.run.first_data_delivery_ms = sim.now()


class ScenarioRun:
    """A fully wired simulation instance for one (scenario, seed) pair."""

    def __init__(self, spec: ScenarioSpec, seed: Optional[int] = None, phases: Optional[str] = None):
        if phases is not None:
            spec = replace(spec, phases=phases)
        if seed is not None:
            spec = replace(spec, seed=seed)
        self.spec = spec
        self.sim = Simulator(seed=spec.seed)
        self.net = Network(
            self.sim,
            [n.id for n in spec.nodes],
            list(spec.classical_links),
            ttl_default=spec.ttl_default,
        )
        self.first_data_delivery_ms: Optional[int] = None
        self.first_kill_ms: Optional[int] = None
        self.result: Optional[RunSummary] = None

        timers = spec.timers
        self.kms: dict[str, QkdLink] = {}
        self.hop_tunnels: dict[str, Tunnel] = {}
        self.agents: dict[str, RotationAgentPair] = {}
        for ql in spec.qkd_links:
            lid = ql.id
            self.kms[lid] = QkdLink(
                ql.a,
                ql.b,
                ql.rate_keys_per_s,
                ql.buffer_cap,
                self.sim.stream(f"qkd:{lid}"),
            )
            tunnel = Tunnel(
                self.sim,
                self.net,
                f"hop:{lid}",
                ql.a,
                ql.b,
                path_provider=lambda a=ql.a, b=ql.b: [a, b],
                layer_tag="wg_handshake",
                rekey_period_ms=timers.period_ms,
                grace_ms=timers.grace_ms,
                poll_ms=timers.poll_ms,
                phase_offset_ms=self.phase_offset(f"hop:{lid}"),
            )
            self.hop_tunnels[lid] = tunnel
            self.agents[lid] = RotationAgentPair(
                self.sim,
                self.net,
                lid,
                self.kms[lid],
                tunnel,
                self.net.link(ql.a, ql.b),
                period_ms=timers.period_ms,
                failsafe_ms=timers.failsafe_ms,
                poll_ms=timers.poll_ms,
                nego_timeout_ms=timers.nego_timeout_ms,
                phase_offset_ms=self.phase_offset(f"agent:{lid}"),
            )

        self.sessions: dict[str, _SessionRuntime] = {
            s.id: _SessionRuntime(self, s) for s in spec.sessions
        }

        for f in spec.faults:
            self.inject_fault(int(round(f.at_s * 1000)), f.action, link=f.link, node=f.node)

        for agent in self.agents.values():
            agent.start()
        for tunnel in self.hop_tunnels.values():
            tunnel.start()
        for sess in self.sessions.values():
            sess.start()

    def phase_offset(self, component: str) -> int:
        if self.spec.phases == ALIGNED:
            return 0
        return self.sim.stream(f"phase:{component}").uniform_int(0, self.spec.timers.period_ms - 1)

    # -- faults ---------------------------------------------------------------

    def inject_fault(self, at_ms: int, action: str, link=None, node=None) -> None:
        if action in ("kill_qkd", "revive_qkd"):
            if link is None or link_id(*link) not in self.kms:
                raise UnknownTarget(f"no qkd link {link}")
            lid = link_id(*link)
            fn = self._make_qkd_fault(lid, alive=action == "revive_qkd")
            target = f"qkd:{lid}"
        elif action in ("kill_node", "revive_node"):
            if node not in self.net.nodes:
                raise UnknownTarget(f"no node {node!r}")
            fn = self._make_node_fault(node, alive=action == "revive_node")
            target = f"node:{node}"
        else:
            raise UnknownTarget(f"unknown fault action {action!r}")

        arm_at = max(self.sim.now(), at_ms - 1)

        def arm():
            self.sim.schedule(at_ms, target, action, fn)

        self.sim.schedule(arm_at, target, f"{action}_arm", arm)

    def _make_qkd_fault(self, lid: str, alive: bool):
        def fire():
            self.kms[lid].set_operational(alive, now_ms=self.sim.now())
            kind = "revive_qkd" if alive else "kill_qkd"
            self.sim.log(f"qkd:{lid}", kind, {"link": lid})
            if not alive and self.first_kill_ms is None:
                self.first_kill_ms = self.sim.now()

        return fire

    def _make_node_fault(self, node: str, alive: bool):
        def fire():
            self.net.set_node_up(node, alive)
            kind = "revive_node" if alive else "kill_node"
            self.sim.log(f"node:{node}", kind, {"node": node})
            if not alive and self.first_kill_ms is None:
                self.first_kill_ms = self.sim.now()

        return fire

    # -- execution --------------------------------------------------------------

    def run(self, until_s: Optional[float] = None) -> RunSummary:
        until = until_s if until_s is not None else self.spec.until_s
        self.sim.run_until(int(round(until * 1000)))
        return self.summary(until)

    def summary(self, until_s: float) -> RunSummary:
        disruption = None
        if self.first_kill_ms is not None:
            for rec in self.sim.trace:
                if (
                    rec["kind"] == "tunnel_down"
                    and rec["component"].startswith("data:")
                    and rec["t_ms"] >= self.first_kill_ms
                ):
                    disruption = (rec["t_ms"] - self.first_kill_ms) / 1000.0
                    break
        counts: dict[str, int] = {}
        for rec in self.sim.trace:
            counts[rec["kind"]] = counts.get(rec["kind"], 0) + 1
        return RunSummary(
            name=self.spec.name,
            seed=self.spec.seed,
            until_s=until_s,
            setup_time_s=None
            if self.first_data_delivery_ms is None
            else self.first_data_delivery_ms / 1000.0,
            disruption_time_s=disruption,
            traffic=self.net.counters.snapshot(),
            event_counts=counts,
        )

    def trace_lines(self) -> list[str]:
        return self.sim.trace_lines()


def run_scenario(
    spec: ScenarioSpec,
    until_s: Optional[float] = None,
    seed: Optional[int] = None,
    phases: Optional[str] = None,
) -> ScenarioRun:
    run = ScenarioRun(spec, seed=seed, phases=phases)
    run_summary = run.run(until_s)
    run.result = run_summary
    return run


@dataclass
class BatchResult:
    summaries: list
    stats: dict

    def to_dict(self) -> dict:
        return {"stats": self.stats, "runs": [s.to_dict() for s in self.summaries]}


def run_batch(
    spec: ScenarioSpec,
    n_seeds: int,
    base_seed: Optional[int] = None,
    until_s: Optional[float] = None,
    phases: Optional[str] = None,
    per_run: Optional[Callable[[ScenarioRun], None]] = None,
) -> BatchResult:
    """Independent seeded runs; raw per-seed summaries are retained.

    ``per_run`` sees each finished run (trace included) before it is dropped.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    base = spec.seed if base_seed is None else base_seed
    summaries = []
    for i in range(n_seeds):
        run = run_scenario(spec, until_s=until_s, seed=base + i, phases=phases)
        if per_run is not None:
            per_run(run)
        summaries.append(run.result)

    stats = {}
    for fld in ("setup_time_s", "disruption_time_s"):
        values = [getattr(s, fld) for s in summaries if getattr(s, fld) is not None]
        if values:
            stats[fld] = {
                "mean": statistics.fmean(values),
                "min": min(values),
                "max": max(values),
                "count": len(values),
            }
    return BatchResult(summaries=summaries, stats=stats)
