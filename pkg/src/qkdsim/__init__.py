"""Deterministic discrete-event simulator for layered QKD/PQC tunnel networks."""

from .engine import Event, EventHandle, RngStream, SchedulingInPast, Simulator
from .kms import KeyRecord, NotAnEndpoint, QkdLink
from .network import LinkSpec, Network, Packet, RouteTable, TrafficCounters, compute_routes, link_id
from .pqc import (
    CompletionReport,
    E2eExchange,
    StubKem,
    combine_paths,
    get_suite,
    register_suite,
    schedule_many,
)
from .rotation import RotationAgentPair, channel_properties
from .scenario import (
    ALIGNED,
    RANDOMIZED,
    BatchResult,
    ParseError,
    RunSummary,
    ScenarioRun,
    ScenarioSpec,
    UnknownTarget,
    ValidationError,
    builtin_scenario_path,
    load_scenario,
    load_scenario_file,
    run_batch,
    run_scenario,
    serialize,
)
from .security import (
    AdversaryCapabilities,
    ConfidentialityVerdict,
    SecurityTopology,
    data_compromised,
    enumerate_matrix,
    hop_readable,
    pqc_key_compromised,
)
from .tunnel import Tunnel, TunnelDown

__version__ = "0.1.0"
