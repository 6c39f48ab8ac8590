"""Command line front-end.

Subcommands: run, batch, report, security-check, kms-serve. Exit code 0 on
success; 2 for validation, parse, or unknown-target errors; 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report as report_mod
from .scenario import (
    ALIGNED,
    BatchResult,
    ParseError,
    UnknownTarget,
    ValidationError,
    load_scenario_file,
    run_batch,
    run_scenario,
)
from .security import AdversaryCapabilities, SecurityTopology, data_compromised, enumerate_matrix


def _add_common_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario file (.scn, JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--until", type=float, default=None, help="override virtual run length (s)")
    p.add_argument("--aligned", action="store_true", help="zero all component phase offsets")


def _cmd_run(args) -> int:
    spec = load_scenario_file(args.scenario)
    run = run_scenario(spec, until_s=args.until, seed=args.seed, phases=ALIGNED if args.aligned else None)
    summary = run.result.to_dict()
    if args.trace:
        report_mod.write_trace(run.trace_lines(), args.trace)
    if args.summary:
        report_mod.write_summary(summary, args.summary)
    else:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_batch(args) -> int:
    spec = load_scenario_file(args.scenario)
    batch = run_batch(
        spec,
        args.seeds,
        base_seed=args.base_seed,
        until_s=args.until,
        phases=ALIGNED if args.aligned else None,
    )
    doc = batch.to_dict()
    if args.csv:
        report_mod.write_batch_csv(doc["runs"], args.csv)
    if args.out:
        report_mod.write_summary(doc, args.out)
    else:
        print(json.dumps(doc["stats"], indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    spec = load_scenario_file(args.scenario)
    phases = ALIGNED if args.aligned else None
    out_dir = Path(args.out)
    if args.seeds:
        batch = run_batch(spec, args.seeds, until_s=args.until, phases=phases)
        written = report_mod.render_batch_report(batch, spec.name, out_dir)
        # One representative run for the timeline figure.
        run = run_scenario(spec, until_s=args.until, seed=spec.seed, phases=phases)
        written += report_mod.render_run_report(run, out_dir / "run")
    else:
        run = run_scenario(spec, until_s=args.until, seed=args.seed, phases=phases)
        written = report_mod.render_run_report(run, out_dir)
    for path in written:
        print(path)
    return 0


def _cmd_security_check(args) -> int:
    spec = load_scenario_file(args.topology)
    adv = json.loads(Path(args.adversary).read_text())
    topo = SecurityTopology.build(
        {n.id: n.kind for n in spec.nodes},
        [(l.a, l.b) for l in spec.qkd_links],
        spec.paths,
    )
    if not spec.sessions:
        raise ValidationError("topology has no sessions to check")
    session = spec.sessions[0]
    path_ids = [x.path for x in session.exchanges]

    if "matrix" in adv:
        node_sets = [frozenset(ns) for ns in adv["matrix"].get("node_sets", [[]])]
        rows = enumerate_matrix(topo, path_ids, node_sets)
        doc = {"session": session.id, "paths": path_ids, "rows": rows}
    else:
        caps = AdversaryCapabilities(
            breaks_classical=bool(adv.get("breaks_classical", False)),
            breaks_pqc=bool(adv.get("breaks_pqc", False)),
            breaks_qkd=bool(adv.get("breaks_qkd", False)),
            compromised_nodes=frozenset(adv.get("compromised_nodes", [])),
        )
        verdict = data_compromised(topo, path_ids, caps)
        doc = {
            "session": session.id,
            "paths": path_ids,
            "data_compromised": verdict.data_compromised,
            "pqc_key_compromised": verdict.pqc_key_compromised,
            "hop_readable": verdict.hop_readable,
            "witness": verdict.witness,
        }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_kms_serve(args) -> int:
    from . import kms_http

    config = json.loads(Path(args.link_config).read_text())
    kms_http.serve(config, args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_common_run_args(p_run)
    p_run.add_argument("--trace", help="write the event trace (JSONL) here")
    p_run.add_argument("--summary", help="write the run summary (JSON) here")
    p_run.set_defaults(fn=_cmd_run)

    p_batch = sub.add_parser("batch", help="run a scenario across many seeds")
    _add_common_run_args(p_batch)
    p_batch.add_argument("--seeds", type=int, required=True, help="number of seeded runs")
    p_batch.add_argument("--base-seed", type=int, default=None)
    p_batch.add_argument("--out", help="write full batch JSON here")
    p_batch.add_argument("--csv", help="write per-seed CSV here")
    p_batch.set_defaults(fn=_cmd_batch)

    p_report = sub.add_parser("report", help="render figures and delimited outputs")
    _add_common_run_args(p_report)
    p_report.add_argument("--seeds", type=int, default=0, help="batch size (0 = single run)")
    p_report.add_argument("--out", required=True, help="output directory")
    p_report.set_defaults(fn=_cmd_report)

    p_sec = sub.add_parser("security-check", help="evaluate the breach conditions")
    p_sec.add_argument("--topology", required=True, help="scenario file providing the topology")
    p_sec.add_argument("--adversary", required=True, help="adversary capability file (JSON)")
    p_sec.add_argument("--out", help="write the verdict table here instead of stdout")
    p_sec.set_defaults(fn=_cmd_security_check)

    p_kms = sub.add_parser("kms-serve", help="serve the key-delivery HTTP API")
    p_kms.add_argument("--port", type=int, default=8010)
    p_kms.add_argument("--link-config", required=True, help="JSON file naming this node and its peers")
    p_kms.set_defaults(fn=_cmd_kms_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ParseError as e:
        print(f"error[parse]: {e}", file=sys.stderr)
        return 2
    except ValidationError as e:
        print(f"error[validation]: {e}", file=sys.stderr)
        return 2
    except UnknownTarget as e:
        print(f"error[unknown-target]: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
