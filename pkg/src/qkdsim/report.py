"""Report rendering: delimited run/batch outputs plus matplotlib figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_LAYER_LANES = [
    ("qkd:", "key plane"),
    ("agent:", "rotation"),
    ("hop:", "hop tunnels"),
    ("pqc:", "e2e handshake"),
    ("data:", "data tunnel"),
]

_KIND_STYLE = {
    "rotation_ok": dict(marker=".", color="tab:green"),
    "rotation_fail": dict(marker="x", color="tab:orange"),
    "random_psk_injected": dict(marker="v", color="tab:red"),
    "tunnel_up": dict(marker=".", color="tab:green"),
    "rekey_fail": dict(marker="x", color="tab:orange"),
    "tunnel_down": dict(marker="s", color="tab:red"),
    "pqc_ok": dict(marker=".", color="tab:green"),
    "pqc_fail": dict(marker="x", color="tab:orange"),
    "pqc_random_injected": dict(marker="v", color="tab:red"),
    "kill_qkd": dict(marker="*", color="black"),
    "kill_node": dict(marker="*", color="black"),
    "data_delivered": dict(marker="D", color="tab:blue"),
}


def _lane_of(component: str) -> int | None:
    for i, (prefix, _) in enumerate(_LAYER_LANES):
        if component.startswith(prefix):
            return i
    return None


def timeline_figure(trace: list[dict], out_path, title: str = "") -> Path:
    """Per-layer event timeline for one run."""
    fig, ax = plt.subplots(figsize=(10, 4))
    seen_kinds = set()
    for rec in trace:
        lane = _lane_of(rec["component"])
        style = _KIND_STYLE.get(rec["kind"])
        if lane is None or style is None:
            continue
        label = rec["kind"] if rec["kind"] not in seen_kinds else None
        seen_kinds.add(rec["kind"])
        ax.plot(rec["t_ms"] / 1000.0, lane, linestyle="none", label=label, **style)
    ax.set_yticks(range(len(_LAYER_LANES)))
    ax.set_yticklabels([name for _, name in _LAYER_LANES])
    ax.set_xlabel("virtual time (s)")
    ax.set_title(title or "layer event timeline")
    ax.grid(axis="x", alpha=0.3)
    if seen_kinds:
        ax.legend(loc="upper right", fontsize=7, ncol=2)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def histogram_figure(values: list[float], out_path, xlabel: str, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(values, bins=min(30, max(5, len(values) // 4)), color="tab:blue", alpha=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("runs")
    ax.set_title(title or xlabel)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def traffic_figure(traffic: dict, out_path, title: str = "") -> Path:
    """Per-link stacked byte totals by layer tag."""
    links = sorted(traffic)
    tags = sorted({tag for per_link in traffic.values() for tag in per_link})
    fig, ax = plt.subplots(figsize=(max(7, len(links) * 0.5), 4))
    bottoms = [0] * len(links)
    for tag in tags:
        heights = [traffic[l].get(tag, {}).get("bytes", 0) for l in links]
        ax.bar(range(len(links)), heights, bottom=bottoms, label=tag)
        bottoms = [b + h for b, h in zip(bottoms, heights)]
    ax.set_xticks(range(len(links)))
    ax.set_xticklabels(links, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("bytes")
    ax.set_title(title or "per-link traffic by layer")
    ax.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def write_trace(trace_lines: list[str], out_path) -> Path:
    out_path = Path(out_path)
    out_path.write_text("\n".join(trace_lines) + ("\n" if trace_lines else ""))
    return out_path


def write_summary(summary: dict, out_path) -> Path:
    out_path = Path(out_path)
    out_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out_path


def write_traffic_csv(traffic: dict, out_path) -> Path:
    out_path = Path(out_path)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["link", "layer_tag", "packets", "bytes"])
        for lid in sorted(traffic):
            for tag in sorted(traffic[lid]):
                cell = traffic[lid][tag]
                writer.writerow([lid, tag, cell["packets"], cell["bytes"]])
    return out_path


def write_batch_csv(summaries: list[dict], out_path) -> Path:
    out_path = Path(out_path)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "setup_time_s", "disruption_time_s"])
        for s in summaries:
            writer.writerow([s["seed"], s["setup_time_s"], s["disruption_time_s"]])
    return out_path


def render_run_report(run, out_dir) -> list[Path]:
    """All artifacts for a single finished run: trace, summary, CSV, figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = run.result.to_dict()
    written = [
        write_trace(run.trace_lines(), out_dir / "trace.jsonl"),
        write_summary(summary, out_dir / "summary.json"),
        write_traffic_csv(summary["traffic"], out_dir / "traffic.csv"),
        timeline_figure(run.sim.trace, out_dir / "timeline.png", title=run.spec.name),
        traffic_figure(summary["traffic"], out_dir / "traffic.png", title=run.spec.name),
    ]
    return written


def render_batch_report(batch, name: str, out_dir) -> list[Path]:
    """Artifacts for a batch: per-seed CSV, stats JSON, histograms."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [s.to_dict() for s in batch.summaries]
    written = [
        write_batch_csv(rows, out_dir / "batch.csv"),
        write_summary(batch.to_dict(), out_dir / "batch.json"),
    ]
    for fld, label in (("setup_time_s", "setup time (s)"), ("disruption_time_s", "disruption time (s)")):
        values = [r[fld] for r in rows if r[fld] is not None]
        if values:
            written.append(
                histogram_figure(values, out_dir / f"{fld}.png", xlabel=label, title=f"{name}: {label}")
            )
    return written
