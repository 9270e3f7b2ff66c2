"""Run reports: figures rendered to files next to the delimited exports.

Everything is drawn from the RunLog alone (telemetry bodies plus command and
notification records), so a report can be produced for either execution mode
after the fact.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")  # file output only; no display server in scope

import matplotlib.pyplot as plt

from agribot.config import ScenarioConfig
from agribot.controller import counts_to_temp_c
from agribot.harness import RunLog, export_log


def _tele_series(log: RunLog) -> dict[int, dict[str, list]]:
    """Per-checkpoint time series pulled out of the telemetry records."""
    series: dict[int, dict[str, list]] = {}
    for r in log.records:
        if r.kind != "tele":
            continue
        b = r.body
        d = b["data"]
        s = series.setdefault(b["cp"], {
            "ts": [], "temp_c": [], "rh": [], "lux": [], "moist_high": [],
            "ph": [], "bat": []})
        s["ts"].append(b["ts"])
        s["temp_c"].append(counts_to_temp_c(d["tc"]))
        s["rh"].append(None if d["dht"] is None else d["dht"][1])
        s["lux"].append(d["lux"])
        s["moist_high"].append(1 if d["m"] == "H" else 0)
        s["ph"].append(d["ph"])
        s["bat"].append(d["bat"])
    return series


def render_report(log: RunLog, out_dir: str, cfg: ScenarioConfig | None = None) -> list[str]:
    """Write run.jsonl, telemetry.csv, and the figures into out_dir.

    Returns the list of files written (relative to out_dir).
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    for name, fmt in (("run.jsonl", "jsonl"), ("telemetry.csv", "csv")):
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(export_log(log, fmt))
        written.append(name)

    series = _tele_series(log)
    hours = 3600.0

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for cp in sorted(series):
        s = series[cp]
        ax.plot([t / hours for t in s["ts"]], s["temp_c"], lw=0.9,
                label=f"checkpoint {cp}")
    if cfg is not None:
        ax.axhline(cfg.thresholds.temp_lo_c, color="tab:blue", ls="--", lw=0.8)
        ax.axhline(cfg.thresholds.temp_hi_c, color="tab:red", ls="--", lw=0.8)
    ax.set_xlabel("simulated hours")
    ax.set_ylabel("temperature [C], de-quantized")
    ax.set_title("Zone temperature at each sampled checkpoint")
    if series:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "temperature.png"), dpi=120)
    plt.close(fig)
    written.append("temperature.png")

    fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex=True)
    for cp in sorted(series):
        s = series[cp]
        th = [t / hours for t in s["ts"]]
        rh_t = [(t, v) for t, v in zip(th, s["rh"]) if v is not None]
        if rh_t:
            axes[0][0].plot([t for t, _ in rh_t], [v for _, v in rh_t], lw=0.9)
        axes[0][1].plot(th, s["lux"], lw=0.9)
        axes[1][0].step(th, s["moist_high"], lw=0.9, where="post")
        axes[1][1].plot(th, s["bat"], lw=0.9)
    axes[0][0].set_ylabel("RH [%]")
    axes[0][1].set_ylabel("light [ADC counts]")
    axes[1][0].set_ylabel("moisture HIGH")
    axes[1][0].set_yticks([0, 1])
    axes[1][1].set_ylabel("battery fraction")
    for ax_row in axes:
        for ax in ax_row:
            ax.set_xlabel("simulated hours")
    fig.suptitle("Environment and bot health")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "environment.png"), dpi=120)
    plt.close(fig)
    written.append("environment.png")

    cmd_ts = [r.tick_ts / hours for r in log.records if r.kind == "cmd"]
    warn_ts = [r.tick_ts / hours for r in log.records
               if r.kind == "notify" and r.body.get("level") == "warn"]
    fig, ax = plt.subplots(figsize=(9, 2.8))
    ax.eventplot([cmd_ts, warn_ts], colors=["tab:green", "tab:red"],
                 lineoffsets=[1, 0], linelengths=0.8)
    ax.set_yticks([0, 1])
    ax.set_yticklabels(["warnings", "relay commands"])
    ax.set_xlabel("simulated hours")
    ax.set_title("Controller activity")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "activity.png"), dpi=120)
    plt.close(fig)
    written.append("activity.png")

    return written
