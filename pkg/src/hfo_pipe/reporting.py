"""Report assembly and deterministic file emission (JSON, CSV, markdown, SVG)."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import analytics


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def write_events_csv(events, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "start_s", "end_s", "n_neurons"])
        for e in events:
            w.writerow([e.channel, repr(e.start_s), repr(e.end_s), e.n_neurons])
    return path


def interval_summary(interval_id: str, duration_s: float, results) -> dict:
    """Per-interval block of a patient report; ``results`` are ChannelResults."""
    return {
        "interval_id": interval_id,
        "duration_s": duration_s,
        "n_events": {r.channel: len(r.events) for r in results},
        "rates_per_min": {r.channel: analytics.hfo_rate(r.events, duration_s) for r in results},
        "baselines_uv": {r.channel: dict(sorted(r.baselines_uv.items())) for r in results},
        "input_spikes": {r.channel: dict(r.n_input_spikes) for r in results},
    }


def patient_report(patient_id: str, channels, intervals: list[dict], outcome: dict | None = None) -> dict:
    """Combine interval summaries into rates, test-retest, HFO area and,
    when resection and ILAE class are known, the outcome label."""
    channels = tuple(channels)
    vectors = [analytics.HfoVector(channels, [iv["rates_per_min"][c] for c in channels], iv["interval_id"])
               for iv in intervals]
    mean = analytics.mean_rates(vectors)
    rates = np.array([v.rates for v in vectors])
    if len(vectors) > 1:
        sem = rates.std(axis=0, ddof=1) / math.sqrt(len(vectors))
        retest = analytics.test_retest(vectors)
        retest_block = {
            "score": retest.score,
            "n_pairs": retest.n_pairs,
            "flagged_zero_pairs": [[vectors[i].interval_id, vectors[j].interval_id] for i, j in retest.flagged_pairs],
        }
    else:
        sem = np.zeros(len(channels))
        retest_block = None
    area = analytics.hfo_area(mean)
    report = {
        "patient_id": patient_id,
        "channels": list(channels),
        "intervals": intervals,
        "mean_rates_per_min": mean.as_dict(),
        "sem_rates_per_min": dict(zip(channels, sem.tolist())),
        "test_retest": retest_block,
        "hfo_area": sorted(area),
        "classification": None,
    }
    if outcome is not None:
        rec = analytics.OutcomeRecord(patient_id, area, outcome["resection"], int(outcome["ilae"]))
        report["resection"] = sorted(rec.resection)
        report["ilae"] = rec.ilae_class
        report["classification"] = rec.classification
    return report


def classification_markdown(records) -> str:
    lines = ["| Patient | HFO area | Resection | ILAE | Class |", "|---|---|---|---|---|"]
    for r in records:
        area = ", ".join(sorted(r.hfo_area)) or "(none)"
        res = ", ".join(sorted(r.resection)) or "(none)"
        lines.append(f"| {r.patient_id} | {area} | {res} | {r.ilae_class} | {r.classification} |")
    return "\n".join(lines) + "\n"


def rates_svg(reports: list[dict], path) -> Path:
    """Bar chart of mean per-channel rates with standard-error bars, one
    panel per patient. Output bytes are reproducible."""
    import matplotlib
    from matplotlib.figure import Figure

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "hfo-pipe", "svg.fonttype": "path"}):
        fig = Figure(figsize=(max(4.0, 0.5 * max(len(r["channels"]) for r in reports) + 2), 2.6 * len(reports)))
        axes = fig.subplots(len(reports), 1, squeeze=False)[:, 0]
        for ax, rep in zip(axes, reports):
            chans = rep["channels"]
            mean = [rep["mean_rates_per_min"][c] for c in chans]
            sem = [rep["sem_rates_per_min"][c] for c in chans]
            area = set(rep["hfo_area"])
            colors = ["#b2182b" if c in area else "#777777" for c in chans]
            ax.bar(range(len(chans)), mean, yerr=sem, color=colors, capsize=3)
            ax.set_xticks(range(len(chans)))
            ax.set_xticklabels(chans, rotation=45, ha="right", fontsize=7)
            ax.set_ylabel("HFO / min")
            ax.set_title(f"patient {rep['patient_id']}", fontsize=9)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
