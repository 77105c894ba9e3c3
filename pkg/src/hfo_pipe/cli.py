"""Command-line entry point: ``hfo-pipe {synth,detect,report,sweep,design}``.

Run configuration is JSON; command-line flags override the file, which
overrides built-in defaults. Exit codes: 0 success, 2 configuration error,
3 data error, 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, analytics, filters, headstage, pipeline, reporting, signal_io, snn

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class InvariantError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration

DEFAULT_CALIBRATION_SPAN_S = 1.0


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ripple", help="ripple band as LOW:HIGH Hz, default 80:250")
    p.add_argument("--fast-ripple", dest="fast_ripple", help="fast-ripple band as LOW:HIGH Hz, default 250:500")
    p.add_argument("--merge-window-ms", dest="merge_window_ms", type=float, help="ISI merge window, default 15")
    p.add_argument("--outlier-hz", dest="outlier_hz", type=float, help="outlier neuron cutoff, default 2")


def resolve_config(args) -> dict:
    """Merge defaults < config file < flags into a plain dict."""
    cfg = {} if not args.config else _read_json(args.config, "config file")
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    base = Path(args.config).parent if args.config else Path(".")
    cfg = dict(cfg)
    cfg["_base"] = str(base)
    bands = dict(cfg.get("bands", {}))
    if args.ripple:
        bands["ripple"] = args.ripple
    if args.fast_ripple:
        bands["fast_ripple"] = args.fast_ripple
    cfg["bands"] = bands
    det = dict(cfg.get("detection", {}))
    if args.merge_window_ms is not None:
        det["merge_window_ms"] = args.merge_window_ms
    if args.outlier_hz is not None:
        det["outlier_hz"] = args.outlier_hz
    cfg["detection"] = det
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if args.out:
        cfg["out"] = args.out
    cfg.setdefault("out", "hfo_out")
    return cfg


def _band(value, name: str, default: filters.BandSpec) -> filters.BandSpec:
    if value is None:
        return default
    if isinstance(value, str):
        return filters.parse_band(value, name)
    lo, hi = value
    return filters.BandSpec(name, float(lo), float(hi))


def pipeline_config(cfg: dict) -> pipeline.PipelineConfig:
    try:
        bands = cfg.get("bands", {})
        known = {"ripple", "fast_ripple"}
        if set(bands) - known:
            raise ConfigError(f"unknown bands {sorted(set(bands) - known)}")
        adm_cfg = dict(cfg.get("adm", {}))
        net = dict(cfg.get("network", {}))
        net["seed"] = int(cfg["seed"])  # the global seed drives the network draw
        det = dict(cfg.get("detection", {}))
        unknown = set(adm_cfg) - {"threshold_scale", "refractory_s", "amplifier_gain", "reset"}
        unknown |= set(det) - {"merge_window_ms", "min_event_span_ms", "outlier_hz"}
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        return pipeline.PipelineConfig(
            ripple=_band(bands.get("ripple"), "ripple", filters.RIPPLE_BAND),
            fast_ripple=_band(bands.get("fast_ripple"), "fast_ripple", filters.FAST_RIPPLE_BAND),
            threshold_scale=float(adm_cfg.get("threshold_scale", 1.0)),
            adm_refractory_s=float(adm_cfg.get("refractory_s", pipeline.adm.DEFAULT_REFRACTORY_S)),
            amplifier_gain=float(adm_cfg.get("amplifier_gain", pipeline.adm.DEFAULT_AMPLIFIER_GAIN)),
            adm_reset=str(adm_cfg.get("reset", "current")),
            network=snn.NetworkConfig.from_dict(net),
            merge_window_s=float(det.get("merge_window_ms", 15.0)) / 1e3,
            min_event_span_ms=float(det.get("min_event_span_ms", 0.0)),
            outlier_hz=float(det.get("outlier_hz", snn.DEFAULT_OUTLIER_RATE_HZ)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _resolve_path(cfg: dict, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg["_base"]) / p


def _load_inputs(cfg: dict, key: str, seed_offset: int) -> list[signal_io.Recording]:
    """Recordings listed under ``key``: file entries or inline synth specs."""
    entries = cfg.get(key, [])
    if not isinstance(entries, list):
        raise ConfigError(f"'{key}' must be a list")
    recs = []
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            entry = {"path": entry}
        if "synth" in entry:
            spec = dict(entry["synth"])
            spec.setdefault("seed", int(cfg["seed"]) + seed_offset + i)
            try:
                recs.append(signal_io.synthesize_ieeg(signal_io.SynthSpec.from_dict(spec))[0])
            except (signal_io.SynthSpecError, TypeError, ValueError) as exc:
                raise ConfigError(f"{key}[{i}]: {exc}") from None
            continue
        if "path" not in entry:
            raise ConfigError(f"{key}[{i}] needs 'path' or 'synth'")
        path = _resolve_path(cfg, entry["path"])
        if not path.exists():
            raise ConfigError(f"{key}[{i}]: file not found: {path}")
        try:
            recs.append(signal_io.load_recording(
                path, entry.get("format"), patient_id=entry.get("patient_id"),
                interval_id=entry.get("interval_id")))
        except signal_io.RecordingError as exc:
            raise DataError(f"[load] {path}: {exc}") from None
    return recs


# --------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    raw = _read_json(args.spec, "synth spec")
    specs = raw.get("recordings", [raw]) if isinstance(raw, dict) else raw
    out = Path(args.out or ".")
    written = []
    for i, d in enumerate(specs):
        d = dict(d)
        if args.seed is not None:
            d["seed"] = args.seed + i
        try:
            spec = signal_io.SynthSpec.from_dict(d)
            rec, ann = signal_io.synthesize_ieeg(spec)
        except (signal_io.SynthSpecError, TypeError, ValueError) as exc:
            raise ConfigError(f"spec {i}: {exc}") from None
        stem = f"{rec.patient_id}_{rec.interval_id}"
        ext = "csv" if args.format == "csv" else "npz"
        out.mkdir(parents=True, exist_ok=True)
        written.append(signal_io.save_recording(rec, out / f"{stem}.{ext}", format=args.format))
        written.append(signal_io.save_annotations(ann, out / f"{stem}.annotations.csv"))
        print(f"{stem}: {len(rec.channels)} channel(s), {rec.duration_s:g} s at {rec.sample_rate_hz:g} Hz, "
              f"{len(ann)} planted event(s)")
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = resolve_config(args)
    pcfg = pipeline_config(cfg)
    inputs = _load_inputs(cfg, "inputs", 0)
    if not inputs:
        raise ConfigError("no inputs configured ('inputs' list is empty)")
    calib = _load_inputs(cfg, "calibration", 1000)
    outcomes = cfg.get("outcomes", {})
    out = Path(cfg["out"])

    params = pipeline.build_network(pcfg)
    if calib:
        params = pipeline.calibrate(params, calib, pcfg)
        calib_desc = "calibration recordings"
    else:
        span = float(cfg.get("calibration_span_s", DEFAULT_CALIBRATION_SPAN_S))
        params = pipeline.calibrate(params, inputs, pcfg, span_s=span)
        calib_desc = f"first {span:g} s of every input"

    # (patient, interval) order decides every output's layout
    keyed = sorted(inputs, key=lambda r: (r.patient_id, r.interval_id))
    seen = set()
    for r in keyed:
        if (r.patient_id, r.interval_id) in seen:
            raise ConfigError(f"duplicate interval {r.interval_id!r} for patient {r.patient_id!r}")
        seen.add((r.patient_id, r.interval_id))

    by_patient: dict[str, list] = {}
    for rec in keyed:
        results = pipeline.run_recording(params, rec, pcfg)
        for res in results:
            if any(e.end_s > rec.duration_s or e.start_s < 0 for e in res.events):
                raise InvariantError(f"[detect] {res.channel}: event outside the recording")
        events = [e for res in results for e in res.events]
        reporting.write_events_csv(events, out / "events" / f"{rec.patient_id}_{rec.interval_id}.csv")
        by_patient.setdefault(rec.patient_id, []).append((rec, results))

    summary = []
    for pid, items in by_patient.items():
        channels = items[0][0].channels
        for rec, _ in items:
            if rec.channels != channels:
                raise DataError(f"[report] patient {pid}: interval {rec.interval_id} has a different channel list")
        intervals = [reporting.interval_summary(rec.interval_id, rec.duration_s, res) for rec, res in items]
        outcome = outcomes.get(pid)
        try:
            report = reporting.patient_report(pid, channels, intervals, outcome)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"outcome for patient {pid}: {exc}") from None
        reporting.dump_json(report, out / "patients" / f"{pid}.json")
        n_ev = sum(sum(iv["n_events"].values()) for iv in intervals)
        summary.append(f"{pid}: {len(intervals)} interval(s), {n_ev} HFO event(s), area {report['hfo_area']}")

    manifest = {
        "command": "detect",
        "version": __version__,
        "seed": int(cfg["seed"]),
        "config": pcfg.to_dict(),
        "inputs": [{"patient_id": r.patient_id, "interval_id": r.interval_id, "channels": list(r.channels),
                    "sample_rate_hz": r.sample_rate_hz, "duration_s": r.duration_s} for r in keyed],
        "calibration": {"source": calib_desc, "disabled_neurons": [int(i) for i in (~params.enabled).nonzero()[0]]},
        "outcomes": outcomes,
    }
    reporting.dump_json(manifest, out / "manifest.json")
    for line in summary:
        print(line)
    print(f"outputs in {out}")
    return EXIT_OK


def _collect_reports(paths) -> list[dict]:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files += sorted(p.glob("*.json"))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"report not found: {p}")
    reports = []
    for f in files:
        try:
            reports.append(json.loads(f.read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"[report] {f}: {exc}") from None
    return sorted(reports, key=lambda r: str(r.get("patient_id")))


def cmd_report(args) -> int:
    reports = _collect_reports(args.reports)
    if not reports:
        raise ConfigError("no patient reports given")
    outcomes = _read_json(args.resection, "resection file") if args.resection else {}
    records = []
    for rep in reports:
        pid = rep.get("patient_id")
        if "hfo_area" not in rep:
            raise DataError(f"[report] patient {pid}: report has no hfo_area")
        outcome = outcomes.get(pid)
        if outcome is None and rep.get("ilae") is not None:
            outcome = {"resection": rep.get("resection", []), "ilae": rep["ilae"]}
        if outcome is None:
            raise DataError(f"[report] patient {pid}: no resection/ILAE information")
        try:
            records.append(analytics.OutcomeRecord(pid, rep["hfo_area"], outcome["resection"], int(outcome["ilae"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"[report] patient {pid}: {exc}") from None
    metrics = analytics.compute_metrics(records)
    out = Path(args.out or "hfo_report")
    md = "## Classification\n\n" + reporting.classification_markdown(records)
    md += "\n## Prediction metrics\n\n" + analytics.metrics_markdown({args.label: metrics})
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.md").write_text(md)
    reporting.dump_json({
        "label": args.label,
        "patients": [{"patient_id": r.patient_id, "classification": r.classification} for r in records],
        "metrics": metrics.to_dict(),
        "display": metrics.display(),
    }, out / "metrics.json")
    plotted = [r for r in reports if r.get("channels") and r.get("mean_rates_per_min")]
    if plotted:
        for r in plotted:
            r.setdefault("sem_rates_per_min", {c: 0.0 for c in r["channels"]})
        reporting.rates_svg(plotted, out / "rates.svg")
    print(md, end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    pcfg = pipeline_config(cfg)
    lab = cfg.get("labeled")
    if not lab or "recording" not in lab or "annotations" not in lab:
        raise ConfigError("sweep needs 'labeled': {'recording': ..., 'annotations': ...}")
    rpath = _resolve_path(cfg, lab["recording"])
    apath = _resolve_path(cfg, lab["annotations"])
    for p in (rpath, apath):
        if not p.exists():
            raise ConfigError(f"file not found: {p}")
    try:
        rec = signal_io.load_recording(rpath)
        ann = signal_io.load_annotations(apath, rec.duration_s)
    except (signal_io.RecordingError, ValueError) as exc:
        raise DataError(f"[load] {exc}") from None
    grid = cfg.get("grid", {})
    try:
        adm_grid = [analytics.AdmSetting(**d) for d in grid.get("adm", [{}])]
        net_grid = [snn.NetworkConfig.from_dict({"seed": int(cfg["seed"]), **d}) for d in grid.get("network", [{}])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from None
    if not adm_grid or not net_grid:
        raise ConfigError("sweep grid is empty")
    ranked = analytics.sweep_parameters(rec, ann, adm_grid, net_grid, pcfg, seed=int(cfg["seed"]))
    out = Path(cfg["out"])
    reporting.dump_json({"seed": int(cfg["seed"]), "results": [r.to_dict() for r in ranked]}, out / "sweep.json")
    for r in ranked:
        print(f"{r.rank:3d}  grid#{r.grid_index:<3d} {r.adm.label():<28s} hits {r.hits}/{r.n_labeled}  "
              f"false {r.false_hits}/{r.n_control}")
    return EXIT_OK


def cmd_design(args) -> int:
    try:
        tt = headstage.TowThomasParams(args.r1, args.r2, args.r3, args.r4, args.c1)
        lna = headstage.LnaParams(args.c_in, args.c_f, args.gm, args.c_load)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = headstage.design_table(tt, lna)
    if args.json:
        print(json.dumps(rows, indent=2, sort_keys=True))
        return EXIT_OK
    for row in rows:
        cells = "  ".join(f"{k}={v:.6g}" for k, v in row.items() if k != "block")
        print(f"{row['block']:<11s} {cells}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfo-pipe", description="Spiking-network HFO detection pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic recording and its annotations")
    p.add_argument("spec", help="JSON synth spec (one spec, or {'recordings': [...]})")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, help="override the seed given in the synth file")
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="run the detection pipeline")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="outcome metrics table and rate chart from patient reports")
    p.add_argument("reports", nargs="*", help="patient report JSON files or directories")
    p.add_argument("--resection", help="JSON {patient_id: {'resection': [...], 'ilae': n}}")
    p.add_argument("--out", help="output directory (default: hfo_report)")
    p.add_argument("--label", default="SNN", help="column label in the metrics table")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="rank ADM/network settings on labeled events")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("design", help="headstage design-equation calculator")
    p.add_argument("--r1", type=float, default=198.9e6)
    p.add_argument("--r2", type=float, default=198.9e6)
    p.add_argument("--r3", type=float, default=198.9e6)
    p.add_argument("--r4", type=float, default=198.9e6)
    p.add_argument("--c1", type=float, default=10e-12)
    p.add_argument("--c-in", dest="c_in", type=float, default=20e-12)
    p.add_argument("--c-f", dest="c_f", type=float, default=200e-15)
    p.add_argument("--gm", type=float, default=20e-9)
    p.add_argument("--c-load", dest="c_load", type=float, default=20e-15)
    p.add_argument("--json", action="store_true", help="print JSON instead of plain text")
    p.set_defaults(func=cmd_design)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, signal_io.RecordingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except filters.FilterDesignError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.StageError as exc:
        if isinstance(exc.cause, filters.FilterDesignError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if isinstance(exc.cause, (ValueError, signal_io.RecordingError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InvariantError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
