"""Per-channel detection pipeline: band-pass filtering, baseline-derived
ADM thresholds, spike encoding, SNN simulation and HFO event extraction."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import adm, analytics, filters, snn
from .signal_io import Recording

THREADS_ENV = "HFO_PIPE_THREADS"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage: str, where: str, cause: BaseException):
        super().__init__(f"[{stage}] {where}: {cause}")
        self.stage = stage
        self.where = where
        self.cause = cause


def _staged(stage: str, where: str, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, where, exc) from exc


@dataclass(frozen=True)
class PipelineConfig:
    ripple: filters.BandSpec = filters.RIPPLE_BAND
    fast_ripple: filters.BandSpec = filters.FAST_RIPPLE_BAND
    threshold_scale: float = 1.0
    adm_refractory_s: float = adm.DEFAULT_REFRACTORY_S
    amplifier_gain: float = adm.DEFAULT_AMPLIFIER_GAIN
    adm_reset: str = "current"
    network: snn.NetworkConfig = field(default_factory=snn.NetworkConfig)
    merge_window_s: float = analytics.DEFAULT_MERGE_WINDOW_S
    min_event_span_ms: float = 0.0
    outlier_hz: float = snn.DEFAULT_OUTLIER_RATE_HZ

    def __post_init__(self):
        if not self.threshold_scale > 0:
            raise ValueError("threshold_scale must be positive")
        if not self.merge_window_s > 0:
            raise ValueError("merge window must be positive")
        if self.min_event_span_ms < 0:
            raise ValueError("min_event_span_ms must be non-negative")
        if not self.outlier_hz > 0:
            raise ValueError("outlier cutoff must be positive")
        adm.AdmConfig(1.0, 1.0, self.adm_refractory_s, self.amplifier_gain, self.adm_reset)

    def bands(self) -> tuple[filters.BandSpec, filters.BandSpec]:
        return self.ripple, self.fast_ripple

    def to_dict(self) -> dict:
        return {
            "bands": {b.name: [b.low_hz, b.high_hz] for b in self.bands()},
            "adm": {
                "threshold_scale": self.threshold_scale,
                "refractory_s": self.adm_refractory_s,
                "amplifier_gain": self.amplifier_gain,
                "reset": self.adm_reset,
            },
            "network": self.network.to_dict(),
            "detection": {
                "merge_window_ms": self.merge_window_s * 1e3,
                "min_event_span_ms": self.min_event_span_ms,
                "outlier_hz": self.outlier_hz,
            },
        }


@dataclass(frozen=True)
class ChannelResult:
    channel: str
    baselines_uv: dict  # band name -> input-referred baseline
    n_input_spikes: dict  # stream name -> count
    raster: snn.OutputRaster
    events: tuple


def worker_count(n_tasks: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def parallel_map(fn, items):
    """Ordered map over a thread pool sized by HFO_PIPE_THREADS."""
    items = list(items)
    n = worker_count(len(items))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def encode_channel(x: np.ndarray, fs: float, cfg: PipelineConfig, channel: str = "",
                   setting: "analytics.AdmSetting | None" = None):
    """Filter one channel into both bands and ADM-encode each.

    The baseline is measured on the amplified band-passed signal, so the
    comparator threshold equals ``scale`` baselines of the filtered input.
    Returns the four streams (R_UP, R_DN, FR_UP, FR_DN) and the
    input-referred baselines per band.
    """
    streams = []
    baselines = {}
    for band in cfg.bands():
        y = filters.filter_signal(x, filters.design_bandpass(band, fs))
        base = adm.compute_baseline(cfg.amplifier_gain * y, fs)
        baselines[band.name] = base / cfg.amplifier_gain
        refr = cfg.adm_refractory_s
        reset = cfg.adm_reset
        if setting is not None and setting.threshold_uv is not None:
            delta = setting.threshold_uv * cfg.amplifier_gain
        else:
            scale = cfg.threshold_scale if setting is None else setting.scale
            delta = scale * base
        if setting is not None:
            refr = refr if setting.refractory_s is None else setting.refractory_s
            reset = setting.reset
        if not delta > 0:
            # a silent band (e.g. all-zero input) encodes to nothing
            streams += [adm.SpikeTrain(adm.UP, (), channel, band.name), adm.SpikeTrain(adm.DN, (), channel, band.name)]
            continue
        acfg = adm.AdmConfig(delta, delta, refr, cfg.amplifier_gain, reset)
        streams += list(adm.encode(y, fs, acfg, channel, band.name))
    return tuple(streams), baselines


def run_channel(params: snn.NetworkParams, x: np.ndarray, fs: float, cfg: PipelineConfig,
                channel: str, duration_s: float) -> ChannelResult:
    streams, baselines = _staged("encode", channel, encode_channel, x, fs, cfg, channel)
    raster = _staged("snn", channel, snn.simulate, params, streams, duration_s)
    events = _staged("detect", channel, analytics.detect_hfos, raster, channel,
                     cfg.merge_window_s, cfg.min_event_span_ms)
    counts = {name: len(s) for name, s in zip(snn.STREAMS, streams)}
    return ChannelResult(channel, baselines, counts, raster, tuple(events))


def detect_window(params: snn.NetworkParams, streams, start_s: float, end_s: float,
                  cfg: PipelineConfig, channel: str = "") -> list:
    """Run the network from rest on the input spikes inside [start_s, end_s)."""
    window = []
    for s in streams:
        t = s.times_s
        window.append(t[(t >= start_s) & (t < end_s)] - start_s)
    raster = snn.simulate(params, window, end_s - start_s)
    return analytics.detect_hfos(raster, channel, cfg.merge_window_s, cfg.min_event_span_ms)


def run_recording(params: snn.NetworkParams, rec: Recording, cfg: PipelineConfig) -> list[ChannelResult]:
    def one(label):
        return run_channel(params, rec.channel(label), rec.sample_rate_hz, cfg, label, rec.duration_s)

    return parallel_map(one, rec.channels)


def calibrate(params: snn.NetworkParams, recordings, cfg: PipelineConfig,
              span_s: float | None = None) -> snn.NetworkParams:
    """Disable neurons that fire above the outlier cutoff on HFO-free input.

    Every channel of every calibration recording (optionally only its first
    ``span_s`` seconds) is simulated on its own; a neuron is switched off if
    its rate exceeds the cutoff on any of them.
    """
    tasks = []
    for rec in recordings:
        n = rec.n_samples if span_s is None else min(rec.n_samples, int(round(span_s * rec.sample_rate_hz)))
        for label in rec.channels:
            tasks.append((rec.channel(label)[:n], rec.sample_rate_hz, label, n / rec.sample_rate_hz))

    def one(task):
        x, fs, label, dur = task
        streams, _ = _staged("calibrate", label, encode_channel, x, fs, cfg, label)
        return _staged("calibrate", label, snn.simulate, params, streams, dur)

    out = params
    for raster in parallel_map(one, tasks):
        out = snn.disable_outliers(out, raster, cfg.outlier_hz)
    return out


def build_network(cfg: PipelineConfig, seed: int | None = None) -> snn.NetworkParams:
    net = cfg.network if seed is None else replace(cfg.network, seed=seed)
    return snn.sample_network(net)
