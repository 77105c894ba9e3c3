"""Asynchronous delta modulator (ADM): baseline estimation, UP/DN spike
encoding with a shared refractory period, and a staircase decoder."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

BASELINE_SPAN_S = 1.0
BASELINE_WINDOW_S = 0.05
DEFAULT_REFRACTORY_S = 300e-6
DEFAULT_AMPLIFIER_GAIN = 8.0

UP = "UP"
DN = "DN"


@dataclass(frozen=True)
class AdmConfig:
    """Comparator thresholds are expressed on the amplified signal.

    ``reset`` selects how the reference follows the input after a spike:
    ``"current"`` snaps it to the present amplified value (the circuit's
    amplifier reset); ``"delta"`` moves it by exactly one threshold and places
    spikes at linearly interpolated level-crossing times, which keeps the
    staircase decoder within one threshold of the input.
    """

    v_tu_uv: float
    v_td_uv: float
    refractory_s: float = DEFAULT_REFRACTORY_S
    amplifier_gain: float = DEFAULT_AMPLIFIER_GAIN
    reset: str = "current"

    def __post_init__(self):
        if not (self.v_tu_uv > 0 and self.v_td_uv > 0):
            raise ValueError("ADM thresholds must be positive")
        if not 0 <= self.refractory_s < 0.01:
            raise ValueError("refractory_s must lie in [0, 10 ms)")
        if not self.amplifier_gain > 0:
            raise ValueError("amplifier_gain must be positive")
        if self.reset not in ("current", "delta"):
            raise ValueError(f"unknown reset mode {self.reset!r}")


@dataclass(frozen=True)
class SpikeTrain:
    polarity: str
    times_s: np.ndarray = field(default_factory=lambda: np.empty(0))
    channel: str = ""
    band: str = ""

    def __post_init__(self):
        if self.polarity not in (UP, DN):
            raise ValueError(f"polarity must be UP or DN, got {self.polarity!r}")
        t = np.array(self.times_s, dtype=np.float64, copy=True).reshape(-1)
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("spike times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times_s", t)

    def __len__(self):
        return self.times_s.size


def compute_baseline(signal: np.ndarray, sample_rate_hz: float) -> float:
    """Mean of the lowest quartile of 50 ms window maxima over the first second.

    The first second is split into 20 non-overlapping windows; each window
    contributes max |x|.
    """
    x = np.asarray(signal, dtype=float)
    n_span = int(round(BASELINE_SPAN_S * sample_rate_hz))
    if x.size < n_span:
        raise ValueError(f"baseline needs at least {BASELINE_SPAN_S:g} s of signal, got {x.size / sample_rate_hz:.3f} s")
    n_windows = int(round(BASELINE_SPAN_S / BASELINE_WINDOW_S))
    edges = np.round(np.linspace(0, n_span, n_windows + 1)).astype(int)
    maxima = np.sort([np.max(np.abs(x[a:b])) for a, b in zip(edges[:-1], edges[1:])])
    return float(np.mean(maxima[: n_windows // 4]))


def thresholds_from_baseline(baseline_uv: float, scale: float = 1.0, **overrides) -> AdmConfig:
    if not baseline_uv > 0:
        raise ValueError(f"baseline must be positive, got {baseline_uv}")
    delta = scale * baseline_uv
    return AdmConfig(v_tu_uv=delta, v_td_uv=delta, **overrides)


def encode(signal: np.ndarray, sample_rate_hz: float, config: AdmConfig,
           channel: str = "", band: str = "") -> tuple[SpikeTrain, SpikeTrain]:
    x = (config.amplifier_gain * np.asarray(signal, dtype=float)).tolist()
    if config.reset == "delta":
        up, dn = _encode_delta(x, sample_rate_hz, config)
    else:
        up, dn = _encode_current(x, sample_rate_hz, config)
    return SpikeTrain(UP, up, channel, band), SpikeTrain(DN, dn, channel, band)


def _encode_current(x: list[float], fs: float, cfg: AdmConfig) -> tuple[list[float], list[float]]:
    up: list[float] = []
    dn: list[float] = []
    if not x:
        return up, dn
    ref = x[0]
    blocked_until = -math.inf
    tu, td, refr = cfg.v_tu_uv, cfg.v_td_uv, cfg.refractory_s
    # refractory comparisons are done on the integer sample grid to avoid
    # float drift: sample n may fire iff n >= last + refr * fs
    refr_samples = refr * fs
    for n in range(1, len(x)):
        if n < blocked_until:
            continue
        v = x[n]
        if v - ref > tu:
            up.append(n / fs)
        elif ref - v > td:
            dn.append(n / fs)
        else:
            continue
        ref = v
        blocked_until = n + refr_samples - 1e-9
    return up, dn


def _encode_delta(x: list[float], fs: float, cfg: AdmConfig) -> tuple[list[float], list[float]]:
    up: list[float] = []
    dn: list[float] = []
    if not x:
        return up, dn
    ref = x[0]
    last = -math.inf
    tu, td, refr = cfg.v_tu_uv, cfg.v_td_uv, cfg.refractory_s
    dt = 1.0 / fs
    for n in range(1, len(x)):
        y0, y1 = x[n - 1], x[n]
        t0 = (n - 1) * dt
        t1 = n * dt
        while True:
            if y1 - ref > tu:
                level, target = ref + tu, up
            elif ref - y1 > td:
                level, target = ref - td, dn
            else:
                break
            if y1 != y0:
                tc = t0 + dt * (level - y0) / (y1 - y0)
            else:
                tc = t0
            tc = min(max(tc, t0), t1)
            if refr > 0:
                tc = max(tc, last + refr)
                if tc > t1:
                    break
            elif tc <= last:
                tc = math.nextafter(last, math.inf)
            target.append(tc)
            last = tc
            ref = level
    return up, dn


@dataclass(frozen=True)
class Staircase:
    """Piecewise-constant reconstruction; ``values[k]`` holds on
    ``[times[k], times[k+1])`` and the value before ``times[0]`` is 0."""

    times: np.ndarray
    values: np.ndarray
    duration_s: float

    def at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        padded = np.concatenate([[0.0], self.values])
        return padded[idx]

    def sampled(self, sample_rate_hz: float) -> np.ndarray:
        n = int(round(self.duration_s * sample_rate_hz))
        return self.at(np.arange(n) / sample_rate_hz)


def decode(up: SpikeTrain, dn: SpikeTrain, config: AdmConfig, duration_s: float) -> Staircase:
    times = np.concatenate([up.times_s, dn.times_s])
    steps = np.concatenate([np.full(len(up), config.v_tu_uv), np.full(len(dn), -config.v_td_uv)])
    order = np.argsort(times, kind="stable")
    times, steps = times[order], steps[order]
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("UP and DN trains interleave with coincident timestamps")
    values = np.cumsum(steps) / config.amplifier_gain
    return Staircase(times, values, float(duration_s))


def with_thresholds(config: AdmConfig, v_tu_uv: float, v_td_uv: float) -> AdmConfig:
    return replace(config, v_tu_uv=v_tu_uv, v_td_uv=v_td_uv)


def spike_train_rows(trains) -> list[tuple[float, str, str, str]]:
    """Flatten trains into (time_s, polarity, channel, band) rows sorted by time."""
    rows = [(float(t), tr.polarity, tr.channel, tr.band) for tr in trains for t in tr.times_s]
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    return rows


def save_spike_trains(trains, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "polarity", "channel", "band"])
        for t, pol, ch, band in spike_train_rows(trains):
            w.writerow([repr(t), pol, ch, band])


def load_spike_trains(path) -> list[SpikeTrain]:
    grouped: dict[tuple[str, str, str], list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["channel"], row["band"], row["polarity"])
            grouped.setdefault(key, []).append(float(row["time_s"]))
    return [SpikeTrain(pol, sorted(ts), ch, band) for (ch, band, pol), ts in sorted(grouped.items())]
