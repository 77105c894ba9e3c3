"""Multichannel iEEG recordings: validation, CSV/binary I/O and a synthetic
generator that plants Hann-windowed HFO bursts on 1/f background noise."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adm import compute_baseline

MIN_SAMPLE_RATE_HZ = 1000.0
DEFAULT_SAMPLE_RATE_HZ = 2000.0

BAND_LIMITS_HZ = {
    "ripple": (80.0, 250.0),
    "fast_ripple": (250.0, 500.0),
}
# Accept the hyphenated spelling used in annotation files and configs.
_BAND_ALIASES = {"fast-ripple": "fast_ripple", "ripple": "ripple", "fast_ripple": "fast_ripple", "both": "both"}

ANNOTATION_KINDS = ("planted-HFO", "labeled-HFO")


class RecordingError(ValueError):
    """A Recording violates one of its invariants."""


class RecordingFormatError(RecordingError):
    """Base class for file-format problems; carries the offending location."""

    def __init__(self, message: str, row: int | None = None, field: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.field = field


class MalformedHeaderError(RecordingFormatError):
    pass


class RaggedRowError(RecordingFormatError):
    pass


class NonNumericSampleError(RecordingFormatError):
    pass


class NonFiniteSampleError(RecordingFormatError):
    pass


class SampleRateError(RecordingFormatError):
    pass


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Recording:
    """Bipolar iEEG samples in µV, one row per channel."""

    sample_rate_hz: float
    channels: tuple[str, ...]
    samples: np.ndarray
    patient_id: str = "unknown"
    interval_id: str = "0"
    # set by filtering; None for the wideband signal
    band: str | None = None

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        channels = tuple(str(c) for c in self.channels)
        if arr.ndim != 2 or arr.shape[0] != len(channels):
            raise RecordingError(
                f"samples shape {arr.shape} does not match {len(channels)} channels"
            )
        if len(set(channels)) != len(channels):
            raise RecordingError("duplicate channel labels")
        if not (self.sample_rate_hz >= MIN_SAMPLE_RATE_HZ):
            raise RecordingError(
                f"sample_rate_hz={self.sample_rate_hz} is below {MIN_SAMPLE_RATE_HZ:g} Hz"
            )
        if not np.all(np.isfinite(arr)):
            ch, idx = np.argwhere(~np.isfinite(arr))[0]
            raise RecordingError(f"non-finite sample at channel {channels[ch]!r}, index {idx}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def channel(self, label: str) -> np.ndarray:
        return self.samples[self.channels.index(label)]

    def with_samples(self, samples: np.ndarray, **changes) -> "Recording":
        kwargs = dict(
            sample_rate_hz=self.sample_rate_hz,
            channels=self.channels,
            patient_id=self.patient_id,
            interval_id=self.interval_id,
            band=self.band,
        )
        kwargs.update(changes)
        return Recording(samples=samples, **kwargs)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.channels == other.channels
            and self.patient_id == other.patient_id
            and self.interval_id == other.interval_id
            and self.band == other.band
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True)
class EventAnnotation:
    channel: str
    start_s: float
    end_s: float
    kind: str = "labeled-HFO"

    def __post_init__(self):
        if self.kind not in ANNOTATION_KINDS:
            raise ValueError(f"unknown annotation kind {self.kind!r}")
        if not (0.0 <= self.start_s < self.end_s):
            raise ValueError(f"invalid annotation extent [{self.start_s}, {self.end_s}]")


@dataclass(frozen=True)
class SynthEvent:
    time_s: float
    band: str
    burst_frequency_hz: float
    amplitude_uv: float
    length_s: float = 0.1
    channel: str | None = None
    # Only used for band="both"; defaults to twice the ripple frequency,
    # clamped into the fast-ripple band.
    secondary_frequency_hz: float | None = None


@dataclass(frozen=True)
class SynthSpec:
    duration_s: float
    noise_floor_uv: float | Sequence[float]
    events: Sequence[SynthEvent] = ()
    seed: int = 0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    channels: Sequence[str] = ("CH1",)
    patient_id: str = "synthetic"
    interval_id: str = "0"

    def floors(self) -> list[float]:
        if np.ndim(self.noise_floor_uv) == 0:
            return [float(self.noise_floor_uv)] * len(self.channels)
        floors = [float(f) for f in self.noise_floor_uv]
        if len(floors) != len(self.channels):
            raise SynthSpecError("noise_floor_uv needs one value per channel")
        return floors

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        events = [SynthEvent(**e) for e in d.pop("events", [])]
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(events=tuple(events), **d)


def _secondary_frequency(ev: SynthEvent) -> float:
    if ev.secondary_frequency_hz is not None:
        return float(ev.secondary_frequency_hz)
    lo, hi = BAND_LIMITS_HZ["fast_ripple"]
    return float(min(max(2.0 * ev.burst_frequency_hz, lo + 10.0), hi - 10.0))


def validate_synth_spec(spec: SynthSpec) -> None:
    if spec.duration_s < 1.0:
        raise SynthSpecError("duration_s must be at least 1 s (baseline needs the first second)")
    if spec.sample_rate_hz < MIN_SAMPLE_RATE_HZ:
        raise SynthSpecError(f"sample_rate_hz must be >= {MIN_SAMPLE_RATE_HZ:g}")
    if len(spec.channels) == 0:
        raise SynthSpecError("at least one channel is required")
    if any(f < 0 for f in spec.floors()):
        raise SynthSpecError("noise_floor_uv must be non-negative")
    for i, ev in enumerate(spec.events):
        band = _BAND_ALIASES.get(ev.band)
        if band is None:
            raise SynthSpecError(f"event {i}: unknown band {ev.band!r}")
        lo, hi = BAND_LIMITS_HZ["ripple" if band == "both" else band]
        if not (lo <= ev.burst_frequency_hz <= hi):
            raise SynthSpecError(
                f"event {i}: burst_frequency_hz={ev.burst_frequency_hz} outside {band} band [{lo:g}, {hi:g}]"
            )
        if band == "both":
            f2 = _secondary_frequency(ev)
            flo, fhi = BAND_LIMITS_HZ["fast_ripple"]
            if not (flo <= f2 <= fhi):
                raise SynthSpecError(f"event {i}: secondary frequency {f2} outside fast_ripple band")
        if not ev.amplitude_uv > 0:
            raise SynthSpecError(f"event {i}: amplitude_uv must be > 0")
        if not ev.length_s > 0:
            raise SynthSpecError(f"event {i}: length_s must be > 0")
        if ev.time_s < 0 or ev.time_s + ev.length_s > spec.duration_s:
            raise SynthSpecError(
                f"event {i} at t={ev.time_s} s (length {ev.length_s} s) extends past duration_s={spec.duration_s}"
            )
        if ev.channel is not None and ev.channel not in spec.channels:
            raise SynthSpecError(f"event {i}: unknown channel {ev.channel!r}")


def pink_noise(n: int, sample_rate_hz: float, rng: np.random.Generator, f_low_hz: float = 0.5) -> np.ndarray:
    """Zero-mean noise with a 1/f power spectrum above ``f_low_hz``, unit std."""
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    shaping = np.zeros_like(freqs)
    keep = freqs >= f_low_hz
    shaping[keep] = 1.0 / np.sqrt(freqs[keep])
    x = np.fft.irfft(spectrum * shaping, n=n)
    x -= x.mean()
    return x / x.std()


def hann_burst(n: int, frequency_hz: float, amplitude_uv: float, sample_rate_hz: float) -> np.ndarray:
    t = np.arange(n) / sample_rate_hz
    return amplitude_uv * np.hanning(n) * np.sin(2.0 * math.pi * frequency_hz * t)


def synthesize_ieeg(spec: SynthSpec) -> tuple[Recording, list[EventAnnotation]]:
    """Build a synthetic recording plus exact annotations of every planted burst.

    The background of each channel is scaled so that ``compute_baseline`` on its
    first second equals that channel's noise floor.
    """
    validate_synth_spec(spec)
    fs = float(spec.sample_rate_hz)
    n = int(round(spec.duration_s * fs))
    rng = np.random.default_rng(spec.seed)
    data = np.zeros((len(spec.channels), n))
    for ch, floor in enumerate(spec.floors()):
        bg = pink_noise(n, fs, rng)
        if floor > 0:
            data[ch] = bg * (floor / compute_baseline(bg, fs))

    annotations = []
    for ev in spec.events:
        label = ev.channel if ev.channel is not None else spec.channels[0]
        ch = spec.channels.index(label)
        start = int(round(ev.time_s * fs))
        length = max(int(round(ev.length_s * fs)), 2)
        length = min(length, n - start)
        band = _BAND_ALIASES[ev.band]
        data[ch, start:start + length] += hann_burst(length, ev.burst_frequency_hz, ev.amplitude_uv, fs)
        if band == "both":
            data[ch, start:start + length] += hann_burst(
                length, _secondary_frequency(ev), ev.amplitude_uv, fs
            )
        annotations.append(EventAnnotation(label, float(ev.time_s), float(ev.time_s + ev.length_s), "planted-HFO"))

    rec = Recording(
        sample_rate_hz=fs,
        channels=tuple(spec.channels),
        samples=data,
        patient_id=spec.patient_id,
        interval_id=spec.interval_id,
    )
    return rec, annotations


# --------------------------------------------------------------------------
# file formats

def _check_id(name: str, value: str) -> None:
    if not value or any(c.isspace() for c in value) or "=" in value:
        raise RecordingError(f"{name} {value!r} must be non-empty without whitespace or '='")


def save_recording(rec: Recording, path: str | Path, format: str = "csv") -> Path:
    path = Path(path)
    if format == "binary":
        np.savez(
            path,
            samples=rec.samples,
            sample_rate_hz=np.float64(rec.sample_rate_hz),
            channels=np.array(rec.channels, dtype=str),
            ids=np.array([rec.patient_id, rec.interval_id, rec.band or ""], dtype=str),
        )
        # np.savez appends .npz when missing
        return path if path.suffix == ".npz" else path.with_name(path.name + ".npz")
    if format != "csv":
        raise ValueError(f"unknown format {format!r}")
    _check_id("patient_id", rec.patient_id)
    _check_id("interval_id", rec.interval_id)
    for label in rec.channels:
        if "," in label:
            raise RecordingError(f"channel label {label!r} contains a comma")
    header = f"# sample_rate_hz={rec.sample_rate_hz!r} patient_id={rec.patient_id} interval_id={rec.interval_id}"
    if rec.band is not None:
        _check_id("band", rec.band)
        header += f" band={rec.band}"
    lines = [header, ",".join(rec.channels)]
    # repr() of a Python float round-trips exactly
    lines.extend(",".join(map(repr, row)) for row in rec.samples.T.tolist())
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_header(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise MalformedHeaderError("first line must be '# sample_rate_hz=<f>'", row=0, field="sample_rate_hz")
    fields = {}
    for token in line[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise MalformedHeaderError(f"expected key=value, got {token!r}", row=0)
        fields[key] = value
    if "sample_rate_hz" not in fields:
        raise MalformedHeaderError("missing sample_rate_hz", row=0, field="sample_rate_hz")
    return fields


def load_recording(path: str | Path, format: str | None = None,
                   patient_id: str | None = None, interval_id: str | None = None) -> Recording:
    """Load a recording from CSV (default) or the ``.npz`` binary format.

    Row numbers in CSV errors count data rows from 0 (the first sample row).
    """
    path = Path(path)
    if format is None:
        format = "binary" if path.suffix == ".npz" else "csv"
    if format == "binary":
        with np.load(path, allow_pickle=False) as z:
            ids = [str(s) for s in z["ids"]]
            rec = Recording(
                sample_rate_hz=float(z["sample_rate_hz"]),
                channels=tuple(str(c) for c in z["channels"]),
                samples=z["samples"],
                patient_id=patient_id or ids[0],
                interval_id=interval_id or ids[1],
                band=ids[2] or None,
            )
        return rec
    if format != "csv":
        raise ValueError(f"unknown format {format!r}")

    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        fields = _parse_header(header)
        try:
            fs = float(fields["sample_rate_hz"])
        except ValueError:
            raise MalformedHeaderError(
                f"sample_rate_hz {fields['sample_rate_hz']!r} is not a number", row=0, field="sample_rate_hz"
            ) from None
        if not math.isfinite(fs) or fs < MIN_SAMPLE_RATE_HZ:
            raise SampleRateError(
                f"sample_rate_hz={fs:g} is below the {MIN_SAMPLE_RATE_HZ:g} Hz minimum", field="sample_rate_hz"
            )
        label_line = fh.readline().rstrip("\r\n")
        channels = [c.strip() for c in label_line.split(",")]
        if not label_line or any(not c for c in channels):
            raise MalformedHeaderError("second line must list channel labels", row=None, field="channels")

        columns: list[list[float]] = [[] for _ in channels]
        for row_idx, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if len(row) != len(channels):
                raise RaggedRowError(f"expected {len(channels)} values, found {len(row)}", row=row_idx)
            for col, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise NonNumericSampleError(f"{cell!r} is not numeric", row=row_idx, field=channels[col]) from None
                if not math.isfinite(value):
                    raise NonFiniteSampleError(f"{cell!r} is not finite", row=row_idx, field=channels[col])
                columns[col].append(value)

    if not columns[0]:
        raise RecordingFormatError("no sample rows")
    return Recording(
        sample_rate_hz=fs,
        channels=tuple(channels),
        samples=np.array(columns),
        patient_id=patient_id or fields.get("patient_id", path.stem),
        interval_id=interval_id or fields.get("interval_id", "0"),
        band=fields.get("band"),
    )


def save_annotations(annotations: Sequence[EventAnnotation], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "start_s", "end_s", "kind"])
        for a in annotations:
            w.writerow([a.channel, repr(float(a.start_s)), repr(float(a.end_s)), a.kind])
    return path


def load_annotations(path: str | Path, duration_s: float | None = None) -> list[EventAnnotation]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"channel", "start_s", "end_s", "kind"} - set(reader.fieldnames or [])
        if missing:
            raise MalformedHeaderError(f"annotation file lacks columns {sorted(missing)}", row=0)
        for i, row in enumerate(reader):
            try:
                ann = EventAnnotation(row["channel"], float(row["start_s"]), float(row["end_s"]), row["kind"])
            except ValueError as exc:
                raise RecordingFormatError(str(exc), row=i) from None
            if duration_s is not None and ann.end_s > duration_s:
                raise RecordingFormatError(f"annotation ends after {duration_s} s", row=i, field="end_s")
            out.append(ann)
    return out
