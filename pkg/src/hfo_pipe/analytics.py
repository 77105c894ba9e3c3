"""From output rasters to clinical quantities: HFO events, per-channel rates,
test-retest reliability, HFO area, outcome labels and group metrics.
The parameter sweep harness lives here as well."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .snn import OutputRaster

DEFAULT_MERGE_WINDOW_S = 0.015
UNDEFINED = "--"
LABELS = ("TN", "TP", "FN", "FP")
METRIC_NAMES = ("specificity", "sensitivity", "npv", "ppv", "accuracy")
# row labels used in rendered tables
METRIC_LABELS = {
    "specificity": "Specificity",
    "sensitivity": "Sensitivity",
    "npv": "NPV",
    "ppv": "PPV",
    "accuracy": "Accuracy",
}


@dataclass(frozen=True)
class HfoEvent:
    channel: str
    start_s: float
    end_s: float
    n_neurons: int  # distinct neurons contributing spikes

    def __post_init__(self):
        if self.end_s < self.start_s:
            raise ValueError("HFO event ends before it starts")

    @property
    def center_s(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


def merge_spikes(times, merge_window_s: float = DEFAULT_MERGE_WINDOW_S) -> list[tuple[int, int]]:
    """Index ranges [i, j] of maximal runs whose consecutive gaps are < window."""
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(t) >= merge_window_s)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [t.size - 1]])
    return list(zip(starts.tolist(), ends.tolist()))


def detect_hfos(raster: OutputRaster, channel: str, merge_window_s: float = DEFAULT_MERGE_WINDOW_S,
                min_event_span_ms: float = 0.0) -> list[HfoEvent]:
    """Pool enabled neurons and merge spikes closer than ``merge_window_s``.

    Gaps of exactly the merge window split events. Events shorter than
    ``min_event_span_ms`` are dropped (0 keeps single-spike events).
    """
    if merge_window_s <= 0:
        raise ValueError("merge_window_s must be positive")
    times, owners = [], []
    for i, t in enumerate(raster.spike_times):
        if raster.enabled[i] and t.size:
            times.append(t)
            owners.append(np.full(t.size, i))
    if not times:
        return []
    t = np.concatenate(times)
    who = np.concatenate(owners)
    order = np.argsort(t, kind="stable")
    t, who = t[order], who[order]
    events = []
    for a, b in merge_spikes(t, merge_window_s):
        if (t[b] - t[a]) * 1e3 < min_event_span_ms:
            continue
        events.append(HfoEvent(channel, float(t[a]), float(t[b]), int(np.unique(who[a:b + 1]).size)))
    return events


def hfo_rate(events: Sequence, interval_duration_s: float) -> float:
    """Events per minute."""
    if not interval_duration_s > 0:
        raise ValueError("interval duration must be positive")
    return len(events) * 60.0 / interval_duration_s


@dataclass(frozen=True)
class HfoVector:
    channels: tuple[str, ...]
    rates: tuple[float, ...]
    interval_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.channels) != len(self.rates):
            raise ValueError("one rate per channel is required")
        if any(not (r >= 0 and math.isfinite(r)) for r in self.rates):
            raise ValueError("rates must be finite and non-negative")

    def as_array(self) -> np.ndarray:
        return np.array(self.rates, dtype=float)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.channels, self.rates))


@dataclass(frozen=True)
class RetestScore:
    score: float
    n_pairs: int
    flagged_pairs: tuple[tuple[int, int], ...] = ()  # pairs with an all-zero vector

    def __float__(self):
        return self.score


def test_retest(vectors: Sequence[HfoVector]) -> RetestScore:
    """Mean cosine similarity over all unordered pairs of HFO vectors."""
    if len(vectors) < 2:
        raise ValueError("test-retest needs at least two HFO vectors")
    channels = vectors[0].channels
    for v in vectors[1:]:
        if v.channels != channels:
            raise ValueError(f"channel sets differ between intervals {vectors[0].interval_id!r} and {v.interval_id!r}")
    arrays = [v.as_array() for v in vectors]
    norms = [float(np.linalg.norm(a)) for a in arrays]
    total = 0.0
    flagged = []
    pairs = list(itertools.combinations(range(len(vectors)), 2))
    for i, j in pairs:
        if norms[i] == 0 or norms[j] == 0:
            flagged.append((i, j))
            continue
        cos = float(np.dot(arrays[i], arrays[j])) / (norms[i] * norms[j])
        total += min(max(cos, 0.0), 1.0)
    return RetestScore(total / len(pairs), len(pairs), tuple(flagged))


test_retest.__test__ = False  # keep pytest from collecting it when imported


def mean_rates(vectors: Sequence[HfoVector]) -> HfoVector:
    if not vectors:
        raise ValueError("no HFO vectors to average")
    channels = vectors[0].channels
    if any(v.channels != channels for v in vectors):
        raise ValueError("channel sets differ between intervals")
    m = np.mean([v.as_array() for v in vectors], axis=0)
    return HfoVector(channels, tuple(m.tolist()), "mean")


def hfo_area(rates: HfoVector, percentile: float = 95.0) -> frozenset[str]:
    """Channels whose rate strictly exceeds the given percentile of all rates
    (linear interpolation between order statistics)."""
    r = rates.as_array()
    if r.size == 0:
        raise ValueError("hfo_area needs at least one channel")
    if not 0 <= percentile <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    # exact rationals, so a rate sitting on the cut cannot flip with rounding
    exact = [Fraction(float(x)) for x in r]
    order = sorted(exact)
    pos = Fraction(percentile) / 100 * (len(order) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(order) - 1)
    cut = order[lo] + (order[hi] - order[lo]) * (pos - lo)
    return frozenset(ch for ch, x in zip(rates.channels, exact) if x > cut)


def classify_outcome(area: Iterable[str], resection: Iterable[str], ilae: int) -> str:
    """TN/FN when the HFO area lies inside the resection, TP/FP otherwise;
    an empty area counts as contained and ILAE 1 as seizure free."""
    if not 1 <= int(ilae) <= 6:
        raise ValueError(f"ILAE class must be 1..6, got {ilae}")
    contained = set(area) <= set(resection)
    free = int(ilae) == 1
    if contained:
        return "TN" if free else "FN"
    return "FP" if free else "TP"


@dataclass(frozen=True)
class OutcomeRecord:
    patient_id: str
    hfo_area: frozenset
    resection: frozenset
    ilae_class: int
    classification: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hfo_area", frozenset(self.hfo_area))
        object.__setattr__(self, "resection", frozenset(self.resection))
        label = classify_outcome(self.hfo_area, self.resection, self.ilae_class)
        if self.classification and self.classification != label:
            raise ValueError(f"{self.patient_id}: classification {self.classification} contradicts rule ({label})")
        object.__setattr__(self, "classification", label)


def _ratio(num: int, den: int) -> Fraction | None:
    return None if den == 0 else Fraction(100 * num, den)


def round_percent(x: Fraction | None) -> int | None:
    """Nearest integer, halves rounded up."""
    if x is None:
        return None
    return math.floor(x + Fraction(1, 2))


@dataclass(frozen=True)
class PredictionMetrics:
    """Exact percentages; ``None`` marks an undefined metric.

    A metric is undefined when its denominator is zero. Sensitivity and PPV
    are also undefined when no true positive exists, since a predictor that
    never produced a TP cannot be scored on the positive class.
    """

    specificity: Fraction | None
    sensitivity: Fraction | None
    npv: Fraction | None
    ppv: Fraction | None
    accuracy: Fraction | None
    counts: dict = field(default_factory=dict)

    def rounded(self) -> dict[str, int | None]:
        return {k: round_percent(getattr(self, k)) for k in METRIC_NAMES}

    def display(self) -> dict[str, str]:
        return {k: UNDEFINED if v is None else str(v) for k, v in self.rounded().items()}

    def to_dict(self) -> dict:
        out = {}
        for k in METRIC_NAMES:
            v = getattr(self, k)
            out[k] = None if v is None else {
                "percent": round_percent(v),
                "exact": f"{v.numerator}/{v.denominator}",
            }
        out["counts"] = dict(self.counts)
        return out


def compute_metrics(classifications: Iterable) -> PredictionMetrics:
    labels = [c.classification if isinstance(c, OutcomeRecord) else str(c) for c in classifications]
    if not labels:
        raise ValueError("compute_metrics needs at least one classification")
    bad = sorted(set(labels) - set(LABELS))
    if bad:
        raise ValueError(f"unknown classification labels {bad}")
    n = {k: labels.count(k) for k in LABELS}
    tn, tp, fn, fp = n["TN"], n["TP"], n["FN"], n["FP"]
    return PredictionMetrics(
        specificity=_ratio(tn, tn + fp),
        sensitivity=_ratio(tp, tp + fn) if tp else None,
        npv=_ratio(tn, tn + fn),
        ppv=_ratio(tp, tp + fp) if tp else None,
        accuracy=_ratio(tp + tn, len(labels)),
        counts=n,
    )


def metrics_markdown(columns: dict[str, PredictionMetrics]) -> str:
    """Metrics table with one column per method and '--' for undefined cells."""
    names = list(columns)
    lines = ["| Metric | " + " | ".join(names) + " |", "|---|" + "---|" * len(names)]
    for key in METRIC_NAMES:
        cells = [columns[c].display()[key] for c in names]
        lines.append(f"| {METRIC_LABELS[key]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# parameter sweep

SNIPPET_PAD_S = 0.025


@dataclass(frozen=True)
class AdmSetting:
    """One ADM grid point.

    ``threshold_uv`` fixes an input-referred threshold in µV; when it is None
    the threshold is ``scale`` times the channel baseline.
    """

    threshold_uv: float | None = None
    scale: float = 1.0
    refractory_s: float | None = None
    reset: str = "current"

    def label(self) -> str:
        if self.threshold_uv is not None:
            return f"threshold={self.threshold_uv:g}uV"
        return f"threshold={self.scale:g}x baseline"

    def to_dict(self) -> dict:
        return {"threshold_uv": self.threshold_uv, "scale": self.scale,
                "refractory_s": self.refractory_s, "reset": self.reset}


@dataclass(frozen=True)
class SweepResult:
    rank: int
    grid_index: int
    adm: AdmSetting
    network: object
    hits: int
    n_labeled: int
    false_hits: int
    n_control: int

    @property
    def hit_rate(self) -> float:
        return self.hits / self.n_labeled

    @property
    def false_rate(self) -> float:
        return self.false_hits / self.n_control if self.n_control else 0.0

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "grid_index": self.grid_index,
            "adm": self.adm.to_dict(),
            "network": self.network.to_dict(),
            "hits": self.hits,
            "n_labeled": self.n_labeled,
            "hit_rate": self.hit_rate,
            "false_hits": self.false_hits,
            "n_control": self.n_control,
            "false_rate": self.false_rate,
        }


def labeled_snippets(annotations, duration_s: float, pad_s: float = SNIPPET_PAD_S):
    return [(max(a.start_s - pad_s, 0.0), min(a.end_s + pad_s, duration_s)) for a in annotations]


def control_snippets(snippets, duration_s: float, seed: int = 0, guard_s: float = 0.1,
                     start_s: float = 1.0) -> list[tuple[float, float]]:
    """One event-free snippet per labeled snippet, same length, drawn
    deterministically away from every label (and from each other)."""
    rng = np.random.default_rng(seed)
    taken = [(a - guard_s, b + guard_s) for a, b in snippets]
    out = []
    for a, b in snippets:
        length = b - a
        for _ in range(1000):
            s = float(rng.uniform(start_s, duration_s - length))
            if all(s + length <= lo or s >= hi for lo, hi in taken):
                out.append((s, s + length))
                taken.append((s - guard_s, s + length + guard_s))
                break
        else:
            raise ValueError("recording too short to place event-free control snippets")
    return out


def sweep_parameters(recording, annotations, adm_grid: Sequence[AdmSetting], network_grid: Sequence,
                     pipeline_config=None, seed: int = 0) -> list[SweepResult]:
    """Score every (ADM, network) grid point on labeled and control snippets.

    Each labeled event becomes a snippet padded by 25 ms on both sides; the
    network is run on the input spikes inside each snippet from rest, and a
    snippet counts as a hit when at least one HFO event is detected in it.
    Results are ranked by hit rate (descending), then false rate
    (ascending); remaining ties keep grid order.
    """
    from . import pipeline
    from .snn import sample_network

    if not annotations:
        raise ValueError("sweep needs at least one labeled event")
    if not adm_grid or not network_grid:
        raise ValueError("sweep grid is empty")
    cfg = pipeline_config or pipeline.PipelineConfig()
    dur = recording.duration_s
    by_channel: dict[str, list] = {}
    for a in annotations:
        by_channel.setdefault(a.channel, []).append(a)
    snippets = {ch: labeled_snippets(anns, dur) for ch, anns in sorted(by_channel.items())}
    all_snips = [s for ch in snippets for s in snippets[ch]]
    controls_all = control_snippets(all_snips, dur, seed=seed)
    controls, k = {}, 0
    for ch in snippets:
        controls[ch] = controls_all[k:k + len(snippets[ch])]
        k += len(snippets[ch])

    scored = []
    grid = list(itertools.product(adm_grid, network_grid))
    streams_cache: dict[AdmSetting, dict] = {}
    for idx, (adm_setting, net_cfg) in enumerate(grid):
        if adm_setting not in streams_cache:
            streams_cache[adm_setting] = {
                ch: pipeline.encode_channel(recording.channel(ch), recording.sample_rate_hz,
                                            cfg, ch, adm_setting)[0]
                for ch in snippets
            }
        params = sample_network(net_cfg)
        hits = false_hits = 0
        for ch in snippets:
            streams = streams_cache[adm_setting][ch]
            for a, b in snippets[ch]:
                hits += bool(pipeline.detect_window(params, streams, a, b, cfg, ch))
            for a, b in controls[ch]:
                false_hits += bool(pipeline.detect_window(params, streams, a, b, cfg, ch))
        scored.append((idx, adm_setting, net_cfg, hits, false_hits))

    n_lab, n_ctl = len(all_snips), len(controls_all)
    scored.sort(key=lambda r: (-Fraction(r[3], n_lab), Fraction(r[4], n_ctl), r[0]))
    return [SweepResult(rank, idx, adm_s, net, h, n_lab, f, n_ctl)
            for rank, (idx, adm_s, net, h, f) in enumerate(scored, start=1)]
