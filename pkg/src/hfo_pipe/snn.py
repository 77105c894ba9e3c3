"""Event-driven simulation of the two-layer HFO detection network.

Four input streams (ripple UP/DN, fast-ripple UP/DN) drive every output
neuron: UP spikes land on a shared excitatory synapse, DN spikes on a shared
inhibitory one.  Each synapse is a first-order current that jumps by its
weight on a spike and decays with its own time constant; the membrane is a
leaky integrator

    dV/dt = -V / tau_m + I_exc - I_inh

so between input events the state has a closed form.  Threshold crossings
inside an inter-event interval are found exactly: the extrema of V are
bracketed analytically and the first upward crossing is bisected.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

DEFAULT_N_NEURONS = 256
DEFAULT_TAU_M_S = 0.015
DEFAULT_TAU_M_CV = 0.20
DEFAULT_TAU_EXC_RANGE_S = (0.003, 0.006)
DEFAULT_TAU_INH_RANGE_S = (0.0001, 0.001)
DEFAULT_V_THRESHOLD = 1.0
DEFAULT_NEURON_REFRACTORY_S = 0.001
DEFAULT_OUTLIER_RATE_HZ = 2.0
TAU_M_FLOOR_S = 0.001

# Weight anchor: an UP burst of this many spikes at this rate, seen by a
# neuron with median time constants, just reaches threshold.
ANCHOR_BURST_SPIKES = 20
ANCHOR_BURST_RATE_HZ = 1000.0

STREAMS = ("R_UP", "R_DN", "FR_UP", "FR_DN")


class UnsortedInputError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    n_neurons: int = DEFAULT_N_NEURONS
    tau_m_mean_s: float = DEFAULT_TAU_M_S
    tau_m_cv: float = DEFAULT_TAU_M_CV
    tau_exc_range_s: tuple[float, float] = DEFAULT_TAU_EXC_RANGE_S
    tau_inh_range_s: tuple[float, float] = DEFAULT_TAU_INH_RANGE_S
    w_exc: float | None = None  # None: anchored default
    w_inh: float | None = None  # None: equal to w_exc
    v_threshold: float = DEFAULT_V_THRESHOLD
    refractory_s: float = DEFAULT_NEURON_REFRACTORY_S
    seed: int = 0

    def __post_init__(self):
        if self.n_neurons < 1:
            raise ValueError("n_neurons must be >= 1")
        if not 0 <= self.tau_m_cv < 1:
            raise ValueError("tau_m_cv must lie in [0, 1)")
        if not self.tau_m_mean_s > 0:
            raise ValueError("tau_m_mean_s must be positive")
        for name in ("tau_exc_range_s", "tau_inh_range_s"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be a positive, non-empty range")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not self.v_threshold > 0:
            raise ValueError("v_threshold must be positive")
        if self.refractory_s < 0:
            raise ValueError("refractory_s must be non-negative")
        for name in ("w_exc", "w_inh"):
            w = getattr(self, name)
            if w is not None and w < 0:
                raise ValueError(f"{name} must be non-negative")

    def resolved_weights(self) -> tuple[float, float]:
        w_exc = self.w_exc
        if w_exc is None:
            w_exc = anchored_weight(
                self.tau_m_mean_s,
                0.5 * sum(self.tau_exc_range_s),
                self.v_threshold,
            )
        w_inh = w_exc if self.w_inh is None else self.w_inh
        return float(w_exc), float(w_inh)

    def to_dict(self) -> dict:
        w_exc, w_inh = self.resolved_weights()
        return {
            "n_neurons": self.n_neurons,
            "tau_m_mean_s": self.tau_m_mean_s,
            "tau_m_cv": self.tau_m_cv,
            "tau_exc_range_s": list(self.tau_exc_range_s),
            "tau_inh_range_s": list(self.tau_inh_range_s),
            "w_exc": w_exc,
            "w_inh": w_inh,
            "v_threshold": self.v_threshold,
            "refractory_s": self.refractory_s,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        for key in ("tau_exc_range_s", "tau_inh_range_s"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkParams:
    tau_m: np.ndarray
    tau_exc: np.ndarray
    tau_inh: np.ndarray
    threshold: np.ndarray
    w_exc: np.ndarray
    w_inh: np.ndarray
    enabled: np.ndarray
    refractory_s: float = DEFAULT_NEURON_REFRACTORY_S
    seed: int | None = None

    def __post_init__(self):
        n = np.asarray(self.tau_m).size
        for name in ("tau_m", "tau_exc", "tau_inh", "threshold", "w_exc", "w_inh"):
            arr = _readonly(np.broadcast_to(getattr(self, name), (n,)))
            object.__setattr__(self, name, arr)
        en = np.array(np.broadcast_to(self.enabled, (n,)), dtype=bool)
        en.setflags(write=False)
        object.__setattr__(self, "enabled", en)
        if np.any(self.tau_m <= 0) or np.any(self.tau_exc <= 0) or np.any(self.tau_inh <= 0):
            raise ValueError("time constants must be positive")
        if np.any(self.threshold <= 0):
            raise ValueError("thresholds must be positive")

    @property
    def n_neurons(self) -> int:
        return self.tau_m.size

    def take(self, index) -> "NetworkParams":
        """Sub-network (or permutation) of the given neuron indices."""
        index = np.asarray(index)
        return replace(
            self,
            tau_m=self.tau_m[index], tau_exc=self.tau_exc[index], tau_inh=self.tau_inh[index],
            threshold=self.threshold[index], w_exc=self.w_exc[index], w_inh=self.w_inh[index],
            enabled=self.enabled[index],
        )

    def with_enabled(self, enabled) -> "NetworkParams":
        return replace(self, enabled=np.asarray(enabled, dtype=bool))


@dataclass(frozen=True)
class OutputRaster:
    spike_times: tuple[np.ndarray, ...]
    duration_s: float
    enabled: np.ndarray = field(default=None)

    def __post_init__(self):
        trains = tuple(_readonly(t) for t in self.spike_times)
        for t in trains:
            if t.size and (t[0] < 0 or t[-1] > self.duration_s + 1e-12):
                raise ValueError("spike time outside [0, duration]")
            if t.size > 1 and not np.all(np.diff(t) > 0):
                raise ValueError("per-neuron spike times must be strictly increasing")
        object.__setattr__(self, "spike_times", trains)
        en = np.ones(len(trains), dtype=bool) if self.enabled is None else np.array(self.enabled, dtype=bool)
        en.setflags(write=False)
        object.__setattr__(self, "enabled", en)

    @property
    def n_neurons(self) -> int:
        return len(self.spike_times)

    def counts(self) -> np.ndarray:
        return np.array([t.size for t in self.spike_times], dtype=int)

    def total_spikes(self) -> int:
        return int(self.counts().sum())

    def rates_hz(self) -> np.ndarray:
        return self.counts() / self.duration_s

    def pooled(self) -> np.ndarray:
        """All enabled neurons' spikes in one sorted array."""
        parts = [t for t, on in zip(self.spike_times, self.enabled) if on]
        if not parts:
            return np.empty(0)
        return np.sort(np.concatenate(parts), kind="stable")

    def take(self, index) -> "OutputRaster":
        index = np.asarray(index)
        return OutputRaster(tuple(self.spike_times[i] for i in index), self.duration_s, self.enabled[index])

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["neuron_id", "time_s"])
            for nid, times in enumerate(self.spike_times):
                for t in times:
                    w.writerow([nid, repr(float(t))])

    @classmethod
    def load_csv(cls, path, n_neurons: int, duration_s: float) -> "OutputRaster":
        per = [[] for _ in range(n_neurons)]
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                per[int(row["neuron_id"])].append(float(row["time_s"]))
        return cls(tuple(np.array(sorted(p)) for p in per), duration_s)


# --------------------------------------------------------------------------
# parameter sampling

def single_spike_peak(w: float, tau_m: float, tau_s: float) -> float:
    """Peak membrane excursion after one synaptic spike of weight w."""
    if math.isclose(tau_m, tau_s, rel_tol=1e-12):
        return w * tau_m / math.e
    ratio = tau_s / tau_m
    k = tau_m * tau_s / (tau_m - tau_s)
    return w * k * (ratio ** (tau_s / (tau_m - tau_s)) - ratio ** (tau_m / (tau_m - tau_s)))


@lru_cache(maxsize=64)
def anchored_weight(tau_m: float, tau_exc: float, v_threshold: float = 1.0,
                    n_spikes: int = ANCHOR_BURST_SPIKES, rate_hz: float = ANCHOR_BURST_RATE_HZ) -> float:
    """Excitatory weight at which a regular UP burst just reaches threshold."""
    times = np.arange(n_spikes) / rate_hz
    t_end = times[-1] + 10 * max(tau_m, tau_exc)
    t = np.linspace(0.0, t_end, 200_001)
    v = np.zeros_like(t)
    for ts in times:
        dt = t - ts
        on = dt >= 0
        v[on] += _kernel(dt[on], tau_m, tau_exc)
    i = int(np.argmax(v))
    # refine the discrete maximum with a few golden-section steps
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, t.size - 1)]

    def unit_v(x):
        d = x - times
        d = d[d >= 0]
        return float(np.sum(_kernel(d, tau_m, tau_exc)))

    g = (math.sqrt(5) - 1) / 2
    for _ in range(60):
        a, b = hi - g * (hi - lo), lo + g * (hi - lo)
        if unit_v(a) < unit_v(b):
            lo = a
        else:
            hi = b
    peak = unit_v(0.5 * (lo + hi))
    # a hair above the exact value so the anchor burst does cross
    return v_threshold / peak * (1.0 + 1e-9)


def _kernel(dt, tau_m, tau_s):
    if math.isclose(tau_m, tau_s, rel_tol=1e-12):
        return dt * np.exp(-dt / tau_m)
    return tau_m * tau_s / (tau_m - tau_s) * (np.exp(-dt / tau_m) - np.exp(-dt / tau_s))


def sample_network(config: NetworkConfig) -> NetworkParams:
    """Draw per-neuron time constants deterministically from ``config.seed``.

    tau_m is normal (mean, cv*mean) truncated at +/-3 sigma by redrawing, then
    floored at 1 ms; synaptic time constants are uniform over their ranges.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_neurons
    mean, sigma = config.tau_m_mean_s, config.tau_m_cv * config.tau_m_mean_s
    tau_m = rng.normal(mean, sigma, n)
    if sigma > 0:
        bad = np.abs(tau_m - mean) > 3 * sigma
        while bad.any():
            tau_m[bad] = rng.normal(mean, sigma, int(bad.sum()))
            bad = np.abs(tau_m - mean) > 3 * sigma
    tau_m = np.maximum(tau_m, TAU_M_FLOOR_S)
    tau_exc = rng.uniform(*config.tau_exc_range_s, n)
    tau_inh = rng.uniform(*config.tau_inh_range_s, n)
    w_exc, w_inh = config.resolved_weights()
    return NetworkParams(
        tau_m=tau_m,
        tau_exc=tau_exc,
        tau_inh=tau_inh,
        threshold=np.full(n, config.v_threshold),
        w_exc=np.full(n, w_exc),
        w_inh=np.full(n, w_inh),
        enabled=np.ones(n, dtype=bool),
        refractory_s=config.refractory_s,
        seed=config.seed,
    )


def disable_outliers(params: NetworkParams, calibration_raster: OutputRaster,
                     max_rate_hz: float = DEFAULT_OUTLIER_RATE_HZ) -> NetworkParams:
    """Switch off neurons firing above ``max_rate_hz`` on HFO-free input."""
    if calibration_raster.n_neurons != params.n_neurons:
        raise ValueError("calibration raster does not match the network size")
    noisy = calibration_raster.rates_hz() > max_rate_hz
    return params.with_enabled(params.enabled & ~noisy)


# --------------------------------------------------------------------------
# input handling

def merge_inputs(inputs: Sequence, duration_s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (event times, UP count, DN count) with coincident spikes merged.

    ``inputs`` is (R_UP, R_DN, FR_UP, FR_DN) as SpikeTrains or arrays, or a
    mapping keyed by those names.
    """
    if isinstance(inputs, dict):
        inputs = [inputs.get(k, ()) for k in STREAMS]
    if len(inputs) != 4:
        raise ValueError("expected four input streams (R_UP, R_DN, FR_UP, FR_DN)")
    arrays = []
    for name, stream in zip(STREAMS, inputs):
        t = np.asarray(getattr(stream, "times_s", stream), dtype=float).reshape(-1)
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise UnsortedInputError(f"input stream {name} is not sorted")
        if t.size and t[0] < 0:
            raise ValueError(f"input stream {name} has negative times")
        arrays.append(t[t <= duration_s])
    up = np.concatenate([arrays[0], arrays[2]])
    dn = np.concatenate([arrays[1], arrays[3]])
    times, inverse = np.unique(np.concatenate([up, dn]), return_inverse=True)
    n_up = np.bincount(inverse[: up.size], minlength=times.size)
    n_dn = np.bincount(inverse[up.size:], minlength=times.size)
    return times, n_up, n_dn


# --------------------------------------------------------------------------
# closed-form propagation

def _phi(t, rate):
    """(1 - exp(-rate t)) / rate, accurate for small rates via expm1."""
    return -np.expm1(-rate * t) / rate


class _Neurons:
    """Per-neuron constants in the forms the propagator needs."""

    def __init__(self, p: NetworkParams):
        self.tm = p.tau_m
        self.te = p.tau_exc
        self.ti = p.tau_inh
        # an exactly zero rate would give 0/0 in _phi; the limit is phi = t
        self.de = _nonzero(1.0 / p.tau_exc - 1.0 / p.tau_m)
        self.di = _nonzero(1.0 / p.tau_inh - 1.0 / p.tau_m)
        self.theta = p.threshold
        self.peak_exc = np.array([single_spike_peak(1.0, m, e) for m, e in zip(p.tau_m, p.tau_exc)])
        # time of the unit excitatory kernel's peak
        with np.errstate(divide="ignore", invalid="ignore"):
            t_pk = np.log(p.tau_m / p.tau_exc) / (1.0 / p.tau_exc - 1.0 / p.tau_m)
        self.t_peak = np.where(np.isfinite(t_pk), t_pk, p.tau_m)


def _nonzero(rate: np.ndarray) -> np.ndarray:
    return np.where(rate == 0.0, 1e-300, rate)


def _v_at(t, v0, ie, ii, tm, de, di):
    return np.exp(-t / tm) * (v0 + ie * _phi(t, de) - ii * _phi(t, di))


def _dv_at(t, v0, ie, ii, tm, te, ti, de, di):
    return -_v_at(t, v0, ie, ii, tm, de, di) / tm + ie * np.exp(-t / te) - ii * np.exp(-t / ti)


def _exc_kernel(t, tm, de):
    # unit excitatory contribution to V after time t
    return np.exp(-t / tm) * _phi(t, de)


def _bisect(f, lo, hi, tol, rising=True):
    """Vectorised bisection keeping f(lo) < 0 <= f(hi) (or the mirror for
    ``rising=False``); returns hi."""
    lo = lo.copy()
    hi = hi.copy()
    while True:
        width = hi - lo
        if width.size == 0 or np.max(width) <= tol:
            return hi
        mid = lo + 0.5 * width
        val = f(mid)
        up = val >= 0 if rising else val <= 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)


def first_crossing(h, v0, ie, ii, tm, te, ti, de, di, theta, peak_exc, t_peak, tol):
    """Time of the first upward crossing of theta within (0, h]; NaN if none.

    V' e^{t/tau_m} has at most one turning point (tau_inh < tau_exc), so V'
    has at most two zeros; they split (0, h] into pieces on which V is
    monotone, and the first piece ending at or above theta holds the crossing.
    """
    out = np.full(h.shape, np.nan)
    # V <= max(V0, 0) + I_exc(0) * max_{[0,h]} kernel; the kernel rises until t_peak
    cand = np.maximum(v0, 0.0) + ie * peak_exc >= theta
    if not cand.any():
        return out
    idx = np.flatnonzero(cand)
    hc = h[idx]
    early = hc < t_peak[idx]
    if early.any():
        kmax = np.where(early, _exc_kernel(np.minimum(hc, t_peak[idx]), tm[idx], de[idx]), peak_exc[idx])
        idx = idx[np.maximum(v0[idx], 0.0) + ie[idx] * kmax >= theta[idx]]
        if idx.size == 0:
            return out
    h, v0, ie, ii = h[idx], v0[idx], ie[idx], ii[idx]
    tm, te, ti, de, di, theta = tm[idx], te[idx], ti[idx], de[idx], di[idx], theta[idx]

    def dv(t, sel=slice(None)):
        return _dv_at(t, v0[sel], ie[sel], ii[sel], tm[sel], te[sel], ti[sel], de[sel], di[sel])

    # turning point of V' e^{t/tau_m}
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (ii * te) / (ie * ti)
        tg = np.log(ratio) / (1.0 / ti - 1.0 / te)
    tg = np.where(np.isfinite(tg) & (tg > 0), np.minimum(tg, h), 0.0)

    zero = np.zeros_like(h)
    roots = []
    for lo, hi in ((zero, tg), (tg, h)):
        a, b = dv(lo), dv(hi)
        change = (np.sign(a) != np.sign(b)) & (hi > lo) & (a != 0)
        r = np.full(h.shape, np.nan)
        if change.any():
            sel = np.flatnonzero(change)
            rising = b[sel] > 0
            for flag in (True, False):
                s = sel[rising == flag]
                if s.size == 0:
                    continue
                r[s] = _bisect(lambda t, s=s: dv(t, s), lo[s], hi[s], tol, rising=flag)
        roots.append(r)

    pts = np.stack([zero, roots[0], roots[1], h], axis=1)
    pts = np.where(np.isnan(pts), h[:, None], pts)
    pts.sort(axis=1)
    vals = _v_at(pts, v0[:, None], ie[:, None], ii[:, None], tm[:, None], de[:, None], di[:, None])
    above = vals >= theta[:, None]
    above[:, 0] = False  # V(0) < theta by construction
    hit = above.any(axis=1)
    if not hit.any():
        return out
    k = np.argmax(above, axis=1)
    sel = np.flatnonzero(hit)
    lo = pts[sel, k[sel] - 1]
    hi = pts[sel, k[sel]]

    def excess(t):
        return _v_at(t, v0[sel], ie[sel], ii[sel], tm[sel], de[sel], di[sel]) - theta[sel]

    t_cross = _bisect(excess, lo, hi, tol)
    res = np.full(h.shape, np.nan)
    res[sel] = t_cross
    out[idx] = res
    return out


def simulate(params: NetworkParams, inputs, duration_s: float, crossing_tol_s: float = 1e-8) -> OutputRaster:
    """Exact event-driven simulation; spike times are located within
    ``crossing_tol_s`` (reported at or just after the true crossing)."""
    times, n_up, n_dn = merge_inputs(inputs, duration_s)
    nrn = _Neurons(params)
    n = params.n_neurons
    active = np.flatnonzero(params.enabled)
    v = np.zeros(n)
    ie = np.zeros(n)
    ii = np.zeros(n)
    t_free = np.full(n, -np.inf)
    spikes: list[list[float]] = [[] for _ in range(n)]
    refr = params.refractory_s
    w_exc, w_inh = params.w_exc, params.w_inh

    def advance(t0: float, t1: float):
        if t1 <= t0 or active.size == 0:
            return
        pend = active
        s = np.full(pend.size, t0)
        while pend.size:
            # refractory neurons sit at V = 0 until released
            tf = t_free[pend]
            held = tf > s
            if held.any():
                stay = held & (tf >= t1)
                go = held & ~stay
                dt_hold = np.where(stay, t1, np.where(go, tf, s)) - s
                ie[pend] *= np.exp(-dt_hold / nrn.te[pend])
                ii[pend] *= np.exp(-dt_hold / nrn.ti[pend])
                v[pend[held]] = 0.0
                s = np.where(go, tf, s)
                if stay.any():
                    pend, s = pend[~stay], s[~stay]
                    if pend.size == 0:
                        return
            h = t1 - s
            p = pend
            tc = first_crossing(h, v[p], ie[p], ii[p], nrn.tm[p], nrn.te[p], nrn.ti[p],
                                nrn.de[p], nrn.di[p], nrn.theta[p], nrn.peak_exc[p], nrn.t_peak[p],
                                crossing_tol_s)
            fired = ~np.isnan(tc)
            step = np.where(fired, tc, h)
            v[p] = np.where(fired, 0.0, _v_at(step, v[p], ie[p], ii[p], nrn.tm[p], nrn.de[p], nrn.di[p]))
            ie[p] *= np.exp(-step / nrn.te[p])
            ii[p] *= np.exp(-step / nrn.ti[p])
            if not fired.any():
                return
            for j in np.flatnonzero(fired):
                t_sp = s[j] + tc[j]
                spikes[p[j]].append(t_sp)
                t_free[p[j]] = t_sp + refr
            pend = p[fired]
            s = s[fired] + tc[fired]

    t_prev = 0.0
    for t, nu, nd in zip(times.tolist(), n_up.tolist(), n_dn.tolist()):
        advance(t_prev, t)
        if nu:
            ie[active] += nu * w_exc[active]
        if nd:
            ii[active] += nd * w_inh[active]
        t_prev = t
    advance(t_prev, duration_s)
    return OutputRaster(tuple(np.array(s) for s in spikes), float(duration_s), params.enabled)


def raster_from_times(per_neuron: Sequence[Sequence[float]], duration_s: float) -> OutputRaster:
    return OutputRaster(tuple(np.asarray(t, dtype=float) for t in per_neuron), duration_s)
