"""Dense fixed-step reference simulator used to cross-check ``snn.simulate``.

The state (V, I_exc, I_inh) of each neuron is a linear system x' = M x.  It is
stepped on a regular grid with the matrix exponential of M, taken from a
numerical eigendecomposition (checked against scipy's expm), so none of the
event-driven closed forms are reused.  Input spikes and
refractory releases that fall inside a step split it into exact sub-steps.
The threshold is tested on the grid points and on those split points, and a
detected crossing is placed by linear interpolation between the samples
around it. Where the slope of V turns from rising to falling between two
samples and the peak could reach threshold, that bracket is re-sampled on a
fine sub-grid, so brief grazing crossings are not stepped over.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .snn import NetworkParams, OutputRaster, merge_inputs


class StepTooCoarseError(ValueError):
    pass


def _system_matrices(p: NetworkParams) -> np.ndarray:
    n = p.n_neurons
    m = np.zeros((n, 3, 3))
    m[:, 0, 0] = -1.0 / p.tau_m
    m[:, 0, 1] = 1.0
    m[:, 0, 2] = -1.0
    m[:, 1, 1] = -1.0 / p.tau_exc
    m[:, 2, 2] = -1.0 / p.tau_inh
    return m


class _Propagator:
    """exp(M h) for a batch of diagonalisable 3x3 systems."""

    def __init__(self, m: np.ndarray):
        lam, vec = np.linalg.eig(m)
        inv = np.linalg.inv(vec)
        self.lam = lam.real
        self.vec = vec.real
        self.inv = inv.real
        check = self(1e-3)
        if not np.allclose(check, expm(m * 1e-3), rtol=1e-9, atol=1e-12):
            raise ValueError("system matrix is too close to defective for the eigen propagator")

    def __call__(self, h: float) -> np.ndarray:
        return np.einsum("nij,nj,njk->nik", self.vec, np.exp(self.lam * h), self.inv)

    def series(self, x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        """States exp(M h) x for every h in ``offsets``; shape (len(offsets), n, 3)."""
        c = np.einsum("nij,nj->ni", self.inv, x)
        e = np.exp(offsets[:, None, None] * self.lam[None, :, :])
        return np.einsum("nij,knj->kni", self.vec, e * c[None])


_CHUNK = 512
_FINE = 256  # sub-samples per bracket when a grazing peak is suspected
_PEAK_MARGIN = 1e-3  # relative margin on the tangent peak estimate


def _slope(states: np.ndarray, tau_m: np.ndarray) -> np.ndarray:
    return -states[..., 0] / tau_m + states[..., 1] - states[..., 2]


def _graze_times(prop, states, times, v, dv, theta, live):
    """Sub-grid crossings missed by the samples.

    A bracket whose slope turns from rising to falling holds an interior
    maximum; if the tangent lines at both ends meet near threshold the
    bracket is re-sampled finely. Returns {(row, neuron): spike time}.
    """
    out = {}
    h = np.diff(times)
    rising, falling = dv[:-1] > 0, dv[1:] < 0
    below = (v[:-1] < theta) & (v[1:] < theta)
    cand = rising & falling & below & live
    if not cand.any():
        return out
    slope_gap = np.where(cand, dv[:-1] - dv[1:], 1.0)
    tau = (v[1:] - v[:-1] - dv[1:] * h[:, None]) / slope_gap
    peak = v[:-1] + dv[:-1] * np.clip(tau, 0.0, h[:, None])
    cand &= peak >= theta * (1 - _PEAK_MARGIN)
    for r, i in zip(*np.nonzero(cand)):
        fine = np.linspace(0.0, h[r], _FINE + 1)[1:]
        vf = prop.series(states[r], fine)[:, i, 0]
        up = np.flatnonzero(vf >= theta[i])
        if up.size:
            k = up[0]
            v0 = states[r][i, 0] if k == 0 else vf[k - 1]
            f0 = 0.0 if k == 0 else fine[k - 1]
            frac = (theta[i] - v0) / (vf[k] - v0) if vf[k] > v0 else 1.0
            out[(r + 1, i)] = times[r] + f0 + min(max(frac, 0.0), 1.0) * (fine[k] - f0)
    return out


def reference_simulate(params: NetworkParams, inputs, duration_s: float, dt: float = 1e-5) -> OutputRaster:
    if dt > params.tau_inh.min() / 10:
        raise StepTooCoarseError(f"dt={dt} exceeds tau_inh_min/10={params.tau_inh.min() / 10}")
    times, n_up, n_dn = merge_inputs(inputs, duration_s)
    n = params.n_neurons
    on = params.enabled
    prop = _Propagator(_system_matrices(params))
    refr = params.refractory_s
    w_exc, w_inh, theta = params.w_exc, params.w_inh, params.threshold
    tau_m = params.tau_m
    n_grid = int(np.ceil(duration_s / dt - 1e-9))

    x = np.zeros((n, 3))
    t_free = np.full(n, -np.inf)
    spikes: list[list[float]] = [[] for _ in range(n)]
    t = 0.0
    ev = 0
    while t < duration_s:
        # next point where the dynamics change: an input or a refractory release
        mark = duration_s
        if ev < times.size:
            mark = min(mark, times[ev])
        pending = t_free[t_free > t]
        if pending.size:
            mark = min(mark, pending.min())
        k0 = int(np.floor(t / dt + 1e-9)) + 1
        k1 = min(int(np.floor(mark / dt + 1e-9)), n_grid, k0 + _CHUNK - 1)
        truncated = k1 == k0 + _CHUNK - 1 and k1 * dt < mark
        sample = np.arange(k0, k1 + 1) * dt if k1 >= k0 else np.empty(0)
        sample = sample[sample > t]
        if not truncated and mark > t and (sample.size == 0 or mark > sample[-1]):
            # the mark itself is a sample, so V is also tested there
            sample = np.append(sample, mark)
        if sample.size:
            held = t_free > t
            live = on & ~held
            states = np.concatenate([x[None], prop.series(x, sample - t)])
            states[:, held, 0] = 0.0
            at = np.concatenate([[t], sample])
            v = states[:, :, 0]
            hit = live & (v >= theta)
            hit[0] = False
            grazes = _graze_times(prop, states, at, v, _slope(states, tau_m), theta, live)
            for (r, i) in grazes:
                hit[r, i] = True
            rows = np.flatnonzero(hit.any(axis=1))
            if rows.size:
                j = rows[0]
                x = states[j].copy()
                t = at[j]
                for i in np.flatnonzero(hit[j]):
                    if (j, i) in grazes:
                        t_sp = grazes[(j, i)]
                    else:
                        v0, v1 = v[j - 1, i], v[j, i]
                        frac = (theta[i] - v0) / (v1 - v0) if v1 > v0 else 1.0
                        t_sp = at[j - 1] + min(max(frac, 0.0), 1.0) * (t - at[j - 1])
                    if spikes[i] and t_sp <= spikes[i][-1]:
                        t_sp = t
                    spikes[i].append(t_sp)
                    t_free[i] = t_sp + refr
                    x[i, 0] = 0.0
                continue
            x = states[-1].copy()
            t = at[-1]
            if truncated:
                continue
        x[t_free >= t, 0] = 0.0
        while ev < times.size and times[ev] <= t:
            x[:, 1] += n_up[ev] * w_exc
            x[:, 2] += n_dn[ev] * w_inh
            ev += 1
    return OutputRaster(tuple(np.array(s) for s in spikes), float(duration_s), params.enabled)
