"""One test per acceptance criterion, each recording a PASS/FAIL line that is
printed in the terminal summary."""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import signal

from hfo_pipe import adm, analytics, cli, filters, pipeline, snn
from hfo_pipe.snn_reference import reference_simulate

from cohort import MORPHOLOGY_COLUMN, SNN_COLUMN, cohort_sets
from planted import count_detected, planted_pair
from test_filters import minus3db_edges

FS = 2000.0


def test_c1_metrics_reproduction(verdict):
    t0 = time.perf_counter()
    snn_col = analytics.compute_metrics(
        [analytics.classify_outcome(a, r, k) for _, a, r, k in cohort_sets()]).rounded()
    morph_col = analytics.compute_metrics(
        [analytics.classify_outcome(a, r, k) for _, a, r, k in cohort_sets(force_contained=("8",))]).rounded()
    dt = time.perf_counter() - t0
    ok = snn_col == SNN_COLUMN and morph_col == MORPHOLOGY_COLUMN and dt < 1.0
    verdict(1, ok, f"snn={snn_col} morphology={morph_col}", dt)
    assert ok


def _band_limited(rng, n):
    lo = rng.uniform(60, 300)
    hi = min(lo * rng.uniform(1.5, 3.0), 0.45 * FS)
    sos = signal.butter(4, [lo, hi], btype="bandpass", fs=FS, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n))
    return x * rng.uniform(5, 60) / x.std()


def test_c2_adm_reconstruction_bound(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    violations = 0
    worst = 0.0
    for _ in range(50):
        x = _band_limited(rng, int(rng.integers(1000, 6000)))
        gain = rng.uniform(1, 200)
        v_tu, v_td = rng.uniform(0.2, 10, 2) * gain
        cfg = adm.AdmConfig(v_tu, v_td, refractory_s=0.0, amplifier_gain=gain, reset="delta")
        up, dn = adm.encode(x, FS, cfg)
        stair = adm.decode(up, dn, cfg, len(x) / FS)
        err = np.abs(stair.at(np.arange(len(x)) / FS) - (x - x[0])).max()
        bound = max(v_tu, v_td) / gain
        worst = max(worst, err / bound)
        violations += err > bound * (1 + 1e-12)
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 10.0
    verdict(2, ok, f"violations={violations}/50 worst err/bound={worst:.4f}", dt)
    assert ok


def _oracle_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    cfg = snn.NetworkConfig(
        n_neurons=n, seed=seed, refractory_s=float(rng.uniform(0.0005, 0.003)),
        w_exc=float(rng.uniform(10, 60)), w_inh=float(rng.uniform(0, 60)),
    )
    dur = 0.1
    streams = [np.sort(rng.uniform(0, dur, rng.poisson(r * dur))) for r in rng.uniform(200, 1500, 4)]
    return snn.sample_network(cfg), streams, dur


def test_c3_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    count_mismatch = 0
    worst = 0.0
    total = 0
    for seed in range(100):
        p, streams, dur = _oracle_instance(1000 + seed)
        a = snn.simulate(p, streams, dur)
        b = reference_simulate(p, streams, dur, dt=1e-5)
        if not np.array_equal(a.counts(), b.counts()):
            count_mismatch += 1
            continue
        for x, y in zip(a.spike_times, b.spike_times):
            total += x.size
            if x.size:
                worst = max(worst, float(np.abs(x - y).max()))
    dt = time.perf_counter() - t0
    ok = count_mismatch == 0 and worst <= 20e-6 and dt < 60.0
    verdict(3, ok, f"count mismatches={count_mismatch}/100 spikes={total} max|dt|={worst * 1e6:.2f} us", dt)
    assert ok


def test_c4_filter_edges(verdict):
    t0 = time.perf_counter()
    got = {}
    ok = True
    for band, edges in ((filters.RIPPLE_BAND, (80.0, 250.0)), (filters.FAST_RIPPLE_BAND, (250.0, 500.0))):
        lo, hi = minus3db_edges(filters.design_bandpass(band, FS), FS)
        got[band.name] = (round(lo, 4), round(hi, 4))
        ok &= abs(lo - edges[0]) <= 0.05 * edges[0] and abs(hi - edges[1]) <= 0.05 * edges[1]
    dt = time.perf_counter() - t0
    ok = ok and dt < 1.0
    verdict(4, ok, f"-3 dB edges {got}", dt)
    assert ok


def _window_maxima_fixture():
    n = int(FS * 0.05)
    x = np.zeros(int(FS * 1.0))
    for k, m in enumerate(np.random.default_rng(0).permutation(np.arange(1.0, 21.0))):
        x[k * n + n // 2] = m if k % 2 else -m
    return x


def test_c5_baseline(verdict):
    t0 = time.perf_counter()
    exact = adm.compute_baseline(_window_maxima_fixture(), FS)
    # three floors of independent band-limited noise, as in a low / medium / high noise trio
    floors = np.array([5.0, 8.0, 13.0])
    rng = np.random.default_rng(0)
    sos = signal.butter(4, [80, 500], btype="bandpass", fs=FS, output="sos")
    base = []
    for f in floors:
        x = signal.sosfilt(sos, rng.standard_normal(int(10 * FS)))
        base.append(adm.compute_baseline(x * f / x.std(), FS))
    base = np.array(base)
    ratio = base / floors
    spread = float(np.abs(ratio / np.median(ratio) - 1).max())
    dt = time.perf_counter() - t0
    ok = exact == 3.0 and bool(np.all(np.diff(base) > 0)) and spread <= 0.15
    verdict(5, ok, f"fixture baseline={exact} floors->baselines {np.round(base, 3).tolist()} "
                   f"ratio spread={spread:.3f}", dt)
    assert ok


def test_c6_end_to_end_detection(verdict):
    t0 = time.perf_counter()
    noise, rec, ann = planted_pair(seed=0)
    cfg = pipeline.PipelineConfig()
    params = pipeline.calibrate(pipeline.build_network(cfg), [noise], cfg)
    noise_events = pipeline.run_recording(params, noise, cfg)[0].events
    events = pipeline.run_recording(params, rec, cfg)[0].events
    hits = count_detected(ann, events)
    dt = time.perf_counter() - t0
    ok = hits >= 9 and len(noise_events) == 0 and dt < 120.0
    verdict(6, ok, f"planted detected={hits}/{len(ann)} noise events={len(noise_events)} "
                   f"disabled={int((~params.enabled).sum())}", dt)
    assert ok


def test_c7_mismatch_sampling(verdict):
    t0 = time.perf_counter()
    p = snn.sample_network(snn.NetworkConfig())
    mean = float(p.tau_m.mean())
    cv = float(p.tau_m.std(ddof=1) / mean)
    exc_ok = bool(np.all((p.tau_exc >= 0.003) & (p.tau_exc <= 0.006)))
    inh_ok = bool(np.all((p.tau_inh >= 0.0001) & (p.tau_inh <= 0.001)))
    dt = time.perf_counter() - t0
    ok = abs(mean - 0.015) <= 0.001 and 0.15 <= cv <= 0.25 and exc_ok and inh_ok
    verdict(7, ok, f"tau_m mean={mean * 1e3:.3f} ms cv={cv:.3f} tau_exc in range={exc_ok} "
                   f"tau_inh in range={inh_ok}", dt)
    assert ok


def test_c8_test_retest_bounds(verdict):
    t0 = time.perf_counter()
    chans = ("a", "b", "c", "d")
    v = analytics.HfoVector(chans, (4.0, 1.0, 0.0, 2.5), "1")
    same = analytics.test_retest([v, v]).score
    disjoint = analytics.test_retest([analytics.HfoVector(chans, (1.0, 2.0, 0.0, 0.0)),
                                      analytics.HfoVector(chans, (0.0, 0.0, 3.0, 1.0))]).score
    # multi-interval synthetic runs through the full pipeline
    from hfo_pipe import signal_io as sio
    cfg = pipeline.PipelineConfig()
    params = pipeline.build_network(cfg)
    scores = []
    for run in range(3):
        vecs = []
        for iv in range(3):
            evs = tuple(sio.SynthEvent(0.5 + 0.7 * k, "ripple", 160.0, 30.0, 0.08, channel="a")
                        for k in range(run + iv + 1))
            rec, _ = sio.synthesize_ieeg(sio.SynthSpec(4.0, [5.0, 6.0, 7.0], evs, seed=10 * run + iv,
                                                       channels=("a", "b", "c")))
            res = pipeline.run_recording(params, rec, cfg)
            vecs.append(analytics.HfoVector(rec.channels, [analytics.hfo_rate(r.events, rec.duration_s)
                                                           for r in res], str(iv)))
        scores.append(analytics.test_retest(vecs).score)
    dt = time.perf_counter() - t0
    ok = same == 1.0 and disjoint == 0.0 and all(0.0 <= s <= 1.0 for s in scores)
    verdict(8, ok, f"duplicate={same} disjoint={disjoint} pipeline scores={[round(s, 4) for s in scores]}", dt)
    assert ok


def test_c9_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    spec = {"recordings": [
        {"duration_s": 5, "noise_floor_uv": [5, 9], "channels": ["X1", "X2"], "patient_id": "D",
         "interval_id": str(i), "seed": 20 + i,
         "events": [{"time_s": 1.5 + i, "band": "both", "burst_frequency_hz": 170, "amplitude_uv": 30,
                     "channel": "X1"}]} for i in (1, 2)]}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert cli.main(["synth", str(tmp_path / "spec.json"), "--out", str(tmp_path)]) == 0
    (tmp_path / "run.json").write_text(json.dumps({"inputs": ["D_1.csv", "D_2.csv"], "seed": 5}))
    trees = []
    for name in ("r1", "r2"):
        assert cli.main(["detect", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / name)]) == 0
        root = tmp_path / name
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    dt = time.perf_counter() - t0
    ok = trees[0] == trees[1] and "patients/D.json" in trees[0]
    verdict(9, ok, f"{len(trees[0])} output files byte-identical={trees[0] == trees[1]}", dt)
    assert ok


@pytest.mark.skip(reason="needs the external clinical dataset, which is not bundled")
def test_c10_dataset_patient1():
    pass
