"""Noise PSD estimation and matched-filter reconstruction."""

import dataclasses

import numpy as np
import pytest

from mutag.config import paper_defaults
from mutag.daq import noise_block, run_daq, sampled_template, template_peak_index
from mutag.pulses import (MatchedFilter, estimate_noise_psd, matched_filter,
                          process_records, select_pulses)
from mutag.recordio import PULSE_DTYPE, WaveformRecord
from mutag.transport import EVENT_DTYPE

FS = 1e5
NREC = 2400


def _noise_records(n, seed=100, rms=1.0):
    rng = np.random.default_rng(seed)
    return [WaveformRecord(FS, -1, k, 0, rms * rng.normal(size=(3, NREC)))
            for k in range(n)]


@pytest.fixture(scope="module")
def cfg():
    return paper_defaults()


@pytest.fixture(scope="module")
def psd():
    return estimate_noise_psd(_noise_records(64))


@pytest.fixture(scope="module")
def template(cfg):
    t = np.zeros(NREC)
    t[:cfg.daq.template_samples] = sampled_template(cfg.daq)
    return t


def test_psd_white_level(psd):
    # one-sided white PSD is 2 sigma^2 / fs
    assert psd.n_records_used == 64
    assert psd.psd[2:].mean() == pytest.approx(2.0 / FS, rel=0.02)
    assert psd.freqs_hz[-1] == pytest.approx(FS / 2.0)


def test_psd_needs_enough_records():
    with pytest.raises(ValueError, match="noise records"):
        estimate_noise_psd(_noise_records(12), min_records=20)


def test_psd_rejects_mixed_grids():
    recs = _noise_records(25)
    recs.append(WaveformRecord(2e5, -1, 99, 0, np.zeros((3, NREC))))
    with pytest.raises(ValueError):
        estimate_noise_psd(recs)


def test_psd_vetoes_contaminated_records(template):
    recs = _noise_records(40)
    dirty = _noise_records(4, seed=7)
    for r in dirty:
        r.data[1] += 60.0 * np.roll(template, 500)
    out = estimate_noise_psd(recs + dirty)
    assert out.n_records_used == 40
    clean = estimate_noise_psd(recs)
    np.testing.assert_allclose(out.psd, clean.psd)


def test_amplitude_unbiased_at_20_sigma(cfg, psd, template):
    mf = MatchedFilter(cfg.daq, psd)
    amp_true = 20.0 * float(mf.resolution[0])
    rng = np.random.default_rng(101)
    est = []
    for _ in range(200):
        data = rng.normal(size=(3, NREC))
        data[0] += amp_true * np.roll(template, 900)
        est.append(mf.reconstruct(data, 0)[0])
    assert np.mean(est) == pytest.approx(amp_true, rel=5e-3)


def test_noiseless_linearity(cfg, psd, template):
    mf = MatchedFilter(cfg.daq, psd)
    amps = []
    for a in (1.0, 1000.0):
        data = np.zeros((3, NREC))
        data[2] = a * np.roll(template, 700)
        amp, peak_us, _ = mf.reconstruct(data, 2)
        amps.append(amp)
        assert peak_us == pytest.approx((700 + template_peak_index(cfg.daq)) / FS * 1e6)
    assert amps[0] == pytest.approx(1.0, rel=1e-6)
    assert amps[1] / amps[0] == pytest.approx(1000.0, rel=1e-9)


def test_shift_covariance(cfg, psd, template):
    # cyclically shifting the record shifts the peak time and nothing else
    mf = MatchedFilter(cfg.daq, psd)
    rng = np.random.default_rng(102)
    data = rng.normal(size=(3, NREC))
    data[1] += 30.0 * np.roll(template, 600)
    a0, t0, _ = mf.reconstruct(data, 1)
    shifted = np.roll(data, 250, axis=1)
    a1, t1, _ = mf.reconstruct(shifted, 1)
    assert a1 == pytest.approx(a0, rel=1e-12)
    assert t1 - t0 == pytest.approx(250 / FS * 1e6, abs=1e-9)


def test_resolution_formula(cfg, psd, template):
    # fixed-lag estimator variance matches 1/sqrt(denominator), and the
    # simple white-noise oracle sigma^2 / sum((s - mean s)^2)
    mf = MatchedFilter(cfg.daq, psd)
    oracle = 1.0 / np.sqrt(np.sum((template - template.mean()) ** 2))
    assert float(mf.resolution[0]) == pytest.approx(oracle, rel=0.05)
    rng = np.random.default_rng(103)
    lag = 800 + template_peak_index(cfg.daq)
    est = [mf.trace(rng.normal(size=(3, NREC)))[0][lag] for _ in range(400)]
    assert np.std(est) == pytest.approx(float(mf.resolution[0]), rel=0.10)


def test_baseline_rms_matches_resolution(cfg, psd):
    mf = MatchedFilter(cfg.daq, psd)
    rng = np.random.default_rng(104)
    rms = [mf.reconstruct(rng.normal(size=(3, NREC)), 0)[2] for _ in range(50)]
    assert np.mean(rms) == pytest.approx(float(mf.resolution[0]), rel=0.10)


def test_baseline_rms_robust_to_pileup(cfg, psd, template):
    # a second pulse in the baseline region lifts the robust RMS only by
    # the filter's broad ~3% response tail, never by its full peak, so
    # the 5 sigma selection keeps resolving both pulses
    mf = MatchedFilter(cfg.daq, psd)
    rng = np.random.default_rng(105)
    data = rng.normal(size=(3, NREC))
    data[0] += 40.0 * np.roll(template, 600) + 40.0 * np.roll(template, 1800)
    _, _, rms = mf.reconstruct(data, 0)
    assert rms < 0.05 * 40.0
    assert 40.0 > 5.0 * rms


def test_matched_filter_one_shot(cfg, psd, template):
    rec = WaveformRecord(FS, 0, 2, 0, 25.0 * np.roll(template, 650) * np.ones((3, 1)))
    amp, peak_us, _ = matched_filter(rec, cfg.daq, psd, 0)
    assert amp == pytest.approx(25.0, rel=1e-6)


def test_select_pulses_threshold():
    pulses = np.zeros(3, dtype=PULSE_DTYPE)
    pulses["amplitude"] = [4.9, 5.1, 20.0]
    pulses["baseline_rms"] = 1.0
    kept = select_pulses(pulses, threshold_sigma=5.0)
    assert kept["amplitude"].tolist() == [5.1, 20.0]


def test_noise_survival(cfg, psd):
    # noise-only records passing the 5 sigma selection must be rare
    mf = MatchedFilter(cfg.daq, psd)
    rng = np.random.default_rng(106)
    hits = 0
    n = 1500
    for _ in range(n):
        data = rng.normal(size=(1, NREC))
        a = np.fft.irfft(mf._weight[0] * np.fft.rfft(data[0]), NREC) \
            * (NREC / mf._denom[0])
        peak = int(np.argmax(a))
        lo = max(0, peak - mf.exclude_samples)
        hi = min(a.size, peak + mf.exclude_samples + 1)
        from mutag.pulses import _robust_rms
        if a[peak] > 5.0 * _robust_rms(np.concatenate([a[:lo], a[hi:]])):
            hits += 1
    assert hits <= 4  # ~1e-3 of 1500, with Poisson headroom


def _daq_events(rows):
    ev = np.zeros(len(rows), dtype=EVENT_DTYPE)
    for i, (t, top, center, bottom) in enumerate(rows):
        ev[i] = (i, 0, t, top, center, bottom)
    return ev


def test_process_records_end_to_end(cfg, tmp_path):
    # muon-like deposit plus a later bottom-only hit, dense noise records
    c = dataclasses.replace(cfg, daq=dataclasses.replace(
        cfg.daq, noise_record_interval_s=1.0))
    ev = _daq_events([(5.0, 150.0, 120.0, 148.0), (11.0, 0.0, 0.0, 90.0)])
    path = str(tmp_path / "r.bin")
    run_daq(ev, 25.0, c, seed=60, out_path=path)
    pulses, stats = process_records(path, c.daq, c.analysis)
    assert stats.psd_records_used >= c.analysis.min_noise_records
    assert stats.n_pulse_records == 2
    sel = select_pulses(pulses, 5.0)
    first = sel[sel["t0_s"] < 6.0]
    assert set(first["channel"]) == {0, 1, 2}
    amp = {int(p["channel"]): float(p["amplitude"]) for p in first}
    gain = c.daq.gain_sigma_per_kev
    assert amp[0] == pytest.approx(150.0 * gain, abs=1.0)
    assert amp[1] == pytest.approx(120.0 * gain, abs=1.0)
    assert amp[2] == pytest.approx(148.0 * gain, abs=1.0)


def test_process_records_finds_pileup(cfg, tmp_path):
    c = dataclasses.replace(cfg, daq=dataclasses.replace(
        cfg.daq, noise_record_interval_s=1.0))
    ev = _daq_events([(5.0, 150.0, 0.0, 0.0), (5.003, 150.0, 0.0, 0.0)])
    path = str(tmp_path / "r.bin")
    run_daq(ev, 25.0, c, seed=61, out_path=path)
    pulses, stats = process_records(path, c.daq, c.analysis)
    rec0 = pulses[(pulses["record_id"] == np.min(pulses["record_id"]))
                  & (pulses["channel"] == 0)]
    assert rec0.size == 2
    assert stats.n_pileup_pulses >= 1
    times = np.sort(rec0["peak_time_us"])
    assert times[1] - times[0] == pytest.approx(3000.0, abs=30.0)
