"""Matched-filter pulse reconstruction and selection cuts.

The noise spectrum is estimated from the untriggered monitor records,
then every triggered record is scanned with a frequency-domain optimal
filter normalized to unit response on the pulse template.  Amplitudes
stay in filtered units throughout; the coincidence analysis never needs
an energy scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .config import AnalysisConfig, DaqConfig
from .daq import N_CHANNELS, sampled_template
from .recordio import PULSE_DTYPE, WaveformRecord, iter_records


@dataclass
class NoisePSD:
    """One-sided noise power spectral density per channel, amp^2/Hz."""

    freqs_hz: np.ndarray
    psd: np.ndarray  # (n_channels, n_freqs)
    sampling_rate_hz: float
    n_samples: int
    n_records_used: int


def _robust_rms(x: np.ndarray) -> float:
    """Gaussian-consistent MAD; a second pulse in the baseline region must
    not inflate the selection threshold that is supposed to find it."""
    return 1.4826 * float(np.median(np.abs(x - np.median(x))))


def estimate_noise_psd(noise_records: list[WaveformRecord], min_records: int = 20,
                       veto_sigma: float = 5.0) -> NoisePSD:
    """Averaged Hann periodogram over amplitude-vetoed noise records.

    The veto drops any record whose largest excursion from its own mean
    exceeds veto_sigma times the population noise level (median of the
    per-record RMS), so stray pulses inside monitor records do not bias
    the spectrum.
    """
    if not noise_records:
        raise ValueError("no noise records supplied")
    n = noise_records[0].n_samples
    fs = noise_records[0].sampling_rate_hz
    for r in noise_records:
        if r.n_samples != n or r.sampling_rate_hz != fs:
            raise ValueError("noise records on mixed sample grids")
    data = np.stack([r.data for r in noise_records]).astype(float)  # (rec, ch, n)
    data -= data.mean(axis=2, keepdims=True)
    sigma0 = np.median(data.std(axis=2))
    clean = np.abs(data).max(axis=(1, 2)) <= veto_sigma * sigma0
    if int(clean.sum()) < min_records:
        raise ValueError(
            f"only {int(clean.sum())} pulse-free noise records, need {min_records}")
    w = np.hanning(n)
    spec = np.abs(np.fft.rfft(data[clean] * w, axis=2)) ** 2
    psd = spec.mean(axis=0) * 2.0 / (fs * np.sum(w * w))
    psd[:, 0] = psd[:, 1]  # mean-subtracted DC carries no information
    return NoisePSD(np.fft.rfftfreq(n, 1.0 / fs), psd, fs, n, int(clean.sum()))


class MatchedFilter:
    """Frequency-domain optimal filter scanned over all pulse positions.

    The template is rolled so its peak sits at lag zero, making the
    filter output at lag l the amplitude estimate for a pulse peaking at
    sample l.  The DC bin is excluded: record means are not part of the
    pulse model.
    """

    def __init__(self, dcfg: DaqConfig, psd: NoisePSD):
        if psd.sampling_rate_hz != dcfg.sampling_rate_hz:
            raise ValueError("PSD and DAQ sampling rates differ")
        if dcfg.template_samples > psd.n_samples:
            raise ValueError("template longer than record")
        n = psd.n_samples
        fs = dcfg.sampling_rate_hz
        tmpl = np.zeros(n)
        tmpl[:dcfg.template_samples] = sampled_template(dcfg)
        tmpl = np.roll(tmpl, -int(np.argmax(tmpl)))
        s = np.fft.rfft(tmpl)
        variance = psd.psd * fs * n / 2.0  # per-bin E|X_k|^2
        weight = np.conj(s)[None, :] / variance
        weight[:, 0] = 0.0
        self.n_samples = n
        self.sampling_rate_hz = fs
        self._weight = weight
        power = np.abs(s)[None, :] ** 2 / variance
        self._denom = 2.0 * power[:, 1:-1].sum(axis=1) + power[:, -1]
        # lags this close to the peak belong to the pulse, not the baseline
        self.exclude_samples = int(round(5.0 * dcfg.tau_decay_us * 1e-6 * fs))
        self.resolution = 1.0 / np.sqrt(self._denom)

    def trace(self, data: np.ndarray) -> np.ndarray:
        """Amplitude estimate vs pulse-peak lag, all channels at once."""
        if data.shape != (N_CHANNELS, self.n_samples):
            raise ValueError("record does not match the filter grid")
        x = np.fft.rfft(data.astype(float), axis=1)
        return np.fft.irfft(self._weight * x, self.n_samples, axis=1) \
            * (self.n_samples / self._denom[:, None])

    def reconstruct(self, data: np.ndarray, channel: int) -> tuple[float, float, float]:
        """(amplitude, peak_time_us, baseline_rms) for one channel."""
        a = self.trace(data)[channel]
        peak = int(np.argmax(a))
        lo = max(0, peak - self.exclude_samples)
        hi = min(a.size, peak + self.exclude_samples + 1)
        baseline = np.concatenate([a[:lo], a[hi:]])
        return float(a[peak]), peak / self.sampling_rate_hz * 1e6, _robust_rms(baseline)


def matched_filter(record: WaveformRecord, dcfg: DaqConfig, psd: NoisePSD,
                   channel: int) -> tuple[float, float, float]:
    """One-shot reconstruction of a single channel of a single record."""
    return MatchedFilter(dcfg, psd).reconstruct(record.data, channel)


def select_pulses(pulses: np.ndarray, threshold_sigma: float = 5.0) -> np.ndarray:
    """Retain pulses with amplitude above threshold_sigma x baseline RMS."""
    return pulses[pulses["amplitude"] > threshold_sigma * pulses["baseline_rms"]]


@dataclass
class PulseStats:
    n_records: int = 0
    n_pulse_records: int = 0
    n_noise_records: int = 0
    n_pulses: int = 0
    n_pileup_pulses: int = 0
    psd_records_used: int = 0
    resolution: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _record_pulses(mf: MatchedFilter, record_id: int, record: WaveformRecord,
                   threshold_sigma: float, min_separation: int,
                   stats: PulseStats) -> list[tuple]:
    rows = []
    traces = mf.trace(record.data)
    t0 = record.t0
    for ch in range(N_CHANNELS):
        a = traces[ch]
        peak = int(np.argmax(a))
        lo = max(0, peak - mf.exclude_samples)
        hi = min(a.size, peak + mf.exclude_samples + 1)
        rms = _robust_rms(np.concatenate([a[:lo], a[hi:]]))
        rows.append((record_id, ch, t0, peak / mf.sampling_rate_hz * 1e6,
                     float(a[peak]), rms))
        # prominence keeps noise riding the shoulder of a large pulse from
        # masquerading as pile-up; a genuine overlapping pulse rises by its
        # own amplitude above the tail it sits on
        extra, _ = signal.find_peaks(a, height=threshold_sigma * rms,
                                     prominence=threshold_sigma * rms,
                                     distance=min_separation)
        for idx in extra:
            if idx == peak:
                continue
            rows.append((record_id, ch, t0, idx / mf.sampling_rate_hz * 1e6,
                         float(a[idx]), rms))
            stats.n_pileup_pulses += 1
    stats.n_pulses += len(rows)
    return rows


def process_records(path: str, dcfg: DaqConfig, acfg: AnalysisConfig) -> tuple[np.ndarray, PulseStats]:
    """Two-pass pulse extraction over a record file.

    First pass collects the untriggered monitor records and builds the
    noise PSD; second pass matched-filters every triggered record.  Each
    channel of each record contributes its global maximum, plus any
    further local maxima above the selection threshold separated by more
    than three rise times (pile-up).
    """
    stats = PulseStats()
    noise = []
    for rec in iter_records(path):
        stats.n_records += 1
        if rec.trigger_channel < 0:
            noise.append(rec)
            stats.n_noise_records += 1
        else:
            stats.n_pulse_records += 1
    psd = estimate_noise_psd(noise, acfg.min_noise_records, acfg.psd_veto_sigma)
    stats.psd_records_used = psd.n_records_used
    mf = MatchedFilter(dcfg, psd)
    stats.resolution = [float(r) for r in mf.resolution]
    min_sep = int(round(3.0 * dcfg.tau_rise_us * 1e-6 * dcfg.sampling_rate_hz)) + 1
    rows = []
    record_id = -1
    for rec in iter_records(path):
        record_id += 1
        if rec.trigger_channel < 0:
            continue
        rows.extend(_record_pulses(mf, record_id, rec, acfg.selection_threshold_sigma,
                                   min_sep, stats))
    out = np.array(rows, dtype=PULSE_DTYPE) if rows else np.zeros(0, dtype=PULSE_DTYPE)
    return out, stats
