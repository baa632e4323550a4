"""Synthetic DAQ: waveform synthesis, band-pass trigger, record cutting.

The synthesizer works in fixed 65536-sample noise blocks keyed by
(seed, channel, block index), so the stream is byte-identical no matter
how it is chunked or distributed.  The trigger emulates a free-running
DAQ: when any band-pass-filtered channel exceeds the threshold a record
of all channels is cut, and the trigger then stays disarmed until every
filtered channel has returned below baseline (zero).  The re-arm level
sits below the threshold on purpose: the decaying filtered tail of a
pulse hovers near the threshold long enough for noise to re-fire an
edge-triggered scheme.  Distinct triggers may still produce overlapping
records (pile-up); the coincidence analysis de-duplicates shared pulses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .config import DaqConfig, RunConfig
from .recordio import RecordWriter, WaveformRecord
from .transport import EVENT_DTYPE

NOISE_STREAM = 2
NOISE_BLOCK = 65536

CHANNEL_COLUMNS = ("e_top_kev", "e_center_kev", "e_bottom_kev")
N_CHANNELS = 3


def pulse_shape(t_us, dcfg: DaqConfig):
    """Double-exponential pulse, unit amplitude at the analytic peak."""
    t = np.asarray(t_us, dtype=float)
    tr, td = dcfg.tau_rise_us, dcfg.tau_decay_us
    raw = np.where(t >= 0.0, np.exp(-t / td) - np.exp(-t / tr), 0.0)
    peak = pulse_peak_time_us(dcfg)
    norm = np.exp(-peak / td) - np.exp(-peak / tr)
    return raw / norm


def pulse_peak_time_us(dcfg: DaqConfig) -> float:
    tr, td = dcfg.tau_rise_us, dcfg.tau_decay_us
    return tr * td / (td - tr) * np.log(td / tr)


def sampled_template(dcfg: DaqConfig) -> np.ndarray:
    """Template on the sample grid, renormalized to unit sample maximum.

    The discrete renormalization makes a noiseless synthesized pulse
    peak at exactly gain * energy, whatever the grid offset of the
    analytic maximum.
    """
    t_us = np.arange(dcfg.template_samples) / dcfg.sampling_rate_hz * 1e6
    tmpl = pulse_shape(t_us, dcfg)
    return tmpl / tmpl.max()


def template_peak_index(dcfg: DaqConfig) -> int:
    return int(np.argmax(sampled_template(dcfg)))


def trigger_sos(dcfg: DaqConfig) -> np.ndarray:
    """First-order high-pass plus first-order low-pass cascade."""
    fs = dcfg.sampling_rate_hz
    hp = signal.butter(1, dcfg.bandpass_low_hz, "highpass", fs=fs, output="sos")
    lp = signal.butter(1, dcfg.bandpass_high_hz, "lowpass", fs=fs, output="sos")
    return np.vstack([hp, lp])


def filtered_noise_rms(dcfg: DaqConfig) -> float:
    """RMS of the band-passed white noise, from the impulse response."""
    impulse = np.zeros(NOISE_BLOCK)
    impulse[0] = 1.0
    h = signal.sosfilt(trigger_sos(dcfg), impulse)
    return float(dcfg.white_noise_rms * np.sqrt(np.sum(h * h)))


def noise_block(seed: int, channel: int, block: int, dcfg: DaqConfig) -> np.ndarray:
    """One 65536-sample noise block, reproducible from its key alone."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, NOISE_STREAM, channel, block]))
    x = rng.standard_normal(NOISE_BLOCK) * dcfg.white_noise_rms
    if dcfg.low_freq_knee_hz > 0.0:
        f = np.fft.rfftfreq(NOISE_BLOCK, 1.0 / dcfg.sampling_rate_hz)
        df = f[1]
        shape = np.sqrt(1.0 + dcfg.low_freq_knee_hz / np.maximum(f, df))
        x = np.fft.irfft(np.fft.rfft(x) * shape, NOISE_BLOCK)
    return x


@dataclass
class _PulseList:
    """Per-channel deposit schedule on the sample grid."""

    start_sample: np.ndarray  # sorted
    amplitude: np.ndarray


def _prepare_pulses(events: np.ndarray, dcfg: DaqConfig) -> list[_PulseList]:
    if events.size and np.any(np.diff(events["t_s"]) < 0):
        raise ValueError("event stream must be time-sorted")
    fs = dcfg.sampling_rate_hz
    out = []
    for col in CHANNEL_COLUMNS:
        sel = events[col] > 0
        starts = np.round(events["t_s"][sel] * fs).astype(np.int64)
        amps = events[col][sel].astype(float) * dcfg.gain_sigma_per_kev
        order = np.argsort(starts, kind="stable")
        out.append(_PulseList(starts[order], amps[order]))
    return out


def _synthesize_chunk(c0: int, c1: int, pulses: list[_PulseList], template: np.ndarray,
                      seed: int, dcfg: DaqConfig) -> np.ndarray:
    """Raw stream samples [c0, c1) for all channels."""
    n = c1 - c0
    out = np.empty((N_CHANNELS, n))
    tlen = template.size
    for ch in range(N_CHANNELS):
        b0, b1 = c0 // NOISE_BLOCK, (c1 - 1) // NOISE_BLOCK
        parts = []
        for b in range(b0, b1 + 1):
            lo = max(c0, b * NOISE_BLOCK) - b * NOISE_BLOCK
            hi = min(c1, (b + 1) * NOISE_BLOCK) - b * NOISE_BLOCK
            parts.append(noise_block(seed, ch, b, dcfg)[lo:hi])
        out[ch] = np.concatenate(parts)
        pl = pulses[ch]
        lo = np.searchsorted(pl.start_sample, c0 - tlen + 1)
        hi = np.searchsorted(pl.start_sample, c1)
        for p, a in zip(pl.start_sample[lo:hi], pl.amplitude[lo:hi]):
            s0 = max(p, c0)
            s1 = min(p + tlen, c1)
            out[ch, s0 - c0:s1 - c0] += a * template[s0 - p:s1 - p]
    return out


def synthesize_stream(events: np.ndarray, livetime_s: float, dcfg: DaqConfig,
                      seed: int) -> np.ndarray:
    """Full raw stream in memory; intended for short test exposures."""
    total = int(round(livetime_s * dcfg.sampling_rate_hz))
    pulses = _prepare_pulses(events, dcfg)
    template = sampled_template(dcfg)
    return _synthesize_chunk(0, total, pulses, template, seed, dcfg)


@dataclass
class DaqStats:
    n_records: int
    n_pulse_records: int
    n_noise_records: int
    n_dropped_edge: int
    trigger_threshold: float
    filtered_rms: float
    total_samples: int
    livetime_s: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _sample_to_t0(sample: int, fs: float) -> tuple[int, int]:
    total_ns = int(round(sample * (1e9 / fs)))
    return total_ns // 1_000_000_000, total_ns % 1_000_000_000


def run_daq(events: np.ndarray, livetime_s: float, cfg: RunConfig, seed: int,
            out_path: str) -> DaqStats:
    """Stream the synthetic DAQ over the full exposure, writing records.

    Single sequential pass: the band-pass filter state, the OR-threshold
    state, and the noise-record schedule all carry across chunks, so the
    output is independent of chunk size.
    """
    dcfg = cfg.daq
    fs = dcfg.sampling_rate_hz
    total = int(round(livetime_s * fs))
    nrec = dcfg.record_samples
    pre = int(round(dcfg.pre_trigger_fraction * nrec))
    pulses = _prepare_pulses(events, dcfg)
    template = sampled_template(dcfg)
    sos = trigger_sos(dcfg)
    threshold = dcfg.trigger_threshold_sigma * filtered_noise_rms(dcfg)
    zi = np.zeros((N_CHANNELS, sos.shape[0], 2))
    armed = True

    noise_every = int(round(dcfg.noise_record_interval_s * fs))
    next_noise = 0

    tail = np.zeros((N_CHANNELS, 0))
    tail_start = 0
    pending: list[tuple[int, int]] = []  # (start_sample, trigger_channel), start-ordered
    stats = DaqStats(0, 0, 0, 0, threshold, threshold / dcfg.trigger_threshold_sigma,
                     total, livetime_s)

    with RecordWriter(out_path) as writer:
        for c0 in range(0, total, dcfg.chunk_samples):
            c1 = min(c0 + dcfg.chunk_samples, total)
            raw = _synthesize_chunk(c0, c1, pulses, template, seed, dcfg)
            filt = np.empty_like(raw)
            for ch in range(N_CHANNELS):
                filt[ch], zi[ch] = signal.sosfilt(sos, raw[ch], zi=zi[ch])
            ups = np.nonzero((filt > threshold).any(axis=0))[0]
            downs = np.nonzero((filt < 0.0).all(axis=0))[0]

            candidates: list[tuple[int, int]] = []
            i = 0
            while True:
                if armed:
                    k = np.searchsorted(ups, i)
                    if k == ups.size:
                        break
                    j = int(ups[k])
                    chans = np.nonzero(filt[:, j] > threshold)[0]
                    ch = int(chans[np.argmax(filt[chans, j])])
                    start = c0 + j - pre
                    if start < 0 or start + nrec > total:
                        stats.n_dropped_edge += 1
                    else:
                        candidates.append((start, ch))
                    armed = False
                else:
                    k = np.searchsorted(downs, i)
                    if k == downs.size:
                        break
                    j = int(downs[k])
                    armed = True
                i = j + 1
            while next_noise < c1:
                if next_noise + nrec <= total:
                    candidates.append((next_noise, -1))
                next_noise += noise_every
            pending.extend(candidates)
            pending.sort()

            buf = np.concatenate([tail, raw], axis=1)
            buf_start = tail_start if tail.shape[1] else c0
            ready = [p for p in pending if p[0] + nrec <= c1]
            pending = [p for p in pending if p[0] + nrec > c1]
            for start, ch in ready:
                data = buf[:, start - buf_start:start - buf_start + nrec]
                t0_s, t0_ns = _sample_to_t0(start, fs)
                writer.write(WaveformRecord(fs, ch, t0_s, t0_ns, data.astype(np.float32)))
                stats.n_records += 1
                if ch < 0:
                    stats.n_noise_records += 1
                else:
                    stats.n_pulse_records += 1
            # carry enough raw stream to cover any record still pending:
            # such a record ends past c1, so it starts after c1 - nrec
            keep = min(4096 + nrec, buf.shape[1])
            tail = buf[:, -keep:]
            tail_start = c1 - keep
    # every accepted candidate fits inside the stream, so the last chunk
    # (ending exactly at `total`) flushes the pending list completely
    return stats
