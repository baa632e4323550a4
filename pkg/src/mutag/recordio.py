"""File formats: event CSV, waveform record binary, pulse and histogram CSV.

The record format is a flat stream of self-describing records.  Each
record carries its own header (magic, version, sampling rate, channel
and sample counts, trigger channel, timestamp as 64-bit seconds plus
64-bit nanoseconds) followed by per-channel little-endian float32
samples, so files can be concatenated and scanned without an index.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .transport import EVENT_DTYPE, SPECIES_NAMES

RECORD_MAGIC = b"MTRC"
RECORD_VERSION = 1
_HEADER = struct.Struct("<4sIdIIiqq")

EVENTS_HEADER = "# mutag-events v1"
PULSES_HEADER = "# mutag-pulses v1"

PULSE_DTYPE = np.dtype([
    ("record_id", "i8"),
    ("channel", "i4"),
    ("t0_s", "f8"),
    ("peak_time_us", "f8"),
    ("amplitude", "f8"),
    ("baseline_rms", "f8"),
])


class FormatError(ValueError):
    """Raised for bad magic numbers, versions, or truncated files."""


@dataclass
class WaveformRecord:
    """One triggered multi-channel record.

    trigger_channel is the detector index that fired, or -1 for a
    scheduled noise record.  data has shape (n_channels, n_samples).
    """

    sampling_rate_hz: float
    trigger_channel: int
    t0_s: int
    t0_ns: int
    data: np.ndarray

    @property
    def t0(self) -> float:
        return self.t0_s + self.t0_ns * 1e-9

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


class RecordWriter:
    """Streaming writer; supports use as a context manager."""

    def __init__(self, path: str):
        self._fh = open(path, "wb")
        self.n_written = 0

    def write(self, record: WaveformRecord) -> None:
        data = np.ascontiguousarray(record.data, dtype="<f4")
        self._fh.write(_HEADER.pack(
            RECORD_MAGIC, RECORD_VERSION, float(record.sampling_rate_hz),
            data.shape[0], data.shape[1], int(record.trigger_channel),
            int(record.t0_s), int(record.t0_ns)))
        self._fh.write(data.tobytes())
        self.n_written += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_records(path: str):
    """Yield WaveformRecord objects in file order."""
    with open(path, "rb") as fh:
        while True:
            head = fh.read(_HEADER.size)
            if not head:
                return
            if len(head) < _HEADER.size:
                raise FormatError("truncated record header")
            magic, version, rate, nch, nsamp, trig, t0s, t0ns = _HEADER.unpack(head)
            if magic != RECORD_MAGIC:
                raise FormatError(f"bad record magic {magic!r}")
            if version != RECORD_VERSION:
                raise FormatError(f"unsupported record version {version}")
            payload = fh.read(4 * nch * nsamp)
            if len(payload) < 4 * nch * nsamp:
                raise FormatError("truncated record payload")
            data = np.frombuffer(payload, dtype="<f4").reshape(nch, nsamp)
            yield WaveformRecord(rate, trig, t0s, t0ns, data)


def read_records(path: str) -> list[WaveformRecord]:
    return list(iter_records(path))


def export_record_csv(record: WaveformRecord, path: str) -> None:
    """Debug export: one column per channel."""
    header = ",".join(f"ch{c}" for c in range(record.n_channels))
    np.savetxt(path, record.data.T, fmt="%.6g", delimiter=",",
               header=header, comments="")


def write_events(path: str, events: np.ndarray, livetime_s: float | None = None) -> None:
    """Event CSV; deposit fields are left empty where no energy was recorded."""
    with open(path, "w", newline="") as fh:
        fh.write(EVENTS_HEADER + "\n")
        if livetime_s is not None:
            fh.write(f"# livetime_s={livetime_s!r}\n")
        fh.write("event_id,species,t_s,e_top_kev,e_center_kev,e_bottom_kev\n")
        w = csv.writer(fh)
        for row in events:
            energies = [f"{row[c]:.4f}" if row[c] > 0 else ""
                        for c in ("e_top_kev", "e_center_kev", "e_bottom_kev")]
            w.writerow([int(row["event_id"]), SPECIES_NAMES[row["species"]],
                        f"{row['t_s']:.9f}", *energies])


def read_events(path: str) -> tuple[np.ndarray, float | None]:
    """Returns the events and the livetime stored in the header, if any."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != EVENTS_HEADER:
            raise FormatError(f"not an event file: header {first!r}")
        livetime = None
        line = fh.readline()
        if line.startswith("# livetime_s="):
            livetime = float(line.split("=", 1)[1])
            fh.readline()  # column names
        rows = list(csv.reader(fh))
    events = np.zeros(len(rows), dtype=EVENT_DTYPE)
    for i, row in enumerate(rows):
        events[i]["event_id"] = int(row[0])
        events[i]["species"] = SPECIES_NAMES.index(row[1])
        events[i]["t_s"] = float(row[2])
        for j, col in enumerate(("e_top_kev", "e_center_kev", "e_bottom_kev")):
            events[i][col] = float(row[3 + j]) if row[3 + j] else 0.0
    return events, livetime


def write_pulses(path: str, pulses: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(PULSES_HEADER + "\n")
        fh.write("record_id,channel,t0_s,peak_time_us,amplitude,baseline_rms\n")
        w = csv.writer(fh)
        for row in pulses:
            w.writerow([int(row["record_id"]), int(row["channel"]),
                        f"{row['t0_s']:.9f}", f"{row['peak_time_us']:.3f}",
                        f"{row['amplitude']:.6f}", f"{row['baseline_rms']:.6f}"])


def read_pulses(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != PULSES_HEADER:
            raise FormatError(f"not a pulse file: header {first!r}")
        fh.readline()
        rows = list(csv.reader(fh))
    pulses = np.zeros(len(rows), dtype=PULSE_DTYPE)
    for i, row in enumerate(rows):
        pulses[i] = (int(row[0]), int(row[1]), float(row[2]),
                     float(row[3]), float(row[4]), float(row[5]))
    return pulses


def write_delay_histogram(path: str, bin_edges_us: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("bin_low_us,bin_high_us,counts\n")
        w = csv.writer(fh)
        for lo, hi, c in zip(bin_edges_us[:-1], bin_edges_us[1:], counts):
            w.writerow([f"{lo:.3f}", f"{hi:.3f}", int(c)])


def write_primaries(path: str, species: np.ndarray, energy_mev: np.ndarray,
                    origins: np.ndarray, directions: np.ndarray,
                    times_s: np.ndarray) -> None:
    """Primary dump: species, energy_MeV, x, y, z, dx, dy, dz, t_s."""
    with open(path, "w", newline="") as fh:
        fh.write("species,energy_mev,x_cm,y_cm,z_cm,dx,dy,dz,t_s\n")
        w = csv.writer(fh)
        for i in range(species.size):
            w.writerow([SPECIES_NAMES[species[i]], f"{energy_mev[i]:.6g}",
                        *(f"{v:.6f}" for v in origins[i]),
                        *(f"{v:.9f}" for v in directions[i]),
                        f"{times_s[i]:.9f}"])
