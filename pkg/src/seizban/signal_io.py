"""Recording formats, synthetic signal generation, and window segmentation.

Recordings hold named EEG/ECG channels sampled at one rate plus optional
seizure annotations.  Two on-disk formats exist: an inspectable CSV with a
sidecar annotation file, and the `SNR1` little-endian binary container with
raw float32 samples (bit-exact round trips).

The synthetic generator plants two preictal signatures ahead of each seizure
onset: a theta-band (4-8 Hz) sinusoid whose amplitude ramps up across the
preictal span on every EEG channel, and a shortening of the ECG R-peak
interval.  Generation is seed-deterministic, and a streaming mode lets a
closed-loop actuator attenuate the planted signature from a given time
onward without disturbing samples already rendered.
"""
from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .simkernel import SimTime, us

KIND_EEG = "EEG"
KIND_ECG = "ECG"
_UNIT_BY_KIND = {KIND_EEG: "uV", KIND_ECG: "mV"}

SNR1_MAGIC = b"SNR1"
SNR1_VERSION = 1


class RecordingFormatError(ValueError):
    """Malformed recording file or inconsistent recording fields."""


@dataclass(frozen=True)
class ChannelInfo:
    name: str
    kind: str
    unit: str = ""

    def __post_init__(self):
        if self.kind not in (KIND_EEG, KIND_ECG):
            raise RecordingFormatError(f"unknown channel kind {self.kind!r}")
        if not self.unit:
            object.__setattr__(self, "unit", _UNIT_BY_KIND[self.kind])


@dataclass
class Recording:
    channels: list[ChannelInfo]
    sample_rate_hz: float
    data: np.ndarray  # (n_channels, n_samples) float32
    annotations: Optional[list[tuple[float, float]]] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise RecordingFormatError("length mismatch: data shape vs channel table")
        if not (self.sample_rate_hz > 0) or not np.isfinite(self.sample_rate_hz):
            raise RecordingFormatError(f"bad rate: {self.sample_rate_hz}")
        if self.annotations is not None:
            prev_off = 0.0
            for onset, offset in self.annotations:
                if not (0.0 <= onset < offset <= self.duration_s + 1e-9):
                    raise RecordingFormatError(
                        f"bad annotation: ({onset}, {offset}) outside recording"
                    )
                if onset < prev_off:
                    raise RecordingFormatError("bad annotation: overlapping/unordered")
                prev_off = offset

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    def channel_index(self, kind: str) -> list[int]:
        return [i for i, c in enumerate(self.channels) if c.kind == kind]


@dataclass(frozen=True)
class Window:
    start_us: SimTime
    duration_s: float
    samples: np.ndarray  # (n_channels, win_n)
    channels: tuple[ChannelInfo, ...]
    label: Optional[str] = None  # "preictal" | "interictal" | None when unlabeled
    ictal: bool = False

    @property
    def end_us(self) -> SimTime:
        return self.start_us + us(self.duration_s)


def classify_window(
    start_s: float,
    end_s: float,
    annotations: Optional[Sequence[tuple[float, float]]],
    horizon_s: float,
) -> tuple[Optional[str], bool]:
    """Ground-truth label for a window: preictal iff its end falls in
    [onset - horizon, onset) of any onset; flagged ictal when it overlaps the
    seizure interval itself."""
    if annotations is None:
        return None, False
    label = "interictal"
    ictal = False
    for onset, offset in annotations:
        if onset - horizon_s <= end_s < onset:
            label = "preictal"
        if start_s <= offset and end_s >= onset:
            ictal = True
    return label, ictal


def segment(
    rec: Recording,
    window_len_s: float = 4.0,
    stride_s: float = 2.0,
    horizon_s: float = 300.0,
) -> list[Window]:
    """Slice a recording into overlapping windows.

    Emits floor((duration - window_len) / stride) + 1 windows.  Ictal windows
    are excluded from scoring downstream but still emitted, flagged.
    """
    if stride_s <= 0:
        raise ValueError("stride must be > 0")
    win_n = int(round(window_len_s * rec.sample_rate_hz))
    stride_n = int(round(stride_s * rec.sample_rate_hz))
    if win_n > rec.n_samples:
        raise ValueError(
            f"window {window_len_s}s longer than recording {rec.duration_s}s"
        )
    count = (rec.n_samples - win_n) // stride_n + 1
    channels = tuple(rec.channels)
    out = []
    for i in range(count):
        a = i * stride_n
        b = a + win_n
        start_s = a / rec.sample_rate_hz
        end_s = b / rec.sample_rate_hz
        label, ictal = classify_window(start_s, end_s, rec.annotations, horizon_s)
        out.append(
            Window(
                start_us=us(start_s),
                duration_s=window_len_s,
                samples=rec.data[:, a:b],
                channels=channels,
                label=label,
                ictal=ictal,
            )
        )
    return out


# -- CSV format ---------------------------------------------------------------
# Header row `time_s,<ch1>,<ch2>,...`; channel kind is inferred from the column
# name (names starting with "ecg" are ECG, everything else EEG).  Annotations
# live in a sidecar file `<path>.ann`, one `onset_s,offset_s` pair per line.


def _kind_from_name(name: str) -> str:
    return KIND_ECG if name.lower().startswith("ecg") else KIND_EEG


def annotation_path(path: str) -> str:
    return path + ".ann"


def save_csv(rec: Recording, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + [c.name for c in rec.channels])
        t = np.arange(rec.n_samples) / rec.sample_rate_hz
        for i in range(rec.n_samples):
            w.writerow([repr(float(t[i]))] + [repr(float(v)) for v in rec.data[:, i]])
    if rec.annotations is not None:
        with open(annotation_path(path), "w", encoding="utf-8") as fh:
            for onset, offset in rec.annotations:
                fh.write(f"{onset!r},{offset!r}\n")


def _load_annotations(path: str) -> Optional[list[tuple[float, float]]]:
    if not os.path.exists(path):
        return None
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                onset, offset = float(parts[0]), float(parts[1])
            except (ValueError, IndexError) as exc:
                raise RecordingFormatError(
                    f"bad annotation: {path}:{lineno}: {line!r}"
                ) from exc
            out.append((onset, offset))
    return out


def load_csv(path: str) -> Recording:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RecordingFormatError("length mismatch: empty file")
        if len(header) < 2 or header[0] != "time_s":
            raise RecordingFormatError("bad header: expected time_s,<ch1>,...")
        names = header[1:]
        times: list[float] = []
        cols: list[list[float]] = [[] for _ in names]
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise RecordingFormatError(
                    f"length mismatch: row {lineno} has {len(row)} fields, "
                    f"expected {len(header)}"
                )
            try:
                times.append(float(row[0]))
                for j, v in enumerate(row[1:]):
                    cols[j].append(float(v))
            except ValueError as exc:
                raise RecordingFormatError(f"bad value at row {lineno}") from exc
    if len(times) < 2:
        raise RecordingFormatError("bad rate: need at least two samples")
    span = times[-1] - times[0]
    if span <= 0:
        raise RecordingFormatError("bad rate: time column not increasing")
    rate = (len(times) - 1) / span
    channels = [ChannelInfo(name=n, kind=_kind_from_name(n)) for n in names]
    data = np.array(cols, dtype=np.float32)
    return Recording(
        channels=channels,
        sample_rate_hz=rate,
        data=data,
        annotations=_load_annotations(annotation_path(path)),
    )


# -- SNR1 binary container ------------------------------------------------------
# Little-endian layout:
#   magic 'SNR1' | u16 version | f64 sample_rate | u32 n_channels | u64 n_samples
#   per channel: u8 kind (0=EEG, 1=ECG) | u8 name_len | name | u8 unit_len | unit
#   u32 n_annotations | per annotation: f64 onset_s, f64 offset_s
#   u8 has_annotations flag precedes the count (0 = unlabeled recording)
#   raw samples: channel-major float32

_KIND_CODE = {KIND_EEG: 0, KIND_ECG: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_binary(rec: Recording, path: str) -> None:
    buf = io.BytesIO()
    buf.write(SNR1_MAGIC)
    buf.write(struct.pack("<Hd I Q", SNR1_VERSION, rec.sample_rate_hz,
                          len(rec.channels), rec.n_samples))
    for c in rec.channels:
        name = c.name.encode("utf-8")
        unit = c.unit.encode("utf-8")
        buf.write(struct.pack("<BB", _KIND_CODE[c.kind], len(name)))
        buf.write(name)
        buf.write(struct.pack("<B", len(unit)))
        buf.write(unit)
    if rec.annotations is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<BI", 1, len(rec.annotations)))
        for onset, offset in rec.annotations:
            buf.write(struct.pack("<dd", onset, offset))
    buf.write(np.ascontiguousarray(rec.data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_binary(path: str) -> Recording:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != SNR1_MAGIC:
        raise RecordingFormatError("bad magic: not an SNR1 file")
    version, rate, n_ch, n_samp = struct.unpack("<Hd I Q", buf.read(2 + 8 + 4 + 8))
    if version != SNR1_VERSION:
        raise RecordingFormatError(f"unsupported SNR1 version {version}")
    channels = []
    for _ in range(n_ch):
        kind_code, name_len = struct.unpack("<BB", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        (unit_len,) = struct.unpack("<B", buf.read(1))
        unit = buf.read(unit_len).decode("utf-8")
        if kind_code not in _CODE_KIND:
            raise RecordingFormatError(f"unknown channel kind code {kind_code}")
        channels.append(ChannelInfo(name=name, kind=_CODE_KIND[kind_code], unit=unit))
    (has_ann,) = struct.unpack("<B", buf.read(1))
    annotations = None
    if has_ann:
        (n_ann,) = struct.unpack("<I", buf.read(4))
        annotations = [struct.unpack("<dd", buf.read(16)) for _ in range(n_ann)]
        annotations = [(a, b) for a, b in annotations]
    need = n_ch * n_samp * 4
    blob = buf.read(need)
    if len(blob) != need:
        raise RecordingFormatError("length mismatch: sample payload truncated")
    data = np.frombuffer(blob, dtype="<f4").reshape(n_ch, n_samp)
    return Recording(channels=channels, sample_rate_hz=rate, data=data.copy(),
                     annotations=annotations)


def load_recording(path: str, format: Optional[str] = None) -> Recording:
    """Load a recording; format inferred from the extension when not given."""
    if format is None:
        format = "csv" if path.lower().endswith(".csv") else "binary"
    if format == "csv":
        return load_csv(path)
    if format == "binary":
        return load_binary(path)
    raise ValueError(f"unknown format {format!r}")


def save_recording(rec: Recording, path: str, format: Optional[str] = None) -> None:
    if format is None:
        format = "csv" if path.lower().endswith(".csv") else "binary"
    if format == "csv":
        save_csv(rec, path)
    elif format == "binary":
        save_binary(rec, path)
    else:
        raise ValueError(f"unknown format {format!r}")


# -- synthetic generation --------------------------------------------------------

@dataclass(frozen=True)
class SignatureConfig:
    theta_ramp_gain: float = 1.0
    rr_shortening_fraction: float = 0.2


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    duration_s: float = 600.0
    seizure_onsets_s: tuple[float, ...] = (420.0,)
    preictal_horizon_s: float = 300.0
    eeg_channels: int = 2
    snr_db: float = 6.0
    signature: SignatureConfig = field(default_factory=SignatureConfig)
    # generator internals, all overridable
    sample_rate_hz: float = 256.0
    ictal_duration_s: float = 30.0
    theta_freq_hz: float = 6.0
    theta_ramp_floor: float = 0.5   # ramp runs floor -> 1.0 across the span
    noise_band_hz: tuple[float, float] = (0.5, 45.0)
    eeg_noise_rms: float = 20.0     # uV
    ecg_rr_s: float = 0.8
    ecg_rr_jitter_frac: float = 0.015
    ecg_spike_amp: float = 1.0      # mV
    ecg_noise_rms: float = 0.02     # mV

    def __post_init__(self):
        object.__setattr__(self, "seizure_onsets_s", tuple(self.seizure_onsets_s))
        if self.duration_s <= 0:
            raise ValueError("duration must be > 0")
        if self.preictal_horizon_s <= 0:
            raise ValueError("horizon must be > 0")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.eeg_channels < 1:
            raise ValueError("need at least one EEG channel")
        for onset in self.seizure_onsets_s:
            if not 0.0 < onset < self.duration_s:
                raise ValueError(f"onset {onset}s outside recording duration")

    def annotations(self) -> list[tuple[float, float]]:
        return [
            (onset, min(onset + self.ictal_duration_s, self.duration_s))
            for onset in self.seizure_onsets_s
        ]


def _bandlimit(white: np.ndarray, fs: float, lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(len(white), 1.0 / fs)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n=len(white))


class SyntheticStream:
    """Incremental renderer for one synthetic recording.

    All stochastic material (noise, sinusoid phases, beat jitter) is drawn
    up-front from the seed, so the rendered samples depend only on the
    suppression schedule, never on when rendering happens.  Suppression
    intervals scale the planted signature (EEG theta amplitude and the ECG
    RR shortening) by a factor in [0, 1]; they may only start at or after the
    current render frontier, which keeps already-rendered samples immutable.
    """

    def __init__(self, cfg: SyntheticConfig):
        self.cfg = cfg
        fs = cfg.sample_rate_hz
        from .simkernel import RngStream

        rng = RngStream(cfg.seed, "synthetic").generator
        self.n = int(round(cfg.duration_s * fs))
        n_eeg = cfg.eeg_channels

        # EEG background: band-limited Gaussian noise at the target RMS.
        self._eeg_base = np.empty((n_eeg, self.n))
        for c in range(n_eeg):
            white = rng.standard_normal(self.n)
            band = _bandlimit(white, fs, *cfg.noise_band_hz)
            rms = float(np.sqrt(np.mean(band**2)))
            self._eeg_base[c] = band * (cfg.eeg_noise_rms / rms)

        # EEG signature: ramped theta sinusoid confined to the preictal spans.
        phases = rng.uniform(0.0, 2.0 * np.pi, n_eeg)
        t = np.arange(self.n) / fs
        envelope = np.zeros(self.n)
        for onset in cfg.seizure_onsets_s:
            lo = onset - cfg.preictal_horizon_s
            span = (t >= lo) & (t < onset)
            progress = (t[span] - lo) / cfg.preictal_horizon_s
            ramp = cfg.theta_ramp_floor + (1.0 - cfg.theta_ramp_floor) * progress
            envelope[span] = np.maximum(envelope[span], ramp)
        peak_amp = (
            np.sqrt(2.0)
            * cfg.eeg_noise_rms
            * 10.0 ** (cfg.snr_db / 20.0)
            * cfg.signature.theta_ramp_gain
        )
        self._eeg_sig = np.empty((n_eeg, self.n))
        for c in range(n_eeg):
            self._eeg_sig[c] = peak_amp * envelope * np.sin(
                2.0 * np.pi * cfg.theta_freq_hz * t + phases[c]
            )

        # ECG background noise and per-beat RR jitter, drawn up-front so the
        # beat count realized at render time cannot shift the draws.
        self._ecg_noise = rng.standard_normal(self.n) * cfg.ecg_noise_rms
        max_beats = int(cfg.duration_s / (cfg.ecg_rr_s * 0.5)) + 8
        self._rr_jitter = rng.standard_normal(max_beats) * cfg.ecg_rr_jitter_frac

        self.channels = tuple(
            [ChannelInfo(name=f"eeg{c + 1}", kind=KIND_EEG) for c in range(n_eeg)]
            + [ChannelInfo(name="ecg", kind=KIND_ECG)]
        )
        self._ecg_row = n_eeg
        self.buffer = np.zeros((n_eeg + 1, self.n), dtype=np.float32)
        self.frontier = 0          # samples rendered so far
        self._beat_t = 0.3         # next R-peak time, seconds
        self._beat_i = 0
        self._suppression: list[tuple[float, float, float]] = []  # (start_s, end_s, scale)

    # -- closed-loop hook ---------------------------------------------------

    def add_suppression(self, start_s: float, end_s: float, scale: float) -> None:
        if not 0.0 <= scale <= 1.0:
            raise ValueError("suppression scale must be in [0,1]")
        if start_s < self.frontier / self.cfg.sample_rate_hz - 1e-9:
            raise ValueError("suppression cannot start before the render frontier")
        self._suppression.append((start_s, end_s, scale))

    def _scale_at(self, t_s: float) -> float:
        for start_s, end_s, scale in self._suppression:
            if start_s <= t_s < end_s:
                return scale
        return 1.0

    def _scale_vector(self, a: int, b: int) -> np.ndarray:
        fs = self.cfg.sample_rate_hz
        vec = np.ones(b - a)
        for start_s, end_s, scale in self._suppression:
            i0 = max(a, int(np.ceil(start_s * fs)))
            i1 = min(b, int(np.ceil(end_s * fs)))
            if i1 > i0:
                vec[i0 - a : i1 - a] = np.minimum(vec[i0 - a : i1 - a], scale)
        return vec

    def _in_preictal(self, t_s: float) -> bool:
        for onset in self.cfg.seizure_onsets_s:
            if onset - self.cfg.preictal_horizon_s <= t_s < onset:
                return True
        return False

    # -- rendering ----------------------------------------------------------

    def render_to(self, t_s: float) -> None:
        cfg = self.cfg
        fs = cfg.sample_rate_hz
        b = min(self.n, int(round(t_s * fs)))
        a = self.frontier
        if b <= a:
            return
        scale = self._scale_vector(a, b)
        for c in range(cfg.eeg_channels):
            self.buffer[c, a:b] = self._eeg_base[c, a:b] + scale * self._eeg_sig[c, a:b]
        ecg = self._ecg_noise[a:b].copy()
        end_s = b / fs
        while self._beat_t < end_s and self._beat_i < len(self._rr_jitter):
            idx = int(round(self._beat_t * fs))
            if a <= idx < b:
                ecg[idx - a] += cfg.ecg_spike_amp
            rr = cfg.ecg_rr_s * (1.0 + self._rr_jitter[self._beat_i])
            if self._in_preictal(self._beat_t):
                rr *= 1.0 - cfg.signature.rr_shortening_fraction * self._scale_at(self._beat_t)
            self._beat_t += rr
            self._beat_i += 1
        self.buffer[self._ecg_row, a:b] = ecg
        self.frontier = b

    def window(self, start_n: int, win_n: int) -> np.ndarray:
        end = start_n + win_n
        if end > self.frontier:
            self.render_to(end / self.cfg.sample_rate_hz)
        return self.buffer[:, start_n:end]

    def to_recording(self) -> Recording:
        self.render_to(self.cfg.duration_s)
        return Recording(
            channels=list(self.channels),
            sample_rate_hz=self.cfg.sample_rate_hz,
            data=self.buffer,
            annotations=self.cfg.annotations(),
        )


def generate_synthetic(cfg: SyntheticConfig) -> Recording:
    """Render the full recording offline (no suppression)."""
    return SyntheticStream(cfg).to_recording()
