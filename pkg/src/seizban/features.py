"""Per-window feature extraction for the two classifier nodes.

EEG nodes compute per-channel spectral band powers from a rectangular-window
periodogram normalized so that the one-sided bin powers sum to the signal's
mean square (Parseval).  ECG nodes detect R-peaks with an adaptive threshold
and derive heart-rate-variability statistics from the RR intervals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_io import KIND_ECG, KIND_EEG, Window

# (name, lo_hz, hi_hz); half-open [lo, hi) except gamma, which closes at 45 Hz
# so the five bands tile the analyzed range [0.5, 45] exactly.
EEG_BANDS = (
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma", 30.0, 45.0),
)

R_PEAK_THRESHOLD_FRAC = 0.6
R_PEAK_REFRACTORY_S = 0.2
RR_SENTINEL = -1.0


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...]
    low_confidence: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if len(self.values) != len(self.names):
            raise ValueError("feature values/names length mismatch")


def periodogram(x: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided rectangular-window periodogram.

    Returns (freqs, power) where power sums to the mean square of x over all
    bins (DC through Nyquist).
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    spec = np.fft.rfft(x)
    power = (spec.real**2 + spec.imag**2) / (n * n)
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0  # Nyquist bin is not mirrored
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    return freqs, power


def band_power(freqs: np.ndarray, power: np.ndarray, lo: float, hi: float,
               closed_hi: bool = False) -> float:
    mask = (freqs >= lo) & ((freqs <= hi) if closed_hi else (freqs < hi))
    return float(power[mask].sum())


def extract_features_eeg(w: Window) -> FeatureVector:
    """Per-channel band powers (delta/theta/alpha/beta/gamma), channel-major."""
    idx = [i for i, c in enumerate(w.channels) if c.kind == KIND_EEG]
    if not idx:
        raise ValueError("window has no EEG channels")
    fs = len(w.samples[0]) / w.duration_s
    values = []
    names = []
    for i in idx:
        freqs, power = periodogram(w.samples[i], fs)
        for band, lo, hi in EEG_BANDS:
            values.append(band_power(freqs, power, lo, hi, closed_hi=(band == "gamma")))
            names.append(f"{w.channels[i].name}:{band}")
    return FeatureVector(values=np.array(values), names=tuple(names))


def detect_r_peaks(x: np.ndarray, fs: float,
                   threshold_frac: float = R_PEAK_THRESHOLD_FRAC,
                   refractory_s: float = R_PEAK_REFRACTORY_S) -> np.ndarray:
    """Indices of local maxima above threshold_frac * max(x), at least
    refractory_s apart (earlier peak wins)."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3:
        return np.array([], dtype=int)
    thresh = threshold_frac * float(x.max())
    if thresh <= 0:
        return np.array([], dtype=int)
    core = x[1:-1]
    cand = np.where((core >= thresh) & (core >= x[:-2]) & (core > x[2:]))[0] + 1
    refractory_n = int(round(refractory_s * fs))
    peaks = []
    last = -refractory_n - 1
    for i in cand:
        if i - last >= refractory_n:
            peaks.append(i)
            last = i
    return np.array(peaks, dtype=int)


ECG_FEATURE_NAMES = ("mean_rr_ms", "sdnn_ms", "rmssd_ms", "hr_bpm")


def extract_features_ecg(w: Window) -> FeatureVector:
    """RR statistics from detected R-peaks: mean RR, SDNN, RMSSD (ms) and
    heart rate (bpm).  Fewer than two peaks yields sentinel values with the
    low-confidence flag set; downstream treats such verdicts as missing."""
    idx = [i for i, c in enumerate(w.channels) if c.kind == KIND_ECG]
    if not idx:
        raise ValueError("window has no ECG channel")
    x = w.samples[idx[0]]
    fs = len(x) / w.duration_s
    peaks = detect_r_peaks(x, fs)
    if len(peaks) < 2:
        vals = np.full(4, RR_SENTINEL)
        return FeatureVector(values=vals, names=ECG_FEATURE_NAMES, low_confidence=True)
    rr_ms = np.diff(peaks) / fs * 1000.0
    mean_rr = float(rr_ms.mean())
    sdnn = float(rr_ms.std())
    rmssd = float(np.sqrt(np.mean(np.diff(rr_ms) ** 2))) if len(rr_ms) >= 2 else 0.0
    hr = 60_000.0 / mean_rr
    return FeatureVector(
        values=np.array([mean_rr, sdnn, rmssd, hr]),
        names=ECG_FEATURE_NAMES,
    )
