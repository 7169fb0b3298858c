"""Signal conditioning and heart-rate readout.

The band-pass is a Butterworth cascade of three biquads run forward and
backward (zero phase). Its design edges sit 1.25x outside the nominal
0.75-2.5 Hz band so that the two-pass response stays within 1 dB over the
whole band while attenuating by more than 20 dB one octave outside it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from . import container

HR_BAND = (0.75, 2.5)
NFFT_MIN = 4096
MIN_HR_WINDOW = 128
_EDGE_MARGIN = 1.25
_SECTIONS = 3


class NyquistError(ValueError):
    pass


class DegenerateSignalError(ValueError):
    pass


class TooShortError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    fs: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform samples must be 1-d")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if len(self.samples) < 2:
            raise TooShortError("waveform needs at least 2 samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.fs


@dataclass
class HrEstimate:
    bpm: float
    peak_power: float
    freqs: np.ndarray
    power: np.ndarray

    @property
    def spectrum(self) -> np.ndarray:
        """[n, 2] array of (frequency Hz, power) pairs."""
        return np.column_stack([self.freqs, self.power])


def _as_waveform(w, fs=None) -> Waveform:
    if isinstance(w, Waveform):
        return w
    if fs is None:
        raise ValueError("fs is required when passing a raw array")
    return Waveform(w, fs)


def bandpass_sos(fs: float, lo: float = HR_BAND[0], hi: float = HR_BAND[1]) -> np.ndarray:
    if fs <= 2 * hi:
        raise NyquistError(f"fs={fs} Hz must exceed twice the upper cutoff ({2 * hi} Hz)")
    edge_hi = min(hi * _EDGE_MARGIN, 0.45 * fs)
    return signal.butter(_SECTIONS, [lo / _EDGE_MARGIN, edge_hi], btype="band", fs=fs, output="sos")


def bandpass(w, lo: float = HR_BAND[0], hi: float = HR_BAND[1], fs: float | None = None) -> Waveform:
    """Zero-phase band-pass filtering.

    Edges are padded by even reflection over 3 s, which keeps start-up
    transients on clean in-band signals below 1% of the output energy.
    """
    w = _as_waveform(w, fs)
    sos = bandpass_sos(w.fs, lo, hi)
    padlen = min(len(w) - 1, int(round(3 * w.fs)))
    return Waveform(signal.sosfiltfilt(sos, w.samples, padtype="even", padlen=padlen), w.fs)


def periodogram(x: np.ndarray, fs: float, nfft: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rectangular-window periodogram of the mean-removed signal, zero padded to ``nfft``."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if nfft is None:
        nfft = max(NFFT_MIN, 1 << int(np.ceil(np.log2(n))))
    spec = np.fft.rfft(x - x.mean(), n=nfft)
    power = (spec.real ** 2 + spec.imag ** 2) / (fs * n)
    return np.fft.rfftfreq(nfft, 1.0 / fs), power


def estimate_hr(w, fs: float | None = None, band=HR_BAND) -> HrEstimate:
    """Heart rate from the periodogram peak inside ``band`` (Hz)."""
    w = _as_waveform(w, fs)
    if len(w) < MIN_HR_WINDOW:
        raise TooShortError(f"heart-rate window needs >= {MIN_HR_WINDOW} samples, got {len(w)}")
    freqs, power = periodogram(w.samples, w.fs)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    if not np.any(mask) or not np.any(power[mask] > 0):
        raise DegenerateSignalError("signal carries no in-band power")
    idx = np.flatnonzero(mask)[np.argmax(power[mask])]
    return HrEstimate(bpm=60.0 * freqs[idx], peak_power=float(power[idx]), freqs=freqs, power=power)


def heart_rate(x, fs: float) -> float:
    """Band-pass, then periodogram peak, in BPM."""
    return estimate_hr(bandpass(Waveform(x, fs))).bpm


def resample_linear(w: Waveform, target_fs: float) -> Waveform:
    n = int(np.floor(w.duration * target_fs + 1e-9))
    t_new = np.arange(n) / target_fs
    return Waveform(np.interp(t_new, w.times, w.samples), target_fs)


def standardize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd == 0:
        raise DegenerateSignalError("cannot standardise a constant signal")
    return (x - x.mean()) / sd


def preprocess_groundtruth(raw, target_fs: float = 30.0, fs: float | None = None) -> Waveform:
    """Detrend (1 s moving average), band-pass, resample to ``target_fs``, standardise."""
    raw = _as_waveform(raw, fs)
    if raw.duration < 2.0:
        raise TooShortError(f"ground truth must cover >= 2 s, got {raw.duration:.2f} s")
    if raw.fs < target_fs:
        raise ValueError(f"raw fs {raw.fs} Hz is below the target {target_fs} Hz")
    win = max(int(round(raw.fs)), 1)
    trend = ndimage.uniform_filter1d(raw.samples, size=win, mode="nearest")
    filtered = bandpass(Waveform(raw.samples - trend, raw.fs))
    if raw.fs != target_fs:
        filtered = resample_linear(filtered, target_fs)
    return Waveform(standardize(filtered.samples), target_fs)


def measure_lag(reference, sig, max_lag: int) -> int:
    """Shift k (|k| <= max_lag) of ``reference`` that best correlates with ``sig``.

    Exhaustive search: k maximises sum_t sig[t] * reference[t - k] after both
    are mean-removed.
    """
    a = np.asarray(sig, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    a, b = a - a.mean(), b - b.mean()
    n = len(a)
    best, best_k = -np.inf, 0
    for k in range(-max_lag, max_lag + 1):
        if k >= 0:
            c = np.dot(a[k:], b[: n - k])
        else:
            c = np.dot(a[: n + k], b[-k:])
        if c > best:
            best, best_k = c, k
    return best_k


# -- waveform files ------------------------------------------------------------

def save_waveform_text(path, w: Waveform) -> None:
    """Two columns: time in seconds, value."""
    np.savetxt(path, np.column_stack([w.times, w.samples]), fmt="%.9f\t%.17g",
               header="time_seconds\tvalue", comments="")


def load_waveform_text(path) -> Waveform:
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    t, v = data[:, 0], data[:, 1]
    if len(t) < 2:
        raise TooShortError(f"{path}: needs at least 2 samples")
    dt = np.diff(t)
    fs = 1.0 / float(np.median(dt))
    return Waveform(v, round(fs, 6))


def save_waveform_binary(path, w: Waveform) -> None:
    container.save(path, {"samples": w.samples}, {"kind": "waveform", "fs": w.fs})


def load_waveform_binary(path) -> Waveform:
    arrays, meta = container.load(path)
    if meta.get("kind") != "waveform":
        raise container.ContainerError(f"{path}: not a waveform container")
    return Waveform(arrays["samples"], meta["fs"])


def load_waveform(path) -> Waveform:
    path = Path(path)
    if path.read_bytes()[:4] == container.MAGIC:
        return load_waveform_binary(path)
    return load_waveform_text(path)
