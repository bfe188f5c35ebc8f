"""Audio and feature-file front end producing standardized channel series."""

from __future__ import annotations

import csv
import enum
import io
import math
import warnings
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .errors import FormatError


class FeatureSource(str, enum.Enum):
    TV = "TV"
    MFCC = "MFCC"
    FORMANT = "Formant"
    EGEMAPS = "EGeMAPS"
    SYNTHETIC = "Synthetic"


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class ChannelSeries:
    """M channels by N frames, uniformly sampled."""

    data: np.ndarray
    frame_rate_hz: float
    channel_names: tuple[str, ...]
    source: FeatureSource = FeatureSource.SYNTHETIC

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"channel data must be a non-empty M x N matrix, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("channel data contains NaN or Inf")
        if not self.frame_rate_hz > 0:
            raise ValueError("frame rate must be positive")
        names = tuple(self.channel_names)
        if len(names) != data.shape[0]:
            raise ValueError(f"{len(names)} channel names for {data.shape[0]} channels")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "source", FeatureSource(self.source))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate_hz


TV_CHANNELS = ("LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD", "periodicity", "aperiodicity")


# -- waveform -----------------------------------------------------------------

def load_wav(path: str | Path) -> Waveform:
    """Read a mono PCM WAV file as floats in [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_ch, width, rate, n = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    if n_ch != 1:
        raise FormatError(f"{path}: expected mono audio, found {n_ch} channels")
    if len(raw) != n * width:
        raise FormatError(f"{path}: truncated sample data")
    if width == 1:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif width == 2:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    elif width == 4:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    else:
        raise FormatError(f"{path}: unsupported sample width {width}")
    if rate != 8000:
        warnings.warn(f"{path}: sample rate {rate} Hz, features are tuned for 8000 Hz", stacklevel=2)
    return Waveform(x, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write a mono 16-bit PCM WAV (samples clipped to [-1, 1])."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(w.sample_rate_hz))
        wf.writeframes(pcm.tobytes())


def normalize_peak(w: Waveform) -> Waveform:
    peak = np.max(np.abs(w.samples)) if len(w.samples) else 0.0
    if peak == 0:
        return w
    return Waveform(w.samples / peak, w.sample_rate_hz)


# -- MFCC ---------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters evenly spaced on the mel scale from 0 Hz to Nyquist."""
    mels = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2)
    hz = mel_to_hz(mels)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_filters, len(bin_freqs)))
    for m in range(n_filters):
        lo, mid, hi = hz[m], hz[m + 1], hz[m + 2]
        rise = (bin_freqs - lo) / (mid - lo)
        fall = (hi - bin_freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def mfcc_frame_count(n_samples: int, sample_rate: int, window_s=0.020, hop_s=0.010) -> int:
    win, hop = round(window_s * sample_rate), round(hop_s * sample_rate)
    return (n_samples - win) // hop + 1


def mfcc(
    w: Waveform,
    n_coeffs: int = 13,
    n_filters: int = 26,
    window_s: float = 0.020,
    hop_s: float = 0.010,
    preemphasis: float = 0.97,
    drop_first: bool = True,
) -> ChannelSeries:
    """MFCC time series (coefficients 2..13 by default) at a 10 ms frame rate."""
    sr = int(w.sample_rate_hz)
    if sr < 8000:
        raise ValueError(f"sample rate {sr} Hz is below 8000 Hz")
    win, hop = round(window_s * sr), round(hop_s * sr)
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < win:
        raise ValueError(f"audio shorter than one {window_s * 1000:.0f} ms analysis window")
    x = np.append(x[0], x[1:] - preemphasis * x[:-1])
    n_frames = (len(x) - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(win)
    n_fft = max(512, 1 << math.ceil(math.log2(win)))
    power = np.abs(np.fft.rfft(frames, n_fft)) ** 2 / n_fft
    energies = power @ mel_filterbank(n_filters, n_fft, sr).T
    log_e = np.log(np.maximum(energies, np.finfo(np.float64).eps))
    ceps = dct(log_e, type=2, axis=1, norm="ortho")[:, :n_coeffs]
    first = 1 if drop_first else 0
    names = tuple(f"mfcc{k + 1}" for k in range(first, n_coeffs))
    return ChannelSeries(ceps[:, first:].T, sr / hop, names, FeatureSource.MFCC)


# -- feature CSV --------------------------------------------------------------

def ingest_feature_csv(
    path: str | Path,
    expected_channels: int | None = None,
    source: FeatureSource | str | None = None,
) -> ChannelSeries:
    """Read a frame-per-row feature CSV.

    Leading ``# key=value`` lines carry metadata; ``frame_rate_hz`` is required
    and ``source`` is optional.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    return parse_feature_csv(text, expected_channels, source, where=str(path))


def parse_feature_csv(text, expected_channels=None, source=None, where="<csv>") -> ChannelSeries:
    meta: dict[str, str] = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines) and lines[k].lstrip().startswith("#"):
        body = lines[k].lstrip()[1:].strip()
        if "=" in body:
            key, _, value = body.partition("=")
            meta[key.strip()] = value.strip()
        k += 1
    if "frame_rate_hz" not in meta:
        raise FormatError(f"{where}: missing '# frame_rate_hz=<value>' metadata line")
    try:
        frame_rate = float(meta["frame_rate_hz"])
    except ValueError:
        raise FormatError(f"{where}: bad frame rate {meta['frame_rate_hz']!r}") from None
    if not (frame_rate > 0 and math.isfinite(frame_rate)):
        raise FormatError(f"{where}: frame rate must be positive")
    rows = list(csv.reader(io.StringIO("\n".join(lines[k:]))))
    rows = [r for r in rows if r]
    if not rows:
        raise FormatError(f"{where}: missing header row")
    header = [h.strip() for h in rows[0]]
    if expected_channels is not None and len(header) != expected_channels:
        raise FormatError(f"{where}: expected {expected_channels} channels, header names {len(header)}")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise FormatError(f"{where}: data row {r + 1} has {len(row)} cells, expected {len(header)}")
        try:
            values[r] = [float(c) for c in row]
        except ValueError:
            raise FormatError(f"{where}: data row {r + 1} has a non-numeric cell") from None
    if values.shape[0] == 0:
        raise FormatError(f"{where}: no data rows")
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{where}: NaN or Inf in data")
    src = source if source is not None else meta.get("source", FeatureSource.SYNTHETIC)
    try:
        src = FeatureSource(src)
    except ValueError:
        raise FormatError(f"{where}: unknown feature source {src!r}") from None
    return ChannelSeries(values.T, frame_rate, tuple(header), src)


def format_feature_csv(cs: ChannelSeries, extra_meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# frame_rate_hz={cs.frame_rate_hz!r}\n")
    buf.write(f"# source={cs.source.value}\n")
    for key, value in (extra_meta or {}).items():
        buf.write(f"# {key}={value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cs.channel_names)
    for row in cs.data.T:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_feature_csv(path: str | Path, cs: ChannelSeries, extra_meta: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(format_feature_csv(cs, extra_meta))


# -- segment-level transforms -------------------------------------------------

def standardize_channels(cs: ChannelSeries) -> ChannelSeries:
    """Z-score each channel with the population standard deviation.

    Constant channels come back as zeros.
    """
    if cs.n_frames < 2:
        raise ValueError("standardizing needs at least two frames")
    x = cs.data
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    std = np.sqrt(np.mean(centered**2, axis=1, keepdims=True))
    scale = np.abs(mean) + 1.0
    const = std <= 1e-12 * scale
    out = np.where(const, 0.0, centered / np.where(const, 1.0, std))
    return replace(cs, data=out)


def slice_segment(cs: ChannelSeries, start_s: float, end_s: float) -> ChannelSeries:
    total = cs.duration_s
    if not (0 <= start_s < end_s <= total + 1e-9):
        raise ValueError(f"segment [{start_s}, {end_s}] outside [0, {total}]")
    a = int(round(start_s * cs.frame_rate_hz))
    b = min(int(round(end_s * cs.frame_rate_hz)), cs.n_frames)
    if b <= a:
        raise ValueError(f"segment [{start_s}, {end_s}] covers no frames")
    return replace(cs, data=cs.data[:, a:b])
