"""Synthetic multichannel corpus whose cross-channel timing depends on class.

Each session is a vector autoregression: every channel carries its own AR(1)
source, and each channel after the first adds its predecessor's output at a
lag drawn around the class's coupling delay,

    x_j[t] = s_j[t] + c * x_{j-1}[t - lag],   s_j[t] = a_j * s_j[t-1] + e_j[t].

Written as a VAR this is x_j[t] = a_j x_j[t-1] + c x_{j-1}[t-lag]
- a_j c x_{j-1}[t-lag-1] + e_j[t], and the cross-correlation between coupled
channels peaks at the lag itself. Longer delays stand in for slowed
articulatory coordination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .corpus import (LEVEL_INTERVALS, Scale, ScaleScore, SessionRecord, SeverityClass,
                     write_manifest)
from .dsp import ChannelSeries, FeatureSource, write_feature_csv

log = logging.getLogger(__name__)

MAX_RETRIES = 10


@dataclass(frozen=True)
class CouplingProfile:
    delay_frames: int
    strength: float
    noise: float = 1.0


@dataclass(frozen=True)
class SynthSpec:
    channels: int = 8
    frame_rate_hz: float = 100.0
    profiles: dict = field(default_factory=lambda: {
        SeverityClass.NORMAL: CouplingProfile(3, 1.2),
        SeverityClass.MODERATE: CouplingProfile(10, 1.2),
        SeverityClass.SEVERE: CouplingProfile(18, 1.2),
    })
    speakers_per_class: int = 15
    sessions_per_speaker: int = 3
    min_duration_s: float = 12.0
    max_duration_s: float = 60.0
    ar_range: tuple[float, float] = (0.5, 0.7)
    delay_jitter: int = 0  # per-link lag spread in frames around the class delay
    speaker_gain_sd: float = 0.15
    seed: int = 0

    def __post_init__(self):
        delays = [p.delay_frames for p in self.profiles.values()]
        if len(set(delays)) != len(delays):
            raise ValueError("class coupling delays must be pairwise distinct")
        if set(self.profiles) != set(SeverityClass):
            raise ValueError("one coupling profile per severity class is required")
        if self.max_duration_s < 10 or self.min_duration_s > self.max_duration_s:
            raise ValueError("duration range must allow recordings of at least 10 s")
        if self.channels < 2:
            raise ValueError("at least two channels are needed for coupling")


def default_spec(seed: int = 0) -> SynthSpec:
    return SynthSpec(seed=seed)


def small_spec(seed: int = 0) -> SynthSpec:
    """A quick corpus for smoke tests: 9 speakers, 2 sessions each."""
    return SynthSpec(speakers_per_class=3, sessions_per_speaker=2, min_duration_s=12.0,
                     max_duration_s=40.0, seed=seed)


SPECS = {"default": default_spec, "small": small_spec}


@dataclass(frozen=True)
class SpeakerTraits:
    ar: np.ndarray  # per-channel AR(1) coefficients
    gain: np.ndarray  # multiplicative coupling gain offsets per link
    scale: np.ndarray  # per-channel output scale


def _speaker_traits(spec: SynthSpec, rng: np.random.Generator) -> SpeakerTraits:
    m = spec.channels
    return SpeakerTraits(
        ar=rng.uniform(*spec.ar_range, size=m),
        gain=1.0 + spec.speaker_gain_sd * rng.standard_normal(m - 1),
        scale=np.exp(0.5 * rng.standard_normal(m)),
    )


def _is_stable(ar: np.ndarray, links: list[tuple[int, int, int, float]]) -> bool:
    """Spectral radius of the VAR companion matrix is below one."""
    m = len(ar)
    p = max([1] + [lag for _, _, lag, _ in links])
    comp = np.zeros((m * p, m * p))
    comp[np.arange(m), np.arange(m)] = ar
    for src, dst, lag, coef in links:
        comp[dst, (lag - 1) * m + src] += coef
    comp[m:, :-m] = np.eye(m * (p - 1))
    return bool(np.max(np.abs(np.linalg.eigvals(comp))) < 1.0 - 1e-9)


def simulate_var(ar, links, n_frames: int, noise: float, rng: np.random.Generator, burn_in: int = 200):
    """Simulate M x n_frames; every link must run from a lower to a higher channel."""
    m = len(ar)
    if any(src >= dst for src, dst, _, _ in links):
        raise ValueError("links must point from lower to higher channel indices")
    total = n_frames + burn_in
    drive = noise * rng.standard_normal((m, total))
    x = np.zeros((m, total))
    for j in range(m):
        for src, dst, lag, coef in links:
            if dst == j:
                drive[j, lag:] += coef * x[src, :-lag]
        x[j] = lfilter([1.0], [1.0, -ar[j]], drive[j])
    return x[:, burn_in:]


def generate_session(
    spec: SynthSpec,
    severity: SeverityClass,
    speaker_seed: int,
    session_seed: int,
    duration_s: float | None = None,
    speaker_id: str = "spk",
    session_id: str = "sess",
) -> tuple[ChannelSeries, SessionRecord]:
    """One session's channel series plus a manifest record (split unset)."""
    severity = SeverityClass(severity)
    profile = spec.profiles[severity]
    traits = _speaker_traits(spec, np.random.default_rng([spec.seed, speaker_seed]))
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([spec.seed, speaker_seed, session_seed, attempt])
        dur = duration_s if duration_s is not None else rng.uniform(spec.min_duration_s, spec.max_duration_s)
        dur = round(float(dur), 2)
        n = int(round(dur * spec.frame_rate_hz))
        ar = np.clip(traits.ar + 0.05 * rng.standard_normal(spec.channels), -0.95, 0.95)
        links = []
        for j in range(1, spec.channels):
            lag = profile.delay_frames + int(rng.integers(-spec.delay_jitter, spec.delay_jitter + 1))
            coef = profile.strength * traits.gain[j - 1]
            if coef != 0:
                lag = max(lag, 1)
                links += [(j - 1, j, lag, coef), (j - 1, j, lag + 1, -ar[j] * coef)]
        if _is_stable(ar, links):
            break
        log.debug("unstable draw for %s (attempt %d), reseeding", session_id, attempt)
    else:
        raise RuntimeError(f"no stable coefficient draw for {session_id} after {MAX_RETRIES} tries")
    x = simulate_var(ar, links, n, profile.noise, rng)
    x *= traits.scale[:, None]
    names = tuple(f"ch{k}" for k in range(spec.channels))
    cs = ChannelSeries(x, spec.frame_rate_hz, names, FeatureSource.SYNTHETIC)
    scores = _sample_scores(severity, rng)
    record = SessionRecord(session_id, speaker_id, scores, severity, None, "", dur)
    return cs, record


def _sample_scores(severity: SeverityClass, rng: np.random.Generator) -> list[ScaleScore]:
    levels = {SeverityClass.NORMAL: (1,), SeverityClass.MODERATE: (2, 3), SeverityClass.SEVERE: (4, 5)}
    level = int(rng.choice(levels[severity]))
    out = []
    for scale in (Scale.HAMD, Scale.QIDS):
        lo, hi = LEVEL_INTERVALS[scale][level - 1]
        out.append(ScaleScore(scale, int(rng.integers(lo, hi + 1))))
    return out


def generate_corpus(spec: SynthSpec, out_dir: str | Path) -> list[SessionRecord]:
    """Write ``manifest.csv`` and one feature CSV per session under ``out_dir``."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    records = []
    spk = 0
    for severity in SeverityClass:
        for _ in range(spec.speakers_per_class):
            speaker_id = f"spk{spk:03d}"
            for k in range(spec.sessions_per_speaker):
                session_id = f"{speaker_id}_s{k}"
                cs, rec = generate_session(spec, severity, spk, k, speaker_id=speaker_id,
                                           session_id=session_id)
                rel = f"features/{session_id}.csv"
                write_feature_csv(out_dir / rel, cs)
                rec.path = rel
                records.append(rec)
            spk += 1
    write_manifest(out_dir / "manifest.csv", records)
    return records
