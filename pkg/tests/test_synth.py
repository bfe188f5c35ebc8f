import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acfnet.acf import acf_matrix_from_array
from acfnet.corpus import (LEVEL_INTERVALS, Scale, SegmentRecord, SeverityClass, Split, read_manifest,
                           segment_recording)
from acfnet.dsp import ChannelSeries, FeatureSource, standardize_channels
from acfnet.pipeline import session_acfs
from acfnet.synth import (CouplingProfile, SynthSpec, default_spec, generate_corpus, generate_session,
                          small_spec)


def profiles(*delays, strength=0.9):
    return {c: CouplingProfile(d, strength) for c, d in zip(SeverityClass, delays)}


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(profiles=profiles(3, 3, 12))
    with pytest.raises(ValueError):
        SynthSpec(max_duration_s=8.0, min_duration_s=5.0)
    with pytest.raises(ValueError):
        SynthSpec(channels=1)


@pytest.mark.parametrize("seed", range(4))
def test_peak_cross_correlation_at_class_delay(seed):
    spec = SynthSpec(profiles=profiles(3, 7, 12), delay_jitter=1)
    cs, _ = generate_session(spec, SeverityClass.SEVERE, seed, 0, duration_s=60)
    z = standardize_channels(cs).data
    n = z.shape[1]
    for j in range(1, spec.channels):
        cc = [np.dot(z[j - 1, : n - d], z[j, d:]) / (n - d) for d in range(40)]
        assert abs(int(np.argmax(np.abs(cc))) - 12) <= 2


@pytest.mark.parametrize("seed", range(5))
def test_zero_coupling_white_noise_bound(seed):
    # Without AR dynamics every channel is white noise, so only sampling error remains.
    spec = SynthSpec(profiles=profiles(1, 2, 3, strength=0.0), ar_range=(0.0, 0.0))
    cs, _ = generate_session(spec, SeverityClass.NORMAL, seed, 0, duration_s=20)
    assert cs.n_frames >= 2000
    v = acf_matrix_from_array(standardize_channels(cs).data, 50).reshape(8, 8, 51)
    assert np.abs(v[~np.eye(8, dtype=bool)]).max() < 0.1


def test_generate_session_deterministic_and_finite():
    spec = small_spec(3)
    a, ra = generate_session(spec, SeverityClass.MODERATE, 4, 1)
    b, rb = generate_session(spec, SeverityClass.MODERATE, 4, 1)
    assert np.array_equal(a.data, b.data) and ra == rb
    assert np.all(np.isfinite(a.data)) and a.source is FeatureSource.SYNTHETIC
    c, _ = generate_session(spec, SeverityClass.MODERATE, 4, 2)
    assert not np.array_equal(a.data[:, :100], c.data[:, :100])


@settings(max_examples=15)
@given(st.integers(0, 1000), st.sampled_from(list(SeverityClass)))
def test_generated_signals_standardize_cleanly(seed, severity):
    cs, rec = generate_session(small_spec(seed), severity, seed, 0)
    z = standardize_channels(cs).data
    np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-9)
    assert 12.0 <= rec.duration_s <= 40.0
    assert cs.n_frames == int(round(rec.duration_s * 100))


def test_corpus_counts_scores_and_bytes(tmp_path):
    spec = SynthSpec(speakers_per_class=3, sessions_per_speaker=4, min_duration_s=12, max_duration_s=14)
    recs = generate_corpus(spec, tmp_path / "a")
    assert len(recs) == 36 and len(read_manifest(tmp_path / "a" / "manifest.csv")) == 36
    hamd_lo, hamd_hi = LEVEL_INTERVALS[Scale.HAMD][0]
    assert (hamd_lo, hamd_hi) == (0, 7)
    for r in recs:
        hamd = next(s.score for s in r.scores if s.scale is Scale.HAMD)
        if r.severity is SeverityClass.NORMAL:
            assert 0 <= hamd <= 7
    generate_corpus(spec, tmp_path / "b")
    for rel in ["manifest.csv"] + [r.path for r in recs]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_default_spec_class_separability():
    spec = default_spec(0)
    acfs = {c: [] for c in SeverityClass}
    spk = 0
    for c in SeverityClass:
        for _ in range(spec.speakers_per_class):
            for k in range(spec.sessions_per_speaker):
                cs, rec = generate_session(spec, c, spk, k)
                segs = [SegmentRecord("s", i, a, b, c)
                        for i, (a, b) in enumerate(segment_recording(rec.duration_s, Split.TEST))]
                acfs[c] += session_acfs(cs, segs, 50)
            spk += 1
    means = {c: np.mean(v, axis=0) for c, v in acfs.items()}
    classes = list(SeverityClass)
    inter = np.mean([np.linalg.norm(means[a] - means[b]) for i, a in enumerate(classes) for b in classes[i + 1:]])
    intra = np.mean([np.linalg.norm(m - means[c]) for c in classes for m in acfs[c]])
    assert inter > 3 * intra
