import hashlib
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gesturestyle.corpus import Segment, validate_and_load_corpus
from gesturestyle.synthcorpus import (
    REST_FACE,
    REST_POSE,
    NotSyntheticError,
    StyleFactors,
    SynthConfig,
    SynthSidecar,
    apply_style,
    base_displacement,
    generate_synthetic_corpus,
    invert_style,
    oracle_style_transfer,
    restyle,
)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _factors(amp=1.0, offset=(0.0, 0.0), bias=0.0, smooth=0.0, k=38):
    return StyleFactors(amp, offset, bias, smooth, [1.0 / k] * k)


def test_generation_is_byte_deterministic(tmp_path):
    cfg = SynthConfig(n_speakers=4, segments_per_speaker=50, seed=7, mel_bins=8, text_dim=16)
    generate_synthetic_corpus(cfg, tmp_path / "a")
    generate_synthetic_corpus(cfg, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_generated_corpus_validates(small_corpus):
    root, manifest, accessor, cfg = small_corpus
    assert len(accessor) == cfg.n_speakers * cfg.segments_per_speaker
    side = json.loads((root / "style_factors.json").read_text())
    assert set(side["speakers"]) == set(manifest.speakers)


def test_amplitude_ratio(tmp_path):
    f1 = _factors(1.0, (0.01, -0.02), 0.02, 0.3)
    f2 = replace(f1, amplitude_scale=2.0)
    cfg = SynthConfig(n_speakers=2, segments_per_speaker=3, seed=3, mel_bins=8, text_dim=8, shared_content=True,
                      factors={"spk00": f1.__dict__, "spk01": f2.__dict__})
    generate_synthetic_corpus(cfg, tmp_path)
    _, acc = validate_and_load_corpus(tmp_path)
    for sid in ("seg0000", "seg0001"):
        a, b = acc.get("spk00", sid).bundle, acc.get("spk01", sid).bundle
        rest = np.tile(REST_POSE.reshape(-1), 1) + np.tile(f1.offset, 11)
        da = np.asarray(a.pose, dtype=np.float64) - rest
        db = np.asarray(b.pose, dtype=np.float64) - rest
        ratio = np.linalg.norm(db) / np.linalg.norm(da)
        assert abs(ratio - 2.0) <= 1e-6


def test_style_transform_inverts(small_corpus):
    rng = np.random.default_rng(1)
    d = rng.normal(size=(64, 22)) * 0.03
    f = _factors(1.7, (0.03, -0.01), 0.025, 0.55)
    np.testing.assert_allclose(invert_style(apply_style(d, f, REST_POSE), f, REST_POSE), d, atol=1e-12)


def test_identity_factors_leave_source_unchanged(tmp_path):
    ident = StyleFactors.identity(38)
    cfg = SynthConfig(n_speakers=1, segments_per_speaker=3, seed=2, mel_bins=8, text_dim=8,
                      factors={"spk00": ident.__dict__})
    generate_synthetic_corpus(cfg, tmp_path)
    _, acc = validate_and_load_corpus(tmp_path)
    side = SynthSidecar.load(tmp_path)
    seg = acc.get("spk00", "seg0001")
    out = oracle_style_transfer(seg, ident, side)
    np.testing.assert_allclose(out.pose, seg.bundle.pose, atol=1e-6)
    np.testing.assert_allclose(out.face, seg.bundle.face, atol=1e-6)


def test_oracle_amplitude_doubles_deviation(small_corpus):
    root, _, acc, _ = small_corpus
    side = SynthSidecar.load(root)
    seg = acc.get("spk00", "seg0002")
    base = oracle_style_transfer(seg, _factors(1.0), side)
    doubled = oracle_style_transfer(seg, _factors(2.0), side)
    for stream, rest in (("pose", REST_POSE), ("face", REST_FACE)):
        dev1 = base.stream(stream) - rest.reshape(-1)
        dev2 = doubled.stream(stream) - rest.reshape(-1)
        np.testing.assert_allclose(dev2, 2.0 * dev1, atol=1e-12)


def test_oracle_composes_with_inverse(small_corpus):
    root, _, acc, _ = small_corpus
    side = SynthSidecar.load(root)
    seg = acc.get("spk01", "seg0005")
    src_f = side.factors["spk01"]
    target = _factors(0.7, (-0.04, 0.02), -0.02, 0.4)
    there = oracle_style_transfer(seg, target, side)
    back = restyle(there, target, src_f)
    np.testing.assert_allclose(back.pose, seg.bundle.pose, atol=1e-6)
    np.testing.assert_allclose(back.face, seg.bundle.face, atol=1e-6)


def test_oracle_rejects_foreign_segment(small_corpus):
    root, _, acc, _ = small_corpus
    side = SynthSidecar.load(root)
    seg = acc.get("spk00", "seg0000")
    with pytest.raises(NotSyntheticError):
        oracle_style_transfer(Segment("someone", "clip1", seg.bundle), side.factors["spk00"], side)


def test_shared_content_identifiability(tmp_path):
    cfg = SynthConfig(n_speakers=3, segments_per_speaker=4, seed=11, mel_bins=8, text_dim=8, shared_content=True)
    generate_synthetic_corpus(cfg, tmp_path)
    _, acc = validate_and_load_corpus(tmp_path)
    side = SynthSidecar.load(tmp_path)
    for sid in ("seg0000", "seg0003"):
        bases = [invert_style(acc.get(spk, sid).bundle.pose, side.factors[spk], REST_POSE) for spk in side.factors]
        for b in bases[1:]:
            np.testing.assert_allclose(b, bases[0], atol=1e-6)


def test_styles_are_identifiable_from_pose_statistics(tmp_path):
    from sklearn.linear_model import LogisticRegression

    cfg = SynthConfig(n_speakers=5, segments_per_speaker=60, seed=7, mel_bins=8, text_dim=8)
    generate_synthetic_corpus(cfg, tmp_path)
    manifest, acc = validate_and_load_corpus(tmp_path)

    def feats(seg):
        p = np.asarray(seg.bundle.pose, dtype=np.float64)
        v = np.diff(p, axis=0)
        return np.concatenate([p.mean(0), p.std(0), np.abs(v).mean(0)])

    train = [(feats(g), spk) for spk in manifest.speakers for g in acc.split(spk, "train")]
    test = [(feats(g), spk) for spk in manifest.speakers for g in acc.split(spk, "test") + acc.split(spk, "val")]
    clf = LogisticRegression(max_iter=2000).fit([x for x, _ in train], [y for _, y in train])
    acc_ = np.mean(clf.predict([x for x, _ in test]) == np.array([y for _, y in test]))
    assert acc_ >= 0.95


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.05, 0.05), st.floats(0.0, 0.9))
def test_restyle_roundtrip_property(amp, ox, oy, bias, smooth):
    rng = np.random.default_rng(0)
    d = rng.normal(size=(64, 30)) * 0.02
    f = _factors(amp, (ox, oy), bias, smooth)
    np.testing.assert_allclose(invert_style(apply_style(d, f, REST_FACE), f, REST_FACE), d, atol=1e-9)
