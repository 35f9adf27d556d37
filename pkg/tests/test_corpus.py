import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gesturestyle.corpus import (
    CorpusError,
    DimensionError,
    DuplicateSegmentError,
    FeatureBundle,
    ManifestError,
    NonFiniteError,
    NormalizationStats,
    compute_normalization_stats,
    normalize_bundle,
    read_bundle,
    segment_path,
    validate_and_load_corpus,
    write_bundle,
    write_corpus,
)


def _copy(small_corpus, tmp_path):
    root = tmp_path / "c"
    shutil.copytree(small_corpus[0], root)
    return root


def test_loads_synthetic_fixture(small_corpus):
    root, manifest, accessor, cfg = small_corpus
    assert len(manifest.speakers) == 4
    assert len(accessor) == 4 * cfg.segments_per_speaker
    assert sum(1 for _ in accessor) == len(accessor)


def test_manifest_default_dimensions(small_corpus):
    manifest = small_corpus[1]
    assert manifest.frames_per_segment == 64
    assert (manifest.pose_dim, manifest.face_dim, manifest.n_tags) == (22, 30, 38)


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="missing manifest"):
        validate_and_load_corpus(tmp_path)


def test_short_pose_matrix_is_named(small_corpus, tmp_path):
    root = _copy(small_corpus, tmp_path)
    path = segment_path(root, "spk01", "seg0003")
    b = read_bundle(path)
    write_bundle(path, FeatureBundle(b.speech, b.text, b.pose[:63], b.face, b.tags))
    with pytest.raises(DimensionError, match=r"spk01/seg0003: pose has shape \(63, 22\)"):
        validate_and_load_corpus(root)


def test_nan_in_face(small_corpus, tmp_path):
    root = _copy(small_corpus, tmp_path)
    path = segment_path(root, "spk02", "seg0000")
    b = read_bundle(path)
    face = b.face.copy()
    face[10, 4] = np.nan
    write_bundle(path, FeatureBundle(b.speech, b.text, b.pose, face, b.tags))
    with pytest.raises(NonFiniteError, match=r"spk02/seg0000: non-finite value in face at index \(10, 4\)"):
        validate_and_load_corpus(root)


def test_duplicate_segment_ids(small_corpus, tmp_path):
    root = _copy(small_corpus, tmp_path)
    m = json.loads((root / "manifest.json").read_text())
    m["splits"]["spk00"]["test"].append(m["splits"]["spk00"]["train"][0])
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DuplicateSegmentError):
        validate_and_load_corpus(root)


def test_missing_segment_file(small_corpus, tmp_path):
    root = _copy(small_corpus, tmp_path)
    segment_path(root, "spk03", "seg0001").unlink()
    with pytest.raises(CorpusError, match="spk03/seg0001"):
        validate_and_load_corpus(root)


def test_write_reload_is_byte_stable(small_corpus, tmp_path):
    root, manifest, accessor, _ = small_corpus
    out = tmp_path / "copy"
    write_corpus(out, manifest, accessor)
    m2, acc2 = validate_and_load_corpus(out)
    assert m2 == manifest
    for key in accessor.keys():
        assert segment_path(root, *key).read_bytes() == segment_path(out, *key).read_bytes()
        a, b = accessor[key].bundle, acc2[key].bundle
        for x, y in zip(a.matrices(), b.matrices()):
            np.testing.assert_array_equal(x, y)


def test_accessor_is_read_only_and_repeatable(small_corpus):
    root, _, accessor, _ = small_corpus
    before = segment_path(root, "spk00", "seg0000").read_bytes()
    a = accessor.get("spk00", "seg0000").bundle
    with pytest.raises(ValueError):
        a.pose[0, 0] = 1.0
    b = accessor.get("spk00", "seg0000").bundle
    for x, y in zip(a.matrices(), b.matrices()):
        assert x.tobytes() == y.tobytes()
    assert segment_path(root, "spk00", "seg0000").read_bytes() == before


# --------------------------------------------------------------------------
# normalization


def _bundle(rng, T=8, dims=(3, 4, 22, 30), k=5, scale=1.0):
    return FeatureBundle(*(rng.normal(size=(T, d)) * scale + 1.0 for d in dims), (rng.random(k) < 0.3).astype(float))


def test_stats_all_zero_clamps_to_epsilon():
    z = FeatureBundle(np.zeros((4, 3)), np.zeros((4, 2)), np.zeros((4, 22)), np.zeros((4, 30)), np.zeros(5))
    stats = compute_normalization_stats([z, z])
    for name in ("speech", "text", "pose", "face"):
        np.testing.assert_array_equal(stats.mean[name], 0.0)
        np.testing.assert_array_equal(stats.std[name], 1e-8)


def test_stats_two_values():
    mk = lambda v: FeatureBundle(np.full((1, 1), v), np.full((1, 1), v), np.full((1, 22), v), np.full((1, 30), v), np.zeros(1))
    stats = compute_normalization_stats([mk(1.0), mk(3.0)])
    assert stats.mean["speech"][0] == 2.0
    assert stats.std["speech"][0] == 1.0


def test_stats_empty_input():
    with pytest.raises(ValueError):
        compute_normalization_stats([])


def test_stats_match_two_pass_oracle(small_corpus):
    _, _, accessor, _ = small_corpus
    bundles = accessor.bundles("train")
    stats = compute_normalization_stats(bundles)
    for name in ("speech", "text", "pose", "face"):
        x = np.concatenate([np.asarray(b.stream(name), dtype=np.float64) for b in bundles])
        n = x.shape[0]
        mean = x.sum(axis=0) / n
        std = np.sqrt(((x - mean) ** 2).sum(axis=0) / n)
        np.testing.assert_allclose(stats.mean[name], mean, rtol=0, atol=1e-9)
        np.testing.assert_allclose(stats.std[name], std, rtol=0, atol=1e-9)


def test_mean_maps_to_zero(small_corpus):
    stats = compute_normalization_stats(small_corpus[2].bundles("train"))
    b = FeatureBundle(*(np.tile(stats.mean[n], (64, 1)) for n in ("speech", "text", "pose", "face")), np.ones(38))
    out = normalize_bundle(b, stats)
    for n in ("speech", "text", "pose", "face"):
        np.testing.assert_allclose(out.stream(n), 0.0, atol=1e-12)
    assert out.tags is b.tags


def test_normalized_train_split_has_std_half(small_corpus):
    bundles = small_corpus[2].bundles("train")
    stats = compute_normalization_stats(bundles)
    normed = [normalize_bundle(b, stats) for b in bundles]
    for n in ("speech", "text", "pose", "face"):
        x = np.concatenate([b.stream(n) for b in normed])
        assert np.abs(x.mean(axis=0)).max() <= 1e-6
        assert np.abs(x.std(axis=0) - 0.5).max() <= 1e-6


def test_normalize_dimension_mismatch(small_corpus):
    stats = compute_normalization_stats(small_corpus[2].bundles("train"))
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        normalize_bundle(_bundle(rng, dims=(3, 4, 22, 30)), stats)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_normalize_roundtrip(seed, scale):
    rng = np.random.default_rng(seed)
    train = [_bundle(rng, scale=scale) for _ in range(3)]
    stats = compute_normalization_stats(train)
    x = _bundle(rng, scale=scale)
    back = normalize_bundle(normalize_bundle(x, stats), stats, "inverse")
    for n in ("speech", "text", "pose", "face"):
        np.testing.assert_allclose(back.stream(n), x.stream(n), rtol=0, atol=1e-6)


def test_stats_file_roundtrip(small_corpus, tmp_path):
    stats = compute_normalization_stats(small_corpus[2].bundles("train"))
    stats.save(tmp_path / "norm.tsty")
    back = NormalizationStats.load(tmp_path / "norm.tsty")
    assert back.epsilon == pytest.approx(1e-8, rel=1e-6)
    for n in ("speech", "text", "pose", "face"):
        np.testing.assert_allclose(back.mean[n], stats.mean[n], rtol=1e-6, atol=1e-7)
