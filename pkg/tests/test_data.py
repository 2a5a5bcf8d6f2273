import json

import numpy as np
import pytest

from affectseq import data
from affectseq.affect_space import AU_SLICE, EXPR_SLICE, expected_aus, relatedness_matrix


def test_distribute_examples():
    assert data.distribute(1000, [0.63, 0.19, 0.18]) == [630, 190, 180]
    assert sum(data.distribute(7, [0.4, 0.3, 0.3])) == 7
    with pytest.raises(data.DatasetError):
        data.distribute(10, [0.5, 0.6])


# ---------------------------------------------------------------------------
# frame datasets


def test_frame_dataset_deterministic():
    recipe = data.FrameRecipe(d_in=16)
    a, _ = data.gen_frame_dataset(5, 20, recipe)
    b, _ = data.gen_frame_dataset(5, 20, recipe)
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.features, t.features)
        assert s.expr == t.expr


def test_frame_dataset_label_mix_counts():
    mix = (("va", 0.4), ("expr", 0.3), ("au", 0.3))
    samples, _ = data.gen_frame_dataset(6, 100, data.FrameRecipe(d_in=8, label_mix=mix))
    n_va = sum(s.va is not None for s in samples)
    n_expr = sum(s.expr is not None for s in samples)
    n_au = sum(s.au is not None for s in samples)
    assert abs(n_va - 40) <= 1 and abs(n_expr - 30) <= 1 and abs(n_au - 30) <= 1
    assert all((s.va is not None) + (s.expr is not None) + (s.au is not None) == 1 for s in samples)


def test_zero_noise_au_labels_follow_relatedness():
    samples, _ = data.gen_frame_dataset(7, 50, data.FrameRecipe(d_in=8, noise=0.0))
    for s in samples:
        onehot = np.zeros(7)
        onehot[s.expr] = 1.0
        expect = (expected_aus(onehot) > 0.5).astype(float)
        np.testing.assert_array_equal(s.au, expect)


def test_zero_noise_has_no_expression_au_conflicts():
    m = relatedness_matrix()
    samples, _ = data.gen_frame_dataset(8, 50, data.FrameRecipe(d_in=8, noise=0.0))
    for s in samples:
        active = np.flatnonzero(s.au)
        related = set(np.flatnonzero(m[s.expr]))
        assert set(active) <= related and set(active) == related


# ---------------------------------------------------------------------------
# padding


def test_pad_sequence_appends_zero_rows():
    frames = np.ones((3, 4))
    padded, length = data.pad_sequence(frames, 5)
    assert length == 3
    np.testing.assert_array_equal(padded[:3], frames)
    np.testing.assert_array_equal(padded[3:], np.zeros((2, 4)))


def test_pad_sequence_identity_at_full_length():
    frames = np.random.default_rng(0).normal(size=(4, 2))
    padded, length = data.pad_sequence(frames, 4)
    assert length == 4
    np.testing.assert_array_equal(padded, frames)


def test_pad_sequence_rejects_empty_and_overlong():
    with pytest.raises(data.DatasetError):
        data.pad_sequence(np.zeros((0, 3)), 4)
    with pytest.raises(data.DatasetError, match="truncation"):
        data.pad_sequence(np.zeros((5, 3)), 4)


# ---------------------------------------------------------------------------
# video datasets


def test_video_dataset_deterministic_and_padded():
    recipe = data.VideoRecipe(l_min=2, l_max=6)
    a, manifest = data.gen_video_dataset(9, 12, recipe, t=8)
    b, _ = data.gen_video_dataset(9, 12, recipe, t=8)
    assert manifest.d == 26 and manifest.t == 8
    for s, t_ in zip(a, b):
        np.testing.assert_array_equal(s.frames, t_.frames)
        assert s.length == t_.length
        np.testing.assert_array_equal(s.frames[s.length:], 0.0)
        assert np.all((s.label >= 0) & (s.label <= 1))


def test_video_labels_ignore_padded_rows():
    recipe = data.VideoRecipe(l_min=2, l_max=6)
    samples, _ = data.gen_video_dataset(10, 10, recipe, t=8)
    rng = np.random.default_rng(1)
    for s in samples:
        corrupted = s.frames.copy()
        corrupted[s.length:] = rng.normal(size=(8 - s.length, 26))
        np.testing.assert_array_equal(
            data.video_label(corrupted, s.length), data.video_label(s.frames, s.length)
        )


def test_video_label_reads_only_prefix():
    recipe = data.VideoRecipe(l_min=3, l_max=3)
    samples, _ = data.gen_video_dataset(11, 5, recipe, t=6)
    for s in samples:
        np.testing.assert_allclose(s.label, data.video_label(s.frames, s.length), atol=1e-15)


def test_noise_padding_fills_rows():
    recipe = data.VideoRecipe(l_min=2, l_max=4, padding="noise")
    samples, _ = data.gen_video_dataset(12, 10, recipe, t=8)
    assert any(np.any(s.frames[s.length:] != 0.0) for s in samples)
    for s in samples:
        # noise rows still look like affect rows (simplex block included)
        np.testing.assert_allclose(s.frames[:, EXPR_SLICE].sum(axis=1), 1.0, atol=1e-9)


def test_descriptor_videos_have_configured_width():
    recipe = data.VideoRecipe(l_min=2, l_max=4, feature_kind="descriptor", d_in=12)
    samples, manifest = data.gen_video_dataset(13, 4, recipe, t=6)
    assert manifest.d == 12
    assert samples[0].frames.shape == (6, 12)
    for s in samples:
        np.testing.assert_array_equal(s.frames[s.length:], 0.0)


def test_gen_rejects_bad_ranges():
    with pytest.raises(data.DatasetError):
        data.gen_video_dataset(1, 4, data.VideoRecipe(l_min=2, l_max=9), t=8)
    with pytest.raises(data.DatasetError):
        data.gen_video_dataset(1, 4, data.VideoRecipe(l_min=0, l_max=3), t=8)
    with pytest.raises(data.DatasetError):
        data.gen_video_dataset(1, 4, data.VideoRecipe(padding="wrap"), t=32)


# ---------------------------------------------------------------------------
# storage round trips


def test_video_round_trip_exact(tmp_path):
    recipe = data.VideoRecipe(l_min=2, l_max=6)
    samples, manifest = data.gen_video_dataset(14, 8, recipe, t=8)
    path = tmp_path / "videos.jsonl"
    data.save_dataset(path, samples, manifest)
    loaded, manifest2 = data.load_dataset(path)
    assert manifest2.kind == "videos" and manifest2.n == 8
    for s, t_ in zip(samples, loaded):
        assert s.id == t_.id and s.length == t_.length
        np.testing.assert_array_equal(s.frames, t_.frames)
        np.testing.assert_array_equal(s.label, t_.label)


def test_frame_round_trip_exact(tmp_path):
    mix = (("va", 0.3), ("expr", 0.3), ("au", 0.2), ("all", 0.2))
    samples, manifest = data.gen_frame_dataset(15, 30, data.FrameRecipe(d_in=8, label_mix=mix))
    path = tmp_path / "frames.jsonl"
    data.save_dataset(path, samples, manifest)
    loaded, _ = data.load_dataset(path)
    for s, t_ in zip(samples, loaded):
        np.testing.assert_array_equal(s.features, t_.features)
        assert (s.va is None) == (t_.va is None)
        if s.va is not None:
            np.testing.assert_array_equal(s.va, t_.va)
        assert s.expr == t_.expr
        if s.au is not None:
            np.testing.assert_array_equal(s.au, t_.au)


def test_same_seed_writes_identical_bytes(tmp_path):
    recipe = data.VideoRecipe(l_min=2, l_max=6)
    paths = []
    for tag in ("a", "b"):
        samples, manifest = data.gen_video_dataset(16, 6, recipe, t=8)
        p = tmp_path / f"{tag}.jsonl"
        data.save_dataset(p, samples, manifest)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert data.manifest_path(paths[0]).read_bytes() == data.manifest_path(paths[1]).read_bytes()


def test_malformed_line_reports_line_number(tmp_path):
    recipe = data.VideoRecipe(l_min=2, l_max=4)
    samples, manifest = data.gen_video_dataset(17, 3, recipe, t=6)
    path = tmp_path / "bad.jsonl"
    data.save_dataset(path, samples, manifest)
    lines = path.read_text().splitlines()
    lines[1] = lines[1][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(data.DatasetError, match="line 2"):
        data.load_dataset(path)


def test_broken_expression_simplex_rejected(tmp_path):
    recipe = data.VideoRecipe(l_min=2, l_max=4)
    samples, manifest = data.gen_video_dataset(18, 3, recipe, t=6)
    samples[1].frames[0, EXPR_SLICE] = 0.8 / 7  # sums to 0.8
    path = tmp_path / "bad.jsonl"
    data.save_dataset(path, samples, manifest)
    with pytest.raises(data.DatasetError, match="expr"):
        data.load_dataset(path)


def test_length_beyond_t_rejected(tmp_path):
    recipe = data.VideoRecipe(l_min=2, l_max=4)
    samples, manifest = data.gen_video_dataset(19, 2, recipe, t=6)
    path = tmp_path / "bad.jsonl"
    data.save_dataset(path, samples, manifest)
    records = [json.loads(l) for l in path.read_text().splitlines()]
    records[0]["length"] = 9
    path.write_text("\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n")
    with pytest.raises(data.DatasetError, match="length"):
        data.load_dataset(path)


def test_nonzero_padding_rejected_for_zero_mode(tmp_path):
    recipe = data.VideoRecipe(l_min=2, l_max=4)
    samples, manifest = data.gen_video_dataset(20, 2, recipe, t=6)
    samples[0].frames[5, 0] = 0.123
    path = tmp_path / "bad.jsonl"
    data.save_dataset(path, samples, manifest)
    with pytest.raises(data.DatasetError, match="padded"):
        data.load_dataset(path)


def test_unlabeled_frame_rejected(tmp_path):
    samples, manifest = data.gen_frame_dataset(21, 2, data.FrameRecipe(d_in=4))
    path = tmp_path / "frames.jsonl"
    data.save_dataset(path, samples, manifest)
    records = [json.loads(l) for l in path.read_text().splitlines()]
    records[0]["labels"] = {"va": None, "expr": None, "au": None}
    path.write_text("\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n")
    with pytest.raises(data.DatasetError, match="no labels"):
        data.load_dataset(path)


def test_missing_manifest_rejected(tmp_path):
    path = tmp_path / "orphan.jsonl"
    path.write_text("{}\n")
    with pytest.raises(data.DatasetError, match="manifest"):
        data.load_dataset(path)


# ---------------------------------------------------------------------------
# splits


def test_split_sizes_and_partition():
    samples, _ = data.gen_video_dataset(22, 50, data.VideoRecipe(l_min=2, l_max=4), t=6)
    parts = data.split(samples, (0.63, 0.19, 0.18), seed=3)
    assert [len(parts[k]) for k in ("train", "val", "test")] == [32, 9, 9]
    ids = [s.id for part in parts.values() for s in part]
    assert sorted(ids) == sorted(s.id for s in samples)
    assert len(set(ids)) == len(ids)


def test_split_deterministic():
    samples, _ = data.gen_video_dataset(23, 30, data.VideoRecipe(l_min=2, l_max=4), t=6)
    a = data.split(samples, (0.6, 0.2, 0.2), seed=4)
    b = data.split(samples, (0.6, 0.2, 0.2), seed=4)
    assert [s.id for s in a["train"]] == [s.id for s in b["train"]]
    c = data.split(samples, (0.6, 0.2, 0.2), seed=5)
    assert [s.id for s in a["train"]] != [s.id for s in c["train"]]


def test_select_columns_subsets():
    samples, _ = data.gen_video_dataset(24, 3, data.VideoRecipe(l_min=2, l_max=4), t=6)
    va_only = data.select_columns(samples, "va")
    assert va_only[0].frames.shape == (6, 2)
    np.testing.assert_array_equal(va_only[0].frames, samples[0].frames[:, :2])
    np.testing.assert_array_equal(va_only[0].label, samples[0].label)
    au_only = data.select_columns(samples, "au")
    assert au_only[0].frames.shape == (6, 17)
    np.testing.assert_array_equal(au_only[0].frames, samples[0].frames[:, AU_SLICE])
    with pytest.raises(data.DatasetError):
        data.select_columns(samples, "pixels")


def test_video_batch_arrays():
    samples, _ = data.gen_video_dataset(25, 4, data.VideoRecipe(l_min=2, l_max=4), t=6)
    frames, lengths, labels = data.video_arrays(samples)
    assert frames.shape == (4, 6, 26) and lengths.shape == (4,) and labels.shape == (4, 7)
