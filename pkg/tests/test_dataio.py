import logging

import numpy as np
import pytest

from skillemb import dataio
from skillemb.dataio import AugmentConfig, BatchSpec, SkillFrameSpec

IDENTITY = AugmentConfig(brightness=(1, 1), contrast=(1, 1), saturation=(1, 1), mirror_prob=0.0)


def _demo(frames, success=True, demo_id="d", size=8, seed=0, task="t"):
    rng = np.random.default_rng(seed)
    views = rng.integers(0, 256, size=(2, frames, size, size, 3), dtype=np.uint8)
    return dataio.Demonstration(views, task, success, demo_id)


def _dataset(n, frames, success=True):
    return dataio.MultiTaskDataset([_demo(frames, success, f"d{i}", seed=i) for i in range(n)])


# -- augmentation ------------------------------------------------------------


def test_augment_identity_at_degenerate_ranges(rng):
    frame = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    assert np.array_equal(dataio.augment(frame, rng, IDENTITY), frame)


def test_augment_mirror_probability_one(rng):
    frame = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    cfg = AugmentConfig((1, 1), (1, 1), (1, 1), mirror_prob=1.0)
    assert np.array_equal(dataio.augment(frame, rng, cfg), frame[:, ::-1])


def test_augment_brightness_clips(rng):
    frame = np.full((4, 4, 3), 250, dtype=np.uint8)
    frame[0, 0] = 100
    cfg = AugmentConfig((1.2, 1.2), (1, 1), (1, 1), mirror_prob=0.0)
    out = dataio.augment(frame, rng, cfg)
    assert out.max() == 255 and out[1, 1, 0] == 255 and out[0, 0, 0] == 120


def test_augment_random_crop_keeps_shape(rng):
    frame = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    cfg = AugmentConfig((1, 1), (1, 1), (1, 1), 0.0, True, (0.5, 0.5))
    out = dataio.augment(frame, rng, cfg)
    assert out.shape == frame.shape and out.dtype == np.uint8


def test_normalize_layout():
    frames = np.zeros((2, 5, 4, 4, 3), dtype=np.uint8)
    out = dataio.normalize(frames)
    assert out.shape == (2, 5, 3, 4, 4) and out.dtype == np.float32
    assert out[0, 0, 0, 0, 0] == pytest.approx(-0.485 / 0.229)


# -- batch sampling ----------------------------------------------------------


def test_metric_batch_structure(rng):
    ds = _dataset(6, 20)
    b = dataio.sample_metric_batch(ds, BatchSpec(view_pairs=4, frames=32), rng, normalized=False)
    labels, counts = np.unique(b.labels, return_counts=True)
    assert len(labels) == 16 and np.all(counts == 2)
    for lab in labels:
        idx = np.flatnonzero(b.labels == lab)
        assert sorted(b.view_ids[idx]) == [0, 1]
        assert b.time_indices[idx[0]] == b.time_indices[idx[1]]
        assert b.source_pair_ids[idx[0]] == b.source_pair_ids[idx[1]]


def test_metric_batch_single_pair(rng):
    b = dataio.sample_metric_batch(_dataset(1, 10), BatchSpec(view_pairs=1, frames=8), rng, normalized=False)
    assert len(np.unique(b.labels)) == 4 and len(b.labels) == 8


def test_metric_batch_normalized_shape(rng):
    b = dataio.sample_metric_batch(_dataset(2, 10), BatchSpec(view_pairs=2, frames=8), rng)
    assert b.frames.shape == (8, 3, 8, 8)


def test_negative_mask_definition(rng):
    b = dataio.sample_metric_batch(_dataset(3, 30), BatchSpec(view_pairs=2, frames=16), rng, normalized=False)
    mask = b.negative_mask(margin=2)
    for i in range(len(b.labels)):
        for k in range(len(b.labels)):
            want = (b.source_pair_ids[i] == b.source_pair_ids[k] and b.labels[i] != b.labels[k]
                    and abs(b.time_indices[i] - b.time_indices[k]) >= 2)
            assert mask[i, k] == want


def test_metric_batch_errors(rng):
    with pytest.raises(dataio.SamplingError):
        dataio.sample_metric_batch(_dataset(6, 20), BatchSpec(view_pairs=3, frames=32), rng)
    with pytest.raises(dataio.SamplingError):
        dataio.sample_metric_batch(_dataset(2, 20), BatchSpec(view_pairs=4, frames=32), rng)


def test_skill_start_range(rng):
    ds = _dataset(3, 40)
    b = dataio.sample_skill_pairs(ds, SkillFrameSpec(2, 15), 200, False, rng)
    assert b.frames.shape == (200, 2, 8, 8, 3)
    assert b.start_times.min() >= 0 and b.start_times.max() <= 24
    assert b.start_times.max() == 24  # upper end is reachable
    for k in range(5):
        demo = ds.demonstrations[b.demo_index[k]]
        t, v = b.start_times[k], b.view_ids[k]
        assert np.array_equal(b.frames[k, 1], demo.views[v, t + 15])


def test_skill_success_only_on_failed_data(rng):
    with pytest.raises(dataio.SamplingError):
        dataio.sample_skill_pairs(_dataset(3, 40, success=False), SkillFrameSpec(2, 15), 4, True, rng)
    b = dataio.sample_skill_pairs(_dataset(3, 40, success=False), SkillFrameSpec(2, 15), 4, False, rng)
    assert len(b.start_times) == 4


def test_skill_spec_validation():
    with pytest.raises(ValueError):
        SkillFrameSpec(0, 15)


# -- disk I/O ------------------------------------------------------------------


@pytest.fixture
def saved(tmp_path):
    ds = dataio.MultiTaskDataset([_demo(5, True, f"a{i}", seed=i, task="ta") for i in range(3)]
                                 + [_demo(4, False, f"b{i}", seed=9 + i, task="tb") for i in range(3)],
                                 "train")
    dataio.save_dataset(ds, tmp_path)
    return tmp_path, ds


def test_load_dataset_roundtrip(saved):
    root, ds = saved
    back = dataio.load_dataset(root, "train")
    assert len(back) == 6 and back.tasks == {"ta", "tb"}
    by_id = {d.demo_id: d for d in back.demonstrations}
    for d in ds.demonstrations:
        assert np.array_equal(by_id[d.demo_id].views, d.views)
        assert by_id[d.demo_id].success == d.success


def test_load_dataset_rejects_length_mismatch(saved, caplog):
    root, _ = saved
    (root / "train" / "ta" / "a0" / "view1" / "frame_000004.png").unlink()
    with caplog.at_level(logging.ERROR):
        back = dataio.load_dataset(root, "train")
    assert len(back) == 5 and "a0" in caplog.text
    with pytest.raises(dataio.DemoError):
        dataio.load_dataset(root, "train", strict=True)


def test_load_dataset_empty_split_warns(saved, caplog):
    root, _ = saved
    (root / "validation").mkdir()
    with caplog.at_level(logging.WARNING):
        ds = dataio.load_dataset(root, "validation")
    assert len(ds) == 0 and "empty" in caplog.text


def test_load_dataset_missing(tmp_path):
    with pytest.raises(dataio.DataError):
        dataio.load_dataset(tmp_path / "nope", "train")
    with pytest.raises(dataio.DataError):
        dataio.load_dataset(tmp_path, "train")


def test_state_roundtrip(tmp_path):
    ds = dataio.generate_synthetic_dataset(["stack"], 1, seed=4, fraction_unsuccessful=0.0, image_size=32)
    dataio.save_dataset(ds, tmp_path)
    back = dataio.load_dataset(tmp_path, "train").demonstrations[0]
    assert np.array_equal(back.states, ds.demonstrations[0].states)
    assert back.scene_state(0).eff.tolist() == ds.demonstrations[0].scene_state(0).eff.tolist()


def test_demo_needs_two_views():
    with pytest.raises(dataio.DemoError):
        dataio.Demonstration(np.zeros((1, 4, 8, 8, 3), np.uint8), "t", True, "x")


# -- generation ------------------------------------------------------------------


def test_generation_counts_failures():
    ds = dataio.generate_synthetic_dataset(["stack"], 4, seed=0, fraction_unsuccessful=0.5, image_size=32)
    assert len(ds) == 4 and sum(not d.success for d in ds.demonstrations) == 2


def test_generation_byte_identical(tmp_path):
    kw = dict(tasks=["color_push"], demos_per_task=2, seed=5, image_size=32)
    a = dataio.generate_synthetic_dataset(**kw)
    b = dataio.generate_synthetic_dataset(**kw)
    for x, y in zip(a.demonstrations, b.demonstrations):
        assert x.views.tobytes() == y.views.tobytes() and x.states.tobytes() == y.states.tobytes()
    dataio.save_dataset(a, tmp_path / "a")
    dataio.save_dataset(b, tmp_path / "b")
    fa = sorted((tmp_path / "a").rglob("*.png"))
    fb = sorted((tmp_path / "b").rglob("*.png"))
    assert len(fa) == len(fb) > 0
    assert all(p.read_bytes() == q.read_bytes() for p, q in zip(fa, fb))


def test_generation_seed_changes_data():
    a = dataio.generate_synthetic_dataset(["stack"], 1, seed=0, image_size=32, fraction_unsuccessful=0)
    b = dataio.generate_synthetic_dataset(["stack"], 1, seed=1, image_size=32, fraction_unsuccessful=0)
    assert a.demonstrations[0].views.tobytes() != b.demonstrations[0].views.tobytes()


def test_generation_rejects_bad_arguments():
    with pytest.raises(ValueError):
        dataio.generate_synthetic_dataset(["stack"], 1, 0, fraction_unsuccessful=1.0)
    with pytest.raises(ValueError):
        dataio.generate_synthetic_dataset(["fly"], 1, 0)


def test_select_tasks_and_successful(tiny_splits):
    train = tiny_splits["train"]
    assert train.select_tasks(["stack"]).tasks == {"stack"}
    assert all(d.success for d in train.successful().demonstrations)
