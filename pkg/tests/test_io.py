import json

import numpy as np
import pytest
import torch

from conftest import make_model
from dynaprim import io
from dynaprim.errors import BadManifest, MissingGT
from dynaprim.scenegen import builtin_scene, generate_sequence


def test_ply_round_trip_is_exact(tmp_path, rng):
    pts = rng.normal(size=(50, 3))
    io.write_ply(tmp_path / "a.ply", pts)
    assert np.array_equal(io.read_ply(tmp_path / "a.ply"), pts)
    io.write_ply(tmp_path / "e.ply", np.zeros((0, 3)))
    assert io.read_ply(tmp_path / "e.ply").shape == (0, 3)


def test_ply_rejects_garbage(tmp_path):
    (tmp_path / "x.ply").write_text("hello\n")
    with pytest.raises(BadManifest):
        io.read_ply(tmp_path / "x.ply")


def test_dataset_round_trip(tmp_path):
    ds = generate_sequence(builtin_scene("pliers-2part", frames=4, points_per_frame=200, tracking_points=300))
    io.export_dataset(ds, tmp_path / "d")
    back = io.load_dataset(tmp_path / "d", require_tracking=True)
    assert back.manifest == ds.manifest
    assert all(np.array_equal(a.points, b.points) for a, b in zip(ds.frames, back.frames))
    assert np.allclose(back.tracking.trajectories, ds.tracking.trajectories, atol=1e-6)
    assert np.array_equal(back.tracking.part_ids, ds.tracking.part_ids)


def test_tracking_header_layout(tmp_path):
    ds = generate_sequence(builtin_scene("slider", frames=3, tracking_points=7))
    io.write_tracking(tmp_path / "t.bin", ds.tracking)
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw[:4] == b"DPTK"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [7, 3, 0]
    assert len(raw) == 16 + 3 * 7 * 12 + 7 * 4


def test_missing_tracking(tmp_path):
    ds = generate_sequence(builtin_scene("slider", frames=3, tracking_points=7))
    io.export_dataset(ds, tmp_path)
    (tmp_path / "tracking_gt.bin").unlink()
    assert io.load_dataset(tmp_path).tracking is None
    with pytest.raises(MissingGT):
        io.load_dataset(tmp_path, require_tracking=True)


def test_bad_manifest(tmp_path):
    ds = generate_sequence(builtin_scene("slider", frames=3, tracking_points=7))
    io.export_dataset(ds, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["frame_count"] = 9
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(BadManifest):
        io.load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(BadManifest):
        io.load_manifest(tmp_path)


def test_model_round_trip(tmp_path):
    m = make_model([[0, 0, 0], [0.5, 0.1, 0]], dtype=torch.float32)
    io.save_model(tmp_path / "m.npz", m, {"note": 1})
    back = io.load_model(tmp_path / "m.npz")
    ts = np.linspace(0, 1, 4)
    R0, T0 = m.world_poses_numpy(ts)
    R1, T1 = back.world_poses_numpy(ts)
    assert np.array_equal(R0, R1) and np.array_equal(T0, T1)
    assert back.K == 2 and back.M == m.M and back.dtype == torch.float32


def test_obj_round_trip(tmp_path):
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    f = np.array([[0, 1, 2]])
    io.write_obj(tmp_path / "a.obj", [("p0", v, f), ("p1", v + 1, f)])
    objs = io.read_obj(tmp_path / "a.obj")
    assert [o[0] for o in objs] == ["p0", "p1"]
    assert np.array_equal(objs[1][1], v + 1) and np.array_equal(objs[1][2], f)
