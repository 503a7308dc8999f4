import math

import numpy as np
import pytest

from dynaprim.errors import InvalidSpec, UnknownScene
from dynaprim.geometry import implicit_value, rot6d_to_matrix
from dynaprim.scenegen import (BUILTIN_SCENES, ArticulationSpec, JointSpec, builtin_scene, generate_sequence,
                               part_pose, spec_from_dict, viewpoint)


@pytest.fixture(scope="module")
def hinge():
    return generate_sequence(builtin_scene("hinge-box", frames=8, points_per_frame=400, tracking_points=600))


def test_normalized_to_unit_diagonal(hinge):
    # bounds are measured on fine meshes, so sample clouds span slightly less than 1
    pts = np.concatenate([f.points for f in hinge.frames])
    diag = np.linalg.norm(pts.max(0) - pts.min(0))
    assert 0.97 < diag <= 1.0 + 1e-9


def test_observations_lie_on_posed_parts(hinge):
    m = hinge.manifest
    R, T = m.pose_arrays()
    shapes = m.shapes()
    for f, frame in enumerate(hinge.frames):
        best = np.min([implicit_value((frame.points - T[f, k]) @ R[f, k], s) for k, s in enumerate(shapes)], axis=0)
        assert np.all(np.abs(best - 1) < 0.05)


def test_tracking_points_follow_their_parts(hinge):
    tr = hinge.tracking
    R, T = hinge.manifest.pose_arrays()
    for k in range(2):
        sel = tr.part_ids == k
        local = (tr.points[sel] - T[0, k]) @ R[0, k]
        for f in range(len(R)):
            assert np.allclose(local @ R[f, k].T + T[f, k], tr.trajectories[f, sel], atol=1e-12)


def test_lid_opens_170_degrees(hinge):
    R, _ = hinge.manifest.pose_arrays()
    rel = R[-1, 1] @ R[0, 1].T
    angle = math.degrees(math.acos((np.trace(rel) - 1) / 2))
    assert angle == pytest.approx(170.0, abs=1e-6)
    assert np.allclose(R[:, 0], np.eye(3))


def test_generation_is_deterministic():
    a = generate_sequence(builtin_scene("slider", frames=4, tracking_points=100))
    b = generate_sequence(builtin_scene("slider", frames=4, tracking_points=100))
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a.frames, b.frames))
    c = generate_sequence(builtin_scene("slider", frames=4, tracking_points=100, seed=1))
    assert not np.array_equal(a.frames[0].points, c.frames[0].points)


def test_motion_bounds_cover_everything(hinge):
    lo, hi = np.array(hinge.manifest.motion_bounds)
    for f in hinge.frames:
        assert (f.points >= lo - 1e-12).all() and (f.points <= hi + 1e-12).all()


def test_normal_culled_visibility():
    ds = generate_sequence(builtin_scene("rotor-face", frames=4, points_per_frame=600, visibility_mode="normal-culled"))
    n = [len(f.points) for f in ds.frames]
    assert all(150 < k < 600 for k in n)
    assert all(f.visibility is not None and f.visibility.sum() == len(f.points) for f in ds.frames)


def test_viewpoint_in_upper_hemisphere():
    for t in np.linspace(0, 1, 9):
        assert viewpoint(t)[1] > 0


def test_rotor_full_turn_returns_home():
    spec = builtin_scene("rotor-face")
    R0, T0 = part_pose(spec, spec.parts[1], 0.0)
    R1, T1 = part_pose(spec, spec.parts[1], 1.0)
    assert np.allclose(R0, R1) and np.allclose(T0, T1)


def test_pliers_keyframes_interpolate():
    j = builtin_scene("pliers-2part").joints[0]
    assert j.theta(0.25) == pytest.approx(math.radians(20))
    assert j.theta(1.0) == 0.0


def test_builtins_all_generate():
    for name in BUILTIN_SCENES:
        ds = generate_sequence(builtin_scene(name, frames=3, points_per_frame=200, tracking_points=50))
        assert ds.manifest.scene == name and len(ds.frames) == 3


def test_unknown_scene():
    with pytest.raises(UnknownScene):
        builtin_scene("teapot")


def test_spec_validation():
    spec = builtin_scene("slider")
    with pytest.raises(InvalidSpec):
        ArticulationSpec(spec.parts, (JointSpec(9, "revolute", (1.0, 0, 0)),)).validate()
    with pytest.raises(InvalidSpec):
        ArticulationSpec(spec.parts, (JointSpec(1, "screw", (1.0, 0, 0)),)).validate()
    with pytest.raises(InvalidSpec):
        ArticulationSpec(spec.parts, (JointSpec(1, "revolute", (2.0, 0, 0)),)).validate()
    with pytest.raises(InvalidSpec):
        ArticulationSpec(()).validate()


def test_spec_from_dict():
    d = {"parts": [{"id": 0, "eps": [1, 1], "scale": [1, 1, 1]},
                   {"id": 1, "eps": [0.5, 0.5], "scale": [0.3, 0.3, 0.3], "trans": [0, 1.5, 0]}],
         "joints": [{"part": 1, "type": "prismatic", "axis": [0, 1, 0], "keyframes": [[0, 0], [1, 0.5]]}],
         "frames": 5, "name": "toy"}
    spec = spec_from_dict(d)
    assert spec.frames == 5 and spec.name == "toy"
    ds = generate_sequence(spec)
    _, T = ds.manifest.pose_arrays()
    assert T[-1, 1, 1] > T[0, 1, 1]
    with pytest.raises(InvalidSpec):
        spec_from_dict({"parts": [{"id": 0}]})
