import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynaprim.data import TrackingGT
from dynaprim.errors import EmptyFrame, NoPrimitives, ShapeMismatch
from dynaprim.geometry import SuperquadricShape, axis_angle_matrix
from dynaprim.metrics import (PrimitiveSequence, bind_points, chamfer, dynamic_chamfer, dynamic_emd, emd, evaluate,
                              predict_tracks, surface_samples, tracking_metrics)
from dynaprim.scenegen import builtin_scene, generate_sequence


def brute_force_emd(a, b):
    cost = np.linalg.norm(a[:, None] - b[None], axis=-1)
    n = len(a)
    return min(cost[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))


def test_constant_offset_tracking():
    gt = np.random.default_rng(0).normal(size=(4, 100, 3))
    pred = gt + np.array([0.07, 0.0, 0.0])
    epe, d05, d10 = tracking_metrics(pred, gt)
    assert epe == pytest.approx(0.07, abs=1e-12)
    assert (d05, d10) == (0.0, 1.0)


def test_half_offset_tracking():
    gt = np.zeros((2, 10, 3))
    pred = gt.copy()
    pred[:, :5, 2] = 0.2
    epe, d05, d10 = tracking_metrics(pred, gt)
    assert epe == pytest.approx(0.1) and d05 == 0.5 and d10 == 0.5


def test_tracking_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        tracking_metrics(np.zeros((2, 3, 3)), np.zeros((2, 4, 3)))


def test_chamfer_values():
    a = np.zeros((1, 3))
    b = np.array([[1.0, 0, 0], [3.0, 0, 0]])
    assert chamfer(a, b) == pytest.approx(1.0 + (1.0 + 9.0) / 2)
    assert chamfer(b, b) == 0.0
    with pytest.raises(EmptyFrame):
        chamfer(np.zeros((0, 3)), b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_chamfer_symmetric_and_rigid_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(20, 3)), rng.normal(size=(30, 3))
    R = axis_angle_matrix(rng.normal(size=3), rng.uniform(0, 3))
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), rel=1e-12)
    assert chamfer(a @ R.T + 1, b @ R.T + 1) == pytest.approx(chamfer(a, b), rel=1e-9)


def test_emd_matches_brute_force_on_20_instances():
    rng = np.random.default_rng(42)
    for i in range(20):
        a, b = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
        got, per = dynamic_emd([a], [b], n_sub=8, seed=i)
        assert got == pytest.approx(brute_force_emd(a, b), abs=1e-12)


def test_emd_translation_and_limits():
    a = np.random.default_rng(0).normal(size=(50, 3))
    assert emd(a, a + [0, 0.3, 0]) == pytest.approx(0.3)
    with pytest.raises(ShapeMismatch):
        emd(a, a[:10])
    with pytest.raises(ValueError):
        dynamic_emd([a], [a], n_sub=4096)


def test_dynamic_chamfer_averages_frames():
    a = [np.zeros((1, 3)), np.zeros((1, 3))]
    b = [np.zeros((1, 3)), np.array([[1.0, 0, 0]])]
    mean, per = dynamic_chamfer(a, b)
    assert per == [0.0, 2.0] and mean == 1.0
    with pytest.raises(ShapeMismatch):
        dynamic_chamfer(a, b[:1])


def two_spheres():
    shapes = [SuperquadricShape(1, 1, 0.2, 0.2, 0.2), SuperquadricShape(1, 1, 0.2, 0.2, 0.2)]
    R = np.tile(np.eye(3), (3, 2, 1, 1))
    T = np.zeros((3, 2, 3))
    T[:, 1, 0] = 1.0
    T[:, 1, 1] = [0.0, 0.1, 0.2]   # the second part moves along y
    return PrimitiveSequence(shapes, R, T, np.array([0.0, 0.5, 1.0]))


def test_binding_uses_implicit_value_with_low_index_ties():
    seq = two_spheres()
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.5, 0, 0]])
    assert list(bind_points(pts, seq.shapes, seq.R[0], seq.T[0])) == [0, 1, 0]
    with pytest.raises(NoPrimitives):
        bind_points(pts, [], seq.R[0], seq.T[0])


def test_predicted_tracks_follow_bound_primitive():
    seq = two_spheres()
    pts = np.array([[0.1, 0, 0], [1.1, 0, 0]])
    tr = predict_tracks(seq, pts, seq.timestamps)
    assert np.allclose(tr[:, 0], [[0.1, 0, 0]] * 3)
    assert np.allclose(tr[:, 1], [[1.1, 0, 0], [1.1, 0.1, 0], [1.1, 0.2, 0]])


def test_ground_truth_scores_perfectly_against_itself():
    ds = generate_sequence(builtin_scene("hinge-box", frames=6, tracking_points=500))
    from dynaprim.metrics import PrimitiveSequence as PS
    gt = PS.from_manifest(ds.manifest)
    rep = evaluate(gt, gt, ds.tracking, samples_per_frame=800, n_sub=64)
    assert rep["epe"] < 1e-9 and rep["delta05"] == 1.0
    assert rep["cd_d"] < 1e-6 and rep["emd_d"] < 1e-9
    assert len(rep["per_frame"]) == 6 and rep["n_primitives"] == 2


def test_surface_samples_rigidly_carried():
    seq = two_spheres()
    s = surface_samples(seq, 300, seed=1)
    assert len(s) == 3 and all(len(f) == 300 for f in s)
    moved = s[2] - s[0]
    assert np.allclose(np.unique(np.round(moved[:, 1], 9)), [0.0, 0.2])
