import math

import numpy as np
import pytest
import torch

from conftest import gradient_instance, make_model
from dynaprim.data import FrameObservation, ObservationBatch
from dynaprim.errors import EmptySet, TooFewTimestamps
from dynaprim.geometry import axis_angle_matrix, matrix_to_rot6d
from dynaprim.losses import (LossWeights, loss_back, loss_fit, loss_overlap, loss_parsimony, loss_smooth,
                             loss_trans, loss_volume, soft_overlap_matrix, total_loss)

D = torch.float64


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=D)


def test_fit_zero_for_identical_sets(rng):
    pts = rng.normal(size=(40, 3))
    assert float(loss_fit(t(pts), pts)) == 0.0


def test_fit_hand_value():
    # both directions: one element at distance 1 from the single observation
    assert float(loss_fit(t([[1.0, 0, 0]]), np.zeros((1, 3)))) == pytest.approx(2.0)
    # two elements, one observed point at the first: obs->el 0, el->obs (0 + 4) / 2
    assert float(loss_fit(t([[0.0, 0, 0], [2, 0, 0]]), np.zeros((1, 3)))) == pytest.approx(2.0)


def test_fit_miss_cost_prices_transparent_elements():
    el = t([[0.0, 0, 0], [0.1, 0, 0]])
    obs = np.zeros((1, 3))
    # the coincident element is transparent; going to the opaque one costs 0.01 instead of 0.5
    v = loss_fit(el, obs, opacity=t([0.0, 1.0]), miss_cost=0.5)
    assert float(v) == pytest.approx(0.01 + (0.0 + 1.0 * 0.01) / 2)


def test_fit_empty_sets():
    with pytest.raises(EmptySet):
        loss_fit(torch.zeros(0, 3, dtype=D), np.zeros((3, 3)))
    with pytest.raises(EmptySet):
        loss_fit(t([[0.0, 0, 0]]), np.zeros((0, 3)))


def test_fit_rigid_invariance(rng):
    el, obs = rng.normal(size=(30, 3)), rng.normal(size=(50, 3))
    R = axis_angle_matrix([1, 2, 3], 0.7)
    d = np.array([3.0, -1, 2])
    a = float(loss_fit(t(el), obs))
    b = float(loss_fit(t(el @ R.T + d), obs @ R.T + d))
    assert a == pytest.approx(b, rel=1e-12)


def test_parsimony_and_volume_values():
    assert float(loss_parsimony(t([0.25, 1.0]))) == pytest.approx(0.75)
    v = float(loss_volume(t([[1.0, 1.0]]), t([[1.0, 1.0, 1.0]])))
    assert v == pytest.approx(3 / (4 * math.pi))


def test_overlap_identical_is_one_and_far_is_zero():
    eps, scale = t([[1.0, 1.0]] * 2), t([[0.3, 0.3, 0.3]] * 2)
    R = torch.eye(3, dtype=D).expand(2, 3, 3)
    same = soft_overlap_matrix(eps, scale, R[None], t([[[0, 0, 0], [0, 0, 0]]]))
    assert torch.allclose(same, torch.ones_like(same))
    far = loss_overlap(eps, scale, R, t([[0, 0, 0], [5, 0, 0]]))
    assert float(far) < 1e-12
    assert float(loss_overlap(eps[:1], scale[:1], R[:1], t([[0, 0, 0]]))) == 0.0


def test_smooth_zero_for_linear_motion():
    ts = np.linspace(0, 1, 6)
    dT = t(np.outer(ts, [1.0, 2.0, -0.5]))
    dR = t([matrix_to_rot6d(axis_angle_matrix([0, 0, 1], 0.3 * s)) - [1, 0, 0, 0, 1, 0] for s in ts])
    assert float(loss_smooth(dT, dR)) < 1e-12


def test_smooth_hand_value():
    dT = t([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    dR = torch.zeros(3, 6, dtype=D)
    assert float(loss_smooth(dT, dR)) == pytest.approx(1.0)


def test_smooth_needs_three_timestamps():
    with pytest.raises(TooFewTimestamps):
        loss_smooth(torch.zeros(2, 3), torch.zeros(2, 6))


def test_trans_value():
    assert float(loss_trans(t([[3.0, -3.0, 0.0]]))) == pytest.approx(2.0)


def test_back_only_trains_inverse_net():
    m = make_model([[0, 0, 0], [0.5, 0, 0]])
    with torch.no_grad():
        m.forward_net.head.bias[:3] = 0.1
    dT, _ = m.deformation([0.0, 1.0])
    val = loss_back(m.inverse_net, m.params["trans"], dT, [0.0, 1.0])
    assert float(val.detach()) == pytest.approx(0.1, rel=1e-6)
    val.backward()
    assert m.params["trans"].grad is None
    assert all(p.grad is None for p in m.forward_net.parameters())
    assert m.inverse_net.head.bias.grad is not None


def test_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(over=-1)


def test_total_loss_is_weighted_sum():
    model, batch, w = gradient_instance()
    bd = total_loss(model, batch, w)
    expect = sum(getattr(w, k) * getattr(bd, k) for k in ("fit", "over", "parsi", "vol", "smooth", "trans", "back"))
    assert bd.total == pytest.approx(expect, rel=1e-12)
    assert all(v > 0 for v in bd.as_dict().values())


def test_total_loss_keeps_element_tensor():
    model, batch, w = gradient_instance()
    bd = total_loss(model, batch, w, keep_element_grad=True)
    assert bd.element_world.shape == (3, 2, 12, 3)
    g, = torch.autograd.grad(bd.total_tensor, bd.element_world)
    assert torch.isfinite(g).all() and g.abs().sum() > 0


def test_single_frame_observation_accepted():
    f = FrameObservation(0.0, np.zeros((120, 3)))
    assert float(loss_fit(t([[0.0, 0, 0]]), f)) == 0.0
    assert float(loss_fit(t([[[0.0, 0, 0]]]), ObservationBatch([f]))) == 0.0
