import math

import numpy as np
import pytest
import torch

from conftest import gradient_instance, gradient_suite
from dynaprim.errors import NonFiniteGradient, NonFiniteLoss
from dynaprim.losses import total_loss
from dynaprim.optim import AdamState, adam_step, check_gradients, clip_by_global_norm, gradients


def test_adam_first_step_moves_by_lr():
    p = torch.tensor([1.0, -2.0, 0.0], dtype=torch.float64)
    st = AdamState(lr=0.1)
    adam_step(st, {"p": p}, {"p": torch.tensor([3.0, -0.5, 0.0], dtype=torch.float64)})
    # bias-corrected first step is lr * g / (|g| + eps)
    assert torch.allclose(p, torch.tensor([0.9, -1.9, 0.0], dtype=torch.float64), atol=1e-7)
    assert st.step == 1


def test_adam_matches_torch_reference(rng):
    x0 = rng.normal(size=5)
    ours = torch.tensor(x0)
    ref = torch.tensor(x0, requires_grad=True)
    opt = torch.optim.Adam([ref], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
    st = AdamState(lr=1e-2)
    for _ in range(30):
        g = ours * 2 + 1
        adam_step(st, {"x": ours}, {"x": g})
        opt.zero_grad()
        (ref**2 + ref).sum().backward()
        opt.step()
    assert torch.allclose(ours, ref.detach(), atol=1e-10)


def test_adam_rejects_nonfinite_gradient_without_side_effects():
    p = torch.zeros(2)
    st = AdamState()
    with pytest.raises(NonFiniteGradient):
        adam_step(st, {"p": p}, {"p": torch.tensor([1.0, float("nan")])})
    assert st.step == 0 and not p.any()


def test_gradients_reject_nonfinite_loss():
    x = torch.ones(2, requires_grad=True)
    with pytest.raises(NonFiniteLoss):
        gradients((x / 0.0).sum() * float("inf"), {"x": x})


def test_gradients_fill_unused_with_zero():
    x = torch.ones(2, requires_grad=True)
    y = torch.ones(3, requires_grad=True)
    g = gradients((x * 3).sum(), {"x": x, "y": y})
    assert torch.equal(g["y"], torch.zeros(3)) and torch.equal(g["x"], torch.full((2,), 3.0))


def test_clip_global_norm():
    g = {"a": torch.tensor([3.0]), "b": torch.tensor([4.0])}
    assert clip_by_global_norm(g, 10.0) == 5.0 and float(g["a"]) == 3.0
    assert clip_by_global_norm(g, 1.0) == 5.0
    assert math.hypot(float(g["a"]), float(g["b"])) == pytest.approx(1.0)


def test_remap_rows_keeps_survivors_and_zeros_new():
    st = AdamState()
    st.m["w"] = torch.tensor([[1.0], [2.0], [3.0]])
    st.v["w"] = torch.tensor([[4.0], [5.0], [6.0]])
    st.remap_rows("w", [2, 0, -1], torch.zeros(3, 1))
    assert st.m["w"].flatten().tolist() == [3.0, 1.0, 0.0]
    assert st.v["w"].flatten().tolist() == [6.0, 4.0, 0.0]


def test_check_gradients_simple_function():
    x = torch.tensor([0.3, -1.2], dtype=torch.float64, requires_grad=True)
    rep = check_gradients(lambda: (x**3).sum() + torch.sin(x).prod(), {"x": x})
    assert rep.ok(1e-7) and rep.n_checked == 2


def test_check_gradients_no_parameters():
    rep = check_gradients(lambda: torch.tensor(1.0), {})
    assert rep.max_rel_error == 0.0 and rep.worst_path is None and rep.n_checked == 0


def test_check_gradients_reports_broken_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x**2

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * 3 * x  # should be 2x

    x = torch.tensor([0.5, 1.0, 2.0], dtype=torch.float64, requires_grad=True)
    y = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
    rep = check_gradients(lambda: Wrong.apply(x).sum() + (y**2).sum(), {"y": y, "x": x})
    assert not rep.ok(1e-4)
    assert rep.worst_path.startswith("x[")
    assert rep.per_parameter["y"] < 1e-8


def test_full_objective_gradients():
    reports = gradient_suite()
    for rep in reports:
        assert rep.ok(1e-4), (rep.worst_path, rep.max_rel_error)
    model, _, _ = gradient_instance()
    assert set(reports[0].per_parameter) == set(model.named_parameters())


def test_round_trip_term_has_no_gradient_outside_inverse_net():
    from dataclasses import replace

    model, batch, w = gradient_instance()
    w = replace(w, **{k: 0.0 for k in ("fit", "over", "parsi", "vol", "smooth", "trans")})
    g = gradients(total_loss(model, batch, w).total_tensor, model.named_parameters())
    assert all(not g[n].any() for n in g if not n.startswith("inv."))
    assert any(g[n].any() for n in g if n.startswith("inv."))
