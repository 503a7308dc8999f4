"""Reverse-mode gradients (torch autograd), Adam updates and a finite-difference checker."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NonFiniteGradient, NonFiniteLoss


def gradients(loss, params: dict) -> dict:
    """d loss / d p for every named parameter; unused parameters get zeros."""
    if not torch.isfinite(loss).all():
        raise NonFiniteLoss(f"loss is not finite: {float(loss.detach())}")
    names = [n for n, p in params.items() if p.requires_grad]
    if not loss.requires_grad:
        return {n: torch.zeros_like(params[n]) for n in names}
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    gs = list(grads.values())
    if not gs:
        return 0.0
    norms = torch._foreach_norm(gs)
    total = float(torch.linalg.vector_norm(torch.stack([n.double() for n in norms])))
    if total > max_norm:
        torch._foreach_mul_(gs, max_norm / (total + 1e-12))
    return total


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def remap_rows(self, name: str, source_rows, new_like: torch.Tensor):
        """Re-index per-row moments after primitives are added/removed; -1 rows start at zero."""
        src = np.asarray(source_rows, dtype=np.int64)
        for store in (self.m, self.v):
            old = store.get(name)
            if old is None:
                continue
            new = torch.zeros_like(new_like)
            keep = src >= 0
            if keep.any():
                new[torch.as_tensor(np.nonzero(keep)[0])] = old[torch.as_tensor(src[keep])]
            store[name] = new


def adam_step(state: AdamState, params: dict, grads: dict, lr_scale: float = 1.0, skip=()) -> None:
    """In-place bias-corrected Adam update of every parameter that has a gradient."""
    if grads:
        # one reduction per tensor; NaN and inf both survive a sum
        sums = torch.stack([g.sum().double() for g in grads.values()])
        if not torch.isfinite(sums).all():
            bad = [n for n, g in grads.items() if not torch.isfinite(g).all()]
            raise NonFiniteGradient(f"non-finite gradient for {bad[0] if bad else '?'}")
    state.step += 1
    t = state.step
    lr = state.lr * lr_scale
    bc1 = 1 - state.beta1**t
    bc2 = 1 - state.beta2**t
    names = [n for n in grads if n not in skip]
    for n in names:
        p = params[n]
        m = state.m.get(n)
        if m is None or m.shape != p.shape:
            state.m[n] = torch.zeros_like(p)
            state.v[n] = torch.zeros_like(p)
    if not names:
        return
    ps = [params[n] for n in names]
    gs = [grads[n] for n in names]
    ms = [state.m[n] for n in names]
    vs = [state.v[n] for n in names]
    with torch.no_grad():
        torch._foreach_mul_(ms, state.beta1)
        torch._foreach_add_(ms, gs, alpha=1 - state.beta1)
        torch._foreach_mul_(vs, state.beta2)
        torch._foreach_addcmul_(vs, gs, gs, value=1 - state.beta2)
        denom = torch._foreach_div(vs, bc2)
        torch._foreach_sqrt_(denom)
        torch._foreach_add_(denom, state.eps)
        torch._foreach_addcdiv_(ps, ms, denom, value=-lr / bc1)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_path: str | None
    per_parameter: dict
    n_checked: int

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def check_gradients(loss_fn, params: dict, step: float = 1e-5, floor: float = 1e-6,
                    max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Central differences vs autograd on every scalar of every named parameter.

    Relative error is |a - n| / max(|a|, |n|, floor).  ``max_entries`` caps the
    number of scalars probed per tensor (chosen with a seeded RNG).
    """
    names = [n for n, p in params.items() if p.requires_grad]
    if not names:
        return GradCheckReport(0.0, None, {}, 0)
    loss = loss_fn()
    analytic = gradients(loss, {n: params[n] for n in names})
    rng = np.random.default_rng(seed)
    per, worst, worst_path, count = {}, 0.0, None, 0
    for n in names:
        p = params[n]
        flat = p.data.view(-1)
        idx = np.arange(flat.numel())
        if max_entries is not None and len(idx) > max_entries:
            idx = np.sort(rng.choice(idx, size=max_entries, replace=False))
        a_flat = analytic[n].reshape(-1)
        err_n = 0.0
        for i in idx:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
            num = (up - down) / (2 * step)
            a = float(a_flat[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            count += 1
            if err > err_n:
                err_n = err
            if err > worst:
                worst, worst_path = err, f"{n}[{int(i)}]"
        per[n] = err_n
    return GradCheckReport(worst, worst_path, per, count)
