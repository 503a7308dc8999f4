"""Training objective: point-set fitting plus the primitive and motion regularizers."""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from .data import FrameObservation, ObservationBatch
from .errors import EmptySet, TooFewTimestamps
from .geometry import implicit_value, rot6d_to_matrix, so3_log, sq_volume

IDENTITY_ROT6 = torch.tensor([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass
class LossWeights:
    over: float = 1.0
    parsi: float = 0.1
    vol: float = 0.05
    smooth: float = 1.0
    trans: float = 0.5
    back: float = 0.01
    # the Chamfer term is in squared scene units, tiny next to 1/V on a
    # unit-diagonal scene, so it needs a large weight to keep thin parts thin
    fit: float = 1e4
    # Squared-distance cost an observed point pays for being explained by a
    # fully transparent element; gives opacity a data-driven upward pull.
    fit_miss_cost: float = 0.01
    overlap_sharpness: float = 10.0
    overlap_samples: int = 128
    # overlap is averaged over at most this many evenly spaced batch frames
    overlap_frames: int = 8

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be >= 0")


@dataclass
class LossBreakdown:
    fit: float
    over: float
    parsi: float
    vol: float
    smooth: float
    trans: float
    back: float
    total: float
    total_tensor: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fit", "over", "parsi", "vol", "smooth", "trans", "back", "total")}


# ---------------------------------------------------------------------------
# data term
# ---------------------------------------------------------------------------


def _as_batch(obs) -> ObservationBatch:
    if isinstance(obs, ObservationBatch):
        return obs
    if isinstance(obs, FrameObservation):
        return ObservationBatch([obs])
    if isinstance(obs, (list, tuple)) and obs and isinstance(obs[0], FrameObservation):
        return ObservationBatch(list(obs))
    pts = np.asarray(obs, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptySet("no observed points")
    batch = ObservationBatch.__new__(ObservationBatch)
    batch.frames, batch.timestamps = None, np.zeros(1)
    batch.counts = np.array([len(pts)])
    batch.offsets = np.array([0, len(pts)])
    batch.points = pts
    batch.trees = [cKDTree(pts)]
    return batch


def fit_correspondences(elem_world, elem_opacity, batch: ObservationBatch, miss_cost: float):
    """Nearest-neighbour indices for both Chamfer directions (no gradient).

    The obs->element search runs in 4-D with an extra coordinate
    sqrt(miss_cost * (1 - opacity)) on elements so the squared distance found
    is exactly ``|o - x|^2 + miss_cost * (1 - opacity)``.
    """
    ew = elem_world.detach().cpu().double().numpy()
    alpha = elem_opacity.detach().cpu().double().numpy()
    F, E, _ = ew.shape
    extra = np.sqrt(np.maximum(miss_cost * (1.0 - alpha), 0.0))[:, None]
    e_to_o = np.empty((F, E), dtype=np.int64)
    o_to_e = np.empty(len(batch.points), dtype=np.int64)
    for f in range(F):
        _, i = batch.trees[f].query(ew[f])
        e_to_o[f] = i + batch.offsets[f]
        lo, hi = batch.offsets[f], batch.offsets[f + 1]
        obs = batch.points[lo:hi]
        if miss_cost > 0:
            tree = cKDTree(np.hstack([ew[f], extra]))
            _, j = tree.query(np.hstack([obs, np.zeros((len(obs), 1))]))
        else:
            _, j = cKDTree(ew[f]).query(obs)
        o_to_e[lo:hi] = j + f * E
    return e_to_o, o_to_e


def fit_loss_batched(elem_world, elem_opacity, batch: ObservationBatch, miss_cost: float = 0.0):
    """Frame-averaged symmetric Chamfer between (F, E, 3) elements and the batch."""
    F, E, _ = elem_world.shape
    if E == 0:
        raise EmptySet("no elements")
    e_to_o, o_to_e = fit_correspondences(elem_world, elem_opacity, batch, miss_cost)
    obs = torch.as_tensor(batch.points, dtype=elem_world.dtype)
    flat = elem_world.reshape(F * E, 3)
    frame_of_obs = np.repeat(np.arange(F), batch.counts)
    w_obs = torch.as_tensor(1.0 / batch.counts[frame_of_obs], dtype=elem_world.dtype)
    j = torch.as_tensor(o_to_e)
    alpha_o = elem_opacity[j % E]
    d_oe = ((obs - flat[j]) ** 2).sum(-1) + miss_cost * (1.0 - alpha_o)
    d_eo = ((flat - obs[torch.as_tensor(e_to_o.reshape(-1))]) ** 2).sum(-1)
    term_o = (w_obs * d_oe).sum() / F
    term_e = (elem_opacity.repeat(F) * d_eo).sum() / (F * E)
    return term_o + term_e


def loss_fit(elements, obs, opacity=None, miss_cost: float = 0.0):
    """Symmetric Chamfer between element positions and one or more observed frames.

    ``elements`` is (M, 3) for a single frame or (F, M, 3) for a batch;
    ``opacity`` is the per-element host opacity (defaults to 1).
    """
    el = torch.as_tensor(elements) if not isinstance(elements, torch.Tensor) else elements
    if el.numel() == 0:
        raise EmptySet("no elements")
    if el.dim() == 2:
        el = el[None]
    batch = _as_batch(obs)
    if opacity is None:
        opacity = torch.ones(el.shape[1], dtype=el.dtype)
    opacity = torch.as_tensor(opacity, dtype=el.dtype)
    return fit_loss_batched(el, opacity, batch, miss_cost)


# ---------------------------------------------------------------------------
# primitive regularizers
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def unit_cube_samples(n: int, seed: int = 1234) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, 3))


def soft_overlap_matrix(eps, scale, R, T, samples=None, sharpness: float = 10.0):
    """(F, K, K) soft directional overlap; entry (i, j) is how much of i lies in j.

    Samples fill each primitive's bounding box; membership is
    sigmoid(sharpness * (1 - f)).  Normalizing by i's soft self-overlap makes
    identical primitives overlap exactly 1.
    """
    if samples is None:
        samples = unit_cube_samples(128)
    u = torch.as_tensor(samples, dtype=scale.dtype)
    local = scale[:, None, :] * u[None]                                       # (K, S, 3)
    m_self = torch.sigmoid(sharpness * (1 - implicit_value(local, (eps[:, None], scale[:, None]), max_ratio=10.0)))
    world = torch.einsum("fkab,ksb->fksa", R, local) + T[:, :, None, :]      # (F, K, S, 3)
    rel = world[:, :, None] - T[:, None, :, None, :]                          # (F, Ki, Kj, S, 3)
    in_j = torch.einsum("fjba,fijsb->fijsa", R, rel)
    f_j = implicit_value(in_j, (eps[None, None, :, None], scale[None, None, :, None]), max_ratio=10.0)
    m_j = torch.sigmoid(sharpness * (1 - f_j))
    num = (m_self[None, :, None] * m_j).sum(-1)
    den = (m_self**2).sum(-1)[None, :, None]
    return num / den


def loss_overlap(eps, scale, R, T, samples=None, sharpness: float = 10.0):
    """Mean soft overlap over ordered pairs i != j (and over frames)."""
    K = scale.shape[0]
    if K < 2:
        return scale.sum() * 0.0
    if R.dim() == 3:
        R, T = R[None], T[None]
    ov = soft_overlap_matrix(eps, scale, R, T, samples, sharpness)
    off = ~torch.eye(K, dtype=torch.bool)
    return ov[:, off].mean()


def loss_parsimony(opacities):
    opacities = torch.as_tensor(opacities)
    if opacities.numel() == 0:
        return opacities.sum()
    return torch.sqrt(opacities).mean()


def loss_volume(eps, scale):
    return (1.0 / sq_volume((eps, scale))).mean()


# ---------------------------------------------------------------------------
# motion regularizers
# ---------------------------------------------------------------------------


def loss_smooth(delta_T, delta_R, base_rot6=None):
    """L1 second differences of translation residuals and of frame-to-frame rotations.

    ``delta_T`` (F, [K,] 3) and ``delta_R`` (F, [K,] 6) over consecutive
    timestamps.  Rotations are rot(base_rot6 + delta_R), base defaulting to
    the identity, so a constant residual contributes nothing.
    """
    delta_T = torch.as_tensor(delta_T)
    delta_R = torch.as_tensor(delta_R)
    if delta_T.shape[0] < 3:
        raise TooFewTimestamps("smoothness needs >= 3 timestamps")
    if base_rot6 is None:
        base_rot6 = IDENTITY_ROT6.to(delta_R.dtype)
    accel = delta_T[2:] - 2 * delta_T[1:-1] + delta_T[:-2]
    R = rot6d_to_matrix(torch.as_tensor(base_rot6, dtype=delta_R.dtype) + delta_R)
    step = R[1:] @ R[:-1].transpose(-1, -2)
    jerk = so3_log(step[1:] @ step[:-1].transpose(-1, -2))
    return (accel.abs().sum(-1) + jerk.abs().sum(-1)).mean()


def loss_trans(delta_T):
    delta_T = torch.as_tensor(delta_T)
    return delta_T.abs().sum(-1).mean() / 3.0


def loss_back(inverse_net, T_canon, delta_T_fwd, timestamps):
    """Round-trip residual (1/3)|T + dT_fwd + dT_back(T + dT_fwd, t) - T|.

    Canonical translations and forward residuals are detached so only the
    inverse network receives gradient.
    """
    dT = delta_T_fwd.detach()
    T = T_canon.detach()
    if dT.dim() == 2:
        dT = dT[None]
    t = torch.as_tensor(np.asarray(timestamps, dtype=float), dtype=T.dtype).reshape(-1)
    observed = T[None] + dT
    back, _ = inverse_net(observed, t[:, None].expand(-1, T.shape[0]))
    return (dT + back).abs().sum(-1).mean() / 3.0


# ---------------------------------------------------------------------------
# total
# ---------------------------------------------------------------------------


def _even_subset(n: int, limit: int) -> np.ndarray:
    if n <= limit:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, limit)).astype(int))


def total_loss(model, batch: ObservationBatch, weights: LossWeights, keep_element_grad: bool = False,
               frames=None):
    """Evaluate every term; returns LossBreakdown.

    Smoothness and the translation penalty always see every batch
    timestamp.  ``frames`` (indices into the batch) restricts the fitting,
    overlap and round-trip terms to a minibatch of frames; default is all
    of them.  With
    ``keep_element_grad`` the (F_sel, K, M, 3) element positions tensor is
    attached as ``breakdown.element_world`` so callers can differentiate
    with respect to it.
    """
    ts = batch.timestamps
    dT, dR = model.deformation(ts)
    if frames is None:
        sel, fit_batch = np.arange(len(ts)), batch
    else:
        sel = np.asarray(frames, dtype=np.int64)
        fit_batch = batch.subset(sel)
    sel_t = torch.as_tensor(sel)
    R, T = model.poses(ts[sel], (dT[sel_t], dR[sel_t]))
    eps, scale, alpha = model.eps(), model.scale(), model.opacity()
    zero = scale.sum() * 0.0

    ew = model.element_world(ts[sel], poses=(R, T))
    F, K, M, _ = ew.shape
    fit = fit_loss_batched(ew.reshape(F, K * M, 3), alpha.repeat_interleave(M), fit_batch, weights.fit_miss_cost) \
        if weights.fit > 0 else zero
    if weights.over > 0:
        sub = torch.as_tensor(_even_subset(F, weights.overlap_frames))
        over = loss_overlap(eps, scale, R[sub], T[sub], unit_cube_samples(weights.overlap_samples),
                            weights.overlap_sharpness)
    else:
        over = zero
    parsi = loss_parsimony(alpha)
    vol = loss_volume(eps, scale)
    if weights.smooth > 0:
        smooth = loss_smooth(dT, dR, model.params["rot6"])
    else:
        smooth = zero
    trans = loss_trans(dT)
    back = loss_back(model.inverse_net, model.params["trans"], dT[sel_t], ts[sel]) if weights.back > 0 else zero

    w = weights
    total = (w.fit * fit + w.over * over + w.parsi * parsi + w.vol * vol
             + w.smooth * smooth + w.trans * trans + w.back * back)
    out = LossBreakdown(*(float(x.detach()) for x in (fit, over, parsi, vol, smooth, trans, back, total)), total_tensor=total)
    if keep_element_grad:
        out.element_world = ew
    return out
