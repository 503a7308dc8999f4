"""Initialization, warm-up, main training with adaptive control, and refinement."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .control import ControlConfig, control_step
from .data import Dataset, ObservationBatch
from .deform import DeformNet, PosEncConfig
from .elements import scatter_elements
from .errors import BadBounds, TooFewTimestamps
from .geometry import SuperquadricShape, build_mesh
from .losses import LossWeights, total_loss
from .model import SceneModel, eps_to_raw, opacity_to_raw
from .optim import AdamState, adam_step, clip_by_global_norm, gradients

log = logging.getLogger(__name__)

SHAPE_FIELDS = ("eps_raw", "log_scale", "opacity_raw")
POSE_FIELDS = ("rot6", "trans")


@dataclass
class TrainConfig:
    K_init: int = 10
    elements_per_primitive: int = 256
    s_scene: float = 0.2
    motion_bounds: list | None = None
    iterations_warmup: int = 5000
    iterations_main: int = 60000
    iterations_refine: int = 60000
    control_interval: int = 2000
    # frames drawn per iteration for the fitting term (0 = every frame)
    frames_per_step: int = 8
    # warm-up fits only the first n frames with frozen nets (0 = every frame)
    warmup_frames: int = 1
    # fraction of main training over which the sampled frames widen from the
    # warm-up frames to the whole sequence (0 = whole sequence from the start)
    time_ramp: float = 0.5
    lr: float = 1e-3
    refine_lr_scale: float = 0.01
    clip_norm: float = 10.0
    seed: int = 0
    desk_scale: bool = False
    subdivisions: int = 2
    net_depth: int = 8
    net_width: int = 256
    k_pos: int = 10
    k_time: int = 6
    include_input: bool = True
    activation: str = "silu"
    rot_init_std: float = 0.1
    eps_init: tuple = (0.5, 1.5)
    scale_init: tuple = (0.5, 1.0)
    opacity_init: float = 0.9
    dtype: str = "float32"
    weights: LossWeights = field(default_factory=LossWeights)
    control: ControlConfig = field(default_factory=ControlConfig)

    def __post_init__(self):
        if not 0.0 <= self.time_ramp <= 1.0:
            raise ValueError("time_ramp must be in [0, 1]")
        for name in ("K_init", "elements_per_primitive", "control_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("iterations_warmup", "iterations_main", "iterations_refine", "frames_per_step",
                     "warmup_frames"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.control, dict):
            self.control = ControlConfig(**self.control)

    def _scaled(self, n: int) -> int:
        return max(n // 10, 1) if self.desk_scale and n > 0 else n

    @property
    def warmup(self) -> int:
        return self._scaled(self.iterations_warmup)

    @property
    def main(self) -> int:
        return self._scaled(self.iterations_main)

    @property
    def refine(self) -> int:
        return self._scaled(self.iterations_refine)

    @property
    def interval(self) -> int:
        return self._scaled(self.control_interval)

    def torch_dtype(self):
        return getattr(torch, self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    controls: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def write_jsonl(self, path) -> None:
        by_iter: dict = {}
        for rep in self.controls:
            by_iter.setdefault(rep.iteration, []).append(rep)
        with open(path, "w") as fh:
            for rec in self.steps:
                fh.write(json.dumps(rec) + "\n")
                if rec["phase"] == "main":
                    for rep in by_iter.get(rec["iter"], []):
                        fh.write(json.dumps({"type": "control", **rep.to_json()}) + "\n")


def _check_bounds(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.shape != (2, 3) or not np.all(np.isfinite(b)) or np.any(b[1] <= b[0]):
        raise BadBounds(f"motion bounds must be [[min xyz], [max xyz]] with max > min, got {bounds!r}")
    return b


def make_nets(cfg: TrainConfig) -> tuple[DeformNet, DeformNet]:
    enc = PosEncConfig(cfg.k_pos, cfg.k_time, cfg.include_input)
    kw = dict(depth=cfg.net_depth, width=cfg.net_width, encoding=enc, activation=cfg.activation,
              dtype=cfg.torch_dtype())
    return DeformNet(seed=cfg.seed * 2 + 1, **kw), DeformNet(seed=cfg.seed * 2 + 2, **kw)


def initialize(cfg: TrainConfig, motion_bounds=None) -> SceneModel:
    """Random primitives inside the motion bounds plus fresh deformation nets."""
    bounds = _check_bounds(cfg.motion_bounds if motion_bounds is None else motion_bounds)
    rng = np.random.default_rng(cfg.seed)
    K = cfg.K_init
    trans = rng.uniform(bounds[0], bounds[1], size=(K, 3))
    rot6 = np.tile([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], (K, 1)) + rng.normal(0.0, cfg.rot_init_std, size=(K, 6))
    eps = rng.uniform(*cfg.eps_init, size=(K, 2))
    scale = rng.uniform(*cfg.scale_init, size=(K, 3)) * cfg.s_scene
    params = {
        "eps_raw": eps_to_raw(eps),
        "log_scale": np.log(scale),
        "rot6": rot6,
        "trans": trans,
        "opacity_raw": np.full(K, float(opacity_to_raw(cfg.opacity_init))),
    }
    faces, barys = [], []
    for k in range(K):
        mesh = build_mesh(SuperquadricShape.from_arrays(eps[k], scale[k]), cfg.subdivisions)
        els = scatter_elements(mesh, cfg.elements_per_primitive, [cfg.seed, k])
        faces.append(els.face_index)
        barys.append(els.barycentric)
    fwd, inv = make_nets(cfg)
    return SceneModel(params, np.stack(faces), np.stack(barys), fwd, inv,
                      subdivisions=cfg.subdivisions, dtype=cfg.torch_dtype())


def scene_diagonal(dataset: Dataset) -> float:
    pts = np.concatenate([f.points for f in dataset.frames])
    return float(np.linalg.norm(pts.max(0) - pts.min(0)))


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], -1) / (rho[..., None] + 1)
    return np.maximum(v - theta, 0.0)


def _record(phase: str, it: int, K: int, bd, grad_norm: float) -> dict:
    return {"phase": phase, "iter": it, "K": K, **bd.as_dict(), "grad_norm": grad_norm}


class FrameSampler:
    """Seeded stream of sorted frame minibatches, one per iteration.

    ``limit`` restricts a draw to the first ``limit`` frames.
    """

    def __init__(self, n_frames: int, per_step: int, seed):
        self.n = n_frames
        self.per_step = per_step
        self.rng = np.random.default_rng(seed)

    def __call__(self, limit: int | None = None):
        n = self.n if limit is None else max(1, min(limit, self.n))
        k = n if self.per_step <= 0 else min(self.per_step, n)
        if k == self.n:
            return None
        return np.sort(self.rng.choice(n, size=k, replace=False))


def frame_horizon(it: int, total: int, n_frames: int, start: int, ramp: float) -> int:
    """Number of leading frames visible at main iteration ``it``."""
    if ramp <= 0 or total <= 0:
        return n_frames
    frac = min(1.0, (it + 1) / (ramp * total))
    return int(round(start + frac * (n_frames - start)))


def _step(model: SceneModel, batch, cfg: TrainConfig, adam: AdamState, names, lr_scale=1.0,
          track_elements: bool = False, frames=None):
    params = model.named_parameters()
    active = {n: params[n] for n in names}
    bd = total_loss(model, batch, cfg.weights, keep_element_grad=track_elements, frames=frames)
    wrt = dict(active)
    if track_elements:
        wrt["_elements"] = bd.element_world
    grads = gradients(bd.total_tensor, wrt)
    elem_grad = grads.pop("_elements", None)
    gnorm = clip_by_global_norm(grads, cfg.clip_norm)
    adam_step(adam, active, grads, lr_scale=lr_scale)
    if elem_grad is not None:
        _, K, M, _ = elem_grad.shape
        # the fit term averages over frames, so summing over the minibatch and
        # rescaling by K*M / (2 lambda_fit) reads roughly as a per-element
        # fitting residual in scene units
        scale = (K * M) / (2.0 * max(cfg.weights.fit, 1e-12))
        stat = elem_grad.detach().double().norm(dim=-1).sum(0).numpy() * scale
        model.grad_accum += stat
        model.grad_count += 1
    return bd, gnorm


def _net_names(model: SceneModel) -> list[str]:
    return [n for n in model.named_parameters() if n.startswith(("fwd.", "inv."))]


def train(model: SceneModel, dataset: Dataset, cfg: TrainConfig, train_log: TrainLog | None = None,
          adam: AdamState | None = None):
    """Warm-up with frozen nets, then joint training with periodic control.

    Control runs after every ``interval``-th main iteration, except the very
    last one so every control step is followed by optimization.  Returns
    ``(model, log, adam)``.
    """
    if len(dataset.frames) < 3:
        raise TooFewTimestamps("training needs at least 3 frames")
    train_log = TrainLog() if train_log is None else train_log
    adam = AdamState(lr=cfg.lr) if adam is None else adam
    batch = ObservationBatch(dataset.frames)
    diag = scene_diagonal(dataset)
    ts = dataset.timestamps

    warm = np.arange(min(cfg.warmup_frames, len(batch))) if cfg.warmup_frames > 0 else None
    for it in range(cfg.warmup):
        bd, g = _step(model, batch, cfg, adam, list(model.params), frames=warm)
        train_log.steps.append(_record("warmup", it, model.K, bd, g))

    pick = FrameSampler(len(batch), cfg.frames_per_step, [cfg.seed, 101])
    for it in range(cfg.main):
        names = list(model.params) + _net_names(model)
        horizon = frame_horizon(it, cfg.main, len(batch), len(warm) if warm is not None else len(batch),
                                cfg.time_ramp)
        bd, g = _step(model, batch, cfg, adam, names, track_elements=True, frames=pick(horizon))
        train_log.steps.append(_record("main", it, model.K, bd, g))
        done = it + 1
        if done % cfg.interval == 0 and done < cfg.main:
            rep = control_step(model, cfg.control, ts, diag, adam=adam, iteration=it)
            train_log.controls.append(rep)
            log.info("control @%d: %d -> %d (cloned %d, merged %d, pruned %d)", it, rep.before, rep.after,
                     len(rep.cloned), len(rep.merged), len(rep.pruned))
    return model, train_log, adam


def refine(model: SceneModel, dataset: Dataset, cfg: TrainConfig, train_log: TrainLog | None = None,
           adam: AdamState | None = None):
    """Lower learning rates, freeze canonical pose, free barycentric coordinates."""
    train_log = TrainLog() if train_log is None else train_log
    adam = AdamState(lr=cfg.lr) if adam is None else adam
    batch = ObservationBatch(dataset.frames)
    names = list(SHAPE_FIELDS) + ["elem_bary"] + _net_names(model)
    pick = FrameSampler(len(batch), cfg.frames_per_step, [cfg.seed, 102])
    for it in range(cfg.refine):
        bd, g = _step(model, batch, cfg, adam, names, lr_scale=cfg.refine_lr_scale, frames=pick())
        with torch.no_grad():
            proj = project_to_simplex(model.elem_bary.detach().double().numpy())
            model.elem_bary.copy_(torch.as_tensor(proj, dtype=model.dtype))
        train_log.steps.append(_record("refine", it, model.K, bd, g))
    return model, train_log, adam


def fit(dataset: Dataset, cfg: TrainConfig):
    """initialize -> train -> refine; returns (model, log)."""
    bounds = cfg.motion_bounds if cfg.motion_bounds is not None else dataset.manifest.motion_bounds
    model = initialize(cfg, bounds)
    model, train_log, adam = train(model, dataset, cfg)
    model, train_log, _ = refine(model, dataset, cfg, train_log, adam)
    return model, train_log
