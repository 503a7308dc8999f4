"""Adaptive primitive control: clone, merge and prune."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .elements import scatter_elements
from .geometry import SuperquadricShape, build_mesh, implicit_value, sample_inside, sq_volume
from .model import SceneModel

PRUNE_REASONS = ("opacity", "volume-jump", "group-prune")


@dataclass
class ControlConfig:
    # per-element fitting residual in scene units (unit-diagonal scenes);
    # None selects the relative rule tau_g = tau_g_median_factor * median
    tau_g: float | None = 0.1
    tau_g_median_factor: float = 0.5
    tau_p: float = 0.15
    tau_o: float = 0.7
    group_overlap: float = 0.8
    group_volume_fraction: float = 1.0 / 3.0
    tau_alpha: float = 0.3
    volume_jump: float = 10.0
    scale_reduce_trigger: float = 0.5
    scale_reduce_factor: float = 0.6
    overlap_samples: int = 2048
    max_overlap_timestamps: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("tau_p", "tau_o", "tau_alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.tau_g is not None and self.tau_g <= 0:
            raise ValueError("tau_g must be positive")
        if self.volume_jump <= 1 or self.overlap_samples < 1:
            raise ValueError("volume_jump > 1 and overlap_samples >= 1 required")


@dataclass
class ControlReport:
    """What one control step did.

    Indices in each list refer to primitive positions at the start of the
    pass that produced the entry (passes run prune, merge, clone).
    """

    before: int
    after: int = 0
    iteration: int | None = None
    cloned: list = field(default_factory=list)      # (source, new index)
    merged: list = field(default_factory=list)      # (input indices, output index)
    pruned: list = field(default_factory=list)      # (index, reason)
    tau_g: float | None = None

    def reconciles(self) -> bool:
        merged_away = sum(len(ins) - 1 for ins, _ in self.merged)
        return self.after == self.before + len(self.cloned) - len(self.pruned) - merged_away

    def extend(self, other: "ControlReport") -> None:
        self.cloned += other.cloned
        self.merged += other.merged
        self.pruned += other.pruned
        if other.tau_g is not None:
            self.tau_g = other.tau_g
        self.after = other.after

    def to_json(self) -> dict:
        d = asdict(self)
        d["merged"] = [{"inputs": list(map(int, i)), "output": int(o)} for i, o in self.merged]
        d["pruned"] = [{"id": int(i), "reason": r} for i, r in self.pruned]
        d["cloned"] = [{"source": int(s), "new": int(n)} for s, n in self.cloned]
        return d


# ---------------------------------------------------------------------------
# primitive-set surgery
# ---------------------------------------------------------------------------


def _rebuild(model: SceneModel, rows, overrides=None, new_elements=None, adam=None):
    """Replace the primitive set by ``rows`` of the current one (with edits).

    ``rows[i]`` is the source index of new primitive ``i``.  ``overrides``
    maps new index -> {field: value}; ``new_elements`` maps new index ->
    (faces, bary) for freshly scattered element sets.
    """
    rows = np.asarray(rows, dtype=np.int64)
    params = {k: v[rows] for k, v in model.numpy_params().items()}
    for i, upd in (overrides or {}).items():
        for k, v in upd.items():
            params[k][i] = v
    face = model.elem_face.numpy()[rows].copy()
    bary = model.elem_bary.detach().double().numpy()[rows].copy()
    accum = model.grad_accum[rows].copy()
    count = model.grad_count[rows].copy()
    for i, (f, b) in (new_elements or {}).items():
        face[i], bary[i] = f, b
        accum[i], count[i] = 0.0, 0
    model.set_primitives(params, face, bary, accum, count)
    if adam is not None:
        src = rows.copy()
        for i in (new_elements or {}):
            src[i] = -1
        for k, p in model.params.items():
            adam.remap_rows(k, src, p)
        adam.remap_rows("elem_bary", src, model.elem_bary)


def _volumes(model: SceneModel) -> np.ndarray:
    with torch.no_grad():
        return np.asarray(sq_volume((model.eps().double().numpy(), model.scale().double().numpy())))


# ---------------------------------------------------------------------------
# prune
# ---------------------------------------------------------------------------


def volume_jump_prune(volumes, jump: float = 10.0) -> np.ndarray:
    """Indices removed by the largest adjacent >jump ratio in ascending volume order."""
    v = np.asarray(volumes, dtype=float)
    if len(v) < 2:
        return np.array([], dtype=np.int64)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ratios = sv[1:] / np.maximum(sv[:-1], 1e-300)
    hits = np.nonzero(ratios > jump)[0]
    if len(hits) == 0:
        return np.array([], dtype=np.int64)
    bound = sv[hits.max()]
    return np.nonzero(v <= bound)[0]


def prune_pass(model: SceneModel, cfg: ControlConfig, adam=None) -> ControlReport:
    before = model.K
    rep = ControlReport(before=before)
    alpha = model.opacity().detach().double().numpy()
    low = set(np.nonzero(alpha < cfg.tau_alpha)[0].tolist())
    if len(low) == before:
        low.discard(int(np.argmax(alpha)))
    alive = [k for k in range(before) if k not in low]
    vols = _volumes(model)
    jumped = {alive[i] for i in volume_jump_prune(vols[alive], cfg.volume_jump)}
    if len(jumped) == len(alive):
        jumped.discard(alive[int(np.argmax(vols[alive]))])
    rep.pruned = [(k, "opacity") for k in sorted(low)] + [(k, "volume-jump") for k in sorted(jumped)]
    keep = [k for k in range(before) if k not in low and k not in jumped]
    if len(keep) < before:
        _rebuild(model, keep, adam=adam)
    rep.after = model.K
    return rep


# ---------------------------------------------------------------------------
# merge
# ---------------------------------------------------------------------------


def overlap_timestamps(timestamps, limit: int) -> np.ndarray:
    ts = np.asarray(timestamps, dtype=float)
    if len(ts) <= limit:
        return ts
    return ts[np.unique(np.round(np.linspace(0, len(ts) - 1, limit)).astype(int))]


def mean_overlap_matrix(shapes: list[SuperquadricShape], R, T, n_samples: int = 2048, seed: int = 0) -> np.ndarray:
    """(K, K) directional Monte-Carlo overlap averaged over the leading frame axis of R, T.

    Entry (i, j) is the fraction of i's volume inside j; diagonal is 1.
    """
    K = len(shapes)
    R, T = np.asarray(R, dtype=float), np.asarray(T, dtype=float)
    out = np.eye(K)
    for i in range(K):
        local = sample_inside(shapes[i], n_samples, np.random.default_rng([seed, i]))
        world = np.einsum("fab,sb->fsa", R[:, i], local) + T[:, i, None, :]
        for j in range(K):
            if j == i:
                continue
            in_j = np.einsum("fba,fsb->fsa", R[:, j], world - T[:, j, None, :])
            out[i, j] = np.mean(np.asarray(implicit_value(in_j, shapes[j])) <= 1.0)
    return out


def overlap_groups(overlap: np.ndarray, tau_o: float) -> list[list[int]]:
    """Connected components of the best-neighbour graph (edge iff best overlap > tau_o)."""
    K = len(overlap)
    parent = list(range(K))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(K):
        if K < 2:
            break
        row = overlap[i].copy()
        row[i] = -np.inf
        j = int(np.argmax(row))
        if row[j] > tau_o:
            a, b = find(i), find(j)
            if a != b:
                parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for i in range(K):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def group_survivors(group, volumes, overlap, volume_fraction: float = 1 / 3, max_overlap: float = 0.8):
    """Members kept for merging; the largest (lowest index on ties) always survives.

    Members below ``volume_fraction`` of the group maximum are dropped; the
    rest are visited largest-first and dropped if they overlap an already
    kept member by more than ``max_overlap`` in either direction.
    """
    vmax = max(volumes[g] for g in group)
    order = sorted(group, key=lambda g: (-volumes[g], g))
    kept: list[int] = []
    for g in order:
        if kept and volumes[g] < volume_fraction * vmax:
            continue
        if any(overlap[g, k] > max_overlap or overlap[k, g] > max_overlap for k in kept):
            continue
        kept.append(g)
    return kept


def merge_pass(model: SceneModel, cfg: ControlConfig, timestamps, adam=None) -> ControlReport:
    before = model.K
    rep = ControlReport(before=before)
    if before < 2:
        rep.after = before
        return rep
    ts = np.asarray(timestamps, dtype=float)
    t_ref = float(ts[len(ts) // 2])
    sub = overlap_timestamps(ts, cfg.max_overlap_timestamps)
    R, T = model.world_poses_numpy(sub)
    shapes = model.shapes()
    ov = mean_overlap_matrix(shapes, R, T, cfg.overlap_samples, cfg.seed)
    vols = _volumes(model)
    groups = [g for g in overlap_groups(ov, cfg.tau_o) if len(g) > 1]
    if not groups:
        rep.after = before
        return rep

    _, T_ref = model.world_poses_numpy([t_ref])
    T_ref = T_ref[0]
    removed: set[int] = set()
    new_trans: dict[int, np.ndarray] = {}
    for g in groups:
        kept = group_survivors(g, vols, ov, cfg.group_volume_fraction, cfg.group_overlap)
        largest = kept[0]
        rep.pruned += [(k, "group-prune") for k in g if k not in kept]
        removed.update(k for k in g if k != largest)
        if len(kept) > 1:
            w = vols[kept] / vols[kept].sum()
            world = (w[:, None] * T_ref[kept]).sum(0)
            with torch.no_grad():
                x = torch.as_tensor(world, dtype=model.dtype)[None]
                back, _ = model.inverse_net(x, torch.full((1,), t_ref, dtype=model.dtype))
            new_trans[largest] = (x + back)[0].double().numpy()
        rep.merged.append((kept, largest))

    keep = [k for k in range(before) if k not in removed]
    overrides = {keep.index(k): {"trans": v} for k, v in new_trans.items()}
    _rebuild(model, keep, overrides=overrides, adam=adam)
    rep.merged = [(ins, keep.index(out)) for ins, out in rep.merged]
    rep.after = model.K
    return rep


# ---------------------------------------------------------------------------
# clone
# ---------------------------------------------------------------------------


def clone_threshold(mean_grad: np.ndarray, cfg: ControlConfig) -> float:
    if cfg.tau_g is not None:
        return cfg.tau_g
    touched = mean_grad[np.isfinite(mean_grad)]
    return float(cfg.tau_g_median_factor * np.median(touched)) if touched.size else np.inf


def clone_pass(model: SceneModel, cfg: ControlConfig, scene_diagonal: float = 1.0,
               adam=None, step_seed: int = 0) -> ControlReport:
    before = model.K
    rep = ControlReport(before=before)
    mean_grad = model.grad_accum / np.maximum(model.grad_count, 1)
    tau = clone_threshold(mean_grad, cfg)
    rep.tau_g = tau
    frac = (mean_grad > tau).mean(axis=1)
    marked = [k for k in range(before) if frac[k] > cfg.tau_p]
    if not marked:
        model.grad_accum[:] = 0.0
        model.grad_count[:] = 0
        rep.after = before
        return rep

    rows = list(range(before)) + marked
    overrides, new_elements = {}, {}
    log_scale = model.numpy_params()["log_scale"]
    shapes = model.shapes()
    for n, k in enumerate(marked):
        new = before + n
        shape = shapes[k]
        if shape.scale.max() > cfg.scale_reduce_trigger * scene_diagonal:
            reduced = log_scale[k] + np.log(cfg.scale_reduce_factor)
            overrides[k] = {"log_scale": reduced}
            overrides[new] = {"log_scale": reduced}
            shape = shape.scaled(cfg.scale_reduce_factor)
        seed = np.random.SeedSequence(cfg.seed, spawn_key=(1, step_seed, k))  # disjoint from init seeds
        els = scatter_elements(build_mesh(shape, model.subdivisions), model.M, seed)
        new_elements[new] = (els.face_index, els.barycentric)
        rep.cloned.append((k, new))
    _rebuild(model, rows, overrides=overrides, new_elements=new_elements, adam=adam)
    model.grad_accum[:] = 0.0
    model.grad_count[:] = 0
    rep.after = model.K
    return rep


def control_step(model: SceneModel, cfg: ControlConfig, timestamps, scene_diagonal: float = 1.0,
                 adam=None, iteration: int | None = None) -> ControlReport:
    """Prune, then merge, then clone."""
    rep = ControlReport(before=model.K, iteration=iteration)
    rep.extend(prune_pass(model, cfg, adam))
    rep.extend(merge_pass(model, cfg, timestamps, adam))
    rep.extend(clone_pass(model, cfg, scene_diagonal, adam, step_seed=iteration or 0))
    return rep
