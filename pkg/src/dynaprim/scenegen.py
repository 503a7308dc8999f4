"""Synthetic articulated scenes with exact ground-truth part motion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, DatasetManifest, FrameObservation, TrackingGT
from .errors import InvalidSpec, UnknownScene
from .geometry import Pose, SuperquadricShape, axis_angle_matrix, build_mesh, matrix_to_rot6d, sample_mesh_surface

JOINT_TYPES = ("revolute", "prismatic", "rotor")
VISIBILITY_MODES = ("full", "normal-culled")
SAMPLING_SUBDIVISIONS = 4


@dataclass(frozen=True)
class PartSpec:
    shape: SuperquadricShape
    rest_pose: Pose
    part_id: int


@dataclass(frozen=True)
class JointSpec:
    part_id: int
    kind: str
    axis: tuple
    pivot: tuple = (0.0, 0.0, 0.0)
    keyframes: tuple = ((0.0, 0.0), (1.0, 0.0))  # (t, theta) pairs; radians or scene units

    def theta(self, t: float) -> float:
        ts, vals = zip(*self.keyframes)
        return float(np.interp(t, ts, vals))


@dataclass(frozen=True)
class ArticulationSpec:
    parts: tuple
    joints: tuple = ()
    frames: int = 40
    points_per_frame: int = 1000
    seed: int = 0
    visibility_mode: str = "full"
    tracking_points: int = 50000
    name: str = "custom"

    def validate(self) -> None:
        ids = [p.part_id for p in self.parts]
        if not ids:
            raise InvalidSpec("spec has no parts")
        if len(set(ids)) != len(ids):
            raise InvalidSpec("part ids must be unique")
        if self.frames < 1 or self.points_per_frame < 1 or self.tracking_points < 1:
            raise InvalidSpec("frames, points_per_frame and tracking_points must be positive")
        if self.visibility_mode not in VISIBILITY_MODES:
            raise InvalidSpec(f"unknown visibility mode {self.visibility_mode!r}")
        jointed = [j.part_id for j in self.joints]
        if len(set(jointed)) != len(jointed):
            raise InvalidSpec("at most one joint per part")
        for j in self.joints:
            if j.part_id not in ids:
                raise InvalidSpec(f"joint refers to unknown part {j.part_id}")
            if j.kind not in JOINT_TYPES:
                raise InvalidSpec(f"unknown joint type {j.kind!r}")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise InvalidSpec("joint axes must be unit vectors")
            ts = [k[0] for k in j.keyframes]
            if len(ts) < 1 or ts[0] != 0.0 or ts[-1] != 1.0 or np.any(np.diff(ts) <= 0):
                raise InvalidSpec("keyframes must increase strictly and span [0, 1]")


def timestamps(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)


def part_pose(spec: ArticulationSpec, part: PartSpec, t: float) -> tuple[np.ndarray, np.ndarray]:
    """World rotation and translation of a part at time t (joint applied after rest pose)."""
    R0, T0 = part.rest_pose.matrix, np.asarray(part.rest_pose.trans, dtype=float)
    joint = next((j for j in spec.joints if j.part_id == part.part_id), None)
    if joint is None:
        return R0, T0
    theta = joint.theta(t)
    axis, pivot = np.asarray(joint.axis, dtype=float), np.asarray(joint.pivot, dtype=float)
    if joint.kind == "prismatic":
        return R0, T0 + theta * axis
    J = axis_angle_matrix(axis, theta)
    return J @ R0, J @ (T0 - pivot) + pivot


def transport(local: np.ndarray, R: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Single code path taking part-local points to the world."""
    return local @ R.T + T


def viewpoint(t: float, radius: float = 3.0, elevation: float = math.radians(35.0)) -> np.ndarray:
    """Virtual camera circling the upper (+y) hemisphere once over the sequence."""
    az = 2 * math.pi * t
    return radius * np.array([math.cos(elevation) * math.cos(az), math.sin(elevation),
                              math.cos(elevation) * math.sin(az)])


def _sample_parts(spec: ArticulationSpec, n: int, rng: np.random.Generator):
    """Area-uniform samples over all parts: local points, outward local normals, part index."""
    meshes = [build_mesh(p.shape, SAMPLING_SUBDIVISIONS) for p in spec.parts]
    areas = np.array([m.face_areas().sum() for m in meshes])
    counts = rng.multinomial(n, areas / areas.sum())
    pts, nrm, idx = [], [], []
    for i, (m, c) in enumerate(zip(meshes, counts)):
        p, face, _ = sample_mesh_surface(m, int(c), rng)
        tri = m.vertices[m.faces[face]]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        fn *= np.sign(np.einsum("ij,ij->i", fn, tri.mean(1)))[:, None]
        fn /= np.linalg.norm(fn, axis=1, keepdims=True)
        pts.append(p)
        nrm.append(fn)
        idx.append(np.full(int(c), i))
    return np.concatenate(pts), np.concatenate(nrm), np.concatenate(idx)


def _normalization(spec: ArticulationSpec) -> tuple[np.ndarray, float]:
    lo, hi = np.full(3, np.inf), np.full(3, -np.inf)
    verts = [build_mesh(p.shape, SAMPLING_SUBDIVISIONS).vertices for p in spec.parts]
    for t in timestamps(spec.frames):
        for p, v in zip(spec.parts, verts):
            w = transport(v, *part_pose(spec, p, t))
            lo, hi = np.minimum(lo, w.min(0)), np.maximum(hi, w.max(0))
    return (lo + hi) / 2, 1.0 / float(np.linalg.norm(hi - lo))


def normalize_spec(spec: ArticulationSpec) -> tuple[ArticulationSpec, dict]:
    """Rescale and recenter so the whole sequence spans a unit-diagonal box at the origin."""
    c, k = _normalization(spec)
    parts = tuple(
        replace(p, shape=p.shape.scaled(k), rest_pose=Pose(p.rest_pose.rot6, tuple((np.asarray(p.rest_pose.trans) - c) * k)))
        for p in spec.parts
    )
    joints = []
    for j in spec.joints:
        kf = tuple((t, v * k) for t, v in j.keyframes) if j.kind == "prismatic" else j.keyframes
        joints.append(replace(j, pivot=tuple((np.asarray(j.pivot, dtype=float) - c) * k), keyframes=kf))
    return replace(spec, parts=parts, joints=tuple(joints)), {"center": c.tolist(), "scale": k}


def generate_sequence(spec: ArticulationSpec, normalize: bool = True) -> Dataset:
    spec.validate()
    norm = {"center": [0.0, 0.0, 0.0], "scale": 1.0}
    if normalize:
        spec, norm = normalize_spec(spec)
    ts = timestamps(spec.frames)
    rng = np.random.default_rng([spec.seed, 0])
    obs_local, obs_normal, obs_part = _sample_parts(spec, spec.points_per_frame, rng)
    trk_local, _, trk_part = _sample_parts(spec, spec.tracking_points, np.random.default_rng([spec.seed, 1]))

    frames, trajectories, gt_poses, all_T = [], [], [], []
    for t in ts:
        poses = [part_pose(spec, p, t) for p in spec.parts]
        gt_poses.append([{"rot6": matrix_to_rot6d(R).tolist(), "trans": T.tolist()} for R, T in poses])
        all_T += [T for _, T in poses]
        pts = np.empty_like(obs_local)
        trk = np.empty_like(trk_local)
        vis = None
        normals = np.empty_like(obs_local)
        for i, (R, T) in enumerate(poses):
            m = obs_part == i
            pts[m] = transport(obs_local[m], R, T)
            normals[m] = obs_normal[m] @ R.T
            mt = trk_part == i
            trk[mt] = transport(trk_local[mt], R, T)
        if spec.visibility_mode == "normal-culled":
            vis = np.einsum("ij,ij->i", normals, viewpoint(t) - pts) > 0
            pts = pts[vis]
        frames.append(FrameObservation(float(t), pts, vis))
        trajectories.append(trk)

    trajectories = np.stack(trajectories)
    tracking = TrackingGT(0, trajectories[0].copy(), trajectories, trk_part.astype(np.int64))
    every = np.concatenate([f.points for f in frames] + [np.array(all_T)])
    manifest = DatasetManifest(
        scene=spec.name,
        frame_count=len(frames),
        timestamps=ts.tolist(),
        motion_bounds=[every.min(0).tolist(), every.max(0).tolist()],
        frame_files=[f"frame_{i:04d}.ply" for i in range(len(frames))],
        part_ids=[p.part_id for p in spec.parts],
        part_shapes=[{"eps": p.shape.eps.tolist(), "scale": p.shape.scale.tolist()} for p in spec.parts],
        gt_poses=gt_poses,
        normalization=norm,
        canonical_frame_index=0,
        seed=spec.seed,
        visibility_mode=spec.visibility_mode,
    )
    return Dataset(frames, tracking, manifest)


# ---------------------------------------------------------------------------
# built-in archetypes (raw units; generate_sequence normalizes them)
# ---------------------------------------------------------------------------

_ID6 = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def _part(pid, eps, scale, trans):
    return PartSpec(SuperquadricShape(eps[0], eps[1], *scale), Pose(_ID6, tuple(trans)), pid)


def _hinge_box(**kw) -> ArticulationSpec:
    # box body plus a thin lid hinged on the back top edge, opening to 170 degrees
    body = _part(0, (0.2, 0.2), (1.0, 0.45, 0.7), (0.0, 0.0, 0.0))
    lid = _part(1, (0.2, 0.2), (1.0, 0.1, 0.7), (0.0, 0.58, 0.0))
    hinge = JointSpec(1, "revolute", (-1.0, 0.0, 0.0), (0.0, 0.58, -0.7), ((0.0, 0.0), (1.0, math.radians(170.0))))
    return ArticulationSpec((body, lid), (hinge,), name="hinge-box", **kw)


def _rotor_face(**kw) -> ArticulationSpec:
    # cube body with a rectangular top slab spinning a full turn about the vertical axis
    body = _part(0, (0.3, 0.3), (0.6, 0.4, 0.6), (0.0, 0.0, 0.0))
    face = _part(1, (0.3, 0.3), (0.65, 0.15, 0.4), (0.0, 0.6, 0.0))
    rotor = JointSpec(1, "rotor", (0.0, 1.0, 0.0), (0.0, 0.0, 0.0), ((0.0, 0.0), (1.0, 2 * math.pi)))
    return ArticulationSpec((body, face), (rotor,), name="rotor-face", **kw)


def _pliers(**kw) -> ArticulationSpec:
    # two slender arms; the second swings open and closed about a pin at its end
    fixed = _part(0, (0.5, 0.5), (0.9, 0.08, 0.12), (0.0, 0.0, 0.0))
    arm = _part(1, (0.5, 0.5), (0.9, 0.08, 0.12), (0.0, 0.2, 0.0))
    pin = JointSpec(1, "revolute", (0.0, 1.0, 0.0), (-0.9, 0.2, 0.0),
                    ((0.0, 0.0), (0.5, math.radians(40.0)), (1.0, 0.0)))
    return ArticulationSpec((fixed, arm), (pin,), name="pliers-2part", **kw)


def _slider(**kw) -> ArticulationSpec:
    # a block sliding along a rail
    rail = _part(0, (0.2, 0.2), (1.0, 0.1, 0.3), (0.0, 0.0, 0.0))
    block = _part(1, (0.3, 0.3), (0.25, 0.2, 0.25), (-0.6, 0.32, 0.0))
    slide = JointSpec(1, "prismatic", (1.0, 0.0, 0.0), keyframes=((0.0, 0.0), (1.0, 1.2)))
    return ArticulationSpec((rail, block), (slide,), name="slider", **kw)


BUILTIN_SCENES = {"hinge-box": _hinge_box, "rotor-face": _rotor_face, "pliers-2part": _pliers, "slider": _slider}


def builtin_scene(name: str, frames: int = 40, points_per_frame: int = 500, seed: int = 0,
                  visibility_mode: str = "full", tracking_points: int = 5000) -> ArticulationSpec:
    try:
        make = BUILTIN_SCENES[name]
    except KeyError:
        raise UnknownScene(f"unknown scene {name!r}; choose from {sorted(BUILTIN_SCENES)}") from None
    return make(frames=frames, points_per_frame=points_per_frame, seed=seed,
                visibility_mode=visibility_mode, tracking_points=tracking_points)


def spec_from_dict(d: dict) -> ArticulationSpec:
    """ArticulationSpec from plain JSON data (parts with eps/scale/rot6/trans, joints)."""
    try:
        parts = tuple(
            PartSpec(SuperquadricShape.from_arrays(p["eps"], p["scale"]),
                     Pose(tuple(p.get("rot6", _ID6)), tuple(p.get("trans", (0.0, 0.0, 0.0)))), int(p["id"]))
            for p in d["parts"]
        )
        joints = tuple(
            JointSpec(int(j["part"]), j["type"], tuple(j["axis"]), tuple(j.get("pivot", (0.0, 0.0, 0.0))),
                      tuple((float(t), float(v)) for t, v in j["keyframes"]))
            for j in d.get("joints", [])
        )
        extra = {k: d[k] for k in ("frames", "points_per_frame", "seed", "visibility_mode", "tracking_points", "name")
                 if k in d}
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad scene spec: {exc}") from exc
    spec = ArticulationSpec(parts, joints, **extra)
    spec.validate()
    return spec
