"""On-disk formats: ASCII PLY frames, tracking binary, manifest, checkpoints, OBJ meshes."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetManifest, FrameObservation, TrackingGT
from .errors import BadManifest, MissingGT
from .model import SceneModel

MANIFEST_NAME = "manifest.json"
TRACKING_MAGIC = b"DPTK"


# -- PLY -------------------------------------------------------------------


def write_ply(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property double x", "property double y", "property double z", "end_header"]
    body = "\n".join(" ".join(repr(float(c)) for c in p) for p in pts)
    Path(path).write_text("\n".join(lines) + "\n" + body + ("\n" if len(pts) else ""))


def read_ply(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise BadManifest(f"{path} is not a PLY file")
    n, i = None, 1
    while text[i].strip() != "end_header":
        parts = text[i].split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        i += 1
    if n is None:
        raise BadManifest(f"{path} has no vertex element")
    rows = text[i + 1:i + 1 + n]
    return np.array([[float(v) for v in r.split()[:3]] for r in rows], dtype=float).reshape(n, 3)


# -- tracking binary ---------------------------------------------------------
# layout (little-endian): magic "DPTK", uint32 N, uint32 T, uint32 canonical index,
# float32 trajectories[T][N][3], int32 part_ids[N]


def write_tracking(path, gt: TrackingGT) -> None:
    traj = np.asarray(gt.trajectories, dtype="<f4")
    T, N, _ = traj.shape
    with open(path, "wb") as fh:
        fh.write(TRACKING_MAGIC + struct.pack("<III", N, T, gt.canonical_frame_index))
        fh.write(traj.tobytes())
        fh.write(np.asarray(gt.part_ids, dtype="<i4").tobytes())


def read_tracking(path) -> TrackingGT:
    if not os.path.exists(path):
        raise MissingGT(f"tracking ground truth not found: {path}")
    raw = Path(path).read_bytes()
    if raw[:4] != TRACKING_MAGIC:
        raise BadManifest(f"{path}: bad tracking header")
    N, T, c = struct.unpack("<III", raw[4:16])
    off = 16 + 12 * N * T
    traj = np.frombuffer(raw[16:off], dtype="<f4").reshape(T, N, 3).astype(np.float32)
    ids = np.frombuffer(raw[off:off + 4 * N], dtype="<i4").astype(np.int64)
    return TrackingGT(c, traj[c].copy(), traj, ids)


# -- dataset -----------------------------------------------------------------


def export_dataset(dataset: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    m = dataset.manifest
    for f, name in zip(dataset.frames, m.frame_files):
        write_ply(d / name, f.points)
    if dataset.tracking is not None:
        write_tracking(d / m.tracking_gt_file, dataset.tracking)
    (d / MANIFEST_NAME).write_text(json.dumps(asdict(m), indent=1))
    return d


def load_manifest(directory) -> DatasetManifest:
    p = Path(directory) / MANIFEST_NAME
    if not p.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    try:
        raw = json.loads(p.read_text())
        m = DatasetManifest(**raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise BadManifest(f"{p}: {exc}") from exc
    if m.frame_count != len(m.frame_files) or m.frame_count != len(m.timestamps):
        raise BadManifest(f"{p}: frame_count does not match frame_files/timestamps")
    return m


def load_dataset(directory, require_tracking: bool = False) -> Dataset:
    d = Path(directory)
    m = load_manifest(d)
    frames = [FrameObservation(float(t), read_ply(d / name)) for t, name in zip(m.timestamps, m.frame_files)]
    tracking = None
    gt_path = d / m.tracking_gt_file
    if gt_path.exists():
        tracking = read_tracking(gt_path)
    elif require_tracking:
        raise MissingGT(f"tracking ground truth not found: {gt_path}")
    return Dataset(frames, tracking, m)


# -- checkpoints ---------------------------------------------------------------


def save_model(path, model: SceneModel, extra: dict | None = None) -> None:
    meta = {**model.meta(), **(extra or {})}
    arrays = model.state_arrays()
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_model(path) -> SceneModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return SceneModel.from_state(arrays, meta)


# -- OBJ ---------------------------------------------------------------------


def write_obj(path, meshes: list[tuple[str, np.ndarray, np.ndarray]]) -> None:
    """One named object per (name, vertices, faces) entry; faces are 0-based on input."""
    out, base = [], 1
    for name, v, f in meshes:
        out.append(f"o {name}")
        out += [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(v, dtype=float).tolist()]
        out += [f"f {a + base} {b + base} {c + base}" for a, b, c in np.asarray(f, dtype=np.int64)]
        base += len(v)
    Path(path).write_text("\n".join(out) + "\n")


def read_obj(path) -> list[tuple[str, np.ndarray, np.ndarray]]:
    objs, name, verts, faces, base, offset = [], None, [], [], 1, 0
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "o":
            if name is not None:
                objs.append((name, np.array(verts), np.array(faces, dtype=np.int64) - offset))
                offset += len(verts)
            name, verts, faces = parts[1], [], []
        elif parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - base for x in parts[1:4]])
    if name is not None:
        objs.append((name, np.array(verts), np.array(faces, dtype=np.int64) - offset))
    return objs
