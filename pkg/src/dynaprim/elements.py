"""Surface elements bound to primitive meshes by barycentric coordinates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNeighborhood, EmptyMesh, TooFewElements
from .geometry import TriMesh, uniform_barycentric

TAU_S = 1e-8


@dataclass
class ElementSet:
    """Elements of one primitive, stored column-wise.

    Row ``i`` is one surface element: the host face, its barycentric
    coordinates, and the positional-gradient statistics that drive cloning.
    """

    face_index: np.ndarray
    barycentric: np.ndarray
    grad_accum: np.ndarray = field(default=None)
    grad_count: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.face_index)
        if self.grad_accum is None:
            self.grad_accum = np.zeros(n)
        if self.grad_count is None:
            self.grad_count = np.zeros(n, dtype=np.int64)

    def __len__(self):
        return len(self.face_index)

    def reset_gradients(self):
        self.grad_accum[:] = 0.0
        self.grad_count[:] = 0

    def mean_gradient(self) -> np.ndarray:
        return self.grad_accum / np.maximum(self.grad_count, 1)

    def positions(self, vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
        tri = vertices[faces[self.face_index]]
        return np.einsum("nk,nkd->nd", self.barycentric, tri)


@dataclass(frozen=True)
class ElementFrame:
    rotation: np.ndarray
    scale: np.ndarray


def scatter_elements(mesh: TriMesh, n: int, rng_seed) -> ElementSet:
    if len(mesh.faces) == 0:
        raise EmptyMesh("mesh has no faces")
    if n < 1:
        raise ValueError("need at least one element")
    rng = np.random.default_rng(rng_seed)
    areas = mesh.face_areas()
    if not areas.sum() > 0:
        raise EmptyMesh("mesh has zero area")
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    return ElementSet(face_index=face.astype(np.int64), barycentric=uniform_barycentric(n, rng))


def element_frame(center, neighbors, centroid=None) -> ElementFrame:
    """Frame of one element from its three nearest neighbouring centers.

    r1 is the neighbour-triangle normal (flipped to point away from
    ``centroid`` when one is given), r2 runs from the triangle centroid to the
    first neighbour, r3 completes the basis from the second neighbour.
    """
    center = np.asarray(center, dtype=float)
    v1, v2, v3 = (np.asarray(v, dtype=float) for v in neighbors)
    normal = np.cross(v2 - v1, v3 - v1)
    area = 0.5 * np.linalg.norm(normal)
    if area < 1e-14:
        raise DegenerateNeighborhood("neighbour triangle is degenerate")
    r1 = normal / (2 * area)
    if centroid is not None and np.dot(r1, center - np.asarray(centroid, dtype=float)) < 0:
        r1 = -r1
    m = (v1 + v2 + v3) / 3.0
    r2 = v1 - m
    r2 = r2 - np.dot(r2, r1) * r1
    r2 /= np.linalg.norm(r2)
    w = v2 - m
    w = w - np.dot(w, r1) * r1 - np.dot(w, r2) * r2
    nw = np.linalg.norm(w)
    if nw < 1e-14:
        raise DegenerateNeighborhood("cannot complete element frame")
    r3 = w / nw
    d_max = max(np.linalg.norm(v - center) for v in (v1, v2, v3))
    return ElementFrame(rotation=np.column_stack([r1, r2, r3]), scale=np.array([TAU_S, d_max, d_max]))


def nearest_neighbors_3(positions, query_index: int) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 4:
        raise TooFewElements("need at least 4 elements")
    d = np.linalg.norm(positions - positions[query_index], axis=1)
    d[query_index] = np.inf
    return np.argsort(d, kind="stable")[:3]


def element_frames(positions, centroid=None) -> list[ElementFrame]:
    """Frames for every element of one primitive (canonical local embedding)."""
    positions = np.asarray(positions, dtype=float)
    if centroid is None:
        centroid = positions.mean(0)
    frames = []
    for i in range(len(positions)):
        nb = nearest_neighbors_3(positions, i)
        frames.append(element_frame(positions[i], positions[nb], centroid))
    return frames
