"""Superquadric shape algebra.

Functions here are written against torch so the training objective can
differentiate through them.  They also accept numpy arrays / sequences, in
which case the computation runs in float64 and numpy arrays come back.

Axis convention follows the mapping

    F(eta, omega) = (s1 c(eta)^e1 c(omega)^e2,  s2 s(eta)^e1,  s3 c(eta)^e1 s(omega)^e2)

so the ``y`` axis carries the ``eps1`` latitude exponent and the ``x``/``z``
plane carries ``eps2``.  Powers are signed: ``|c|^e * sign(c)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DegenerateRotation, NotARotation, SamplingFailure

EPS_MIN = 0.1
EPS_MAX = 1.9

IDENTITY_ROT6 = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def _to_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def array_api(fn):
    """Let a torch function take numpy input and hand numpy output back."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        if any(isinstance(a, torch.Tensor) for a in args) or any(
            isinstance(a, tuple) and any(isinstance(b, torch.Tensor) for b in a) for a in args
        ):
            return fn(*args, **kwargs)
        converted = [
            _to_tensor(a) if isinstance(a, (np.ndarray, list, float, int, np.floating)) else a
            for a in args
        ]
        out = fn(*converted, **kwargs)
        if isinstance(out, torch.Tensor):
            return out.detach().numpy()
        return out

    return wrapper


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuperquadricShape:
    eps1: float
    eps2: float
    s1: float
    s2: float
    s3: float

    def __post_init__(self):
        for name in ("eps1", "eps2"):
            v = getattr(self, name)
            if not (EPS_MIN - 1e-9 <= v <= EPS_MAX + 1e-9):
                raise ValueError(f"{name}={v} outside [{EPS_MIN}, {EPS_MAX}]")
        if min(self.s1, self.s2, self.s3) <= 0:
            raise ValueError("scales must be positive")

    @property
    def eps(self) -> np.ndarray:
        return np.array([self.eps1, self.eps2])

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3])

    @classmethod
    def from_arrays(cls, eps, scale) -> "SuperquadricShape":
        eps = np.asarray(eps, dtype=float)
        scale = np.asarray(scale, dtype=float)
        return cls(float(eps[0]), float(eps[1]), *(float(s) for s in scale))

    def scaled(self, factor: float) -> "SuperquadricShape":
        return SuperquadricShape(self.eps1, self.eps2, *(factor * self.scale))


@dataclass(frozen=True)
class Pose:
    rot6: tuple = IDENTITY_ROT6
    trans: tuple = (0.0, 0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return rot6d_to_matrix(np.asarray(self.rot6, dtype=float))

    @classmethod
    def from_matrix(cls, R, trans) -> "Pose":
        return cls(tuple(float(v) for v in matrix_to_rot6d(np.asarray(R, dtype=float))),
                   tuple(float(v) for v in trans))


@dataclass(frozen=True)
class PrimitiveState:
    shape: SuperquadricShape
    canonical_pose: Pose = field(default_factory=Pose)
    opacity: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity {self.opacity} outside [0, 1]")


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    eta: np.ndarray | None = None
    omega: np.ndarray | None = None

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def _unpack(shape):
    """(eps, scale) tensors from a SuperquadricShape or an (eps, scale) pair."""
    if isinstance(shape, SuperquadricShape):
        return _to_tensor(shape.eps), _to_tensor(shape.scale)
    eps, scale = shape
    return _to_tensor(eps), _to_tensor(scale)


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------


@array_api
def rot6d_to_matrix(rot6, check: bool = True):
    """Gram-Schmidt of the two 3-blocks; columns are (b1, b2, b1 x b2)."""
    a1, a2 = rot6[..., :3], rot6[..., 3:6]
    n1 = torch.linalg.vector_norm(a1, dim=-1, keepdim=True)
    if check and bool((n1 < 1e-12).any()):
        raise DegenerateRotation("first 6D block has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    n2 = torch.linalg.vector_norm(u2, dim=-1, keepdim=True)
    if check and bool((n2 < 1e-12).any()):
        raise DegenerateRotation("6D blocks are parallel")
    b2 = u2 / n2
    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


@array_api
def matrix_to_rot6d(R, atol: float = 1e-6):
    eye = torch.eye(3, dtype=R.dtype)
    err = (R.transpose(-1, -2) @ R - eye).abs().amax() if R.numel() else torch.tensor(0.0)
    if float(err) > atol or bool((torch.linalg.det(R) <= 0).any()):
        raise NotARotation(f"matrix is not a rotation (orthonormality error {float(err):.3g})")
    return torch.cat([R[..., :, 0], R[..., :, 1]], dim=-1)


def axis_angle_matrix(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a unit axis (numpy)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def so3_log(R):
    """Rotation vector of R (torch); smooth at the identity."""
    v = 0.5 * torch.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], dim=-1
    )
    s2 = (v * v).sum(-1)
    c = 0.5 * (R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0)
    small = s2 < 1e-12
    s = torch.sqrt(torch.where(small, torch.ones_like(s2), s2))
    factor = torch.where(small, 1.0 + s2 / 6.0, torch.atan2(s, c) / s)
    return factor[..., None] * v


# ---------------------------------------------------------------------------
# superquadric surface and volume
# ---------------------------------------------------------------------------


def signed_pow(c, e):
    """|c|^e * sign(c) with a zero (and zero-gradient) result at c == 0."""
    nz = c != 0
    base = torch.where(nz, c.abs(), torch.ones_like(c))
    return torch.where(nz, base**e * torch.sign(c), torch.zeros_like(c * e))


def _safe_pow(b, e):
    nz = b > 0
    base = torch.where(nz, b, torch.ones_like(b))
    return torch.where(nz, base**e, torch.zeros_like(b * e))


@array_api
def sq_map(eta, omega, shape):
    eps, scale = _unpack(shape)
    e1, e2 = eps[..., 0], eps[..., 1]
    ce = signed_pow(torch.cos(eta), e1)
    x = scale[..., 0] * ce * signed_pow(torch.cos(omega), e2)
    y = scale[..., 1] * signed_pow(torch.sin(eta), e1)
    z = scale[..., 2] * ce * signed_pow(torch.sin(omega), e2)
    return torch.stack([x, y, z], dim=-1)


@array_api
def sq_volume(shape):
    eps, scale = _unpack(shape)
    e1, e2 = eps[..., 0], eps[..., 1]
    gamma_term = torch.exp(2 * torch.lgamma(1 + e2 / 2) - torch.lgamma(1 + e2))
    beta_term = torch.exp(torch.lgamma(e1 / 2) + torch.lgamma(e1 + 1) - torch.lgamma(1.5 * e1 + 1))
    return 4 * scale[..., 0] * scale[..., 1] * scale[..., 2] * e1 * gamma_term * beta_term


@array_api
def implicit_value(p_local, shape, max_ratio: float | None = None):
    """Inside-outside function: <= 1 inside, == 1 on the surface.

    Batched use: give ``eps`` shape (..., 1, 2) and ``scale`` (..., 1, 3)
    against points of shape (..., N, 3).

    ``max_ratio`` clamps |coord|/scale before exponentiation; the soft
    membership used by the losses needs it to stay finite in float32.
    """
    eps, scale = _unpack(shape)
    e1, e2 = eps[..., 0], eps[..., 1]
    r = p_local.abs() / scale
    if max_ratio is not None:
        r = r.clamp(max=max_ratio)
    xz = _safe_pow(r[..., 0], 2 / e2) + _safe_pow(r[..., 2], 2 / e2)
    return _safe_pow(xz, e2 / e1) + _safe_pow(r[..., 1], 2 / e1)


def soft_membership(p_local, shape, sharpness: float = 10.0):
    f = implicit_value(p_local, shape, max_ratio=10.0)
    return torch.sigmoid(sharpness * (1.0 - f))


def surface_normals(p_local, shape) -> np.ndarray:
    """Unit outward normals (local frame) from the implicit-function gradient."""
    p = _to_tensor(p_local).clone().requires_grad_(True)
    eps, scale = _unpack(shape)
    f = implicit_value(p, (eps, scale))
    (g,) = torch.autograd.grad(f.sum(), p)
    g = g.detach().numpy()
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    fallback = p.detach().numpy() / np.maximum(np.linalg.norm(p.detach().numpy(), axis=-1, keepdims=True), 1e-12)
    return np.where(n > 1e-12, g / np.maximum(n, 1e-300), fallback)


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _icosphere(subdivisions: int):
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(np.asarray(v, float) / np.linalg.norm(v)) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
                verts.append(tuple(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts, dtype=float)
    f = np.array(faces, dtype=np.int64)
    v.setflags(write=False)
    f.setflags(write=False)
    return v, f


def icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere (vertices, faces); read-only cached arrays."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    return _icosphere(int(subdivisions))


def sphere_angles(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    eta = np.arcsin(np.clip(vertices[:, 1], -1.0, 1.0))
    omega = np.arctan2(vertices[:, 2], vertices[:, 0])
    return eta, omega


def build_mesh(shape: SuperquadricShape, subdivisions: int = 2) -> TriMesh:
    verts, faces = icosphere(subdivisions)
    eta, omega = sphere_angles(verts)
    mapped = sq_map(eta, omega, (shape.eps, shape.scale))
    return TriMesh(vertices=np.asarray(mapped), faces=np.array(faces), eta=eta, omega=omega)


def transform_points(points, R, T):
    """x_world = R x + T for (..., N, 3) points."""
    if isinstance(points, torch.Tensor):
        return points @ R.transpose(-1, -2) + T[..., None, :]
    points = np.asarray(points)
    return points @ np.swapaxes(R, -1, -2) + np.asarray(T)[..., None, :]


def sample_mesh_surface(mesh: TriMesh, n: int, rng: np.random.Generator):
    """Area-uniform samples: (points, face index, barycentric)."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise SamplingFailure("mesh has zero area")
    face = rng.choice(len(areas), size=n, p=areas / total)
    bary = uniform_barycentric(n, rng)
    tri = mesh.vertices[mesh.faces[face]]
    return np.einsum("nk,nkd->nd", bary, tri), face, bary


def uniform_barycentric(n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((n, 2))
    flip = u.sum(1) > 1
    u[flip] = 1 - u[flip]
    return np.column_stack([1 - u.sum(1), u[:, 0], u[:, 1]])


# ---------------------------------------------------------------------------
# overlap
# ---------------------------------------------------------------------------


def sample_inside(shape: SuperquadricShape, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples inside a superquadric by rejection from its bounding box."""
    scale = shape.scale
    out = []
    have = drawn = 0
    batch = max(4 * n, 1024)
    while have < n:
        u = (rng.random((batch, 3)) * 2 - 1) * scale
        keep = u[np.asarray(implicit_value(u, shape)) <= 1.0]
        drawn += batch
        out.append(keep)
        have += len(keep)
        if drawn >= 1_000_000 and have / drawn < 1e-4:
            raise SamplingFailure("rejection acceptance below 1e-4")
    return np.concatenate(out)[:n]


def overlap_from_samples(samples_local: np.ndarray, a_R, a_T, b_shape: SuperquadricShape, b_R, b_T) -> float:
    world = samples_local @ np.asarray(a_R).T + np.asarray(a_T)
    in_b = (world - np.asarray(b_T)) @ np.asarray(b_R)
    return float(np.mean(np.asarray(implicit_value(in_b, b_shape)) <= 1.0))


def overlap_ratio(a, b, n_samples: int = 100_000, rng_seed: int = 0) -> float:
    """Fraction of primitive ``a``'s volume inside ``b`` (Monte-Carlo, directional).

    ``a`` and ``b`` are ``(shape, R, T)`` triples giving each primitive's
    world placement at one instant.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    a_shape, a_R, a_T = a
    b_shape, b_R, b_T = b
    samples = sample_inside(a_shape, n_samples, np.random.default_rng(rng_seed))
    return overlap_from_samples(samples, a_R, a_T, b_shape, b_R, b_T)
