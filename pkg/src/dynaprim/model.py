"""Optimizable scene state: stacked primitive parameters, bound elements, deformation nets."""
from __future__ import annotations

import numpy as np
import torch

from .deform import DeformNet, PosEncConfig
from .elements import ElementSet
from .geometry import (EPS_MAX, EPS_MIN, Pose, PrimitiveState, SuperquadricShape, icosphere,
                       rot6d_to_matrix, sphere_angles, sq_map)

PRIMITIVE_FIELDS = ("eps_raw", "log_scale", "rot6", "trans", "opacity_raw")


def eps_to_raw(eps):
    u = (np.asarray(eps, dtype=float) - EPS_MIN) / (EPS_MAX - EPS_MIN)
    u = np.clip(u, 1e-9, 1 - 1e-9)
    return np.log(u / (1 - u))


def opacity_to_raw(alpha):
    a = np.clip(np.asarray(alpha, dtype=float), 1e-9, 1 - 1e-9)
    return np.log(a / (1 - a))


class SceneModel:
    """K superquadric primitives sharing one icosphere topology, plus forward/inverse nets.

    Raw parameters (all shape (K, ...)):
      eps_raw     -> eps = EPS_MIN + (EPS_MAX - EPS_MIN) * sigmoid(eps_raw)
      log_scale   -> s = exp(log_scale)
      rot6, trans -> canonical pose
      opacity_raw -> opacity = sigmoid(opacity_raw)
    Elements: ``elem_face`` (K, M) host faces and ``elem_bary`` (K, M, 3).
    """

    def __init__(self, params: dict, elem_face, elem_bary, forward_net: DeformNet,
                 inverse_net: DeformNet, subdivisions: int = 2, dtype=torch.float32):
        self.dtype = dtype
        self.subdivisions = subdivisions
        self.forward_net = forward_net
        self.inverse_net = inverse_net
        # The nets see a detached copy of the canonical translation, so T is
        # moved by the pose terms only and not through the high-frequency
        # encoding.  Switch off to differentiate the plain composite function.
        self.detach_net_input = True
        verts, faces = icosphere(subdivisions)
        eta, omega = sphere_angles(verts)
        self.faces = torch.as_tensor(np.array(faces))
        self._eta = torch.as_tensor(eta, dtype=dtype)
        self._omega = torch.as_tensor(omega, dtype=dtype)
        self.set_primitives(params, elem_face, elem_bary)

    # -- construction ------------------------------------------------------

    def set_primitives(self, params: dict, elem_face, elem_bary, grad_accum=None, grad_count=None):
        self.params = {
            k: torch.as_tensor(np.asarray(params[k], dtype=float), dtype=self.dtype).clone().requires_grad_(True)
            for k in PRIMITIVE_FIELDS
        }
        self.elem_face = torch.as_tensor(np.asarray(elem_face, dtype=np.int64))
        self.elem_bary = torch.as_tensor(np.asarray(elem_bary, dtype=float), dtype=self.dtype).clone().requires_grad_(True)
        K, M = self.elem_face.shape
        self.grad_accum = np.zeros((K, M)) if grad_accum is None else np.asarray(grad_accum, dtype=float)
        self.grad_count = np.zeros((K, M), dtype=np.int64) if grad_count is None else np.asarray(grad_count)

    @property
    def K(self) -> int:
        return self.params["trans"].shape[0]

    @property
    def M(self) -> int:
        return self.elem_face.shape[1]

    def numpy_params(self) -> dict:
        return {k: v.detach().cpu().double().numpy().copy() for k, v in self.params.items()}

    def named_parameters(self, nets: bool = True) -> dict:
        out = dict(self.params)
        out["elem_bary"] = self.elem_bary
        if nets:
            out.update({f"fwd.{n}": p for n, p in self.forward_net.named_parameters()})
            out.update({f"inv.{n}": p for n, p in self.inverse_net.named_parameters()})
        return out

    # -- derived quantities -----------------------------------------------

    def eps(self):
        return EPS_MIN + (EPS_MAX - EPS_MIN) * torch.sigmoid(self.params["eps_raw"])

    def scale(self):
        return torch.exp(self.params["log_scale"])

    def opacity(self):
        return torch.sigmoid(self.params["opacity_raw"])

    def canonical_rotation(self):
        return rot6d_to_matrix(self.params["rot6"])

    def local_vertices(self):
        """(K, V, 3) mesh vertices in each primitive's local frame."""
        return sq_map(self._eta[None, :], self._omega[None, :], (self.eps()[:, None, :], self.scale()[:, None, :]))

    def element_local(self, vertices=None):
        """(K, M, 3) element centers in local frames."""
        if vertices is None:
            vertices = self.local_vertices()
        tri = self.faces[self.elem_face]  # (K, M, 3)
        K, M = self.elem_face.shape
        idx = tri.reshape(K, M * 3)
        corners = torch.gather(vertices, 1, idx[..., None].expand(K, M * 3, 3)).reshape(K, M, 3, 3)
        return (self.elem_bary[..., None] * corners).sum(-2)

    def _time_tensor(self, timestamps):
        return torch.as_tensor(np.asarray(timestamps, dtype=float), dtype=self.dtype).reshape(-1)

    def deformation(self, timestamps, net: DeformNet | None = None, T=None):
        """(dT, dR) of shape (F, K, 3), (F, K, 6) for canonical translations T (default: ours)."""
        net = self.forward_net if net is None else net
        t = self._time_tensor(timestamps)
        if T is None:
            T = self.params["trans"].detach() if self.detach_net_input else self.params["trans"]
        Tin = T[None].expand(len(t), -1, -1)
        tin = t[:, None].expand(-1, T.shape[0])
        return net(Tin, tin)

    def poses(self, timestamps, deformation=None):
        """World rotation (F, K, 3, 3) and translation (F, K, 3) at each timestamp."""
        dT, dR = self.deformation(timestamps) if deformation is None else deformation
        T = self.params["trans"][None] + dT
        R = rot6d_to_matrix(self.params["rot6"][None] + dR)
        return R, T

    def element_world(self, timestamps, poses=None, local=None):
        R, T = self.poses(timestamps) if poses is None else poses
        local = self.element_local() if local is None else local
        return torch.einsum("fkij,kmj->fkmi", R, local) + T[:, :, None, :]

    # -- value-type views ---------------------------------------------------

    def primitive_states(self) -> list[PrimitiveState]:
        with torch.no_grad():
            eps, s, a = self.eps().double().numpy(), self.scale().double().numpy(), self.opacity().double().numpy()
            R = self.canonical_rotation().double().numpy()
            T = self.params["trans"].double().numpy()
        return [
            PrimitiveState(SuperquadricShape.from_arrays(eps[k], s[k]), Pose.from_matrix(R[k], T[k]), float(a[k]))
            for k in range(self.K)
        ]

    def shapes(self) -> list[SuperquadricShape]:
        with torch.no_grad():
            eps, s = self.eps().double().numpy(), self.scale().double().numpy()
        return [SuperquadricShape.from_arrays(eps[k], s[k]) for k in range(self.K)]

    def world_poses_numpy(self, timestamps):
        with torch.no_grad():
            R, T = self.poses(timestamps)
        return R.double().numpy(), T.double().numpy()

    def element_set(self, k: int) -> ElementSet:
        return ElementSet(self.elem_face[k].numpy().copy(), self.elem_bary[k].detach().double().numpy().copy(),
                          self.grad_accum[k].copy(), self.grad_count[k].copy())

    # -- serialization -----------------------------------------------------

    def state_arrays(self) -> dict:
        out = {f"prim.{k}": v for k, v in self.numpy_params().items()}
        out["elem.face"] = self.elem_face.numpy().copy()
        out["elem.bary"] = self.elem_bary.detach().double().numpy().copy()
        for tag, net in (("fwd", self.forward_net), ("inv", self.inverse_net)):
            for n, p in net.state_dict().items():
                out[f"{tag}.{n}"] = p.detach().double().numpy().copy()
        return out

    def meta(self) -> dict:
        return {"subdivisions": self.subdivisions, "dtype": str(self.dtype).replace("torch.", ""),
                "net": self.forward_net.architecture()}

    @classmethod
    def from_state(cls, arrays: dict, meta: dict) -> "SceneModel":
        dtype = getattr(torch, meta.get("dtype", "float32"))
        arch = dict(meta["net"])
        enc = PosEncConfig(arch.pop("k_pos"), arch.pop("k_time"), arch.pop("include_input"))
        nets = []
        for tag in ("fwd", "inv"):
            net = DeformNet(encoding=enc, dtype=dtype, **arch)
            sd = {n[len(tag) + 1:]: torch.as_tensor(v, dtype=dtype) for n, v in arrays.items() if n.startswith(tag + ".")}
            net.load_state_dict(sd)
            nets.append(net)
        params = {k: arrays[f"prim.{k}"] for k in PRIMITIVE_FIELDS}
        return cls(params, arrays["elem.face"], arrays["elem.bary"], nets[0], nets[1],
                   subdivisions=int(meta["subdivisions"]), dtype=dtype)
