"""Gaussian primitive containers, raw-output activation and PLY interop.

Primitives are stored struct-of-arrays for vectorized rendering:
``mu`` [P,3] centers in the canonical frame, ``quat`` [P,4] unit rotations
(w,x,y,z), ``scale`` [P,3] positive extents, ``opacity`` [P] in (0,1) and
``sh`` [P,n,3] spherical-harmonics coefficients with n=(deg+1)^2 per channel.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .geometry import PoseSE3, quat_mul, rot_to_quat

SCALE_MIN = 1e-6

# real SH basis constants, degrees 0..3
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


def sh_dim(degree: int) -> int:
    return (degree + 1) ** 2


def raw_channel_count(sh_degree: int) -> int:
    """Raw head channels: 3 center + 4 quat + 3 scale + 1 opacity + SH."""
    return 3 + 4 + 3 + 1 + 3 * sh_dim(sh_degree)


@dataclass
class Gaussians:
    mu: np.ndarray
    quat: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    sh: np.ndarray

    def __post_init__(self):
        n = len(self.mu)
        if not (len(self.quat) == len(self.scale) == len(self.opacity) == len(self.sh) == n):
            raise ValueError("field lengths disagree")

    def __len__(self) -> int:
        return len(self.mu)

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh.shape[1])) - 1

    def astype(self, dtype) -> "Gaussians":
        return Gaussians(*(np.asarray(f, dtype=dtype) for f in
                           (self.mu, self.quat, self.scale, self.opacity, self.sh)))

    def copy(self) -> "Gaussians":
        return Gaussians(self.mu.copy(), self.quat.copy(), self.scale.copy(),
                         self.opacity.copy(), self.sh.copy())

    def validate(self) -> None:
        if len(self) == 0:
            return
        for name, field in (("mu", self.mu), ("quat", self.quat), ("scale", self.scale),
                            ("opacity", self.opacity), ("sh", self.sh)):
            bad = np.nonzero(~np.isfinite(field).reshape(len(self), -1).all(axis=1))[0]
            if bad.size:
                raise ValueError(f"non-finite {name} at primitive index {int(bad[0])}")
        if (self.scale <= 0).any():
            raise ValueError("scale components must be positive")

    def transformed(self, Q: PoseSE3) -> "Gaussians":
        """Apply a rigid transform to the scene (the canonical-frame gauge).

        Rotates centers, orientations and the degree-1 SH block; degrees >= 2
        would need a full Wigner rotation and are rejected when non-zero.
        """
        mu = self.mu @ Q.R.T + Q.T
        qQ = rot_to_quat(Q.R)
        quat = quat_mul(np.broadcast_to(qQ, self.quat.shape), self.quat)
        sh = self.sh.copy()
        if sh.shape[1] > 1:
            # degree-1 coefficients transform by conjugating R with the
            # (dir -> basis) axis permutation A = [[0,-1,0],[0,0,1],[-1,0,0]]
            A = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])
            M = A @ Q.R @ A.T
            sh[:, 1:4, :] = np.einsum("ij,pjc->pic", M, sh[:, 1:4, :])
        if sh.shape[1] > 4 and np.abs(sh[:, 4:, :]).max() > 0:
            raise NotImplementedError("rigid transform of SH degree >= 2 is not supported")
        return Gaussians(mu, quat, self.scale.copy(), self.opacity.copy(), sh)


def concat_gaussians(parts: list[Gaussians]) -> Gaussians:
    return Gaussians(*(np.concatenate([getattr(p, f) for p in parts], axis=0)
                       for f in ("mu", "quat", "scale", "opacity", "sh")))


@dataclass
class GaussianMap:
    """Pixel-aligned Gaussians for one context view: a [H,W] grid flattened
    row-major into a ``Gaussians`` batch of H*W primitives."""

    gaussians: Gaussians
    height: int
    width: int
    view: int

    def __post_init__(self):
        if len(self.gaussians) != self.height * self.width:
            raise ValueError(
                f"grid {self.height}x{self.width} needs {self.height * self.width} "
                f"primitives, got {len(self.gaussians)}"
            )

    @property
    def mu_grid(self) -> np.ndarray:
        return self.gaussians.mu.reshape(self.height, self.width, 3)


def merge_maps(maps: list[GaussianMap]) -> Gaussians:
    return concat_gaussians([m.gaussians for m in maps])


def activate_raw(raw: np.ndarray, sh_degree: int, scene_diameter: float = 1.0) -> Gaussians:
    """Map raw per-pixel head outputs to valid primitives.

    Channel layout [3 mu | 4 quat | 3 scale | 1 opacity | SH...]. Centers pass
    through unchanged (canonical-frame pointmap), quaternions are normalized,
    scales are exp-activated and clamped to [1e-6, scene diameter], opacity is
    sigmoid-squashed, SH coefficients pass through.
    """
    n_sh = sh_dim(sh_degree)
    raw = np.asarray(raw)
    flat = raw.reshape(-1, raw.shape[-1])
    expect = raw_channel_count(sh_degree)
    if flat.shape[-1] != expect:
        raise ValueError(f"raw channel count {flat.shape[-1]}, expected {expect} "
                         f"for SH degree {sh_degree}")
    mu = flat[:, 0:3]
    quat = flat[:, 3:7]
    quat = quat / np.linalg.norm(quat, axis=1, keepdims=True)
    scale = np.clip(np.exp(flat[:, 7:10]), SCALE_MIN, scene_diameter)
    opacity = 1.0 / (1.0 + np.exp(-flat[:, 10]))
    sh = flat[:, 11:].reshape(-1, n_sh, 3)
    return Gaussians(mu.copy(), quat, scale, opacity, sh.copy())


def eval_sh(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate SH colors along unit view directions.

    Returns [P,3] colors as ``0.5 + sum_k basis_k(dir) sh_k``, clamped to be
    non-negative (community splat convention).
    """
    basis = sh_basis(sh.shape[1], dirs)
    color = 0.5 + np.einsum("pk,pkc->pc", basis, sh)
    return np.maximum(color, 0.0)


def sh_basis(n_coeff: int, dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values [P, n_coeff] for unit directions [P,3]."""
    P = dirs.shape[0]
    out = np.empty((P, n_coeff), dtype=dirs.dtype)
    out[:, 0] = SH_C0
    if n_coeff == 1:
        return out
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    if n_coeff == 4:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[:, 4] = SH_C2[0] * xy
    out[:, 5] = SH_C2[1] * yz
    out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * xz
    out[:, 8] = SH_C2[4] * (xx - yy)
    if n_coeff == 9:
        return out
    out[:, 9] = SH_C3[0] * y * (3 * xx - yy)
    out[:, 10] = SH_C3[1] * xy * z
    out[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - yy - 3 * zz)
    if n_coeff == 16:
        return out
    raise ValueError(f"unsupported SH coefficient count {n_coeff} (degrees 0..3)")


# -- PLY interop (community splat layout, binary little-endian) -----------------

def export_ply(g: Gaussians) -> bytes:
    """Serialize to the community splat PLY layout.

    Stored values follow viewer expectations: raw centers, zero normals,
    f_dc / channel-major f_rest SH coefficients, logit opacity, log scales and
    the unit quaternion.
    """
    g.validate()
    n = len(g)
    n_rest = 3 * (g.sh.shape[1] - 1)
    props = (["x", "y", "z", "nx", "ny", "nz",
              "f_dc_0", "f_dc_1", "f_dc_2"]
             + [f"f_rest_{i}" for i in range(n_rest)]
             + ["opacity", "scale_0", "scale_1", "scale_2",
                "rot_0", "rot_1", "rot_2", "rot_3"])
    header = "ply\nformat binary_little_endian 1.0\n"
    header += f"element vertex {n}\n"
    header += "".join(f"property float {p}\n" for p in props)
    header += "end_header\n"

    cols = [g.mu, np.zeros((n, 3), dtype=np.float64), g.sh[:, 0, :]]
    if n_rest:
        cols.append(g.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, n_rest))
    opa = np.clip(g.opacity, 1e-7, 1.0 - 1e-7)
    cols.append(np.log(opa / (1.0 - opa)).reshape(n, 1))
    cols.append(np.log(g.scale))
    cols.append(g.quat)
    body = np.concatenate(cols, axis=1).astype("<f4")
    return header.encode("ascii") + body.tobytes()


def import_ply(data: bytes) -> Gaussians:
    stream = io.BytesIO(data)
    props: list[str] = []
    n = None
    while True:
        line = stream.readline().decode("ascii").strip()
        if line == "end_header":
            break
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("property float"):
            props.append(line.split()[-1])
        elif line.startswith("property"):
            raise ValueError(f"unsupported property type in: {line!r}")
        if line == "":
            raise ValueError("truncated PLY header")
    if n is None:
        raise ValueError("missing vertex element")
    body = np.frombuffer(stream.read(), dtype="<f4").reshape(n, len(props)).astype(np.float64)
    col = {p: i for i, p in enumerate(props)}
    mu = body[:, [col["x"], col["y"], col["z"]]]
    quat = body[:, [col[f"rot_{i}"] for i in range(4)]]
    quat = quat / np.linalg.norm(quat, axis=1, keepdims=True) if n else quat
    scale = np.exp(body[:, [col[f"scale_{i}"] for i in range(3)]])
    opacity = 1.0 / (1.0 + np.exp(-body[:, col["opacity"]]))
    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    n_coeff = 1 + n_rest // 3
    sh = np.zeros((n, n_coeff, 3))
    sh[:, 0, :] = body[:, [col[f"f_dc_{i}"] for i in range(3)]]
    if n_rest:
        rest = body[:, [col[f"f_rest_{i}"] for i in range(n_rest)]]
        sh[:, 1:, :] = rest.reshape(n, 3, n_coeff - 1).transpose(0, 2, 1)
    return Gaussians(mu, quat, scale, opacity, sh)
