"""Rigid transforms, pinhole projection, the 10D pose codec and pose metrics.

Conventions:
  * camera frames follow OpenCV axes (x right, y down, z forward);
  * a pose ``PoseSE3(R, T)`` maps view-v camera coordinates into the canonical
    frame (the first view's camera frame): ``X_canon = R @ X_cam + T``;
  * camera coordinates of a canonical point are therefore ``R.T @ (X - T)``;
  * the canonical frame itself has the identity pose ``[U | 0]``.

Everything here is pure numpy and thread-safe; the differentiable twin of the
pose decode lives in ``model`` (built from tensor ops so gradients reach the
pose head).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

EPS_DEGENERATE = 1e-8
EPS_HOMOGENEOUS = 1e-6
Z_NEAR = 1e-4

DEFAULT_AUC_THRESHOLDS = (5.0, 10.0, 20.0)


class DegenerateRotation(ValueError):
    """6D rotation input cannot be orthonormalized."""


@dataclass
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def normalized(self) -> np.ndarray:
        """Resolution-free embedding (fx/W, fy/H, cx/W, cy/H)."""
        return np.array(
            [self.fx / self.width, self.fy / self.height,
             self.cx / self.width, self.cy / self.height]
        )

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "w": self.width, "h": self.height}

    @staticmethod
    def from_json(d: dict) -> "Intrinsics":
        return Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d["w"], d["h"])


class PoseSE3:
    """Rigid transform mapping a view's camera frame into the canonical frame."""

    __slots__ = ("R", "T")

    def __init__(self, R, T, check: bool = True):
        self.R = np.asarray(R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(T, dtype=np.float64).reshape(3)
        if check:
            err = np.abs(self.R.T @ self.R - np.eye(3)).max()
            if err > 1e-6:
                raise ValueError(f"R is not orthonormal (|R^T R - I|_inf = {err:.2e})")
            if np.linalg.det(self.R) < 0:
                raise ValueError("R has negative determinant")

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3), check=False)

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.R.T, -self.R.T @ self.T, check=False)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """Composition self*other: apply ``other`` first, then ``self``."""
        return PoseSE3(self.R @ other.R, self.R @ other.T + self.T, check=False)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map view-frame points (..., 3) into the canonical frame."""
        return points @ self.R.T + self.T

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.T
        return M

    def to_json(self) -> dict:
        return {"R": [float(v) for v in self.R.reshape(-1)],
                "T": [float(v) for v in self.T]}

    @staticmethod
    def from_json(d: dict) -> "PoseSE3":
        return PoseSE3(np.array(d["R"]).reshape(3, 3), np.array(d["T"]))

    def __repr__(self):
        return f"PoseSE3(rot_deg={rotation_angle_deg(self.R):.3f}, T={np.round(self.T, 4)})"


# -- 10D pose codec: 6D rotation + 4 homogeneous translation coordinates ------

def decode_rotation6d(rot6: np.ndarray) -> np.ndarray:
    """Two unnormalized axes -> proper rotation via Gram-Schmidt + cross product.

    ``b1 = a1/|a1|``, ``b2 = normalize(a2 - (b1.a2) b1)``, ``b3 = b1 x b2``,
    columns assembled as ``[b1 b2 b3]``. Invariant to positive scaling of a1
    and to adding multiples of a1 to a2.
    """
    rot6 = np.asarray(rot6, dtype=np.float64).reshape(6)
    a1, a2 = rot6[:3], rot6[3:]
    n1 = np.linalg.norm(a1)
    if n1 <= EPS_DEGENERATE:
        raise DegenerateRotation(f"first axis norm {n1:.3e} below threshold")
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    if n2 <= EPS_DEGENERATE:
        raise DegenerateRotation(f"axes are parallel (residual norm {n2:.3e})")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def decode_pose10(code: np.ndarray) -> PoseSE3:
    """10D code -> pose: rot6 for R, homogeneous 4-vector for T.

    T_i = th_i / (eps + softplus(th_3)); the softplus keeps the denominator
    strictly positive while leaving the magnitude unbounded.
    """
    code = np.asarray(code, dtype=np.float64).reshape(10)
    R = decode_rotation6d(code[:6])
    th = code[6:]
    denom = EPS_HOMOGENEOUS + np.logaddexp(0.0, th[3])
    return PoseSE3(R, th[:3] / denom, check=False)


def encode_pose10(pose: PoseSE3) -> np.ndarray:
    """Deterministic inverse codec used by round-trip tests.

    rot6 = first two columns of R; homogeneous weight chosen so the decoded
    denominator equals one exactly.
    """
    w0 = float(np.log(np.expm1(1.0 - EPS_HOMOGENEOUS)))
    return np.concatenate([pose.R[:, 0], pose.R[:, 1], pose.T, [w0]])


def identity_code10() -> np.ndarray:
    return encode_pose10(PoseSE3.identity())


# -- projection -----------------------------------------------------------------

def project(K: Intrinsics, pose: PoseSE3, points: np.ndarray,
            z_near: float = Z_NEAR):
    """Project canonical-frame points through a view.

    Returns (uv, valid): pixel coordinates (..., 2) and a validity mask that is
    False behind the near plane. No exception paths so a loss can mask instead.
    """
    pts = np.asarray(points, dtype=np.float64)
    cam = (pts - pose.T) @ pose.R  # rows: R^T (X - T)
    z = cam[..., 2]
    valid = z > z_near
    zs = np.where(valid, z, z_near)
    u = K.fx * cam[..., 0] / zs + K.cx
    v = K.fy * cam[..., 1] / zs + K.cy
    return np.stack([u, v], axis=-1), valid


def unproject(K: Intrinsics, pose: PoseSE3, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Pixel coordinates + camera-frame depth -> canonical-frame points."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    x = (uv[..., 0] - K.cx) / K.fx * d
    y = (uv[..., 1] - K.cy) / K.fy * d
    cam = np.stack([x, y, d], axis=-1)
    return pose.apply(cam)


# -- metrics ----------------------------------------------------------------------

def rotation_angle_deg(R: np.ndarray) -> float:
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pose_error(est: PoseSE3, gt: PoseSE3) -> tuple[float, float, float]:
    """(rot_deg, trans_deg, combined_deg).

    Rotation: geodesic angle of R_est R_gt^T. Translation: angle between
    translation directions, 0 when either norm is near zero (pure-rotation
    pairs have no defined direction). Combined: max of the two.
    """
    rot = rotation_angle_deg(est.R @ gt.R.T)
    ne, ng = np.linalg.norm(est.T), np.linalg.norm(gt.T)
    if ne < 1e-9 or ng < 1e-9:
        trans = 0.0
    else:
        c = np.clip(est.T @ gt.T / (ne * ng), -1.0, 1.0)
        trans = float(np.degrees(np.arccos(c)))
    return rot, trans, max(rot, trans)


def auc_at_thresholds(errors_deg, thresholds=DEFAULT_AUC_THRESHOLDS) -> list[float]:
    """Pose-error AUC: mean over samples of max(0, 1 - e/tau) per threshold.

    Exact area under the piecewise-linear cumulative error curve, the
    convention of the sparse-matching evaluation literature.
    """
    errors = np.asarray(list(errors_deg), dtype=np.float64)
    if errors.size == 0:
        raise ValueError("empty error list")
    if (errors < 0).any():
        raise ValueError("pose errors must be non-negative")
    return [float(np.mean(np.maximum(0.0, 1.0 - errors / t))) for t in thresholds]


def normalize_to_canonical(poses: list[PoseSE3]) -> list[PoseSE3]:
    """Compose every pose with the inverse of view 1's pose.

    Leaves all pairwise relative poses unchanged and pins view 1 to [U | 0]
    exactly (set directly rather than through the composition arithmetic).
    """
    if not poses:
        return []
    inv0 = poses[0].inverse()
    out = [inv0.compose(p) for p in poses]
    out[0] = PoseSE3.identity()
    return out


# -- so(3)/se(3) helpers ------------------------------------------------------------

def skew(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(3)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula with a small-angle series branch."""
    w = np.asarray(w, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def se3_exp(xi: np.ndarray) -> PoseSE3:
    """Exponential of a 6-vector tangent (omega, v) as a pose."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = np.linalg.norm(w)
    W = skew(w)
    R = so3_exp(w)
    if theta < 1e-8:
        V = np.eye(3) + 0.5 * W + (W @ W) / 6.0
    else:
        t2 = theta * theta
        V = (np.eye(3)
             + ((1.0 - np.cos(theta)) / t2) * W
             + ((theta - np.sin(theta)) / (t2 * theta)) * (W @ W))
    return PoseSE3(R, V @ v, check=False)


def perturb_pose(pose: PoseSE3, xi: np.ndarray) -> PoseSE3:
    """Left-multiplied tangent update: exp(xi) composed with the pose."""
    return se3_exp(xi).compose(pose)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> rotation matrix. Batched over leading dims."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q / n, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, (w, x, y, z) layout, batched over leading dims."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def look_at(eye: np.ndarray, center: np.ndarray, up: np.ndarray) -> PoseSE3:
    """Camera-to-world pose of a camera at ``eye`` looking at ``center``.

    OpenCV convention: +z forward toward the target, +y down (so ``up`` is the
    world up used to fix roll), +x right.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(center, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("camera coincides with look-at target")
    fwd = fwd / n
    upn = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upn / np.linalg.norm(upn))
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("up direction is parallel to the view direction")
    right /= rn
    down = np.cross(fwd, right)  # completes a right-handed (right, down, fwd)
    R = np.stack([right, down, fwd], axis=1)
    return PoseSE3(R, eye, check=False)


# -- JSON I/O ------------------------------------------------------------------------

def save_poses_json(path: str, poses: list[PoseSE3]) -> None:
    with open(path, "w") as f:
        json.dump([p.to_json() for p in poses], f, indent=1)


def load_poses_json(path: str) -> list[PoseSE3]:
    with open(path) as f:
        return [PoseSE3.from_json(d) for d in json.load(f)]
