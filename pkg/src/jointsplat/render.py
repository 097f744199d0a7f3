"""Differentiable tile-based splat rasterizer with a naive compositing oracle.

Forward model (classic EWA splatting):
  * world covariance  Sigma = R(q) diag(s)^2 R(q)^T,
  * camera transform  t = R_pose^T (mu - T_pose)   (pose maps view -> canonical),
  * perspective Jacobian J, screen covariance Sigma' = J W Sigma W^T J^T + blur*I,
  * per-pixel weight  G = exp(-0.5 d^T Sigma'^-1 d), zero outside the 3-sigma
    Mahalanobis cutoff (d^T Sigma'^-1 d > 9),
  * alpha = min(opacity * G, 0.999), front-to-back compositing per 16x16 tile,
    depth-sorted with ties broken by primitive index,
  * SH colors evaluated along the direction from the camera center to mu,
    offset +0.5 and clamped at zero.

The backward pass is hand-derived and returns gradients for every Gaussian
field, the unconstrained pose partials (dR, dT) and their projection onto the
se(3) tangent at the current pose. Pixel sample points sit at (x+0.5, y+0.5).

``render_naive`` recomputes the same mathematical model per pixel over one
globally sorted list, with its own projection and compositing code, and acts
as the brute-force oracle for the tiled path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .gaussians import Gaussians, eval_sh, sh_basis
from .geometry import Intrinsics, PoseSE3, skew

FRONT_DEPTH_ALPHA = 1e-4  # a splat "contributes" to the depth aux above this


@dataclass
class RenderConfig:
    tile: int = 16
    blur: float = 0.3          # px^2 anti-alias low-pass added to Sigma'
    cutoff_sigma: float = 3.0  # Mahalanobis cutoff radius
    alpha_max: float = 0.999
    z_near: float = 0.01

    @property
    def cutoff_sq(self) -> float:
        return self.cutoff_sigma ** 2


@dataclass
class RenderOutput:
    color: np.ndarray  # [H,W,3]
    alpha: np.ndarray  # [H,W]
    aux: dict          # contributors [H,W] int32, front_depth/front_valid


def _quat_rotmats(quat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrices [P,3,3] from possibly non-unit quaternions.

    Also returns the normalized quaternions; normalization is part of the
    differentiated graph so raw head outputs can feed straight in. The norm is
    written elementwise so the naive oracle can reproduce it bitwise.
    """
    n = np.sqrt(quat[:, 0] ** 2 + quat[:, 1] ** 2 + quat[:, 2] ** 2
                + quat[:, 3] ** 2)[:, None]
    q = quat / n
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty(quat.shape[:1] + (3, 3), dtype=quat.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R, q


def _sh_basis_grad(n_coeff: int, d: np.ndarray) -> np.ndarray:
    """d(basis_k)/d(direction) as [P, n_coeff, 3] for unit directions."""
    from .gaussians import SH_C1, SH_C2, SH_C3

    P = d.shape[0]
    g = np.zeros((P, n_coeff, 3), dtype=d.dtype)
    if n_coeff == 1:
        return g
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    g[:, 1, 1] = -SH_C1
    g[:, 2, 2] = SH_C1
    g[:, 3, 0] = -SH_C1
    if n_coeff == 4:
        return g
    g[:, 4, 0] = SH_C2[0] * y
    g[:, 4, 1] = SH_C2[0] * x
    g[:, 5, 1] = SH_C2[1] * z
    g[:, 5, 2] = SH_C2[1] * y
    g[:, 6, 0] = SH_C2[2] * (-2 * x)
    g[:, 6, 1] = SH_C2[2] * (-2 * y)
    g[:, 6, 2] = SH_C2[2] * (4 * z)
    g[:, 7, 0] = SH_C2[3] * z
    g[:, 7, 2] = SH_C2[3] * x
    g[:, 8, 0] = SH_C2[4] * (2 * x)
    g[:, 8, 1] = SH_C2[4] * (-2 * y)
    if n_coeff == 9:
        return g
    g[:, 9, 0] = SH_C3[0] * 6 * x * y
    g[:, 9, 1] = SH_C3[0] * (3 * x * x - 3 * y * y)
    g[:, 10, 0] = SH_C3[1] * y * z
    g[:, 10, 1] = SH_C3[1] * x * z
    g[:, 10, 2] = SH_C3[1] * x * y
    g[:, 11, 0] = SH_C3[2] * (-2 * x * y)
    g[:, 11, 1] = SH_C3[2] * (4 * z * z - x * x - 3 * y * y)
    g[:, 11, 2] = SH_C3[2] * 8 * y * z
    g[:, 12, 0] = SH_C3[3] * (-6 * x * z)
    g[:, 12, 1] = SH_C3[3] * (-6 * y * z)
    g[:, 12, 2] = SH_C3[3] * (6 * z * z - 3 * x * x - 3 * y * y)
    g[:, 13, 0] = SH_C3[4] * (4 * z * z - 3 * x * x - y * y)
    g[:, 13, 1] = SH_C3[4] * (-2 * x * y)
    g[:, 13, 2] = SH_C3[4] * 8 * x * z
    g[:, 14, 0] = SH_C3[5] * 2 * x * z
    g[:, 14, 1] = SH_C3[5] * (-2 * y * z)
    g[:, 14, 2] = SH_C3[5] * (x * x - y * y)
    g[:, 15, 0] = SH_C3[6] * (3 * x * x - y * y - 3 * z * z)
    g[:, 15, 1] = SH_C3[6] * (-2 * x * y)
    g[:, 15, 2] = SH_C3[6] * (-6 * x * z)
    return g


def _project(g: Gaussians, K: Intrinsics, pose: PoseSE3, cfg: RenderConfig) -> dict:
    """Per-gaussian screen-space quantities for all primitives in front of the
    near plane. Returns a ctx dict shared by the forward and backward passes."""
    g.validate()
    dtype = g.mu.dtype
    P = len(g)
    W = pose.R.T.astype(dtype)  # world(canonical) -> camera rotation
    Tp = pose.T.astype(dtype)

    rel = g.mu - Tp                      # [P,3], also the SH view vector
    t = rel @ W.T                        # camera-frame centers
    depth = t[:, 2]
    keep = depth > cfg.z_near
    idx = np.nonzero(keep)[0]

    t = t[idx]
    rel = rel[idx]
    depth = depth[idx]
    fx, fy, cx, cy = K.fx, K.fy, K.cx, K.cy

    z = depth
    mean2d = np.stack([fx * t[:, 0] / z + cx, fy * t[:, 1] / z + cy], axis=1)

    Rq, qhat = _quat_rotmats(g.quat[idx])
    s = g.scale[idx]
    M = Rq * s[:, None, :]               # R(q) diag(s)
    Sigma_w = M @ M.transpose(0, 2, 1)
    Sigma_c = W[None] @ Sigma_w @ W.T[None]

    J = np.zeros((len(idx), 2, 3), dtype=dtype)
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * t[:, 0] / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * t[:, 1] / (z * z)

    Sig2 = J @ Sigma_c @ J.transpose(0, 2, 1)
    a = Sig2[:, 0, 0] + cfg.blur
    b = Sig2[:, 0, 1]
    c = Sig2[:, 1, 1] + cfg.blur
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)  # (A, B, C)

    # axis-aligned bounding box half-extents of the cutoff ellipse
    rx = cfg.cutoff_sigma * np.sqrt(a)
    ry = cfg.cutoff_sigma * np.sqrt(c)

    vnorm = np.sqrt(rel[:, 0] ** 2 + rel[:, 1] ** 2 + rel[:, 2] ** 2)[:, None]
    dirs = rel / vnorm
    basis = sh_basis(g.sh.shape[1], dirs)
    color_raw = 0.5 + np.einsum("pk,pkc->pc", basis, g.sh[idx])
    unclamped = color_raw > 0.0
    color = np.maximum(color_raw, 0.0)

    return {
        "P": P, "idx": idx, "dtype": dtype,
        "W": W, "Tp": Tp, "pose": pose, "K": K, "cfg": cfg,
        "t": t, "depth": depth, "mean2d": mean2d,
        "Rq": Rq, "qhat": qhat, "quat_raw": g.quat[idx], "s": s, "M": M,
        "Sigma_w": Sigma_w, "Sigma_c": Sigma_c, "J": J,
        "conic": conic, "rx": rx, "ry": ry,
        "rel": rel, "vnorm": vnorm, "dirs": dirs, "basis": basis,
        "color": color, "unclamped": unclamped, "sh": g.sh[idx],
        "opacity": g.opacity[idx],
    }


def _tile_candidates(ctx, H: int, W: int) -> list:
    """Per-tile candidate index lists, depth-sorted with index tiebreak.

    Indices refer into the compacted (front-of-camera) arrays in ctx. Tiles
    are visited in a fixed row-major order which also fixes the gradient
    accumulation order.
    """
    cfg: RenderConfig = ctx["cfg"]
    tsz = cfg.tile
    ntx = (W + tsz - 1) // tsz
    nty = (H + tsz - 1) // tsz
    mean2d, rx, ry = ctx["mean2d"], ctx["rx"], ctx["ry"]
    depth = ctx["depth"]

    # pixel-index bounds (sample points at +0.5), conservative
    ix0 = np.floor(mean2d[:, 0] - rx - 0.5).astype(np.int64)
    ix1 = np.ceil(mean2d[:, 0] + rx - 0.5).astype(np.int64)
    iy0 = np.floor(mean2d[:, 1] - ry - 0.5).astype(np.int64)
    iy1 = np.ceil(mean2d[:, 1] + ry - 0.5).astype(np.int64)
    onscreen = (ix1 >= 0) & (ix0 <= W - 1) & (iy1 >= 0) & (iy0 <= H - 1)
    tx0 = np.clip(ix0 // tsz, 0, ntx - 1)
    tx1 = np.clip(ix1 // tsz, 0, ntx - 1)
    ty0 = np.clip(iy0 // tsz, 0, nty - 1)
    ty1 = np.clip(iy1 // tsz, 0, nty - 1)

    tiles = []
    for ty in range(nty):
        for tx in range(ntx):
            hit = onscreen & (tx0 <= tx) & (tx <= tx1) & (ty0 <= ty) & (ty <= ty1)
            cand = np.nonzero(hit)[0]
            if cand.size:
                order = np.lexsort((cand, depth[cand]))
                cand = cand[order]
            x_lo, y_lo = tx * tsz, ty * tsz
            tiles.append((y_lo, min(y_lo + tsz, H), x_lo, min(x_lo + tsz, W), cand))
    return tiles


def _tile_alpha(ctx, cand, xs, ys):
    """Recomputable per-tile quantities: alpha [K,npx] and helpers."""
    cfg: RenderConfig = ctx["cfg"]
    mean2d, conic, opa = ctx["mean2d"], ctx["conic"], ctx["opacity"]
    dx = xs[None, :] - mean2d[cand, 0][:, None]
    dy = ys[None, :] - mean2d[cand, 1][:, None]
    A, B, C = conic[cand, 0][:, None], conic[cand, 1][:, None], conic[cand, 2][:, None]
    m = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
    inside = m <= cfg.cutoff_sq
    G = np.where(inside, np.exp(-0.5 * m), 0.0)
    raw = opa[cand][:, None] * G
    alpha = np.minimum(raw, cfg.alpha_max)
    return dx, dy, m, inside, G, raw, alpha


def render_forward(g: Gaussians, K: Intrinsics, pose: PoseSE3, bg,
                   cfg: RenderConfig | None = None) -> tuple[RenderOutput, dict]:
    """Tiled forward pass; the returned ctx feeds ``render_backward``."""
    cfg = cfg or RenderConfig()
    H, W = K.height, K.width
    bg = np.asarray(bg, dtype=g.mu.dtype).reshape(3)

    color = np.empty((H, W, 3), dtype=g.mu.dtype)
    color[:] = bg
    alpha_img = np.zeros((H, W), dtype=g.mu.dtype)
    contributors = np.zeros((H, W), dtype=np.int32)
    front_depth = np.zeros((H, W), dtype=g.mu.dtype)
    front_valid = np.zeros((H, W), dtype=bool)

    ctx = _project(g, K, pose, cfg)
    ctx["bg"] = bg
    ctx["H"], ctx["Wimg"] = H, W
    tiles = _tile_candidates(ctx, H, W) if len(ctx["idx"]) else []
    ctx["tiles"] = tiles

    for (y0, y1, x0, x1, cand) in tiles:
        if cand.size == 0:
            continue
        px = np.arange(x0, x1) + 0.5
        py = np.arange(y0, y1) + 0.5
        xs = np.tile(px, y1 - y0)
        ys = np.repeat(py, x1 - x0)
        _, _, _, _, _, _, alpha = _tile_alpha(ctx, cand, xs, ys)

        Tcum = np.cumprod(1.0 - alpha, axis=0)
        Tbefore = np.vstack([np.ones((1, alpha.shape[1]), dtype=alpha.dtype), Tcum[:-1]])
        wgt = alpha * Tbefore
        tile_rgb = wgt.T @ ctx["color"][cand]           # [npx,3]
        Tfin = Tcum[-1]
        tile_rgb += bg[None, :] * Tfin[:, None]

        shp = (y1 - y0, x1 - x0)
        color[y0:y1, x0:x1] = tile_rgb.reshape(shp + (3,))
        alpha_img[y0:y1, x0:x1] = (1.0 - Tfin).reshape(shp)
        contributors[y0:y1, x0:x1] = (alpha > 0).sum(axis=0).reshape(shp)

        contrib = alpha > FRONT_DEPTH_ALPHA
        has = contrib.any(axis=0)
        first = np.argmax(contrib, axis=0)
        d = ctx["depth"][cand][first]
        front_depth[y0:y1, x0:x1] = np.where(has, d, 0.0).reshape(shp)
        front_valid[y0:y1, x0:x1] = has.reshape(shp)

    out = RenderOutput(color, alpha_img, {
        "contributors": contributors,
        "front_depth": front_depth,
        "front_valid": front_valid,
    })
    return out, ctx


def render(g: Gaussians, K: Intrinsics, pose: PoseSE3, bg=(0.0, 0.0, 0.0),
           cfg: RenderConfig | None = None) -> RenderOutput:
    out, _ = render_forward(g, K, pose, bg, cfg)
    return out


def render_backward(ctx: dict, grad_color: np.ndarray,
                    grad_alpha: np.ndarray | None = None) -> dict:
    """Hand-derived gradients for all Gaussian fields and the camera pose.

    Returns mu/quat/scale/opacity/sh gradients shaped like the inputs plus
    ``rot`` (3x3), ``trans`` (3,) unconstrained pose partials and
    ``pose_tangent`` (6,), the projection onto the left se(3) tangent
    (omega, v) at the current pose.
    """
    if "tiles" not in ctx:
        raise ValueError("render_backward needs the ctx of a prior render_forward")
    cfg: RenderConfig = ctx["cfg"]
    dtype = ctx["dtype"]
    Pv = len(ctx["idx"])
    H, W = ctx["H"], ctx["Wimg"]
    gC = np.asarray(grad_color, dtype=dtype).reshape(H, W, 3)
    gA = None if grad_alpha is None else np.asarray(grad_alpha, dtype=dtype).reshape(H, W)

    d_color = np.zeros((Pv, 3), dtype=dtype)
    d_opa = np.zeros(Pv, dtype=dtype)
    d_mean = np.zeros((Pv, 2), dtype=dtype)
    d_conic_mat = np.zeros((Pv, 2, 2), dtype=dtype)

    # pass 1: image-space gradients per tile (alpha recomputed, not stored)
    for (y0, y1, x0, x1, cand) in ctx["tiles"]:
        if cand.size == 0:
            continue
        px = np.arange(x0, x1) + 0.5
        py = np.arange(y0, y1) + 0.5
        xs = np.tile(px, y1 - y0)
        ys = np.repeat(py, x1 - x0)
        dx, dy, m, inside, G, raw, alpha = _tile_alpha(ctx, cand, xs, ys)
        col = ctx["color"][cand]                           # [K,3]
        gC_t = gC[y0:y1, x0:x1].reshape(-1, 3)             # [npx,3]
        gA_t = None if gA is None else gA[y0:y1, x0:x1].reshape(-1)

        Tcum = np.cumprod(1.0 - alpha, axis=0)
        Tbefore = np.vstack([np.ones((1, alpha.shape[1]), dtype=alpha.dtype), Tcum[:-1]])
        wgt = alpha * Tbefore
        Tfin = Tcum[-1]

        d_color[cand] += wgt @ gC_t                        # [K,3]

        u = col @ gC_t.T                                   # per-pixel dot(gC, col_k)
        q = wgt * u
        suffix = q.sum(axis=0, keepdims=True) - np.cumsum(q, axis=0)
        sbg = (gC_t @ ctx["bg"]) * Tfin                    # [npx]
        one_m = 1.0 - alpha                                # >= 1 - alpha_max
        dalpha = u * Tbefore - (suffix + sbg[None, :]) / one_m
        if gA_t is not None:
            dalpha += (gA_t * Tfin)[None, :] / one_m

        unclamped = raw < cfg.alpha_max
        dalpha = np.where(unclamped, dalpha, 0.0)
        d_opa[cand] += (dalpha * G).sum(axis=1)
        dG = dalpha * ctx["opacity"][cand][:, None]
        dm = np.where(inside, -0.5 * G * dG, 0.0)

        d_conic_mat[cand, 0, 0] += (dm * dx * dx).sum(axis=1)
        off = (dm * dx * dy).sum(axis=1)
        d_conic_mat[cand, 0, 1] += off
        d_conic_mat[cand, 1, 0] += off
        d_conic_mat[cand, 1, 1] += (dm * dy * dy).sum(axis=1)

        A = ctx["conic"][cand, 0][:, None]
        B = ctx["conic"][cand, 1][:, None]
        C = ctx["conic"][cand, 2][:, None]
        ddx = dm * (2.0 * A * dx + 2.0 * B * dy)
        ddy = dm * (2.0 * B * dx + 2.0 * C * dy)
        d_mean[cand, 0] += -ddx.sum(axis=1)
        d_mean[cand, 1] += -ddy.sum(axis=1)

    # pass 2: chain screen-space gradients to primitive and pose parameters
    Wm, Tp = ctx["W"], ctx["Tp"]
    t, depth = ctx["t"], ctx["depth"]
    fx, fy = ctx["K"].fx, ctx["K"].fy
    z = depth
    conic = ctx["conic"]
    Cmat = np.empty((Pv, 2, 2), dtype=dtype)
    Cmat[:, 0, 0], Cmat[:, 0, 1] = conic[:, 0], conic[:, 1]
    Cmat[:, 1, 0], Cmat[:, 1, 1] = conic[:, 1], conic[:, 2]

    # conic = inv(Sigma'), so dSigma' = -conic @ dConic @ conic
    dSig2 = -Cmat @ d_conic_mat @ Cmat
    J, Sigma_c, Sigma_w, M = ctx["J"], ctx["Sigma_c"], ctx["Sigma_w"], ctx["M"]
    dSigc = J.transpose(0, 2, 1) @ dSig2 @ J
    dJ = 2.0 * (dSig2 @ J @ Sigma_c)

    # t-gradients from the Jacobian entries and the 2D mean
    dt = np.zeros((Pv, 3), dtype=dtype)
    z2, z3 = z * z, z * z * z
    dt[:, 0] += dJ[:, 0, 2] * (-fx / z2)
    dt[:, 1] += dJ[:, 1, 2] * (-fy / z2)
    dt[:, 2] += (dJ[:, 0, 0] * (-fx / z2) + dJ[:, 1, 1] * (-fy / z2)
                 + dJ[:, 0, 2] * (2.0 * fx * t[:, 0] / z3)
                 + dJ[:, 1, 2] * (2.0 * fy * t[:, 1] / z3))
    dt[:, 0] += d_mean[:, 0] * fx / z
    dt[:, 1] += d_mean[:, 1] * fy / z
    dt[:, 2] += -(d_mean[:, 0] * fx * t[:, 0] + d_mean[:, 1] * fy * t[:, 1]) / z2

    # covariance chain: Sigma_c = W Sigma_w W^T, Sigma_w = M M^T, M = R(q) diag(s)
    dSigw = Wm.T[None] @ dSigc @ Wm[None]
    dW_cov = 2.0 * np.einsum("pij,pjk->ik", dSigc, np.einsum("ij,pjk->pik", Wm, Sigma_w))
    dM = 2.0 * (dSigw @ M)
    dRq = dM * ctx["s"][:, None, :]
    ds = (dM * ctx["Rq"]).sum(axis=1)

    # quaternion chain through R(qhat) and the normalization
    qh = ctx["qhat"]
    w, x, y, zq = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    zro = np.zeros_like(w)
    dR_dw = 2.0 * np.stack([zro, -zq, y, zq, zro, -x, -y, x, zro], axis=1).reshape(-1, 3, 3)
    dR_dx = 2.0 * np.stack([zro, y, zq, y, -2 * x, -w, zq, w, -2 * x], axis=1).reshape(-1, 3, 3)
    dR_dy = 2.0 * np.stack([-2 * y, x, w, x, zro, zq, -w, zq, -2 * y], axis=1).reshape(-1, 3, 3)
    dR_dz = 2.0 * np.stack([-2 * zq, -w, x, w, -2 * zq, y, x, y, zro], axis=1).reshape(-1, 3, 3)
    dqhat = np.stack([(dRq * dR_dw).sum(axis=(1, 2)),
                      (dRq * dR_dx).sum(axis=(1, 2)),
                      (dRq * dR_dy).sum(axis=(1, 2)),
                      (dRq * dR_dz).sum(axis=(1, 2))], axis=1)
    qn = np.linalg.norm(ctx["quat_raw"], axis=1, keepdims=True)
    dquat = (dqhat - qh * (dqhat * qh).sum(axis=1, keepdims=True)) / qn

    # color chain: SH coefficients and view direction
    dcol = np.where(ctx["unclamped"], d_color, 0.0)
    dsh = ctx["basis"][:, :, None] * dcol[:, None, :]
    dbasis = np.einsum("pkc,pc->pk", ctx["sh"], dcol)
    bgrad = _sh_basis_grad(ctx["sh"].shape[1], ctx["dirs"])
    ddir = np.einsum("pk,pkd->pd", dbasis, bgrad)
    drel_sh = (ddir - ctx["dirs"] * (ddir * ctx["dirs"]).sum(axis=1, keepdims=True)) / ctx["vnorm"]

    # assemble mu / pose gradients: t = W (mu - T), rel = mu - T
    dmu = dt @ Wm + drel_sh
    dT_total = -(dt @ Wm).sum(axis=0) - drel_sh.sum(axis=0)
    dW_t = dt.T @ ctx["rel"]
    dW = dW_cov + dW_t
    dR_pose = dW.T  # W = R^T

    pose = ctx["pose"]
    tangent = np.zeros(6, dtype=np.float64)
    for k in range(3):
        E = skew(np.eye(3)[k])
        tangent[k] = float((dR_pose * (E @ pose.R)).sum() + dT_total @ (E @ pose.T))
    tangent[3:] = dT_total

    # scatter back to full-length arrays (culled primitives keep zero grads)
    full = ctx["P"]
    idx = ctx["idx"]
    out = {
        "mu": np.zeros((full, 3), dtype=dtype),
        "quat": np.zeros((full, 4), dtype=dtype),
        "scale": np.zeros((full, 3), dtype=dtype),
        "opacity": np.zeros(full, dtype=dtype),
        "sh": np.zeros((full,) + ctx["sh"].shape[1:], dtype=dtype),
        "rot": dR_pose.astype(np.float64),
        "trans": dT_total.astype(np.float64),
        "pose_tangent": tangent,
    }
    out["mu"][idx] = dmu
    out["quat"][idx] = dquat
    out["scale"][idx] = ds
    out["opacity"][idx] = d_opa
    out["sh"][idx] = dsh
    return out


def render_naive(g: Gaussians, K: Intrinsics, pose: PoseSE3, bg=(0.0, 0.0, 0.0),
                 cfg: RenderConfig | None = None) -> RenderOutput:
    """Brute-force oracle: same mathematical model, no tiling.

    Projects each primitive with plain per-gaussian numpy and composites every
    pixel over one globally depth-sorted list (ties broken by index).
    """
    cfg = cfg or RenderConfig()
    g.validate()
    H, W = K.height, K.width
    dtype = g.mu.dtype
    bg = np.asarray(bg, dtype=dtype).reshape(3)

    Wm = pose.R.T
    mean2d, conic, colors, opas, depths = [], [], [], [], []
    for i in range(len(g)):
        tcam = Wm @ (g.mu[i] - pose.T)
        if tcam[2] <= cfg.z_near:
            continue
        zc = tcam[2]
        qr = g.quat[i]
        q = qr / np.sqrt(qr[0] ** 2 + qr[1] ** 2 + qr[2] ** 2 + qr[3] ** 2)
        qw, qx, qy, qz = q
        Rq = np.array([
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)],
            [2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)],
            [2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)],
        ])
        Mi = Rq * g.scale[i][None, :]
        Sw = Mi @ Mi.T
        Sc = Wm @ Sw @ Wm.T
        J = np.array([
            [K.fx / zc, 0.0, -K.fx * tcam[0] / (zc * zc)],
            [0.0, K.fy / zc, -K.fy * tcam[1] / (zc * zc)],
        ])
        S2 = J @ Sc @ J.T
        a, b, c = S2[0, 0] + cfg.blur, S2[0, 1], S2[1, 1] + cfg.blur
        det = a * c - b * b
        rel = g.mu[i] - pose.T
        dirs = (rel / np.sqrt(rel[0] ** 2 + rel[1] ** 2 + rel[2] ** 2)).reshape(1, 3)
        col = eval_sh(g.sh[i:i + 1], dirs)[0]
        mean2d.append([K.fx * tcam[0] / zc + K.cx, K.fy * tcam[1] / zc + K.cy])
        conic.append([c / det, -b / det, a / det])
        colors.append(col)
        opas.append(g.opacity[i])
        depths.append(zc)

    color = np.empty((H, W, 3), dtype=dtype)
    color[:] = bg
    alpha_img = np.zeros((H, W), dtype=dtype)
    contributors = np.zeros((H, W), dtype=np.int32)
    front_depth = np.zeros((H, W), dtype=dtype)
    front_valid = np.zeros((H, W), dtype=bool)
    if not mean2d:
        return RenderOutput(color, alpha_img, {"contributors": contributors,
                                               "front_depth": front_depth,
                                               "front_valid": front_valid})

    mean2d = np.asarray(mean2d, dtype=dtype)
    conic = np.asarray(conic, dtype=dtype)
    colors = np.asarray(colors, dtype=dtype)
    opas = np.asarray(opas, dtype=dtype)
    depths = np.asarray(depths, dtype=dtype)
    order = np.lexsort((np.arange(len(depths)), depths))
    mean2d, conic, colors = mean2d[order], conic[order], colors[order]
    opas, depths = opas[order], depths[order]

    for yi in range(H):
        for xi in range(W):
            dx = (xi + 0.5) - mean2d[:, 0]
            dy = (yi + 0.5) - mean2d[:, 1]
            m = conic[:, 0] * dx * dx + 2.0 * conic[:, 1] * dx * dy + conic[:, 2] * dy * dy
            Gv = np.where(m <= cfg.cutoff_sq, np.exp(-0.5 * m), 0.0)
            al = np.minimum(opas * Gv, cfg.alpha_max)
            Tc = np.cumprod(1.0 - al)
            Tb = np.concatenate([[1.0], Tc[:-1]])
            wgt = al * Tb
            color[yi, xi] = wgt @ colors + bg * Tc[-1]
            alpha_img[yi, xi] = 1.0 - Tc[-1]
            contributors[yi, xi] = int((al > 0).sum())
            hit = al > FRONT_DEPTH_ALPHA
            if hit.any():
                front_depth[yi, xi] = depths[int(np.argmax(hit))]
                front_valid[yi, xi] = True
    return RenderOutput(color, alpha_img, {"contributors": contributors,
                                           "front_depth": front_depth,
                                           "front_valid": front_valid})


# -- tensor bridge ----------------------------------------------------------------

def splat_render_op(mu, quat, scale, opacity, sh, rot, trans, K: Intrinsics,
                    bg=(0.0, 0.0, 0.0), cfg: RenderConfig | None = None) -> tc.Tensor:
    """Differentiable rendering as a recorded custom op.

    All arguments except K/bg/cfg are Tensors; the output is the [H,W,3] color
    image. The backward closure feeds the hand-derived gradients back into the
    tape, including the unconstrained (R, T) pose partials which then flow
    through whatever graph produced them (the 10D pose decode).
    """
    pose = PoseSE3(rot.data, trans.data, check=False)
    g = Gaussians(mu.data, quat.data, scale.data, opacity.data, sh.data)
    out, ctx = render_forward(g, K, pose, bg, cfg)

    def backward(grad_out):
        grads = render_backward(ctx, grad_out)
        return (grads["mu"], grads["quat"], grads["scale"], grads["opacity"],
                grads["sh"], grads["rot"].astype(mu.data.dtype),
                grads["trans"].astype(mu.data.dtype))

    return tc.register_op("splat_render", out.color,
                          (mu, quat, scale, opacity, sh, rot, trans), backward)


# -- image I/O ----------------------------------------------------------------------

def save_image_png(path: str, img: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(img), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_image_png(path: str) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path), dtype=np.float64)[..., :3] / 255.0


def save_image_raw(path: str, img: np.ndarray) -> None:
    """Lossless float32 dump with a JSON shape sidecar."""
    arr = np.asarray(img, dtype="<f4")
    with open(path, "wb") as f:
        f.write(arr.tobytes())
    with open(path + ".json", "w") as f:
        json.dump({"shape": list(arr.shape), "dtype": "<f4"}, f)


def load_image_raw(path: str) -> np.ndarray:
    with open(path + ".json") as f:
        meta = json.load(f)
    with open(path, "rb") as f:
        arr = np.frombuffer(f.read(), dtype=meta["dtype"])
    return arr.reshape(meta["shape"]).astype(np.float64)
