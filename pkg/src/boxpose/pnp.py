"""Pose recovery from 2D-3D correspondences.

Two routes: a dimension-aware Levenberg-Marquardt PnP over the
y-normalized cuboid model, and a keypoint-lifting baseline that fixes
the control-point barycentric coordinates of a canonical unit cube
(so it needs no dimension estimate, at the cost of an unconstrained
12-dof solve that is noise sensitive).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientCorrespondencesError, NumericalFailureError
from .geometry import (
    CameraIntrinsics,
    Pose,
    RelativeDims,
    cuboid_vertices,
    quat_from_axis_angle,
    quat_multiply,
    quat_rotation_y,
    quat_to_matrix,
)

_DEPTH_EPS = 1e-9


@dataclass(frozen=True)
class PnPConfig:
    max_iters: int = 100
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    step_tol: float = 1e-10
    cost_tol: float = 1e-12
    huber_px: float | None = None  # robust threshold; None disables

    def __post_init__(self):
        if min(self.max_iters, self.initial_damping, self.damping_up, self.step_tol, self.cost_tol) <= 0 or self.damping_down <= 0:
            raise ValueError("PnP settings must be positive")


@dataclass
class PnPResult:
    pose: Pose
    rms: float  # weighted RMS reprojection error, pixels
    iterations: int
    converged: bool


@dataclass
class LiftingResult:
    result: PnPResult
    implied_extents: np.ndarray  # (3,) box implied by the lifted vertices


def _project_cam(pts_cam, cam):
    z = pts_cam[:, 2]
    uv = np.empty((len(pts_cam), 2))
    uv[:, 0] = cam.fx * pts_cam[:, 0] / z + cam.cx
    uv[:, 1] = cam.fy * pts_cam[:, 1] / z + cam.cy
    return uv


def _residuals(q, t, pts3d, uv, sqrt_w, cam):
    pts_cam = pts3d @ quat_to_matrix(q).T + t
    if pts_cam[:, 2].min() <= _DEPTH_EPS:
        return None, None
    res = (_project_cam(pts_cam, cam) - uv) * sqrt_w[:, None]
    return res.ravel(), pts_cam


def _jacobian(pts_cam, pts3d, t, sqrt_w, cam):
    """d residual / d (axis-angle delta, translation); left perturbation."""
    n = len(pts_cam)
    x, y, z = pts_cam[:, 0], pts_cam[:, 1], pts_cam[:, 2]
    inv_z = 1.0 / z
    jproj = np.zeros((n, 2, 3))
    jproj[:, 0, 0] = cam.fx * inv_z
    jproj[:, 0, 2] = -cam.fx * x * inv_z**2
    jproj[:, 1, 1] = cam.fy * inv_z
    jproj[:, 1, 2] = -cam.fy * y * inv_z**2
    rx = pts_cam - t  # rotated model points
    jrot = np.zeros((n, 3, 3))
    jrot[:, 0, 1] = rx[:, 2]
    jrot[:, 0, 2] = -rx[:, 1]
    jrot[:, 1, 0] = -rx[:, 2]
    jrot[:, 1, 2] = rx[:, 0]
    jrot[:, 2, 0] = rx[:, 1]
    jrot[:, 2, 1] = -rx[:, 0]
    jac = np.concatenate([np.einsum("nij,njk->nik", jproj, jrot), jproj], axis=2)
    return (jac * sqrt_w[:, None, None]).reshape(2 * n, 6)


def _dlt_init(pts3d, uv, weights, cam):
    """Direct linear transform for [R|t] up to scale; None on failure."""
    n = len(pts3d)
    if n < 6:
        return None
    kinv = np.linalg.inv(cam.matrix)
    xn = (np.column_stack([uv, np.ones(n)]) @ kinv.T)[:, :2]
    sw = np.sqrt(weights)
    a = np.zeros((2 * n, 12))
    xyz1 = np.column_stack([pts3d, np.ones(n)])
    a[0::2, 0:4] = xyz1
    a[0::2, 8:12] = -xn[:, [0]] * xyz1
    a[1::2, 4:8] = xyz1
    a[1::2, 8:12] = -xn[:, [1]] * xyz1
    a *= np.repeat(sw, 2)[:, None]
    try:
        _, s, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        return None
    if s[-2] < 1e-10 * s[0]:
        return None
    m = vt[-1].reshape(3, 4)
    depths = xyz1 @ m[2]
    if np.median(depths) < 0:
        m = -m
    u, sv, vt2 = np.linalg.svd(m[:, :3])
    det = np.linalg.det(u @ vt2)
    rot = u @ np.diag([1.0, 1.0, det]) @ vt2
    scale = sv.mean()
    if scale < 1e-12 or det < 0:
        return None
    t = m[:, 3] / scale
    pose = Pose.from_matrix(rot, t)
    if (pts3d @ rot.T + t)[:, 2].min() <= _DEPTH_EPS:
        return None
    return pose


def _canonical_inits(pts3d, uv, cam):
    radius = float(np.linalg.norm(pts3d, axis=1).max())
    spread = float(np.linalg.norm(uv - uv.mean(axis=0), axis=1).max())
    z0 = np.clip(cam.fx * radius / max(spread, 1.0), 0.1, 1e4)
    return [
        Pose(quat_rotation_y(angle), np.array([0.0, 0.0, z0]))
        for angle in (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)
    ]


def _lm_from(pose, pts3d, uv, weights, cam, cfg):
    q, t = pose.quat, pose.translation.copy()
    sqrt_w = np.sqrt(weights)
    res, pts_cam = _residuals(q, t, pts3d, uv, sqrt_w, cam)
    if res is None:
        return None
    if cfg.huber_px is not None:
        sqrt_w = sqrt_w * np.sqrt(_huber_weights(pts_cam, uv, cam, cfg.huber_px))
        res, pts_cam = _residuals(q, t, pts3d, uv, sqrt_w, cam)
    cost = float(res @ res)
    lam = cfg.initial_damping
    iterations = 0
    converged = False
    while iterations < cfg.max_iters:
        iterations += 1
        jac = _jacobian(pts_cam, pts3d, t, sqrt_w, cam)
        hess = jac.T @ jac
        grad = jac.T @ res
        diag = np.maximum(np.diag(hess), 1e-12)
        try:
            delta = np.linalg.solve(hess + lam * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            lam *= cfg.damping_up
            continue
        q_new = quat_multiply(quat_from_axis_angle(delta[:3]), q)
        t_new = t + delta[3:]
        res_new, pts_cam_new = _residuals(q_new, t_new, pts3d, uv, sqrt_w, cam)
        if res_new is None or not np.isfinite(res_new @ res_new):
            lam *= cfg.damping_up
            if lam > 1e14:
                break
            continue
        cost_new = float(res_new @ res_new)
        if cost_new < cost:
            accepted_drop = (cost - cost_new) / max(cost, 1e-300)
            q, t, res, pts_cam, cost = q_new, t_new, res_new, pts_cam_new, cost_new
            lam = max(lam * cfg.damping_down, 1e-16)
            if np.linalg.norm(delta) < cfg.step_tol or accepted_drop < cfg.cost_tol:
                converged = True
                break
        else:
            lam *= cfg.damping_up
            if lam > 1e14:
                converged = True  # stuck at a (possibly local) minimum
                break
    wsum = float((sqrt_w**2).sum())
    rms = float(np.sqrt(cost / max(wsum, 1e-300)))
    return PnPResult(Pose(q, t), rms, iterations, converged), cost, pts_cam


def _huber_weights(pts_cam, uv, cam, delta):
    err = np.linalg.norm(_project_cam(pts_cam, cam) - uv, axis=1)
    w = np.ones_like(err)
    big = err > delta
    w[big] = delta / err[big]
    return w


def solve_pnp_lm(indices, points, weights, dims: RelativeDims, cam: CameraIntrinsics, cfg: PnPConfig = PnPConfig()) -> PnPResult:
    """Minimize weighted reprojection error over the 6 pose parameters.

    ``indices`` select model vertices of the y-normalized cuboid built
    from ``dims``; repeated vertices (combined/sampling strategies) are
    allowed. Initialized by DLT with a fallback grid of front-facing
    rotations.
    """
    indices = np.asarray(indices, dtype=int)
    points = np.asarray(points, dtype=np.float64)
    weights = np.ones(len(indices)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(set(indices.tolist())) < 4:
        raise InsufficientCorrespondencesError(
            f"{len(set(indices.tolist()))} distinct model vertices, need >= 4"
        )
    model = cuboid_vertices(dims)
    pts3d = model[indices]

    inits = []
    dlt = _dlt_init(pts3d, points, weights, cam)
    if dlt is not None:
        inits.append(dlt)
    else:
        inits.extend(_canonical_inits(pts3d, points, cam))

    best = None
    best_cost = np.inf
    for init in inits:
        out = _lm_from(init, pts3d, points, weights, cam, cfg)
        if out is None:
            continue
        result, cost, pts_cam = out
        if pts_cam[:, 2].min() <= _DEPTH_EPS:
            continue
        if cost < best_cost:
            best, best_cost = result, cost
    if best is None:
        raise NumericalFailureError("no initialization produced a front-of-camera solution")
    if not np.isfinite(best_cost):
        raise NumericalFailureError("PnP cost diverged", best=best)
    return best


# Barycentric coordinates of the canonical unit cube's vertices w.r.t.
# control points {centroid, centroid + 0.5 * each axis}: fixing these is
# the no-dimension-prediction lifting assumption.
_CUBE = cuboid_vertices(RelativeDims(1.0, 1.0))
_BARY = np.column_stack([1.0 - 2.0 * _CUBE.sum(axis=1), 2.0 * _CUBE])


def solve_keypoint_lifting(kps, cam: CameraIntrinsics) -> LiftingResult:
    """EPnP-style lift of 8 keypoints with fixed cube barycentrics.

    Returns the recovered pose plus the 3D box implied by the lifted
    control points; no predicted dimensions are used anywhere.
    """
    pts = kps.points if hasattr(kps, "points") else np.asarray(kps, dtype=np.float64)
    if hasattr(kps, "valid") and not np.all(kps.valid):
        raise InsufficientCorrespondencesError("keypoint lifting needs all 8 vertices")
    if pts.shape != (8, 2):
        raise ValueError(f"expected (8, 2) keypoints, got {pts.shape}")

    m = np.zeros((16, 12))
    for i in range(8):
        u, v = pts[i]
        for j in range(4):
            a = _BARY[i, j]
            m[2 * i, 3 * j + 0] = a * cam.fx
            m[2 * i, 3 * j + 2] = a * (cam.cx - u)
            m[2 * i + 1, 3 * j + 1] = a * cam.fy
            m[2 * i + 1, 3 * j + 2] = a * (cam.cy - v)
    _, s, vt = np.linalg.svd(m)
    if s[-2] < 1e-8 * s[0]:
        raise NumericalFailureError("degenerate keypoint configuration (rank-deficient lift)")
    ctrl = vt[-1].reshape(4, 3)
    verts = _BARY @ ctrl
    if verts[:, 2].mean() < 0:
        ctrl = -ctrl
        verts = -verts

    # Match world control-point distances (unit-cube convention) to fix
    # the null-vector scale; the absolute value is conventional anyway.
    ctrl_world = np.vstack([np.zeros(3), 0.5 * np.eye(3)])
    iu, ju = np.triu_indices(4, k=1)
    dc = np.linalg.norm(ctrl[iu] - ctrl[ju], axis=1)
    dw = np.linalg.norm(ctrl_world[iu] - ctrl_world[ju], axis=1)
    denom = float(dc @ dc)
    if denom < 1e-30:
        raise NumericalFailureError("collapsed control points")
    ctrl = ctrl * float(dc @ dw) / denom
    verts = _BARY @ ctrl

    centroid = verts.mean(axis=0)
    centered = verts - centroid
    h = _CUBE.T @ centered
    u_svd, s_svd, vt_svd = np.linalg.svd(h)
    if s_svd[-1] < 1e-10 * max(s_svd[0], 1e-30):
        raise NumericalFailureError("lifted vertices are rank deficient")
    d = np.linalg.det(vt_svd.T @ u_svd.T)
    rot = vt_svd.T @ np.diag([1.0, 1.0, d]) @ u_svd.T
    extents = 2.0 * np.abs(centered @ rot).mean(axis=0)
    if np.any(extents < 1e-12):
        raise NumericalFailureError("implied box collapsed")
    pose = Pose.from_matrix(rot, centroid)

    if verts[:, 2].min() <= _DEPTH_EPS:
        raise NumericalFailureError("lifted box behind camera")
    reproj = _project_cam(verts, cam)
    rms = float(np.sqrt(np.mean(np.sum((reproj - pts) ** 2, axis=1))))
    result = PnPResult(pose, rms, iterations=1, converged=True)
    return LiftingResult(result=result, implied_extents=extents)


def resolve_scale(result: PnPResult, known_height, extents):
    """Scale a model-unit solution to metric using a measured height.

    ``extents`` are the solution's box extents in model units (y = 1 for
    the relative-dims model). Projection is unchanged by this scaling.
    Returns (metric pose, metric extents).
    """
    if known_height <= 0:
        raise ValueError("known height must be positive")
    extents = np.asarray(extents, dtype=np.float64)
    s = known_height / extents[1]
    pose = Pose(result.pose.quat, result.pose.translation * s)
    return pose, extents * s
