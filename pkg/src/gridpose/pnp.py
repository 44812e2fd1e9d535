"""Pose recovery from 3D-to-2D correspondences.

Three layers:

* `epnp`        — non-iterative solver expressing the 3D points as barycentric
                  combinations of 4 control points (3 in the planar case). The
                  camera-frame control points are sought in the span of the
                  trailing eigenvectors of the projection-constraint matrix;
                  several closed-form beta initializations (kernel dimension
                  cases) are each polished by a short Gauss-Newton pass on the
                  inter-control-point distances, turned into poses by rigid
                  alignment, and scored by reprojection error under a positive-
                  depth requirement.
* `refine_pose` — damped Gauss-Newton on the reprojection residuals, with the
                  rotation updated through the exponential map so every iterate
                  stays on SO(3). Accepted steps never increase the residual
                  sum of squares.
* `ransac_pnp`  — seeded hypothesize-and-verify wrapper: minimal 4-point
                  samples covering distinct 3D keypoints (drawn with
                  probability proportional to confidence), inlier consensus at
                  a pixel threshold with an inner refit whenever the consensus
                  grows, early exit at a target success probability, and a
                  final epnp + refine fit on the inliers.

Internally poses travel as raw (rotation, translation) arrays, with the
candidate pipeline batched across beta cases; validated Pose objects are
built only at the public boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CheiralityFailureError,
    ConfigError,
    DegenerateError,
    NoConsensusError,
    NonFiniteError,
    TooFewError,
)
from .geometry import DEPTH_EPS, CameraIntrinsics, Pose

PLANAR_EIG_RATIO = 1e-8
_COLLINEAR_EIG_RATIO = 1e-12


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 300
    inlier_threshold_px: float = 5.0
    min_sample_size: int = 4
    confidence_stop: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.inlier_threshold_px > 0:
            raise ConfigError("inlier_threshold_px must be positive")
        if self.min_sample_size < 4:
            raise ConfigError("min_sample_size must be >= 4")
        if not (0.0 < self.confidence_stop < 1.0):
            raise ConfigError("confidence_stop must lie in (0, 1)")


@dataclass
class PnpSolution:
    pose: Pose
    inlier_mask: np.ndarray
    mean_reproj_px: float


def _reproj_errors_rt(r, t, pw, uv, k: CameraIntrinsics) -> np.ndarray:
    cam = pw @ r.T + t
    z = cam[:, 2]
    err = np.full(len(pw), np.inf)
    ok = z > DEPTH_EPS
    if ok.any():
        u = k.fx * cam[ok, 0] / z[ok] + k.cx
        v = k.fy * cam[ok, 1] / z[ok] + k.cy
        err[ok] = np.hypot(u - uv[ok, 0], v - uv[ok, 1])
    return err


def _reproj_errors_batch(rs, ts, pw, uv, k: CameraIntrinsics) -> np.ndarray:
    """Errors for a batch of poses: rs (c,3,3), ts (c,3) -> (c, n)."""
    cam = np.einsum("nj,cij->cni", pw, rs) + ts[:, None, :]
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[..., 0] / z + k.cx
        v = k.fy * cam[..., 1] / z + k.cy
        err = np.hypot(u - uv[:, 0], v - uv[:, 1])
    err[~(z > DEPTH_EPS)] = np.inf
    return err


def reprojection_errors(pose: Pose, points3d, points2d, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Per-correspondence pixel errors; points at/behind the camera get +inf."""
    pw = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    return _reproj_errors_rt(pose.rotation, pose.translation, pw, uv, intrinsics)


def _solve_ls(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least squares via normal equations, falling back to lstsq when singular."""
    ata = a.T @ a
    try:
        return np.linalg.solve(ata, a.T @ b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(a, b, rcond=None)[0]


def _control_points(pw: np.ndarray) -> tuple[np.ndarray, bool]:
    """Centroid + principal-direction control points; 3 of them when planar."""
    centroid = pw.mean(axis=0)
    q = pw - centroid
    cov = q.T @ q / len(pw)
    eigval, eigvec = np.linalg.eigh(cov)  # ascending
    eigval = np.clip(eigval, 0.0, None)
    if eigval[2] <= 0 or eigval[1] < _COLLINEAR_EIG_RATIO * eigval[2]:
        raise DegenerateError("3D points are (near-)collinear")
    planar = eigval[0] < PLANAR_EIG_RATIO * eigval[2]
    axes = eigvec[:, ::-1].T  # descending significance
    scales = np.sqrt(eigval[::-1])
    n_axes = 2 if planar else 3
    ctrl = [centroid] + [centroid + scales[i] * axes[i] for i in range(n_axes)]
    return np.asarray(ctrl), planar


def _barycentric(pw: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    a = np.vstack([ctrl.T, np.ones(len(ctrl))])
    b = np.vstack([pw.T, np.ones(len(pw))])
    if len(ctrl) == 4:
        return np.linalg.solve(a, b).T
    return np.linalg.lstsq(a, b, rcond=None)[0].T


def _constraint_matrix(alphas: np.ndarray, uv: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    n, m = alphas.shape
    mat = np.zeros((2 * n, 3 * m))
    du = k.cx - uv[:, 0]
    dv = k.cy - uv[:, 1]
    for j in range(m):
        mat[0::2, 3 * j] = alphas[:, j] * k.fx
        mat[0::2, 3 * j + 2] = alphas[:, j] * du
        mat[1::2, 3 * j + 1] = alphas[:, j] * k.fy
        mat[1::2, 3 * j + 2] = alphas[:, j] * dv
    return mat


def _pair_indices(m: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def _pair_diffs(v: np.ndarray, m: int) -> np.ndarray:
    """Control-point difference vectors per null vector: (pairs, 3, nv)."""
    blocks = v.reshape(m, 3, -1)
    return np.stack([blocks[i] - blocks[j] for i, j in _pair_indices(m)])


def _distance_l_matrix(diffs: np.ndarray) -> np.ndarray:
    """Rows: squared-distance constraints linearized in the products B_ab.

    Column order for nv vectors: B_11, B_12, ..., B_1nv, B_22, B_23, ...
    (upper triangle row by row), with off-diagonal columns doubled.
    """
    nv = diffs.shape[2]
    prods = np.einsum("pia,pib->pab", diffs, diffs)
    iu = np.triu_indices(nv)
    cols = prods[:, iu[0], iu[1]]
    off = iu[0] != iu[1]
    cols[:, off] *= 2.0
    return cols


def _tri_index(a: int, b: int, nv: int) -> int:
    """Column index of B_ab (a <= b) in the upper-triangle ordering."""
    return a * nv - a * (a - 1) // 2 + (b - a)


def _betas_single(diffs: np.ndarray, rho: np.ndarray, nv: int) -> np.ndarray:
    """Kernel dimension 1: scale the last eigenvector by a distance-ratio fit."""
    dv = np.linalg.norm(diffs[:, :, 0], axis=1)
    dw = np.sqrt(rho)
    denom = float(dv @ dv)
    out = np.zeros(nv)
    out[0] = float(dv @ dw) / denom if denom > 0 else 0.0
    return out


def _betas_pair(l_mat: np.ndarray, rho: np.ndarray, nv: int) -> np.ndarray:
    """Kernel dimension 2: solve for (B_11, B_12, B_22)."""
    cols = [_tri_index(0, 0, nv), _tri_index(0, 1, nv), _tri_index(1, 1, nv)]
    sol = _solve_ls(l_mat[:, cols], rho)
    out = np.zeros(nv)
    out[0] = np.sqrt(abs(sol[0]))
    sign = -1.0 if (sol[0] > 0) != (sol[1] > 0) else 1.0
    out[1] = sign * np.sqrt(abs(sol[2]))
    return out


def _betas_triple(l_mat: np.ndarray, rho: np.ndarray, nv: int) -> np.ndarray:
    """Kernel dimension 3: solve the quadratic-product system for 3 vectors."""
    cols = [
        _tri_index(0, 0, nv), _tri_index(0, 1, nv), _tri_index(0, 2, nv),
        _tri_index(1, 1, nv), _tri_index(1, 2, nv), _tri_index(2, 2, nv),
    ]
    sol = _solve_ls(l_mat[:, cols], rho)
    out = np.zeros(nv)
    out[0] = np.sqrt(abs(sol[0]))
    out[1] = (-1.0 if (sol[0] > 0) != (sol[1] > 0) else 1.0) * np.sqrt(abs(sol[3]))
    out[2] = (-1.0 if (sol[0] > 0) != (sol[2] > 0) else 1.0) * np.sqrt(abs(sol[5]))
    return out


def _betas_first_row(l_mat: np.ndarray, rho: np.ndarray, nv: int) -> np.ndarray:
    """Full-kernel case: solve for the first product row (B_11, ..., B_1nv)."""
    cols = [_tri_index(0, b, nv) for b in range(nv)]
    sol = _solve_ls(l_mat[:, cols], rho)
    out = np.zeros(nv)
    if sol[0] < 0:
        out[0] = np.sqrt(-sol[0])
        rest = -sol[1:]
    else:
        out[0] = np.sqrt(sol[0])
        rest = sol[1:]
    if out[0] > 0:
        out[1:] = rest / out[0]
    return out


def _polish_betas_batch(diffs: np.ndarray, betas: np.ndarray, rho: np.ndarray, iterations: int) -> np.ndarray:
    """Gauss-Newton on the control-point distance constraints, batched.

    Per candidate, residuals are ||sum_k beta_k dv_k||^2 - rho over control-
    point pairs; the Jacobian row is 2 beta^T A with A = dv^T dv shared.
    """
    a = np.einsum("pik,pil->pkl", diffs, diffs)
    betas = betas.copy()
    tiny_res = 1e-12 * max(float(rho.max()), 1e-30)
    tiny_step = 1e-9 * np.sqrt(max(float(rho.max()), 1e-30))
    for _ in range(iterations):
        jac_half = (a @ betas.T).transpose(2, 0, 1)  # (c, pairs, nv)
        res = (jac_half * betas[:, None, :]).sum(axis=2) - rho
        jtj = 4.0 * (jac_half.transpose(0, 2, 1) @ jac_half)
        jtr = 2.0 * (jac_half * res[:, :, None]).sum(axis=1)
        try:
            step = np.linalg.solve(jtj, -jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        betas = betas + step
        if float(np.abs(res).max()) < tiny_res or float(np.abs(step).max()) < tiny_step:
            break
    return betas


def _rigid_align_batch(pw: np.ndarray, pc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kabsch alignment mapping pw onto each candidate cloud pc (c, n, 3)."""
    cs = pw.mean(axis=0)
    src = pw - cs
    cd = pc.mean(axis=1)
    h = np.einsum("ni,cnj->cij", src, pc - cd[:, None, :])
    u, _, vt = np.linalg.svd(h)
    vmat = vt.transpose(0, 2, 1)
    umat_t = u.transpose(0, 2, 1)
    det = np.linalg.det(vmat @ umat_t)
    vmat = vmat.copy()
    vmat[:, :, 2] *= det[:, None]
    rs = vmat @ umat_t
    ts = cd - np.einsum("cij,j->ci", rs, cs)
    return rs, ts


def _epnp_candidates(
    pw: np.ndarray,
    uv: np.ndarray,
    k: CameraIntrinsics,
    gn_iterations: int = 5,
    first_row_only: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cheirality-valid pose candidates: (rs (c,3,3), ts (c,3), sample errors).

    Minimal samples admit multiple poses that reproject the sample equally
    well; callers with extra data (RANSAC) score every candidate instead of
    trusting the sample-error ranking. `first_row_only` keeps just the
    full-kernel initialization, the cheap mode for RANSAC hypotheses.
    """
    if len(pw) < 4:
        raise TooFewError(f"need >= 4 correspondences, got {len(pw)}")
    if not (np.all(np.isfinite(pw)) and np.all(np.isfinite(uv))):
        raise NonFiniteError("correspondences contain non-finite values")

    ctrl, planar = _control_points(pw)
    m = len(ctrl)
    alphas = _barycentric(pw, ctrl)
    mat = _constraint_matrix(alphas, uv, k)
    _, eigvec = np.linalg.eigh(mat.T @ mat)
    nv = 3 if planar else 4
    v = eigvec[:, :nv]
    rho = np.array([np.sum((ctrl[i] - ctrl[j]) ** 2) for i, j in _pair_indices(m)])
    diffs = _pair_diffs(v, m)
    l_mat = _distance_l_matrix(diffs)

    cases = [_betas_first_row(l_mat, rho, nv)]
    if not first_row_only:
        cases.append(_betas_single(diffs, rho, nv))
        cases.append(_betas_pair(l_mat, rho, nv))
        if not planar:
            cases.append(_betas_triple(l_mat, rho, nv))
    betas = np.stack(cases)
    if gn_iterations > 0:
        betas = _polish_betas_batch(diffs, betas, rho, gn_iterations)

    pc = np.einsum("nm,cmj->cnj", alphas, (v @ betas.T).T.reshape(len(betas), m, 3))
    sign = np.where(pc[:, :, 2].sum(axis=1) < 0, -1.0, 1.0)
    pc = pc * sign[:, None, None]
    rs, ts = _rigid_align_batch(pw, pc)
    depths = np.einsum("nj,cj->cn", pw, rs[:, 2, :]) + ts[:, 2:3]
    valid = depths.min(axis=1) > DEPTH_EPS
    if not valid.any():
        return rs[:0], ts[:0], np.empty(0)
    rs, ts = rs[valid], ts[valid]
    errors = _reproj_errors_batch(rs, ts, pw, uv, k).mean(axis=1)
    return rs, ts, errors


def _epnp_rt(
    pw: np.ndarray,
    uv: np.ndarray,
    k: CameraIntrinsics,
    gn_iterations: int = 5,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Best epnp candidate by sample reprojection error, raw-array form."""
    rs, ts, errors = _epnp_candidates(pw, uv, k, gn_iterations=gn_iterations)
    finite = np.isfinite(errors)
    if not finite.any():
        raise CheiralityFailureError("no pose candidate places all points in front of the camera")
    best = int(np.argmin(np.where(finite, errors, np.inf)))
    return rs[best], ts[best], float(errors[best])


def epnp(points3d, points2d, intrinsics: CameraIntrinsics, gn_iterations: int = 5) -> Pose:
    """Closed-form pose from >= 4 correspondences.

    Raises:
        TooFewError: fewer than 4 correspondences.
        DegenerateError: collinear 3D points.
        CheiralityFailureError: no candidate keeps every point in front.
    """
    pw = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    if len(pw) != len(uv):
        raise ConfigError("points3d and points2d lengths differ")
    r, t, _ = _epnp_rt(pw, uv, intrinsics, gn_iterations=gn_iterations)
    return Pose(r, t)


def _rodrigues(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    k = np.array(
        [
            [0.0, -omega[2], omega[1]],
            [omega[2], 0.0, -omega[0]],
            [-omega[1], omega[0], 0.0],
        ]
    )
    if theta < 1e-12:
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (np.sin(theta) / theta) * k + ((1.0 - np.cos(theta)) / theta**2) * (k @ k)


def _residuals_jacobian_rt(r, t, pw, uv, k: CameraIntrinsics):
    cam = pw @ r.T + t
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    if np.any(z <= DEPTH_EPS):
        return None, None, np.inf
    u = k.fx * x / z + k.cx
    v = k.fy * y / z + k.cy
    res = np.stack([u - uv[:, 0], v - uv[:, 1]], axis=1).ravel()

    n = len(pw)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = k.fx / z
    dproj[:, 0, 2] = -k.fx * x / z**2
    dproj[:, 1, 1] = k.fy / z
    dproj[:, 1, 2] = -k.fy * y / z**2

    rp = cam - t  # rotated points; the pose is perturbed as exp(w) R p + t
    dcam = np.zeros((n, 3, 6))
    dcam[:, 0, 1] = rp[:, 2]
    dcam[:, 0, 2] = -rp[:, 1]
    dcam[:, 1, 0] = -rp[:, 2]
    dcam[:, 1, 2] = rp[:, 0]
    dcam[:, 2, 0] = rp[:, 1]
    dcam[:, 2, 1] = -rp[:, 0]
    dcam[:, 0, 3] = dcam[:, 1, 4] = dcam[:, 2, 5] = 1.0
    jac = np.einsum("nij,njk->nik", dproj, dcam).reshape(2 * n, 6)
    return res, jac, float(res @ res)


def _refine_rt(r, t, pw, uv, k: CameraIntrinsics, max_iterations: int):
    res, jac, sse = _residuals_jacobian_rt(r, t, pw, uv, k)
    if res is None or not np.all(np.isfinite(res)):
        raise NonFiniteError("non-finite reprojection residuals at the initial pose")

    for _ in range(max_iterations):
        try:
            step = np.linalg.solve(jac.T @ jac, -(jac.T @ res))
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) < 1e-15:
            break
        improved = False
        converged = False
        scale = 1.0
        for _ in range(12):
            delta = step * scale
            r_new = _rodrigues(delta[:3]) @ r
            t_new = t + delta[3:]
            c_res, c_jac, c_sse = _residuals_jacobian_rt(r_new, t_new, pw, uv, k)
            if c_res is not None and c_sse <= sse:
                gain = sse - c_sse
                r, t, res, jac = r_new, t_new, c_res, c_jac
                improved = True
                converged = gain <= 1e-12 * max(sse, 1e-300)
                sse = c_sse
                break
            scale *= 0.5
        if not improved or converged or sse < 1e-24:
            break
    return r, t


def refine_pose(pose: Pose, points3d, points2d, intrinsics: CameraIntrinsics, max_iterations: int = 15) -> Pose:
    """Damped Gauss-Newton polish of a pose on reprojection residuals.

    Steps are halved until the residual sum of squares does not increase, so
    the returned pose is never worse than the input; an already-stationary
    pose comes back unchanged.

    Raises:
        NonFiniteError: residuals are non-finite at the initial pose.
    """
    pw = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    r, t = _refine_rt(pose.rotation, pose.translation, pw, uv, intrinsics, max_iterations)
    return Pose(r, t)


def _weighted_order(rng, weights: np.ndarray) -> np.ndarray:
    """Confidence-weighted permutation via exponential race keys."""
    keys = rng.exponential(size=len(weights)) / weights
    return np.argsort(keys, kind="stable")


def _distinct_sample(order: np.ndarray, keypoint_ids: np.ndarray, size: int):
    chosen = []
    seen = set()
    for idx in order:
        kp = keypoint_ids[idx]
        if kp in seen:
            continue
        seen.add(kp)
        chosen.append(idx)
        if len(chosen) == size:
            return np.array(chosen)
    return None


def ransac_pnp(
    points3d,
    points2d,
    intrinsics: CameraIntrinsics,
    params: RansacParams,
    confidences=None,
    keypoint_ids=None,
    refine: bool = True,
) -> PnpSolution:
    """Robust pose fit: RANSAC over epnp hypotheses, then refit on inliers.

    Confidences, when given, bias minimal-sample choice (probability
    proportional to confidence) but never weight the residuals. Iteration k
    draws its randomness from a stream keyed by (seed, k), so results are
    independent of evaluation order. Whenever the consensus grows, the model
    is refit on its inliers and rescored, which tightens the standard
    1-(1-w^s)^k early-exit bound quickly.

    Raises:
        TooFewError: fewer correspondences than the minimal sample size.
        DegenerateError: fewer distinct 3D keypoints than the sample size.
        NoConsensusError: best consensus smaller than the minimal sample.
    """
    pw = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    n = len(pw)
    if n < params.min_sample_size:
        raise TooFewError(f"{n} correspondences < minimal sample {params.min_sample_size}")
    if keypoint_ids is None:
        keypoint_ids = np.arange(n)
    else:
        keypoint_ids = np.asarray(keypoint_ids, dtype=int)
    if len(np.unique(keypoint_ids)) < params.min_sample_size:
        raise DegenerateError("fewer distinct 3D keypoints than the minimal sample size")
    if confidences is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(confidences, dtype=float).clip(min=0.0)
        if weights.sum() <= 0:
            weights = np.ones(n)
    weights = np.maximum(weights, 1e-12)

    sample_size = params.min_sample_size
    best_count = 0
    best_err = np.inf
    best_rt = None
    best_mask = np.zeros(n, dtype=bool)

    def consider(r, t):
        nonlocal best_count, best_err, best_rt, best_mask
        err = _reproj_errors_rt(r, t, pw, uv, intrinsics)
        mask = err < params.inlier_threshold_px
        count = int(mask.sum())
        mean_err = float(err[mask].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count, best_err, best_rt, best_mask = count, mean_err, (r, t), mask
            return True
        return False

    last_refit_count = 0
    for iteration in range(params.max_iterations):
        rng = np.random.default_rng([params.seed, iteration])
        sample = _distinct_sample(_weighted_order(rng, weights), keypoint_ids, sample_size)
        if sample is None:
            continue
        try:
            rs, ts, _ = _epnp_candidates(
                pw[sample], uv[sample], intrinsics, gn_iterations=8, first_row_only=True
            )
        except (DegenerateError, NonFiniteError):
            continue
        # Minimal samples are ambiguous; every candidate competes on consensus.
        errs = _reproj_errors_batch(rs, ts, pw, uv, intrinsics)
        counts = (errs < params.inlier_threshold_px).sum(axis=1)
        for ci in np.argsort(-counts):
            if counts[ci] < best_count:
                break
            consider(rs[ci], ts[ci])
        if best_count > max(last_refit_count, sample_size):
            # Local-optimization step: polish the running best on its inliers
            # so the consensus (and the exit bound) tightens quickly.
            last_refit_count = best_count
            try:
                r2, t2 = _refine_rt(
                    best_rt[0], best_rt[1], pw[best_mask], uv[best_mask], intrinsics, 8
                )
                consider(r2, t2)
            except NonFiniteError:
                pass
        w = best_count / n
        if w > 0 and 1.0 - (1.0 - w**sample_size) ** (iteration + 1) >= params.confidence_stop:
            break

    if best_rt is None or best_count < params.min_sample_size:
        raise NoConsensusError(
            f"best consensus {best_count} below minimal sample {params.min_sample_size}"
        )

    r, t = best_rt
    mask, mean_err = best_mask, best_err
    try:
        r2, t2, _ = _epnp_rt(pw[best_mask], uv[best_mask], intrinsics)
        if refine:
            r2, t2 = _refine_rt(r2, t2, pw[best_mask], uv[best_mask], intrinsics, 15)
        err = _reproj_errors_rt(r2, t2, pw, uv, intrinsics)
        refit_mask = err < params.inlier_threshold_px
        refit_count = int(refit_mask.sum())
        refit_err = float(err[refit_mask].mean()) if refit_count else np.inf
        if refit_count > best_count or (refit_count == best_count and refit_err <= best_err):
            r, t, mask, mean_err = r2, t2, refit_mask, refit_err
    except (DegenerateError, CheiralityFailureError, TooFewError, NonFiniteError):
        pass
    return PnpSolution(pose=Pose(r, t), inlier_mask=mask, mean_reproj_px=mean_err)


def solve_correspondence_set(cs, intrinsics: CameraIntrinsics, params: RansacParams, refine: bool = True) -> PnpSolution:
    """Convenience wrapper running ransac_pnp on a fusion CorrespondenceSet."""
    return ransac_pnp(
        cs.points3d,
        cs.points2d,
        intrinsics,
        params,
        confidences=cs.confidences,
        keypoint_ids=cs.keypoint_indices,
        refine=refine,
    )
