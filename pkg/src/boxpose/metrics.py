"""Evaluation suite: oriented 3D IoU AP, projection error, viewpoint AP,
symmetric evaluation, and relative-dimension error.

Record files are JSON lines, one instance per line. Ground-truth lines
carry pose/dims/height/symmetric (+ camera); prediction lines carry
score, metric pose and box extents, and optionally the predicted
relative dims.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import UndefinedViewpointError
from .geometry import (
    CameraIntrinsics,
    Pose,
    box_vertices,
    project,
    quat_multiply,
    quat_rotation_y,
    quat_to_matrix,
)

IOU_AP_THRESHOLD = 0.5
AZIMUTH_AP_DEG = 15.0
ELEVATION_AP_DEG = 10.0
SYMMETRIC_ROTATIONS = 100

# Metric keys where larger values are better (pass when >= threshold);
# all others pass when <= threshold.
_HIGHER_BETTER = {"iou3d"}


@dataclass(frozen=True)
class OrientedBox:
    """A metric oriented box: pose plus absolute extents along x, y, z."""

    pose: Pose
    extents: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.extents, dtype=np.float64)
        if e.shape != (3,) or np.any(e <= 0) or not np.all(np.isfinite(e)):
            raise ValueError("extents must be three positive finite values")
        object.__setattr__(self, "extents", e)

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def corners(self):
        return box_vertices(self.extents) @ self.pose.rotation.T + self.pose.translation


def rotate_box_about_y(box: OrientedBox, angle) -> OrientedBox:
    """Rotate the box about its own (local) y axis."""
    q = quat_multiply(box.pose.quat, quat_rotation_y(angle))
    return OrientedBox(Pose(q, box.pose.translation), box.extents)


def iou3d(a: OrientedBox, b: OrientedBox) -> float:
    """Volume IoU of two oriented boxes via polytope clipping."""
    inter = kernels.box_intersection_volume(
        quat_to_matrix(a.pose.quat),
        a.pose.translation,
        a.extents,
        quat_to_matrix(b.pose.quat),
        b.pose.translation,
        b.extents,
    )
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def pixel_projection_error(pred_kps, gt_kps, cam: CameraIntrinsics) -> float:
    """Mean vertex distance between projections, over the image diagonal.

    Vertices correspond by index, not by nearest point.
    """
    pred_kps = np.asarray(pred_kps)
    gt_kps = np.asarray(gt_kps)
    if pred_kps.shape != gt_kps.shape:
        raise ValueError("keypoint sets must have matching shapes")
    return float(np.linalg.norm(pred_kps - gt_kps, axis=1).mean() / cam.diagonal)


def viewpoint_of(pose: Pose):
    """(azimuth, elevation) in degrees of the camera seen from the object.

    Uses the object-frame direction to the camera center (-R^T t).
    """
    t = pose.translation
    norm = np.linalg.norm(t)
    if norm < 1e-12:
        raise UndefinedViewpointError("camera center coincides with the object")
    d = -(pose.rotation.T @ t) / norm
    azimuth = math.degrees(math.atan2(d[0], d[2]))
    elevation = math.degrees(math.asin(min(1.0, max(-1.0, d[1]))))
    return azimuth, elevation


def viewpoint_errors(pred: Pose, gt: Pose):
    """(azimuth error, elevation error) in degrees; azimuth wraps at 180."""
    az_p, el_p = viewpoint_of(pred)
    az_g, el_g = viewpoint_of(gt)
    daz = abs(az_p - az_g) % 360.0
    if daz > 180.0:
        daz = 360.0 - daz
    return daz, abs(el_p - el_g)


def symmetric_best(metric_fn, pred_box: OrientedBox, n: int = SYMMETRIC_ROTATIONS, maximize: bool = True):
    """Best metric value over n evenly spaced y rotations of the prediction."""
    best = -np.inf if maximize else np.inf
    for k in range(n):
        val = metric_fn(rotate_box_about_y(pred_box, 2.0 * np.pi * k / n))
        if (val > best) if maximize else (val < best):
            best = val
    return best


def mean_relative_dim_error(preds, gts) -> float:
    """Mean over instances and the two free ratios of |pred - gt| / gt."""
    errs = []
    for p, g in zip(preds, gts):
        for pv, gv in ((p.rx, g.rx), (p.rz, g.rz)):
            errs.append(abs(pv - gv) / gv)
    return float(np.mean(errs)) if errs else 0.0


# ---------------------------------------------------------------------------
# Records, matching, and AP
# ---------------------------------------------------------------------------


@dataclass
class EvalRecord:
    """Per-instance evaluation outcome; metric fields are None when the
    prediction is unmatched."""

    scene_index: int
    score: float
    matched: bool
    iou3d: float = None
    pixel_error: float = None
    azimuth_err: float = None
    elevation_err: float = None
    dim_rel_err: float = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def average_precision(records, key, threshold, num_gt):
    """Detection AP: score-ranked precision summed at true-positive ranks.

    A matched record passes when its keyed value meets the threshold
    (>= for IoU-style keys, <= for error keys); unmatched ground truths
    count as misses through ``num_gt``. Returns None when num_gt == 0
    (undefined).
    """
    if num_gt == 0:
        return None
    ranked = sorted(records, key=lambda r: (-r.score, r.scene_index))
    higher_better = key in _HIGHER_BETTER
    ap = 0.0
    tp = 0
    for rank, rec in enumerate(ranked, start=1):
        value = getattr(rec, key)
        passed = (
            rec.matched
            and value is not None
            and ((value >= threshold) if higher_better else (value <= threshold))
        )
        if passed:
            tp += 1
            ap += tp / rank
    return ap / num_gt


def _norm_y_extent(pred_box: OrientedBox, gt_box: OrientedBox) -> OrientedBox:
    # RGB-only poses are scale-ambiguous: boxes are compared after scaling
    # the prediction so its y extent matches the ground truth (the
    # measured-height convention). No-op for already-metric predictions.
    s = gt_box.extents[1] / pred_box.extents[1]
    if abs(s - 1.0) < 1e-12:
        return pred_box
    return OrientedBox(Pose(pred_box.pose.quat, pred_box.pose.translation * s), pred_box.extents * s)


def evaluate_instance(pred_box, gt_box, cam, symmetric, pred_rel_dims=None, gt_rel_dims=None, n_rot=SYMMETRIC_ROTATIONS):
    """Metric tuple for one matched prediction.

    Symmetric instances take the best value over y rotations of the
    prediction (max IoU, min pixel/azimuth error); elevation is invariant
    to those rotations already.
    """
    pred_box = _norm_y_extent(pred_box, gt_box)
    gt_kps = project(box_vertices(gt_box.extents), gt_box.pose, cam)

    def pixel_err(box):
        pts = box_vertices(box.extents) @ box.pose.rotation.T + box.pose.translation
        uv = np.empty((8, 2))
        uv[:, 0] = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
        uv[:, 1] = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
        return float(np.linalg.norm(uv - gt_kps, axis=1).mean() / cam.diagonal)

    if symmetric:
        iou = symmetric_best(lambda b: iou3d(b, gt_box), pred_box, n_rot, maximize=True)
        pix = symmetric_best(pixel_err, pred_box, n_rot, maximize=False)
        az = symmetric_best(
            lambda b: viewpoint_errors(b.pose, gt_box.pose)[0], pred_box, n_rot, maximize=False
        )
        _, el = viewpoint_errors(pred_box.pose, gt_box.pose)
    else:
        iou = iou3d(pred_box, gt_box)
        pix = pixel_err(pred_box)
        az, el = viewpoint_errors(pred_box.pose, gt_box.pose)

    dim_err = None
    if pred_rel_dims is not None and gt_rel_dims is not None:
        dim_err = 0.5 * (
            abs(pred_rel_dims.rx - gt_rel_dims.rx) / gt_rel_dims.rx
            + abs(pred_rel_dims.rz - gt_rel_dims.rz) / gt_rel_dims.rz
        )
    return iou, pix, az, el, dim_err


def match_predictions(pred_boxes, gt_boxes):
    """Greedy one-to-one matching by descending prediction score.

    ``pred_boxes`` is [(score, OrientedBox)], ``gt_boxes`` [OrientedBox].
    Each prediction claims the unclaimed ground truth with the highest
    plain IoU (center distance breaks all-zero ties). Returns a list of
    gt indices aligned with predictions, -1 for unmatched.
    """
    order = sorted(range(len(pred_boxes)), key=lambda i: -pred_boxes[i][0])
    claimed = set()
    assign = [-1] * len(pred_boxes)
    for i in order:
        _, box = pred_boxes[i]
        best_j, best_iou, best_dist = -1, -1.0, np.inf
        for j, gt in enumerate(gt_boxes):
            if j in claimed:
                continue
            iou = iou3d(box, gt)
            dist = float(np.linalg.norm(box.pose.translation - gt.pose.translation))
            if iou > best_iou or (iou == best_iou and dist < best_dist):
                best_j, best_iou, best_dist = j, iou, dist
        if best_j >= 0:
            claimed.add(best_j)
            assign[i] = best_j
    return assign


def aggregate(records, num_gt):
    """Aggregate metric table from per-instance records."""
    matched = [r for r in records if r.matched]
    pix = [r.pixel_error for r in matched if r.pixel_error is not None]
    dim = [r.dim_rel_err for r in matched if r.dim_rel_err is not None]
    return {
        "num_gt": num_gt,
        "num_predictions": len(records),
        "num_matched": len(matched),
        "ap_iou_0.5": average_precision(records, "iou3d", IOU_AP_THRESHOLD, num_gt),
        "mean_pixel_error": float(np.mean(pix)) if pix else None,
        "ap_azimuth_15deg": average_precision(records, "azimuth_err", AZIMUTH_AP_DEG, num_gt),
        "ap_elevation_10deg": average_precision(records, "elevation_err", ELEVATION_AP_DEG, num_gt),
        "mean_rel_dim_error": float(np.mean(dim)) if dim else None,
    }


# ---------------------------------------------------------------------------
# Record files
# ---------------------------------------------------------------------------


def write_jsonl(path, rows):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def gt_record(scene_index, obj, cam):
    return {
        "scene": scene_index,
        "pose": obj.pose.to_dict(),
        "dims": obj.dims.to_list(),
        "height_m": obj.height,
        "symmetric": obj.symmetric,
        "camera": cam.to_dict(),
    }


def pred_record(scene_index, score, pose, extents, rel_dims=None):
    row = {
        "scene": scene_index,
        "score": score,
        "pose": pose.to_dict(),
        "extents": np.asarray(extents, dtype=float).tolist(),
    }
    if rel_dims is not None:
        row["rel_dims"] = rel_dims.to_list()
    return row


def evaluate_rows(pred_rows, gt_rows, sym_rotations=SYMMETRIC_ROTATIONS):
    """Evaluate prediction records against ground-truth records.

    Rows follow :func:`pred_record` / :func:`gt_record`; instances are
    grouped by scene index and matched greedily by score. Returns
    (records, num_gt, aggregates).
    """
    from .geometry import RelativeDims  # local to avoid cycle at import

    by_scene_gt = {}
    for row in gt_rows:
        by_scene_gt.setdefault(row["scene"], []).append(row)
    by_scene_pred = {}
    for row in pred_rows:
        by_scene_pred.setdefault(row["scene"], []).append(row)

    records = []
    num_gt = sum(len(v) for v in by_scene_gt.values())
    for scene in sorted(set(by_scene_gt) | set(by_scene_pred)):
        gts = by_scene_gt.get(scene, [])
        preds = by_scene_pred.get(scene, [])
        if not gts:
            records.extend(
                EvalRecord(scene_index=scene, score=p["score"], matched=False) for p in preds
            )
            continue
        cam = CameraIntrinsics.from_dict(gts[0]["camera"])
        gt_boxes = [
            OrientedBox(
                Pose.from_dict(g["pose"]),
                RelativeDims(*g["dims"]).as_extents(g["height_m"]),
            )
            for g in gts
        ]
        pred_boxes = [
            (p["score"], OrientedBox(Pose.from_dict(p["pose"]), np.asarray(p["extents"])))
            for p in preds
        ]
        assign = match_predictions(pred_boxes, gt_boxes)
        for p, j in zip(preds, assign):
            if j < 0:
                records.append(EvalRecord(scene_index=scene, score=p["score"], matched=False))
                continue
            g = gts[j]
            pred_dims = RelativeDims(*p["rel_dims"]) if "rel_dims" in p else None
            iou, pix, az, el, dim_err = evaluate_instance(
                OrientedBox(Pose.from_dict(p["pose"]), np.asarray(p["extents"])),
                gt_boxes[j],
                cam,
                symmetric=bool(g["symmetric"]),
                pred_rel_dims=pred_dims,
                gt_rel_dims=RelativeDims(*g["dims"]),
                n_rot=sym_rotations,
            )
            records.append(
                EvalRecord(
                    scene_index=scene,
                    score=p["score"],
                    matched=True,
                    iou3d=iou,
                    pixel_error=pix,
                    azimuth_err=az,
                    elevation_err=el,
                    dim_rel_err=dim_err,
                )
            )
    return records, num_gt, aggregate(records, num_gt)


def format_report_table(aggregates_by_row, title="evaluation"):
    """Aligned text table: one row per configuration, metric columns."""
    cols = [
        ("ap_iou_0.5", "AP@0.5 IoU"),
        ("mean_pixel_error", "mean px err"),
        ("ap_azimuth_15deg", "AP az@15"),
        ("ap_elevation_10deg", "AP el@10"),
        ("mean_rel_dim_error", "dim err"),
    ]
    first = max(len(name) for name in aggregates_by_row) if aggregates_by_row else 4
    first = max(first, len(title))
    lines = []
    header = title.ljust(first) + "  " + "  ".join(h.rjust(11) for _, h in cols)
    lines.append(header)
    lines.append("-" * len(header))
    for name, agg in aggregates_by_row.items():
        cells = []
        for key, _ in cols:
            val = agg.get(key)
            cells.append("     -     " if val is None else f"{val:11.4f}")
        lines.append(name.ljust(first) + "  " + "  ".join(cells))
    return "\n".join(lines)
