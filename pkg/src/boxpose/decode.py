"""Output decoding: peak extraction, keypoint strategies, correspondences.

Map cells are addressed as (cu, cv) = (column, row) to match the (u, v)
pixel convention; arrays are indexed [row, column].
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import InsufficientCorrespondencesError
from .geometry import CameraIntrinsics, Keypoints2D, RelativeDims
from .labelgen import OUTPUT_STRIDE, OutputMaps

STRATEGIES = ("displacement", "heatmap", "distance", "sampling", "combined")

# Guards against cell-boundary float drift when chasing displaced cells.
_CELL_NUDGE = 1e-9

_MIN_DIM = 1e-6


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "combined"
    max_detections: int = 10
    score_threshold: float = 0.3
    margin_frac: float = 0.1
    sample_count: int = 20
    seed: int = 0
    # distance gate / sampling spread as fractions of the bbox diagonal
    distance_tau_frac: float = 0.15
    sampling_sigma_frac: float = 0.05

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")
        if not (0.0 < self.score_threshold < 1.0):
            raise ValueError("score_threshold must be in (0, 1)")
        if self.margin_frac < 0:
            raise ValueError("margin_frac must be >= 0")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "max_detections": self.max_detections,
            "score_threshold": self.score_threshold,
            "margin_frac": self.margin_frac,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "distance_tau_frac": self.distance_tau_frac,
            "sampling_sigma_frac": self.sampling_sigma_frac,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


@dataclass
class Detection:
    """One decoded object; ``pose`` is filled by the PnP stage."""

    center: np.ndarray  # (2,) input-resolution pixels
    score: float
    bbox2d: tuple  # (u0, v0, u1, v1)
    kps_disp: Keypoints2D
    kps_heat: Keypoints2D
    rel_dims: RelativeDims
    cell: tuple  # (cu, cv) center cell
    pose: object = None

    @property
    def bbox_diag(self):
        return float(np.hypot(self.bbox2d[2] - self.bbox2d[0], self.bbox2d[3] - self.bbox2d[1]))


def extract_peaks(heatmap, max_peaks, threshold):
    """Cells equal to their 3x3 neighborhood max and >= threshold.

    Returns [((cu, cv), score)] sorted by score descending, row-major on
    ties, truncated to ``max_peaks``.
    """
    heatmap = np.asarray(heatmap)
    mask = kernels.local_max_mask(heatmap) & (heatmap >= threshold)
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        return []
    scores = heatmap[rows, cols]
    order = np.lexsort((cols, rows, -scores))[:max_peaks]
    return [((int(cols[i]), int(rows[i])), float(scores[i])) for i in order]


def _kp_offset_at(maps, cu, cv, k):
    return maps.kp_offsets[cv, cu, 2 * k : 2 * k + 2]


def decode_objects(maps: OutputMaps, cfg: DecodeConfig, cam: CameraIntrinsics):
    """Decode detections from output maps.

    Displacement keypoints chase the sub-pixel offset stored at the
    displaced point's cell; heatmap keypoints are per-vertex peaks that
    must land within the object's 2D box expanded by margin_frac of its
    diagonal.
    """
    r = OUTPUT_STRIDE
    hs, ws = maps.shape
    center_peaks = extract_peaks(maps.center_heatmap, cfg.max_detections, cfg.score_threshold)

    vertex_peaks = []
    for k in range(8):
        peaks = extract_peaks(maps.kp_heatmaps[:, :, k], cfg.max_detections, cfg.score_threshold)
        refined = []
        for (cu, cv), score in peaks:
            pos = (np.array([cu, cv], dtype=float) + _kp_offset_at(maps, cu, cv, k)) * r
            refined.append((pos, score))
        vertex_peaks.append(refined)

    detections = []
    for (cu, cv), score in center_peaks:
        center_cells = np.array([cu, cv], dtype=float) + maps.center_offset[cv, cu]
        center_px = center_cells * r
        size_px = maps.bbox_size[cv, cu] * r
        bbox = (
            center_px[0] - 0.5 * size_px[0],
            center_px[1] - 0.5 * size_px[1],
            center_px[0] + 0.5 * size_px[0],
            center_px[1] + 0.5 * size_px[1],
        )
        diag = float(np.hypot(size_px[0], size_px[1]))

        disp = maps.kp_displacements[cv, cu].reshape(8, 2)
        disp_pts = np.empty((8, 2))
        for k in range(8):
            q = center_cells + disp[k]
            du, dv = int(np.floor(q[0] + _CELL_NUDGE)), int(np.floor(q[1] + _CELL_NUDGE))
            if 0 <= du < ws and 0 <= dv < hs:
                disp_pts[k] = (np.array([du, dv], dtype=float) + _kp_offset_at(maps, du, dv, k)) * r
            else:
                disp_pts[k] = q * r
        kps_disp = Keypoints2D(disp_pts)

        margin = cfg.margin_frac * diag
        heat_pts = np.zeros((8, 2))
        heat_valid = np.zeros(8, dtype=bool)
        heat_conf = np.zeros(8)
        for k in range(8):
            for pos, pscore in vertex_peaks[k]:
                if (
                    bbox[0] - margin <= pos[0] <= bbox[2] + margin
                    and bbox[1] - margin <= pos[1] <= bbox[3] + margin
                ):
                    heat_pts[k] = pos
                    heat_valid[k] = True
                    heat_conf[k] = pscore
                    break
        kps_heat = Keypoints2D(heat_pts, heat_valid, heat_conf)

        rd = maps.rel_dims[cv, cu]
        rel_dims = RelativeDims(max(float(rd[0]), _MIN_DIM), max(float(rd[1]), _MIN_DIM))

        detections.append(
            Detection(
                center=center_px,
                score=score,
                bbox2d=bbox,
                kps_disp=kps_disp,
                kps_heat=kps_heat,
                rel_dims=rel_dims,
                cell=(cu, cv),
            )
        )
    return detections


def build_correspondences(det: Detection, cfg: DecodeConfig):
    """(vertex index, 2D point, weight) triples for the configured strategy.

    Returns (indices (n,), points (n, 2), weights (n,)) arrays.
    """
    disp = det.kps_disp.points
    heat = det.kps_heat
    diag = det.bbox_diag

    if cfg.strategy == "displacement":
        idx = np.arange(8)
        return idx, disp.copy(), np.ones(8)

    if cfg.strategy == "heatmap":
        idx = np.nonzero(heat.valid)[0]
        if len(idx) < 4:
            raise InsufficientCorrespondencesError(
                f"heatmap strategy has {len(idx)} valid keypoints, needs >= 4"
            )
        return idx, heat.points[idx].copy(), np.ones(len(idx))

    if cfg.strategy == "distance":
        tau = cfg.distance_tau_frac * diag
        pts = np.empty((8, 2))
        for k in range(8):
            if heat.valid[k] and np.linalg.norm(heat.points[k] - disp[k]) <= tau:
                pts[k] = heat.points[k]
            else:
                pts[k] = disp[k]
        return np.arange(8), pts, np.ones(8)

    if cfg.strategy == "sampling":
        sigma = cfg.sampling_sigma_frac * diag
        n = cfg.sample_count
        rng = np.random.default_rng([cfg.seed, det.cell[0], det.cell[1]])
        idx, pts, wts = [], [], []
        for k in range(8):
            means = [disp[k]]
            if heat.valid[k]:
                means.append(heat.points[k])
            choices = rng.integers(0, len(means), size=n)
            noise = rng.normal(0.0, sigma, size=(n, 2))
            for i in range(n):
                idx.append(k)
                pts.append(means[choices[i]] + noise[i])
                wts.append(1.0 / n)
        return np.asarray(idx), np.asarray(pts), np.asarray(wts)

    # combined: union of displacement and valid heatmap points
    idx = list(range(8)) + list(np.nonzero(heat.valid)[0])
    pts = np.vstack([disp, heat.points[heat.valid]])
    return np.asarray(idx), pts, np.ones(len(idx))
