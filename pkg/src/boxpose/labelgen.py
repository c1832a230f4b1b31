"""Encode ground-truth scenes into the seven dense output maps.

This is both the training-target generator and the "oracle network": the
synthetic harness perturbs these maps instead of running a CNN.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import BehindCameraError
from .geometry import (
    CameraIntrinsics,
    Pose,
    RelativeDims,
    bbox2d_from_keypoints,
    bbox_center_size,
    cuboid_vertices,
    pose_compose,
    project,
    quat_rotation_y,
)

OUTPUT_STRIDE = 4
DEFAULT_IMAGE_SIZE = 512
SYMMETRY_STEPS = 12

# sigma = max(diag / SIGMA_DIVISOR, SIGMA_FLOOR), diag in output-stride units
SIGMA_DIVISOR = 18.0
SIGMA_FLOOR = 1.0


@dataclass
class OutputMaps:
    """The seven dense outputs at quarter resolution.

    Heatmaps live in [0, 1]; regression channels are in output-stride
    units except the sub-pixel offsets, which are cell fractions. The
    relative-dims head stores only (rx, rz) since the y channel is
    identically 1.
    """

    center_heatmap: np.ndarray  # (H/4, W/4)
    center_offset: np.ndarray  # (H/4, W/4, 2)
    bbox_size: np.ndarray  # (H/4, W/4, 2)
    kp_displacements: np.ndarray  # (H/4, W/4, 16)
    kp_heatmaps: np.ndarray  # (H/4, W/4, 8)
    kp_offsets: np.ndarray  # (H/4, W/4, 16)
    rel_dims: np.ndarray  # (H/4, W/4, 2)

    @classmethod
    def zeros(cls, height_cells, width_cells):
        s = (height_cells, width_cells)
        return cls(
            center_heatmap=np.zeros(s),
            center_offset=np.zeros(s + (2,)),
            bbox_size=np.zeros(s + (2,)),
            kp_displacements=np.zeros(s + (16,)),
            kp_heatmaps=np.zeros(s + (8,)),
            kp_offsets=np.zeros(s + (16,)),
            rel_dims=np.zeros(s + (2,)),
        )

    @property
    def shape(self):
        return self.center_heatmap.shape

    def fields(self):
        return {
            "center_heatmap": self.center_heatmap,
            "center_offset": self.center_offset,
            "bbox_size": self.bbox_size,
            "kp_displacements": self.kp_displacements,
            "kp_heatmaps": self.kp_heatmaps,
            "kp_offsets": self.kp_offsets,
            "rel_dims": self.rel_dims,
        }

    def freeze(self):
        for arr in self.fields().values():
            arr.flags.writeable = False
        return self

    def copy(self):
        return OutputMaps(**{k: v.copy() for k, v in self.fields().items()})


@dataclass(frozen=True)
class SceneObject:
    pose: Pose
    dims: RelativeDims
    height: float  # metric y extent (meters)
    symmetric: bool = False

    def to_dict(self):
        return {
            "pose": self.pose.to_dict(),
            "dims": self.dims.to_list(),
            "height_m": self.height,
            "symmetric": self.symmetric,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            pose=Pose.from_dict(d["pose"]),
            dims=RelativeDims(*d["dims"]),
            height=float(d["height_m"]),
            symmetric=bool(d["symmetric"]),
        )


@dataclass(frozen=True)
class Scene:
    camera: CameraIntrinsics
    objects: tuple

    def to_dict(self):
        return {
            "camera": self.camera.to_dict(),
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            camera=CameraIntrinsics.from_dict(d["camera"]),
            objects=tuple(SceneObject.from_dict(o) for o in d["objects"]),
        )


@dataclass
class ObjectTargets:
    """Per-object encoding state; the quantity the harness perturbs.

    ``kps_px`` feeds the displacement branch labels, ``heat_kps_px`` the
    keypoint heatmaps/offsets; they coincide for clean encodings.
    """

    center_px: np.ndarray  # (2,) 2D bbox center, input resolution
    bbox: tuple  # (u0, v0, u1, v1)
    kps_px: np.ndarray  # (8, 2)
    heat_kps_px: np.ndarray  # (8, 2)
    heat_valid: np.ndarray  # (8,) bool
    dims: RelativeDims
    height: float
    symmetric: bool
    pose: Pose

    @property
    def bbox_area(self):
        return (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])


@dataclass
class EncodedLabels:
    """Label maps plus the ownership masks consumed by the losses."""

    maps: OutputMaps
    center_mask: np.ndarray  # (H/4, W/4) bool
    kp_mask: np.ndarray  # (H/4, W/4, 8) bool
    objects: list
    skipped: list = field(default_factory=list)

    @property
    def num_objects(self):
        return len(self.objects)


def gaussian_sigma(bbox_w, bbox_h):
    """Peak sigma from the 2D box size, both in output-stride units."""
    if not (bbox_w > 0 and bbox_h > 0):
        raise ValueError(f"bbox sides must be positive, got ({bbox_w}, {bbox_h})")
    diag = float(np.hypot(bbox_w, bbox_h))
    return max(diag / SIGMA_DIVISOR, SIGMA_FLOOR)


def render_heatmap(peaks, shape):
    """Render (u, v, sigma) peaks at output stride into a fresh map.

    Overlapping peaks combine by per-cell max; the floored peak cell
    carries exactly 1.0. Off-map peaks contribute their in-map tail.
    """
    hm = np.zeros(shape)
    if len(peaks) == 0:
        return hm
    peaks = np.asarray(peaks, dtype=np.float64)
    if np.any(peaks[:, 2] <= 0):
        raise ValueError("sigma must be positive")
    kernels.gaussian_splat(hm, np.ascontiguousarray(peaks[:, :2]), np.ascontiguousarray(peaks[:, 2]))
    return hm


def _targets_for_object(obj: SceneObject, cam: CameraIntrinsics):
    model = cuboid_vertices(obj.dims) * obj.height
    kps = project(model, obj.pose, cam)
    bbox = bbox2d_from_keypoints(kps)
    center, _ = bbox_center_size(bbox)
    return ObjectTargets(
        center_px=center,
        bbox=bbox,
        kps_px=kps,
        heat_kps_px=kps.copy(),
        heat_valid=np.ones(8, dtype=bool),
        dims=obj.dims,
        height=obj.height,
        symmetric=obj.symmetric,
        pose=obj.pose,
    )


def build_maps(cam: CameraIntrinsics, targets) -> EncodedLabels:
    """Rasterize per-object targets into label maps.

    When two objects share a center cell the one with the larger 2D box
    owns the regression values (processing order: ascending area, so the
    larger writes last); heatmaps always combine by max.
    """
    r = OUTPUT_STRIDE
    hs, ws = cam.height // r, cam.width // r
    maps = OutputMaps.zeros(hs, ws)
    center_mask = np.zeros((hs, ws), dtype=bool)
    kp_mask = np.zeros((hs, ws, 8), dtype=bool)

    kept = []
    for tgt in targets:
        cell = np.floor(tgt.center_px / r).astype(int)
        if not (0 <= cell[0] < ws and 0 <= cell[1] < hs):
            continue
        kept.append(tgt)

    center_peaks = []
    kp_peaks = [[] for _ in range(8)]
    for tgt in sorted(kept, key=lambda t: t.bbox_area):
        _, size = bbox_center_size(tgt.bbox)
        sigma = gaussian_sigma(size[0] / r, size[1] / r)
        c_cells = tgt.center_px / r
        cu, cv = int(np.floor(c_cells[0])), int(np.floor(c_cells[1]))
        center_peaks.append((c_cells[0], c_cells[1], sigma))
        center_mask[cv, cu] = True
        maps.center_offset[cv, cu] = c_cells - np.floor(c_cells)
        maps.bbox_size[cv, cu] = size / r
        maps.rel_dims[cv, cu] = (tgt.dims.rx, tgt.dims.rz)
        disp = tgt.kps_px / r - c_cells
        maps.kp_displacements[cv, cu] = disp.reshape(-1)
        for k in range(8):
            # Offsets are written at the displacement target's cell and at
            # the heatmap peak's cell so either decode route refines to its
            # own sub-pixel position (the heat value wins shared cells).
            for pt in (tgt.kps_px[k], tgt.heat_kps_px[k] if tgt.heat_valid[k] else None):
                if pt is None:
                    continue
                cells = pt / r
                ku, kv = int(np.floor(cells[0])), int(np.floor(cells[1]))
                if 0 <= ku < ws and 0 <= kv < hs:
                    maps.kp_offsets[kv, ku, 2 * k : 2 * k + 2] = cells - np.floor(cells)
                    kp_mask[kv, ku, k] = True
            if tgt.heat_valid[k]:
                hc = tgt.heat_kps_px[k] / r
                kp_peaks[k].append((hc[0], hc[1], sigma))

    if center_peaks:
        kernels.gaussian_splat(
            maps.center_heatmap,
            np.ascontiguousarray(np.asarray(center_peaks)[:, :2]),
            np.ascontiguousarray(np.asarray(center_peaks)[:, 2]),
        )
    for k in range(8):
        if kp_peaks[k]:
            arr = np.asarray(kp_peaks[k])
            hm = np.ascontiguousarray(maps.kp_heatmaps[:, :, k])
            kernels.gaussian_splat(hm, np.ascontiguousarray(arr[:, :2]), np.ascontiguousarray(arr[:, 2]))
            maps.kp_heatmaps[:, :, k] = hm

    maps.freeze()
    return EncodedLabels(maps=maps, center_mask=center_mask, kp_mask=kp_mask, objects=kept)


def encode_scene(scene: Scene) -> EncodedLabels:
    """Scene -> label maps + per-object ground-truth records.

    Objects whose center quantizes outside the map (or that project
    behind the camera) are skipped with a warning record.
    """
    r = OUTPUT_STRIDE
    hs, ws = scene.camera.height // r, scene.camera.width // r
    targets, skipped = [], []
    for idx, obj in enumerate(scene.objects):
        try:
            tgt = _targets_for_object(obj, scene.camera)
        except BehindCameraError as exc:
            skipped.append(f"object {idx}: {exc}")
            continue
        cell = np.floor(tgt.center_px / r).astype(int)
        if not (0 <= cell[0] < ws and 0 <= cell[1] < hs):
            skipped.append(f"object {idx}: center cell {tuple(cell)} outside {ws}x{hs} map")
            continue
        targets.append(tgt)
    labels = build_maps(scene.camera, targets)
    labels.skipped = skipped
    return labels


def symmetric_label_variants(scene: Scene, steps: int = SYMMETRY_STEPS):
    """The rotated label variants minimized over by the symmetric loss.

    Symmetric objects are spun about their local y axis in 2*pi/steps
    increments and only the keypoint-dependent labels are regenerated;
    the object silhouette is unchanged by the symmetry, so all variants
    share the base center cell, 2D box, and relative dims.
    """
    variants = []
    base = encode_scene(scene)
    for i in range(steps):
        angle = 2.0 * np.pi * i / steps
        rot = Pose(quat_rotation_y(angle), np.zeros(3))
        targets = []
        for tgt in base.objects:
            if not tgt.symmetric:
                targets.append(tgt)
                continue
            pose_i = pose_compose(tgt.pose, rot)
            model = cuboid_vertices(tgt.dims) * tgt.height
            kps = project(model, pose_i, scene.camera)
            targets.append(
                replace(
                    tgt,
                    kps_px=kps,
                    heat_kps_px=kps.copy(),
                    pose=pose_i,
                )
            )
        labels = build_maps(scene.camera, targets)
        labels.skipped = list(base.skipped)
        variants.append(labels)
    return variants


def save_scenes(path, scenes):
    with open(path, "w") as f:
        json.dump({"scenes": [s.to_dict() for s in scenes]}, f, indent=1, sort_keys=True)


def load_scenes(path):
    with open(path) as f:
        data = json.load(f)
    return [Scene.from_dict(d) for d in data["scenes"]]
