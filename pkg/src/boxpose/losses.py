"""Training objective: penalty-reduced focal losses and masked L1 terms.

Analytic gradients are provided for every term (there is no autodiff
here); finite differences are used as the test oracle only.
"""

from dataclasses import dataclass

import numpy as np

from .labelgen import EncodedLabels, OutputMaps

PRED_CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("focal parameters must be positive")


@dataclass(frozen=True)
class LossWeights:
    center_heatmap: float = 1.0
    center_offset: float = 1.0
    bbox_size: float = 0.1
    kp_heatmaps: float = 1.0
    kp_offsets: float = 1.0
    kp_displacements: float = 1.0
    rel_dims: float = 1.0

    def scaled(self, c):
        return LossWeights(*(c * w for w in self.as_dict().values()))

    def as_dict(self):
        return {
            "center_heatmap": self.center_heatmap,
            "center_offset": self.center_offset,
            "bbox_size": self.bbox_size,
            "kp_heatmaps": self.kp_heatmaps,
            "kp_offsets": self.kp_offsets,
            "kp_displacements": self.kp_displacements,
            "rel_dims": self.rel_dims,
        }


def focal_loss(pred, gt, params: FocalParams = FocalParams(), num_points: int = 1):
    """Penalty-reduced focal loss over a heatmap.

    ``num_points`` is the positive-peak count used for normalization;
    zero (no objects) defines the loss as 0. Predictions are clamped to
    [eps, 1-eps] before the logs.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if num_points == 0:
        return 0.0
    y = np.clip(pred, PRED_CLAMP_EPS, 1.0 - PRED_CLAMP_EPS)
    pos = gt >= 1.0
    pos_term = np.where(pos, (1.0 - y) ** params.alpha * np.log(y), 0.0)
    neg_term = np.where(
        pos, 0.0, (1.0 - gt) ** params.beta * y**params.alpha * np.log(1.0 - y)
    )
    return float(-(pos_term.sum() + neg_term.sum()) / num_points)


def focal_loss_grad(pred, gt, params: FocalParams = FocalParams(), num_points: int = 1):
    """d focal_loss / d pred; zero where the clamp is active."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if num_points == 0:
        return np.zeros_like(pred)
    y = np.clip(pred, PRED_CLAMP_EPS, 1.0 - PRED_CLAMP_EPS)
    pos = gt >= 1.0
    a, b = params.alpha, params.beta
    dpos = -a * (1.0 - y) ** (a - 1.0) * np.log(y) + (1.0 - y) ** a / y
    dneg = (1.0 - gt) ** b * (a * y ** (a - 1.0) * np.log(1.0 - y) - y**a / (1.0 - y))
    grad = np.where(pos, dpos, dneg) / (-num_points)
    grad[(pred < PRED_CLAMP_EPS) | (pred > 1.0 - PRED_CLAMP_EPS)] = 0.0
    return grad


def masked_l1(pred, gt, mask):
    """Mean over owned cells of the per-channel absolute differences.

    ``mask`` is boolean over the leading dims of ``pred``; trailing dims
    are summed per cell. No owned cells -> 0.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[: mask.ndim] != mask.shape:
        raise ValueError("pred/gt/mask shapes are inconsistent")
    n = int(mask.sum())
    if n == 0:
        return 0.0
    diff = np.abs(pred[mask] - gt[mask])
    return float(diff.sum() / n)


def masked_l1_grad(pred, gt, mask):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    grad = np.zeros_like(pred)
    if n == 0:
        return grad
    m = np.broadcast_to(mask.reshape(mask.shape + (1,) * (pred.ndim - mask.ndim)), pred.shape)
    grad[m] = np.sign(pred[m] - gt[m]) / n
    return grad


def _kp_offset_view(arr):
    return arr.reshape(arr.shape[0], arr.shape[1], 8, 2)


def total_loss(pred: OutputMaps, labels: EncodedLabels, weights: LossWeights = LossWeights(), focal_params: FocalParams = FocalParams()):
    """Weighted combination of the seven terms.

    Returns (total, breakdown); breakdown holds the weighted per-term
    contributions and sums to the total.
    """
    n = labels.num_objects
    gt = labels.maps
    w = weights
    breakdown = {
        "center_heatmap": w.center_heatmap
        * focal_loss(pred.center_heatmap, gt.center_heatmap, focal_params, n),
        "center_offset": w.center_offset
        * masked_l1(pred.center_offset, gt.center_offset, labels.center_mask),
        "bbox_size": w.bbox_size * masked_l1(pred.bbox_size, gt.bbox_size, labels.center_mask),
        # Keypoint heatmaps carry up to 8 peaks per object: normalize by 8n.
        "kp_heatmaps": w.kp_heatmaps
        * focal_loss(pred.kp_heatmaps, gt.kp_heatmaps, focal_params, 8 * n),
        "kp_offsets": w.kp_offsets
        * masked_l1(_kp_offset_view(pred.kp_offsets), _kp_offset_view(gt.kp_offsets), labels.kp_mask),
        "kp_displacements": w.kp_displacements
        * masked_l1(pred.kp_displacements, gt.kp_displacements, labels.center_mask),
        "rel_dims": w.rel_dims * masked_l1(pred.rel_dims, gt.rel_dims, labels.center_mask),
    }
    return float(sum(breakdown.values())), breakdown


def total_loss_grad(pred: OutputMaps, labels: EncodedLabels, weights: LossWeights = LossWeights(), focal_params: FocalParams = FocalParams()):
    """Gradient of the weighted total w.r.t. each prediction map."""
    n = labels.num_objects
    gt = labels.maps
    w = weights
    kp_off_grad = w.kp_offsets * masked_l1_grad(
        _kp_offset_view(pred.kp_offsets), _kp_offset_view(gt.kp_offsets), labels.kp_mask
    )
    return {
        "center_heatmap": w.center_heatmap
        * focal_loss_grad(pred.center_heatmap, gt.center_heatmap, focal_params, n),
        "center_offset": w.center_offset
        * masked_l1_grad(pred.center_offset, gt.center_offset, labels.center_mask),
        "bbox_size": w.bbox_size
        * masked_l1_grad(pred.bbox_size, gt.bbox_size, labels.center_mask),
        "kp_heatmaps": w.kp_heatmaps
        * focal_loss_grad(pred.kp_heatmaps, gt.kp_heatmaps, focal_params, 8 * n),
        "kp_offsets": kp_off_grad.reshape(pred.kp_offsets.shape),
        "kp_displacements": w.kp_displacements
        * masked_l1_grad(pred.kp_displacements, gt.kp_displacements, labels.center_mask),
        "rel_dims": w.rel_dims * masked_l1_grad(pred.rel_dims, gt.rel_dims, labels.center_mask),
    }


def symmetric_loss(pred: OutputMaps, label_variants, weights: LossWeights = LossWeights(), focal_params: FocalParams = FocalParams()):
    """Min over rotated label variants of the total loss.

    Returns (loss, argmin variant index).
    """
    if len(label_variants) == 0:
        raise ValueError("symmetric loss needs at least one label variant")
    best, best_i = np.inf, -1
    for i, labels in enumerate(label_variants):
        value, _ = total_loss(pred, labels, weights, focal_params)
        if value < best:
            best, best_i = value, i
    return best, best_i
