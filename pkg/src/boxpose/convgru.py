"""Forward-pass convolutional GRU and the three-timestep head grouping.

The recurrent "timesteps" are iterations over output groups, not time:
group 1 (center heatmap, center offset, 2D box size) is computed from
h1, group 2 (keypoint displacements/heatmaps/offsets) from h2, group 3
(relative dims) from h3, with the backbone feature re-fed at every step.
No training happens here; weights are randomly initialized or loaded
from tensor files.
"""

from dataclasses import dataclass

import numpy as np

from . import mapio
from .labelgen import OutputMaps

GRU_CHANNELS = 64
HEAD_CHANNELS = 256

HEAD_CHANNEL_COUNTS = {
    "center_heatmap": 1,
    "center_offset": 2,
    "bbox_size": 2,
    "kp_displacements": 16,
    "kp_heatmaps": 8,
    "kp_offsets": 16,
    "rel_dims": 2,
}

# Output group per timestep, in increasing order of difficulty.
TIMESTEP_GROUPS = {
    1: ("center_heatmap", "center_offset", "bbox_size"),
    2: ("kp_displacements", "kp_heatmaps", "kp_offsets"),
    3: ("rel_dims",),
}

SIGMOID_HEADS = ("center_heatmap", "kp_heatmaps")


def conv2d_same(x, kernel, bias=None):
    """3x3 (or 1x1) same-size convolution on (H, W, Cin) via im2col."""
    kh, kw, cin, cout = kernel.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ValueError(f"input channels {x.shape} incompatible with kernel {kernel.shape}")
    if kh == 1 and kw == 1:
        out = x @ kernel.reshape(cin, cout)
    else:
        ph, pw = kh // 2, kw // 2
        padded = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
        # (H, W, Cin, kh, kw) -> (H, W, kh, kw, Cin) to match kernel layout
        patches = np.ascontiguousarray(windows.transpose(0, 1, 3, 4, 2))
        out = patches.reshape(x.shape[0], x.shape[1], kh * kw * cin) @ kernel.reshape(
            kh * kw * cin, cout
        )
    if bias is not None:
        out = out + bias
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class ConvGRUWeights:
    """Gate and candidate kernels (3, 3, C, C) with per-gate biases."""

    w_xz: np.ndarray
    w_hz: np.ndarray
    b_z: np.ndarray
    w_xr: np.ndarray
    w_hr: np.ndarray
    b_r: np.ndarray
    w_xh: np.ndarray
    w_hh: np.ndarray
    b_h: np.ndarray

    def validate(self, channels=GRU_CHANNELS):
        for name, k in self.kernels().items():
            if k.shape != (3, 3, channels, channels):
                raise ValueError(f"{name} has shape {k.shape}, want (3, 3, {channels}, {channels})")
            if not np.all(np.isfinite(k)):
                raise ValueError(f"{name} is not finite")
        return self

    def kernels(self):
        return {
            "w_xz": self.w_xz,
            "w_hz": self.w_hz,
            "w_xr": self.w_xr,
            "w_hr": self.w_hr,
            "w_xh": self.w_xh,
            "w_hh": self.w_hh,
        }

    def tensors(self):
        out = dict(self.kernels())
        out.update({"b_z": self.b_z, "b_r": self.b_r, "b_h": self.b_h})
        return out


@dataclass
class HeadStack:
    """Per-output 3x3 conv (256 ch) + 1x1 conv to the head channel count."""

    heads: dict  # name -> (w3, b3, w1, b1)

    def validate(self):
        missing = set(HEAD_CHANNEL_COUNTS) - set(self.heads)
        if missing:
            raise ValueError(f"missing heads: {sorted(missing)}")
        for name, (w3, b3, w1, b1) in self.heads.items():
            cout = HEAD_CHANNEL_COUNTS[name]
            if w1.shape[-1] != cout:
                raise ValueError(f"head {name} emits {w1.shape[-1]} channels, want {cout}")
        return self

    def tensors(self):
        out = {}
        for name, (w3, b3, w1, b1) in self.heads.items():
            out[f"head.{name}.w3"] = w3
            out[f"head.{name}.b3"] = b3
            out[f"head.{name}.w1"] = w1
            out[f"head.{name}.b1"] = b1
        return out


def convgru_step(x, h_prev, w: ConvGRUWeights):
    """One convGRU update; ``h_prev`` is all zeros at the first step."""
    if x.shape != h_prev.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {h_prev.shape}")
    z = _sigmoid(conv2d_same(x, w.w_xz) + conv2d_same(h_prev, w.w_hz) + w.b_z)
    r = _sigmoid(conv2d_same(x, w.w_xr) + conv2d_same(h_prev, w.w_hr) + w.b_r)
    h_cand = np.tanh(conv2d_same(x, w.w_xh) + conv2d_same(r * h_prev, w.w_hh) + w.b_h)
    return (1.0 - z) * h_prev + z * h_cand


def convgru_gates(x, h_prev, w: ConvGRUWeights):
    """(z, r) gate maps, for range checks."""
    z = _sigmoid(conv2d_same(x, w.w_xz) + conv2d_same(h_prev, w.w_hz) + w.b_z)
    r = _sigmoid(conv2d_same(x, w.w_xr) + conv2d_same(h_prev, w.w_hr) + w.b_r)
    return z, r


def _run_head(h, head):
    w3, b3, w1, b1 = head
    mid = np.maximum(conv2d_same(h, w3, b3), 0.0)
    return conv2d_same(mid, w1, b1)


def run_sequential_heads(feature, gru: ConvGRUWeights, heads: HeadStack) -> OutputMaps:
    """Three GRU steps over the backbone feature, heads per group.

    Heatmap heads pass through a sigmoid; regression heads are linear.
    """
    outputs = {}
    h = np.zeros_like(feature)
    for t in (1, 2, 3):
        h = convgru_step(feature, h, gru)
        for name in TIMESTEP_GROUPS[t]:
            y = _run_head(h, heads.heads[name])
            if name in SIGMOID_HEADS:
                y = _sigmoid(y)
            outputs[name] = y
    outputs["center_heatmap"] = outputs["center_heatmap"][:, :, 0]
    return OutputMaps(**outputs)


def _uniform_fan_in(rng, shape):
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_gru_weights(rng, channels=GRU_CHANNELS) -> ConvGRUWeights:
    k = (3, 3, channels, channels)
    return ConvGRUWeights(
        w_xz=_uniform_fan_in(rng, k),
        w_hz=_uniform_fan_in(rng, k),
        b_z=np.zeros(channels),
        w_xr=_uniform_fan_in(rng, k),
        w_hr=_uniform_fan_in(rng, k),
        b_r=np.zeros(channels),
        w_xh=_uniform_fan_in(rng, k),
        w_hh=_uniform_fan_in(rng, k),
        b_h=np.zeros(channels),
    )


def init_head_stack(rng, channels=GRU_CHANNELS, mid_channels=HEAD_CHANNELS) -> HeadStack:
    heads = {}
    for name, cout in HEAD_CHANNEL_COUNTS.items():
        heads[name] = (
            _uniform_fan_in(rng, (3, 3, channels, mid_channels)),
            np.zeros(mid_channels),
            _uniform_fan_in(rng, (1, 1, mid_channels, cout)),
            np.zeros(cout),
        )
    return HeadStack(heads=heads)


def save_weights(prefix, gru: ConvGRUWeights, heads: HeadStack):
    tensors = {f"gru.{k}": v for k, v in gru.tensors().items()}
    tensors.update(heads.tensors())
    mapio.save_tensors(prefix, tensors, meta={"kind": "convgru_weights"})


def load_weights(prefix):
    tensors, _ = mapio.load_tensors(prefix)
    gru = ConvGRUWeights(**{k[len("gru.") :]: v for k, v in tensors.items() if k.startswith("gru.")})
    heads = {}
    for name in HEAD_CHANNEL_COUNTS:
        heads[name] = (
            tensors[f"head.{name}.w3"],
            tensors[f"head.{name}.b3"],
            tensors[f"head.{name}.w1"],
            tensors[f"head.{name}.b1"],
        )
    return gru, HeadStack(heads=heads)
