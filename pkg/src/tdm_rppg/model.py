"""Spatial 2D encoder + Temporal Derivative Module network.

Pipeline for a clip of T frames, shape [T, 3, H, W]::

    conv3x3 -> tanh -> BN -> avgpool2   (3 -> c1)
    conv3x3 -> tanh -> BN -> avgpool2   (c1 -> c2)
    spatial mean per frame              -> [c2, T]
    derivative chain  D, D^2, ..., D^n  (fixed 5-tap kernel, zero padded)
    channel concat                      -> [n*c2, T]   (order 0: the features themselves)
    1x1 conv head                       -> [T]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import ContractError, DimensionError, Tensor

DERIVATIVE_KERNEL = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
MIN_FRAMES = 5


@dataclass(frozen=True)
class Architecture:
    c1: int = 16
    c2: int = 32
    order: int = 2
    height: int = 128
    width: int = 128

    def __post_init__(self):
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("channel widths must be positive")
        if self.order < 0:
            raise ValueError("derivative order must be >= 0")
        if self.height < 8 or self.width < 8:
            raise ValueError("frames must be at least 8x8")

    @property
    def head_channels(self) -> int:
        return self.c2 * self.order if self.order > 0 else self.c2

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "order": self.order,
                "height": self.height, "width": self.width}


@dataclass
class VideoCube:
    """Frames [T, 3, H, W] with values in [0, 1]."""

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[1] != 3:
            raise DimensionError(f"video must be [T, 3, H, W], got {f.shape}")
        if f.shape[0] < MIN_FRAMES:
            raise ContractError(f"video needs at least {MIN_FRAMES} frames, got {f.shape[0]}")
        if f.shape[2] < 8 or f.shape[3] < 8:
            raise DimensionError(f"frames must be at least 8x8, got {f.shape[2]}x{f.shape[3]}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        self.frames = f

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def dtc_chain(features, order: int, kernel: np.ndarray = DERIVATIVE_KERNEL) -> list[Tensor]:
    """Cascade the fixed derivative filter ``order`` times.

    Element ``i`` is the filter applied ``i + 1`` times; each stage consumes the
    previous stage's output. ``order == 0`` yields an empty list.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    out = []
    x = features
    for _ in range(order):
        x = tn.conv1d_fixed(x, kernel)
        out.append(x)
    return out


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class TdmModel:
    """The TDM network; parameters are :class:`Tensor` leaves keyed by name."""

    def __init__(self, arch: Architecture | None = None, seed: int = 0, dtype=np.float64):
        self.arch = arch or Architecture()
        self.dtype = np.dtype(dtype).type
        a = self.arch
        rng = np.random.default_rng(seed)
        p = {}
        p["conv1.weight"] = _kaiming_uniform(rng, (a.c1, 3, 3, 3), 27, self.dtype)
        p["conv1.bias"] = np.zeros(a.c1, self.dtype)
        p["bn1.weight"] = np.ones(a.c1, self.dtype)
        p["bn1.bias"] = np.zeros(a.c1, self.dtype)
        p["conv2.weight"] = _kaiming_uniform(rng, (a.c2, a.c1, 3, 3), 9 * a.c1, self.dtype)
        p["conv2.bias"] = np.zeros(a.c2, self.dtype)
        p["bn2.weight"] = np.ones(a.c2, self.dtype)
        p["bn2.bias"] = np.zeros(a.c2, self.dtype)
        p["head.weight"] = _kaiming_uniform(rng, (1, a.head_channels), a.head_channels, self.dtype)
        p["head.bias"] = np.zeros(1, self.dtype)
        self.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
        # not trainable: never handed to an optimizer
        self.buffers = {
            "bn1.running_mean": np.zeros(a.c1, self.dtype),
            "bn1.running_var": np.ones(a.c1, self.dtype),
            "bn2.running_mean": np.zeros(a.c2, self.dtype),
            "bn2.running_var": np.ones(a.c2, self.dtype),
            "dtc.kernel": DERIVATIVE_KERNEL.astype(self.dtype),
        }

    # -- parameter access ----------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: t.data.copy() for k, t in self.params.items()}
        state.update({k: v.copy() for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers)
        missing, extra = expected - set(state), set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise DimensionError(f"{k}: expected shape {t.shape}, got {state[k].shape}")
            t.data[...] = state[k]
        for k, buf in self.buffers.items():
            if state[k].shape != buf.shape:
                raise DimensionError(f"{k}: expected shape {buf.shape}, got {state[k].shape}")
            buf[...] = state[k]
        if not np.array_equal(self.buffers["dtc.kernel"], DERIVATIVE_KERNEL):
            raise ValueError("checkpoint derivative kernel differs from [-2, -1, 0, 1, 2]")

    # -- forward ---------------------------------------------------------------
    def encode(self, frames, training: bool) -> Tensor:
        """Spatial encoder; returns per-frame features [c2, T]."""
        p, b = self.params, self.buffers
        x = tn.as_tensor(frames, dtype=self.dtype)
        for i in (1, 2):
            x = tn.conv2d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
            x = tn.tanh(x)
            x = tn.batchnorm2d(x, p[f"bn{i}.weight"], p[f"bn{i}.bias"],
                               b[f"bn{i}.running_mean"], b[f"bn{i}.running_var"], training)
            x = tn.avgpool2d(x)
        return tn.spatial_mean(x)

    def temporal(self, features: Tensor) -> Tensor:
        """TDM: derivative chain + concat + 1x1 head -> [T]."""
        derivs = dtc_chain(features, self.arch.order, self.buffers["dtc.kernel"])
        z = tn.concat_channels(derivs) if derivs else features
        out = tn.conv1x1(z, self.params["head.weight"], self.params["head.bias"])
        return tn.reshape(out, (out.shape[1],))

    def forward(self, video, mode: str = "infer") -> Tensor:
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        frames = video.frames if isinstance(video, VideoCube) else np.asarray(video)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise DimensionError(f"video must be [T, 3, H, W], got {frames.shape}")
        if frames.shape[0] < MIN_FRAMES:
            raise ContractError(f"video needs at least {MIN_FRAMES} frames, got {frames.shape[0]}")
        return self.temporal(self.encode(frames, training=mode == "train"))

    __call__ = forward

    def predict(self, video) -> np.ndarray:
        with tn.no_grad():
            return self.forward(video, "infer").data.copy()


def count_params(model: TdmModel | Architecture) -> int:
    """Number of trainable scalars (BN running stats and the derivative kernel excluded)."""
    if isinstance(model, TdmModel):
        return int(sum(t.size for t in model.parameters()))
    a = model
    return (27 * a.c1 + a.c1) + 2 * a.c1 + (9 * a.c1 * a.c2 + a.c2) + 2 * a.c2 + (a.head_channels + 1)


def mac_breakdown(model: TdmModel | Architecture, t: int, h: int, w: int) -> dict[str, int]:
    """Multiply-accumulates per conv stage for one clip of ``t`` frames of ``h`` x ``w``."""
    a = model.arch if isinstance(model, TdmModel) else model
    h2, w2 = h // 2, w // 2
    return {
        "conv1": t * h * w * a.c1 * 3 * 9,
        "conv2": t * h2 * w2 * a.c2 * a.c1 * 9,
        "dtc": a.order * a.c2 * t * len(DERIVATIVE_KERNEL),
        "head": t * a.head_channels,
    }


def count_macs(model: TdmModel | Architecture, t: int = 256, h: int = 128, w: int = 128) -> int:
    return int(sum(mac_breakdown(model, t, h, w).values()))
