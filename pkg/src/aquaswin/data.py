"""Image IO, the physics-based degradation simulator, and dataset loading.

Images move through the pipeline as float32 [3, H, W] arrays in [-1, 1]
(models) or [0, 1] (simulator and metrics); files on disk are binary PPM
(P6, maxval 255).  Training data is either simulated on the fly from
procedural clean scenes or read from paired directories (trainA degraded,
trainB reference, files matched by stem).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, PairingError, PpmError

# ---------------------------------------------------------------------------
# PPM (P6) files


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into uint8 [H, W, 3]."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise PpmError(f"{path}: {exc}") from exc
    return decode_ppm(data, name=str(path))


def decode_ppm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    if data[:2] != b"P6":
        raise PpmError(f"{name}: not a binary PPM (magic {data[:2]!r})")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise PpmError(f"{name}: header ended early")
        ch = data[pos : pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        elif ch.isdigit():
            end = pos
            while end < len(data) and data[end : end + 1].isdigit():
                end += 1
            fields.append(int(data[pos:end]))
            pos = end
        else:
            raise PpmError(f"{name}: unexpected byte {ch!r} in header")
    width, height, maxval = fields
    if maxval != 255:
        raise PpmError(f"{name}: maxval {maxval} unsupported (only 255)")
    if width < 1 or height < 1:
        raise PpmError(f"{name}: bad dimensions {width}x{height}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PpmError(f"{name}: missing whitespace after maxval")
    pos += 1  # exactly one whitespace byte separates header from data
    need = width * height * 3
    if len(data) - pos < need:
        raise PpmError(f"{name}: pixel data truncated ({len(data) - pos} of {need} bytes)")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    a = np.asarray(img)
    if a.dtype != np.uint8 or a.ndim != 3 or a.shape[2] != 3:
        raise PpmError(f"encode_ppm needs uint8 [H, W, 3], got {a.dtype} {a.shape}")
    h, w = a.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(a).tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    data = encode_ppm(img)
    with open(path, "wb") as fh:
        fh.write(data)


# ---------------------------------------------------------------------------
# layout / range conversions


def to_float01(img_u8: np.ndarray) -> np.ndarray:
    """uint8 [H, W, 3] -> float32 [3, H, W] in [0, 1]."""
    return (img_u8.astype(np.float32) / 255.0).transpose(2, 0, 1)


def to_uint8(img01: np.ndarray) -> np.ndarray:
    """float [3, H, W] in [0, 1] -> uint8 [H, W, 3] with rounding."""
    a = np.clip(np.asarray(img01, dtype=np.float64), 0.0, 1.0)
    return np.round(a * 255.0).astype(np.uint8).transpose(1, 2, 0)


def to_signed(img01: np.ndarray) -> np.ndarray:
    return (np.asarray(img01, dtype=np.float32) * 2.0 - 1.0).astype(np.float32)


def to_unit(img_pm1: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(img_pm1, dtype=np.float32) + 1.0) / 2.0, 0.0, 1.0)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of [3, H, W] float using half-pixel-centered sampling."""
    if out_h < 1 or out_w < 1:
        raise ContractError(f"resize target {out_h}x{out_w} must be positive")
    c, h, w = img.shape
    if h == out_h and w == out_w:
        return img.astype(np.float32, copy=True)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    a = img[:, y0[:, None], x0[None, :]]
    b = img[:, y0[:, None], x1[None, :]]
    c_ = img[:, y1[:, None], x0[None, :]]
    d = img[:, y1[:, None], x1[None, :]]
    top = a * (1 - wx) + b * wx
    bot = c_ * (1 - wx) + d * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


# ---------------------------------------------------------------------------
# degradation simulator


@dataclass(frozen=True)
class DegradationParams:
    """Underwater image formation: I = J t + B (1 - t), t = exp(-beta d(x)).

    Per-channel attenuation must fall red >= green >= blue, matching how
    water absorbs long wavelengths first; ``depth_style`` picks the shape of
    the scene depth field and ``haze_strength`` scales it.
    """

    background: tuple = (0.10, 0.35, 0.45)
    beta: tuple = (1.4, 0.55, 0.30)
    depth_style: str = "smooth"  # "constant" | "linear" | "smooth"
    haze_strength: float = 1.0
    contrast: float = 0.8

    def validate(self) -> None:
        if len(self.background) != 3 or any(not 0 <= v <= 1 for v in self.background):
            raise ConfigError(f"background must be three values in [0,1], got {self.background}")
        if len(self.beta) != 3 or any(v < 0 for v in self.beta):
            raise ConfigError(f"beta must be three non-negative values, got {self.beta}")
        if not (self.beta[0] >= self.beta[1] >= self.beta[2]):
            raise ConfigError(f"beta must be ordered red >= green >= blue, got {self.beta}")
        if self.depth_style not in ("constant", "linear", "smooth"):
            raise ConfigError(f"unknown depth_style {self.depth_style!r}")
        if self.haze_strength < 0:
            raise ConfigError(f"haze_strength must be non-negative, got {self.haze_strength}")
        if not 0 < self.contrast <= 1:
            raise ConfigError(f"contrast must lie in (0, 1], got {self.contrast}")


def _smooth_field(rng: np.random.Generator, h: int, w: int, cells: int = 4) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(1, cells, cells)).astype(np.float32)
    return resize_bilinear(coarse, h, w)[0]


def depth_field(style: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    if style == "constant":
        return np.ones((h, w), dtype=np.float32)
    if style == "linear":
        return np.broadcast_to(np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None], (h, w)).copy()
    return _smooth_field(rng, h, w)


def degrade(clean01: np.ndarray, params: DegradationParams, seed: int = 0) -> np.ndarray:
    """Apply the formation model to a [3, H, W] image in [0, 1]."""
    params.validate()
    img = np.asarray(clean01, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"degrade expects [3, H, W], got {img.shape}")
    if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
        raise ContractError("degrade expects values in [0, 1]")
    _, h, w = img.shape
    rng = np.random.default_rng(seed)
    depth = depth_field(params.depth_style, h, w, rng) * params.haze_strength
    beta = np.asarray(params.beta, dtype=np.float32).reshape(3, 1, 1)
    t = np.exp(-beta * depth[None, :, :])
    back = np.asarray(params.background, dtype=np.float32).reshape(3, 1, 1)
    out = img * t + back * (1.0 - t)
    mean = out.mean()
    out = mean + params.contrast * (out - mean)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# procedural clean scenes


def synth_clean(rng: np.random.Generator, size: int) -> np.ndarray:
    """A colorful procedural scene in [0, 1]: gradient base, soft shapes, stripes.

    Shape edges ramp over a fixed fraction of the image instead of stepping,
    keeping the scenes band limited the way lens optics keep photographs band
    limited.
    """
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    corners = rng.uniform(0.1, 1.0, size=(4, 3)).astype(np.float32)
    img = np.zeros((3, size, size), dtype=np.float32)
    for ch in range(3):
        c00, c01, c10, c11 = corners[:, ch]
        img[ch] = (
            c00 * (1 - yy) * (1 - xx) + c01 * (1 - yy) * xx + c10 * yy * (1 - xx) + c11 * yy * xx
        )
    edge = 0.05  # edge ramp width in normalized units
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        if rng.uniform() < 0.5:
            radius = rng.uniform(0.05, 0.25)
            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) - radius
        else:
            hh, ww = rng.uniform(0.05, 0.3, size=2)
            dist = np.maximum(np.abs(yy - cy) - hh, np.abs(xx - cx) - ww)
        alpha = np.clip(0.5 - dist / edge, 0.0, 1.0).astype(np.float32)
        img = (1.0 - alpha[None]) * img + alpha[None] * color[:, None, None]
    if rng.uniform() < 0.5:
        freq = rng.uniform(2.0, 6.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        stripes = 0.08 * np.sin(2 * np.pi * freq * (xx + yy) + phase).astype(np.float32)
        img = img + stripes[None, :, :]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset


@dataclass
class ImagePair:
    """A degraded/reference pair in [-1, 1], float32 [3, H, W]."""

    degraded: np.ndarray
    reference: np.ndarray
    id: str
    provenance: dict = field(default_factory=dict)


def generate_pairs(n: int, size: int, seed: int = 0) -> list:
    """Simulate ``n`` pairs deterministically from a single seed."""
    if n < 0:
        raise ConfigError(f"cannot generate {n} pairs")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        clean = synth_clean(rng, size)
        base = rng.uniform(0.9, 1.6)
        beta = (base, base * rng.uniform(0.35, 0.55), base * rng.uniform(0.15, 0.3))
        params = DegradationParams(
            background=(rng.uniform(0.02, 0.18), rng.uniform(0.25, 0.45), rng.uniform(0.35, 0.55)),
            beta=beta,
            depth_style=("constant", "linear", "smooth")[int(rng.integers(0, 3))],
            haze_strength=rng.uniform(0.8, 1.4),
            contrast=rng.uniform(0.65, 0.95),
        )
        sub_seed = int(rng.integers(0, 2**31 - 1))
        degraded = degrade(clean, params, seed=sub_seed)
        pairs.append(
            ImagePair(
                degraded=to_signed(degraded),
                reference=to_signed(clean),
                id=f"sim_{i:04d}",
                provenance={"source": "simulated", "seed": seed, "index": i},
            )
        )
    return pairs


def augment_hflip(pair: ImagePair, rng: np.random.Generator) -> ImagePair:
    """Flip both images horizontally with probability 1/2 (always both or neither)."""
    if rng.uniform() < 0.5:
        return ImagePair(
            degraded=pair.degraded[:, :, ::-1].copy(),
            reference=pair.reference[:, :, ::-1].copy(),
            id=pair.id,
            provenance=pair.provenance,
        )
    return pair


_SPLIT_DIRS = {"train": ("trainA", "trainB"), "validation": ("validationA", "validationB")}


def load_paired_dir(root, split: str, image_size: int) -> list:
    """Load PPM pairs from <root>/<split>A (degraded) and <root>/<split>B (reference).

    Files pair by stem; any stem present on only one side is an error.  Both
    sides are resized to ``image_size`` and mapped to [-1, 1].  Missing or
    empty directories yield an empty list.
    """
    if split not in _SPLIT_DIRS:
        raise ConfigError(f"unknown split {split!r}, expected one of {sorted(_SPLIT_DIRS)}")
    dir_a, dir_b = (os.path.join(root, d) for d in _SPLIT_DIRS[split])

    def stems(path):
        if not os.path.isdir(path):
            return {}
        out = {}
        for fname in sorted(os.listdir(path)):
            if fname.lower().endswith(".ppm"):
                out[os.path.splitext(fname)[0]] = os.path.join(path, fname)
        return out

    side_a = stems(dir_a)
    side_b = stems(dir_b)
    only_a = sorted(set(side_a) - set(side_b))
    only_b = sorted(set(side_b) - set(side_a))
    if only_a or only_b:
        raise PairingError(
            f"unpaired files under {root}: {only_a[:5]} missing references, "
            f"{only_b[:5]} missing degraded inputs"
        )
    pairs = []
    for stem in sorted(side_a):
        da = to_float01(read_ppm(side_a[stem]))
        db = to_float01(read_ppm(side_b[stem]))
        pairs.append(
            ImagePair(
                degraded=to_signed(resize_bilinear(da, image_size, image_size)),
                reference=to_signed(resize_bilinear(db, image_size, image_size)),
                id=stem,
                provenance={"source": "paired_dir", "root": str(root)},
            )
        )
    return pairs
