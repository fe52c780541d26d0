"""Image quality metrics and the evaluation report.

PSNR and SSIM are the usual full-reference formulations (SSIM with an 11x11
Gaussian window, sigma 1.5, k1=0.01, k2=0.03).  UIQM is the no-reference
underwater measure: a weighted sum of a colorfulness term (UICM), a sharpness
term (UISM), and a contrast term (UIConM), with the standard published
weights.  All metric math runs in float64 regardless of input dtype.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

LUMA = (0.299, 0.587, 0.114)  # ITU-R 601

UIQM_C1 = 0.0282
UIQM_C2 = 0.2953
UIQM_C3 = 3.5753


def _as_hw3(img: np.ndarray, caller: str) -> np.ndarray:
    """Accept [3,H,W] or [H,W,3]; return float64 [H,W,3]."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"{caller}: need a 3-channel image, got shape {a.shape}")
    if a.shape[0] == 3 and a.shape[2] != 3:
        a = a.transpose(1, 2, 0)
    elif a.shape[2] != 3:
        raise ShapeError(f"{caller}: need a 3-channel image, got shape {a.shape}")
    return a


def _luma(img_hw3: np.ndarray) -> np.ndarray:
    return img_hw3 @ np.asarray(LUMA, dtype=np.float64)


# ---------------------------------------------------------------------------
# PSNR


def psnr(x: np.ndarray, y: np.ndarray, max_value: float = 1.0) -> float:
    """10 log10(max² / MSE); +inf when the images are identical."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise ShapeError(f"psnr shape mismatch: {xa.shape} vs {ya.shape}")
    if max_value <= 0:
        raise ContractError(f"psnr max_value must be positive, got {max_value}")
    mse = float(np.mean((xa - ya) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_value * max_value / mse))


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode Gaussian filtering of a 2D array."""
    size = kernel.size
    h, w = img.shape
    oh, ow = h - size + 1, w - size + 1
    rows = np.zeros((h, ow), dtype=np.float64)
    for i in range(size):
        rows += kernel[i] * img[:, i : i + ow]
    out = np.zeros((oh, ow), dtype=np.float64)
    for i in range(size):
        out += kernel[i] * rows[i : i + oh, :]
    return out


def ssim(x: np.ndarray, y: np.ndarray, max_value: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over an 11x11 Gaussian window on the luma channel.

    Accepts 2D grayscale or 3-channel images; 3-channel inputs are reduced
    to luma first.
    """
    if max_value <= 0:
        raise ContractError(f"ssim max_value must be positive, got {max_value}")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise ShapeError(f"ssim shape mismatch: {xa.shape} vs {ya.shape}")
    if xa.ndim == 3:
        xa = _luma(_as_hw3(xa, "ssim"))
        ya = _luma(_as_hw3(ya, "ssim"))
    if xa.ndim != 2:
        raise ShapeError(f"ssim: need 2D or 3-channel images, got {x.shape}")
    size = 11
    if xa.shape[0] < size or xa.shape[1] < size:
        raise ShapeError(f"ssim: image {xa.shape} smaller than the {size}x{size} window")
    kernel = _gaussian_kernel(size, 1.5)
    mx = _filter_valid(xa, kernel)
    my = _filter_valid(ya, kernel)
    mxx = _filter_valid(xa * xa, kernel)
    myy = _filter_valid(ya * ya, kernel)
    mxy = _filter_valid(xa * ya, kernel)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    c1 = (k1 * max_value) ** 2
    c2 = (k2 * max_value) ** 2
    num = (2.0 * mx * my + c1) * (2.0 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# UIQM


def _alpha_trimmed_mean(values: np.ndarray, alpha: float = 0.1) -> float:
    v = np.sort(values.ravel())
    cut = int(np.floor(alpha * v.size))
    kept = v[cut : v.size - cut]
    if kept.size == 0:
        return 0.0
    return float(kept.mean())


def _uicm(img: np.ndarray) -> float:
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    rg = (r - g).ravel()
    yb = ((r + g) / 2.0 - b).ravel()
    mu_rg = _alpha_trimmed_mean(rg)
    mu_yb = _alpha_trimmed_mean(yb)
    mu = np.sqrt(mu_rg**2 + mu_yb**2)
    sigma = np.sqrt(rg.var() + yb.var())
    return float(-0.0268 * mu + 0.1586 * sigma)


def _sobel_mag(ch: np.ndarray) -> np.ndarray:
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    ky = kx.T
    padded = np.pad(ch, 1, mode="edge")
    gx = np.zeros_like(ch)
    gy = np.zeros_like(ch)
    h, w = ch.shape
    for i in range(3):
        for j in range(3):
            patch = padded[i : i + h, j : j + w]
            gx += kx[i, j] * patch
            gy += ky[i, j] * patch
    return np.sqrt(gx * gx + gy * gy)


def _eme(ch: np.ndarray, block: int = 8) -> float:
    """Mean log block contrast max/min over a block grid (partial blocks dropped)."""
    h, w = ch.shape
    bh, bw = h // block, w // block
    if bh == 0 or bw == 0:
        return 0.0
    trimmed = ch[: bh * block, : bw * block].reshape(bh, block, bw, block)
    mx = trimmed.max(axis=(1, 3))
    mn = trimmed.min(axis=(1, 3))
    ok = (mn > 0) & (mx > 0)
    vals = np.zeros_like(mx)
    vals[ok] = np.log(mx[ok] / mn[ok])
    return float(2.0 / (bh * bw) * vals.sum())


def _uism(img: np.ndarray) -> float:
    total = 0.0
    for c, weight in enumerate(LUMA):
        ch = img[:, :, c]
        edge = ch * _sobel_mag(ch)
        total += weight * _eme(edge)
    return float(total)


def _uiconm(img: np.ndarray, block: int = 8) -> float:
    """log-AMEE block contrast on luma: mean of -c*log(c), c = (max-min)/(max+min).

    The entropy form keeps the measure nonnegative and increasing in block
    contrast over the usual range, so stronger contrast raises the score.
    """
    gray = _luma(img)
    h, w = gray.shape
    bh, bw = h // block, w // block
    if bh == 0 or bw == 0:
        return 0.0
    trimmed = gray[: bh * block, : bw * block].reshape(bh, block, bw, block)
    mx = trimmed.max(axis=(1, 3))
    mn = trimmed.min(axis=(1, 3))
    tot = mx + mn
    diff = mx - mn
    ok = (tot > 0) & (diff > 0)
    c = np.zeros_like(mx)
    c[ok] = diff[ok] / tot[ok]
    vals = np.zeros_like(mx)
    nz = c > 0
    vals[nz] = -c[nz] * np.log(c[nz])
    return float(vals.sum() / (bh * bw))


def uiqm(img: np.ndarray) -> float:
    """Weighted colorfulness + sharpness + contrast on an image in [0, 1]."""
    a = _as_hw3(img, "uiqm")
    if a.min() < -1e-6 or a.max() > 1.0 + 1e-6:
        raise ContractError(f"uiqm expects values in [0, 1], got [{a.min():.3f}, {a.max():.3f}]")
    return float(UIQM_C1 * _uicm(a) + UIQM_C2 * _uism(a) + UIQM_C3 * _uiconm(a))


# ---------------------------------------------------------------------------
# histogram equalization


def hist_equalize(img: np.ndarray) -> np.ndarray:
    """Classic per-channel CDF equalization of a uint8 image (any layout)."""
    a = np.asarray(img)
    if a.dtype != np.uint8:
        raise ContractError(f"hist_equalize expects uint8, got {a.dtype}")
    if a.ndim == 2:
        return _equalize_channel(a)
    out = np.empty_like(a)
    if a.ndim != 3:
        raise ShapeError(f"hist_equalize: need 2D or 3D input, got {a.shape}")
    axis = 0 if a.shape[0] == 3 and a.shape[2] != 3 else 2
    for c in range(a.shape[axis]):
        if axis == 0:
            out[c] = _equalize_channel(a[c])
        else:
            out[:, :, c] = _equalize_channel(a[:, :, c])
    return out


def _equalize_channel(ch: np.ndarray) -> np.ndarray:
    hist = np.bincount(ch.ravel(), minlength=256)
    cdf = hist.cumsum()
    total = cdf[-1]
    nonzero = np.nonzero(hist)[0]
    cdf_min = cdf[nonzero[0]]
    if total == cdf_min:
        return ch.copy()  # constant image: nothing to spread
    lut = np.round((cdf - cdf_min) / (total - cdf_min) * 255.0)
    return np.clip(lut, 0, 255).astype(np.uint8)[ch]


# ---------------------------------------------------------------------------
# evaluation report


@dataclass
class ImageScore:
    id: str
    psnr: float
    ssim: float
    uiqm: float


@dataclass
class MetricReport:
    images: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    baseline: str = "none"
    config_digest: str = ""

    def to_json(self) -> str:
        import json

        def enc(v):
            if isinstance(v, float):
                if np.isposinf(v):
                    return "inf"
                if np.isneginf(v):
                    return "-inf"
                if np.isnan(v):
                    return "nan"
            return v

        doc = {
            "images": [
                {"id": s.id, "psnr": enc(s.psnr), "ssim": enc(s.ssim), "uiqm": enc(s.uiqm)}
                for s in self.images
            ],
            "aggregate": {k: enc(v) for k, v in self.aggregate.items()},
            "baseline": self.baseline,
            "config_digest": self.config_digest,
        }
        return json.dumps(doc, sort_keys=True)


def _aggregate(values: list) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def evaluate_pairs(pairs, enhancer, baseline: str = "none", config_digest: str = "") -> MetricReport:
    """Score enhancer output against references for every pair.

    ``enhancer`` maps one [3,H,W] float32 image in [-1,1] to the same; both
    model wrappers and reference baselines fit this signature.  Pairs are
    processed in id order so reports are stable.
    """
    if not pairs:
        raise ContractError("evaluate_pairs: empty dataset")
    report = MetricReport(baseline=baseline, config_digest=config_digest)
    for pair in sorted(pairs, key=lambda p: p.id):
        out = np.asarray(enhancer(pair.degraded), dtype=np.float64)
        if out.shape != pair.reference.shape:
            raise ShapeError(
                f"enhancer returned {out.shape} for {pair.id!r}, expected {pair.reference.shape}"
            )
        out01 = np.clip((out + 1.0) / 2.0, 0.0, 1.0)
        ref01 = np.clip((np.asarray(pair.reference, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
        report.images.append(
            ImageScore(
                id=pair.id,
                psnr=psnr(out01, ref01, 1.0),
                ssim=ssim(out01, ref01, 1.0),
                uiqm=uiqm(out01),
            )
        )
    for key in ("psnr", "ssim", "uiqm"):
        mean, std = _aggregate([getattr(s, key) for s in report.images])
        report.aggregate[f"{key}_mean"] = mean
        report.aggregate[f"{key}_std"] = std
    return report
