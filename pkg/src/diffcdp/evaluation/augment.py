"""Paired template/print augmentation.

Geometry (crop, flips) is shared by both images of a pair; photometric
transforms touch the printed image only, so templates stay binary.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ..errors import InvalidArgumentError
from ..seeding import rng as seeded_rng

PHOTOMETRIC = ("blur", "noise", "brightness_contrast")


@dataclass(frozen=True)
class AugmentParams:
    n_copies: int = 4
    crop_side: int = 24
    flip_prob: float = 0.8
    photometric_prob: float = 0.7
    blur_kernel: tuple = (3, 5)
    blur_sigma: tuple = (0.1, 0.5)
    noise_var: tuple = (0.001, 0.005)
    brightness: float = 0.2
    contrast: float = 0.2

    def __post_init__(self):
        for name in ("blur_kernel", "blur_sigma", "noise_var"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_copies < 1:
            raise InvalidArgumentError("n_copies must be >= 1")
        for name in ("flip_prob", "photometric_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgumentError(f"{name} must be in [0, 1]")
        lo, hi = self.blur_kernel
        if lo < 1 or hi < lo or lo % 2 == 0 or hi % 2 == 0:
            raise InvalidArgumentError("blur_kernel must be an odd range (lo, hi)")
        if self.crop_side < 1:
            raise InvalidArgumentError("crop_side must be positive")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _gaussian_blur(img, ksize, sigma):
    r = ksize // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    out = ndimage.convolve1d(img, k, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k, axis=1, mode="reflect")


def _photometric(img, kind, params, gen):
    if kind == "blur":
        lo, hi = params.blur_kernel
        ksize = int(gen.choice(np.arange(lo, hi + 1, 2)))
        return _gaussian_blur(img, ksize, gen.uniform(*params.blur_sigma))
    if kind == "noise":
        var = gen.uniform(*params.noise_var)
        return np.clip(img + gen.normal(0.0, np.sqrt(var), size=img.shape), 0.0, 1.0)
    b = gen.uniform(1.0 - params.brightness, 1.0 + params.brightness)
    c = gen.uniform(1.0 - params.contrast, 1.0 + params.contrast)
    img = img * b
    mean = img.mean()
    return np.clip((img - mean) * c + mean, 0.0, 1.0)


def augment_copy(template, printed, params, gen):
    side = template.shape[0]
    cs = params.crop_side
    y, x = gen.integers(0, side - cs + 1, size=2)
    tpl = template[y:y + cs, x:x + cs]
    prn = printed[y:y + cs, x:x + cs]
    if gen.random() < params.flip_prob:
        tpl, prn = tpl[:, ::-1], prn[:, ::-1]
    if gen.random() < params.flip_prob:
        tpl, prn = tpl[::-1, :], prn[::-1, :]
    prn = np.array(prn, dtype=np.float64)
    if gen.random() < params.photometric_prob:
        for kind in gen.choice(PHOTOMETRIC, size=2, replace=False):
            prn = _photometric(prn, kind, params, gen)
    return np.ascontiguousarray(tpl), prn


def augment(pair, params, seed):
    """Return ``params.n_copies`` augmented ``(template, printed)`` pairs.

    Copy ``j`` depends only on ``(seed, j)``.
    """
    template, printed = (np.asarray(a) for a in pair)
    if template.shape != printed.shape:
        raise InvalidArgumentError("template and printed image shapes differ")
    if params.crop_side > template.shape[0] or params.crop_side > template.shape[1]:
        raise InvalidArgumentError(
            f"crop_side {params.crop_side} exceeds image side {template.shape[0]}")
    return [augment_copy(template, printed, params, seeded_rng(seed, "copy", j))
            for j in range(params.n_copies)]
