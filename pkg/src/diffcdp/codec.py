"""Small convolutional autoencoder for binary templates.

Used only for the reconstruction study: a codec fitted to templates versus
one fitted to smooth generic images, both measured on held-out templates.
Reconstruction error is computed in pixel space [0, 1].
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from torch import nn

from .checkpoint import load_archive, save_archive
from .errors import InvalidArgumentError, TrainingDivergedError
from .seeding import derive_seed, rng as seeded_rng

CORPUS_TAGS = ("templates", "generic", "none")


@dataclass(frozen=True)
class CodecConfig:
    side: int = 32
    latent_side: int = 16
    latent_channels: int = 4
    width: int = 32
    linear: bool = False

    def __post_init__(self):
        if self.side % self.latent_side:
            raise InvalidArgumentError("latent_side must divide side")
        factor = self.side // self.latent_side
        if factor & (factor - 1):
            raise InvalidArgumentError("side / latent_side must be a power of two")
        if self.linear and factor != 1:
            raise InvalidArgumentError("the linear codec does not downsample")

    @property
    def n_down(self):
        return int(math.log2(self.side // self.latent_side))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CodecHyperparams:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0


class Codec(nn.Module):
    def __init__(self, config, corpus_tag="none"):
        super().__init__()
        self.config = config
        self.corpus_tag = corpus_tag
        w, lc = config.width, config.latent_channels
        if config.linear:
            self.encoder = nn.Conv2d(1, lc, 1)
            self.decoder = nn.Conv2d(lc, 1, 1)
            return
        enc = [nn.Conv2d(1, w, 3, padding=1), nn.SiLU()]
        for _ in range(config.n_down):
            enc += [nn.Conv2d(w, w, 3, stride=2, padding=1), nn.SiLU()]
        enc += [nn.Conv2d(w, lc, 3, padding=1)]
        dec = [nn.Conv2d(lc, w, 3, padding=1), nn.SiLU()]
        for _ in range(config.n_down):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(w, w, 3, padding=1), nn.SiLU()]
        dec += [nn.Conv2d(w, 1, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)
        self.decoder = nn.Sequential(*dec)

    def encode(self, x):
        return self.encoder(x)

    def decode(self, h):
        return self.decoder(h)

    def forward(self, x):
        return self.decode(self.encode(x))


def identity_codec(side=32):
    """Linear codec whose decoder exactly inverts its encoder (for sanity checks)."""
    codec = Codec(CodecConfig(side=side, latent_side=side, latent_channels=1, linear=True))
    with torch.no_grad():
        codec.encoder.weight.fill_(2.0)
        codec.encoder.bias.fill_(-1.0)
        codec.decoder.weight.fill_(0.5)
        codec.decoder.bias.fill_(0.5)
    return codec


def generic_corpus(n, side, seed, sigma=1.5):
    """Smoothed Gaussian-noise images rescaled to [0, 1]."""
    out = np.empty((n, side, side))
    for i in range(n):
        img = ndimage.gaussian_filter(seeded_rng(seed, "generic", i).standard_normal((side, side)),
                                      sigma, mode="wrap")
        img -= img.min()
        out[i] = img / img.max()
    return out


def _stack(images, side=None):
    if len(images) == 0:
        raise InvalidArgumentError("image set is empty")
    arr = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    if arr.ndim != 3:
        raise InvalidArgumentError("images must be 2-D")
    if side is not None and arr.shape[1:] != (side, side):
        raise InvalidArgumentError(f"images must be {side}x{side}, got {arr.shape[1:]}")
    return arr


def train_codec(corpus, hp=CodecHyperparams(), config=None, tag="templates", log=None):
    """Fit a codec by minimizing pixel MSE on ``corpus``.

    Returns ``(codec, loss_curve)``; the curve holds the full-corpus MSE at
    initialization followed by one entry per epoch.
    """
    arr = _stack(corpus)
    if config is None:
        config = CodecConfig(side=arr.shape[1])
    if arr.shape[1:] != (config.side, config.side):
        raise InvalidArgumentError("corpus images do not match codec side")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(hp.seed, "codec-init"))
        codec = Codec(config, tag)
    x = torch.tensor(arr, dtype=torch.float32)[:, None]
    opt = torch.optim.Adam(codec.parameters(), lr=hp.lr)
    curve = [recon_mse(codec, arr)]
    n = len(x)
    for epoch in range(hp.epochs):
        order = torch.from_numpy(seeded_rng(hp.seed, "codec-epoch", epoch).permutation(n))
        for s in range(0, n, hp.batch_size):
            idx = order[s:s + hp.batch_size]
            opt.zero_grad(set_to_none=True)
            loss = F.mse_loss(codec(x[idx]), x[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError("codec loss is not finite")
            loss.backward()
            opt.step()
        curve.append(recon_mse(codec, arr))
        if log is not None:
            log(f"codec epoch {epoch + 1}/{hp.epochs} mse {curve[-1]:.5f}")
    codec.eval()
    return codec, curve


@torch.no_grad()
def recon_mse(codec, images):
    """Mean over images of the per-pixel squared reconstruction error."""
    arr = _stack(images, codec.config.side)
    dtype = next(codec.parameters()).dtype
    x = torch.tensor(arr, dtype=dtype)[:, None]
    per_image = ((codec(x) - x) ** 2).mean(dim=(1, 2, 3)).to(torch.float64).numpy()
    return float(np.mean(np.sort(per_image)))


def save_codec(path, codec, extra=None):
    meta = {"config": codec.config.to_dict(), "corpus_tag": codec.corpus_tag}
    if extra:
        meta.update(extra)
    return save_archive(path, "codec", meta, codec.state_dict())


def load_codec(path):
    meta, state = load_archive(path, "codec")
    codec = Codec(CodecConfig(**meta["config"]), meta.get("corpus_tag", "none"))
    codec.load_state_dict(state)
    codec.eval()
    return codec, meta
