"""Variance-preserving noise schedule and the forward noising sampler."""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule; index ``t`` runs from 1 to ``T`` inclusive."""

    T: int
    beta_start: float
    beta_end: float
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise InvalidArgumentError(f"unsupported schedule kind {self.kind!r}")
        if int(self.T) != self.T or self.T < 2:
            raise InvalidArgumentError(f"T must be an integer >= 2, got {self.T}")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise InvalidArgumentError(
                f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}")

    @property
    def beta(self):
        return np.linspace(self.beta_start, self.beta_end, self.T, dtype=np.float64)

    @property
    def alpha(self):
        return 1.0 - self.beta

    @property
    def alpha_bar(self):
        return np.cumprod(self.alpha)

    def alpha_bar_at(self, t):
        """``alpha_bar`` for 1-based timestep(s) ``t``."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise InvalidArgumentError(f"timestep out of range [1, {self.T}]")
        return self.alpha_bar[t - 1]

    def to_dict(self):
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end, "kind": self.kind}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["T"]), float(d["beta_start"]), float(d["beta_end"]), d.get("kind", "linear"))


def make_schedule(T=200, beta_start=1e-4, beta_end=0.02, kind="linear"):
    return NoiseSchedule(T, beta_start, beta_end, kind)


def q_sample(x0, t, eps, schedule):
    """Noise ``x0`` to timestep ``t``: ``sqrt(ab) * x0 + sqrt(1 - ab) * eps``.

    Works on numpy arrays or torch tensors. ``t`` may be a scalar or, for a
    batch, one timestep per leading-axis entry.
    """
    if tuple(x0.shape) != tuple(eps.shape):
        raise InvalidArgumentError(f"shape mismatch: x0 {tuple(x0.shape)} vs eps {tuple(eps.shape)}")
    t_np = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    ab = schedule.alpha_bar_at(t_np)
    if ab.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (len(x0.shape) - 1))
    if isinstance(x0, torch.Tensor):
        ab = torch.as_tensor(ab, dtype=x0.dtype, device=x0.device)
        return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t, t, eps, schedule):
    """Invert ``q_sample`` given the noise that produced ``x_t``."""
    ab = schedule.alpha_bar_at(np.asarray(t))
    if np.ndim(ab) == 1:
        ab = ab.reshape((-1,) + (1,) * (np.ndim(x_t) - 1))
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def to_signed(images):
    """Map pixel values from [0, 1] to [-1, 1]."""
    return images * 2.0 - 1.0


def to_unit(images):
    return (images + 1.0) / 2.0
