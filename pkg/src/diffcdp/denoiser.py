"""Class- and print-conditioned noise predictor.

A small U-Net over the noised template, with a sinusoidal timestep
embedding and a printer-identity embedding added in every residual block.
A parallel encoder reads the printed CDP; each of its levels reaches the
trunk through a zero-initialized 1x1 projection, so the branch is inert at
initialization and only starts to matter once training moves those
weights.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_archive, save_archive
from .errors import InvalidArgumentError, TrainingDivergedError
from .evaluation.augment import AugmentParams, augment
from .schedule import NoiseSchedule, q_sample, to_signed
from .seeding import derive_seed, rng as seeded_rng
from .synthcdp import _LABEL_RE

IDENTITY_MODES = ("index", "structured")


@dataclass(frozen=True)
class DenoiserConfig:
    base_width: int = 32
    depth: int = 3
    time_embed_dim: int = 64
    class_embed_dim: int = 64
    identity_mode: str = "structured"
    cond_branch: bool = True
    image_side: int = 32

    def __post_init__(self):
        if self.depth < 2:
            raise InvalidArgumentError(f"depth must be >= 2, got {self.depth}")
        if self.base_width < 8:
            raise InvalidArgumentError(f"base_width must be >= 8, got {self.base_width}")
        if self.identity_mode not in IDENTITY_MODES:
            raise InvalidArgumentError(f"identity_mode must be one of {IDENTITY_MODES}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise InvalidArgumentError("time_embed_dim must be even and >= 2")
        if self.class_embed_dim < 1:
            raise InvalidArgumentError("class_embed_dim must be >= 1")
        if self.image_side % (2 ** (self.depth - 1)):
            raise InvalidArgumentError(
                f"image_side {self.image_side} not divisible by 2**(depth-1)")

    def widths(self):
        return [self.base_width * min(2 ** i, 2) for i in range(self.depth)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Hyperparams:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-4
    warmup_steps: int = 200
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    seed: int = 0
    augment: AugmentParams = field(default_factory=AugmentParams)
    x0_source: str = "template"

    def __post_init__(self):
        if self.x0_source not in ("template", "printed"):
            raise InvalidArgumentError("x0_source must be 'template' or 'printed'")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise InvalidArgumentError("lr must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "augment" in d:
            d["augment"] = AugmentParams.from_dict(d["augment"])
        return cls(**d)


def timestep_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=1)


def _groups(ch):
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g


class ResBlock(nn.Module):
    def __init__(self, cin, cout, tdim, cdim):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.t_proj = nn.Linear(tdim, cout)
        self.c_proj = nn.Linear(cdim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb, cemb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + (self.t_proj(F.silu(temb)) + self.c_proj(F.silu(cemb)))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ClassEmbedding(nn.Module):
    """Printer identity as a vector.

    ``index`` mode learns one opaque vector per class. ``structured`` mode
    sums a source-printer vector and a reprint-printer vector (index 0 of
    the reprint vocabulary is the learned "none" used by authentic
    classes), so classes sharing a printer share that component exactly.
    """

    def __init__(self, labels, mode, dim):
        super().__init__()
        self.mode = mode
        self.labels = list(labels)
        parsed = [_LABEL_RE.match(lbl) for lbl in self.labels]
        if any(m is None for m in parsed):
            raise InvalidArgumentError(f"bad class labels {self.labels}")
        self.sources = sorted({m.group(1) for m in parsed})
        self.reprints = ["none"] + sorted({m.group(2) for m in parsed if m.group(2)})
        src_idx = [self.sources.index(m.group(1)) for m in parsed]
        rep_idx = [self.reprints.index(m.group(2) or "none") for m in parsed]
        self.register_buffer("src_index", torch.tensor(src_idx, dtype=torch.long), persistent=False)
        self.register_buffer("rep_index", torch.tensor(rep_idx, dtype=torch.long), persistent=False)
        if mode == "index":
            self.table = nn.Embedding(len(self.labels), dim)
        else:
            self.source = nn.Embedding(len(self.sources), dim)
            self.reprint = nn.Embedding(len(self.reprints), dim)

    @property
    def n_classes(self):
        return len(self.labels)

    def forward(self, c):
        if self.mode == "index":
            return self.table(c)
        return self.source(self.src_index[c]) + self.reprint(self.rep_index[c])

    def parts(self, c):
        """``(source, reprint)`` components in structured mode."""
        c = torch.as_tensor(c, dtype=torch.long)
        return self.source(self.src_index[c]), self.reprint(self.rep_index[c])


class Denoiser(nn.Module):
    def __init__(self, config, labels):
        super().__init__()
        self.config = config
        widths = config.widths()
        tdim, cdim = config.time_embed_dim, config.class_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.class_embed = ClassEmbedding(labels, config.identity_mode, cdim)

        self.in_conv = nn.Conv2d(1, widths[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = widths[0]
        for i, w in enumerate(widths):
            self.down_blocks.append(ResBlock(prev, w, tdim, cdim))
            if i < len(widths) - 1:
                self.downsamples.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
            prev = w
        self.mid = ResBlock(prev, prev, tdim, cdim)
        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(widths))):
            self.up_blocks.append(ResBlock(prev + widths[i], widths[i], tdim, cdim))
            prev = widths[i]
            if i > 0:
                self.upsamples.append(nn.Conv2d(prev, widths[i - 1], 3, padding=1))
                prev = widths[i - 1]
        self.out_norm = nn.GroupNorm(_groups(widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], 1, 3, padding=1)

        if config.cond_branch:
            self.cond_in = nn.Conv2d(1, widths[0], 3, padding=1)
            self.cond_blocks = nn.ModuleList()
            self.cond_downsamples = nn.ModuleList()
            self.zero_proj = nn.ModuleList()
            prev = widths[0]
            for i, w in enumerate(widths):
                self.cond_blocks.append(ResBlock(prev, w, tdim, cdim))
                proj = nn.Conv2d(w, w, 1)
                nn.init.zeros_(proj.weight)
                nn.init.zeros_(proj.bias)
                self.zero_proj.append(proj)
                if i < len(widths) - 1:
                    self.cond_downsamples.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
                prev = w

    @property
    def labels(self):
        return self.class_embed.labels

    @property
    def n_classes(self):
        return self.class_embed.n_classes

    def embed(self, t, c):
        temb = self.time_mlp(timestep_embedding(t, self.config.time_embed_dim).to(self.in_conv.weight.dtype))
        return temb, self.class_embed(c)

    def cond_features(self, z, temb, cemb):
        feats = []
        h = self.cond_in(z)
        for i, block in enumerate(self.cond_blocks):
            h = block(h, temb, cemb)
            feats.append(self.zero_proj[i](h))
            if i < len(self.cond_downsamples):
                h = self.cond_downsamples[i](h)
        return feats

    def forward(self, x_t, t, z, c):
        """Predict the noise in ``x_t``; all inputs are batched tensors."""
        if c.min() < 0 or c.max() >= self.n_classes:
            raise InvalidArgumentError(f"class id out of range [0, {self.n_classes})")
        temb, cemb = self.embed(t, c)
        cond = self.cond_features(z, temb, cemb) if self.config.cond_branch else None
        h = self.in_conv(x_t)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, temb, cemb)
            if cond is not None:
                h = h + cond[i]
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        h = self.mid(h, temb, cemb)
        for j, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips.pop()], dim=1), temb, cemb)
            if j < len(self.upsamples):
                h = self.upsamples[j](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out_conv(F.silu(self.out_norm(h)))


def init_model(config, seed, labels):
    """Build a denoiser whose initial weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "init"))
        model = Denoiser(config, labels)
    return model


def _as_batch(a, dtype):
    a = torch.as_tensor(np.asarray(a) if not isinstance(a, torch.Tensor) else a, dtype=dtype)
    if a.ndim == 2:
        a = a[None, None]
    elif a.ndim == 3:
        a = a[:, None]
    return a


@torch.no_grad()
def predict_noise(model, x_t, t, z, c, schedule=None):
    """Single or batched forward pass on numpy/tensor inputs.

    Images may be ``(H, W)``, ``(B, H, W)`` or ``(B, 1, H, W)``; the result
    has the shape of ``x_t``.
    """
    dtype = next(model.parameters()).dtype
    shape = tuple(np.shape(x_t))
    xb, zb = _as_batch(x_t, dtype), _as_batch(z, dtype)
    side = model.config.image_side
    if xb.shape[-2:] != (side, side) or zb.shape[-2:] != (side, side):
        raise InvalidArgumentError(f"images must be {side}x{side}")
    if xb.shape != zb.shape:
        raise InvalidArgumentError("x_t and z shapes differ")
    n = xb.shape[0]
    tb = torch.as_tensor(np.broadcast_to(np.asarray(t), (n,)).copy(), dtype=torch.long)
    cb = torch.as_tensor(np.broadcast_to(np.asarray(c), (n,)).copy(), dtype=torch.long)
    if schedule is not None and (tb.min() < 1 or tb.max() > schedule.T):
        raise InvalidArgumentError(f"timestep out of range [1, {schedule.T}]")
    if cb.min() < 0 or cb.max() >= model.n_classes:
        raise InvalidArgumentError(f"unknown class id; model knows {model.n_classes} classes")
    was_training = model.training
    model.eval()
    out = model(xb, tb, zb, cb)
    model.train(was_training)
    return out.reshape(shape)


def diffusion_loss(model, x0, z, c, t, eps, schedule):
    """Mean squared error between ``eps`` and the model's prediction."""
    x_t = q_sample(x0, t, eps, schedule)
    return F.mse_loss(model(x_t, t, z, c), eps)


def training_pairs(manifest, template_ids, hp, class_index=None):
    """Augmented ``(x0, z, c)`` tensors for samples whose template is in ``template_ids``.

    ``class_index`` maps manifest labels to model class ids; samples whose
    label is absent are skipped.
    """
    ids = set(template_ids)
    if class_index is None:
        class_index = {c.label: c.class_id for c in manifest.classes}
    x0s, zs, cs = [], [], []
    for rec in sorted(manifest.samples, key=lambda r: (r.template_id, r.class_id)):
        if rec.template_id not in ids or rec.label not in class_index:
            continue
        printed = manifest.image_pixels(rec)
        template = manifest.template_pixels(rec).astype(np.float64)
        base = template if hp.x0_source == "template" else printed
        seed = derive_seed(hp.seed, "augment", rec.template_id, rec.label)
        for tpl, prn in augment((base, printed), hp.augment, seed):
            x0s.append(tpl)
            zs.append(prn)
            cs.append(class_index[rec.label])
    if not x0s:
        raise InvalidArgumentError("training partition is empty")
    x0 = torch.tensor(to_signed(np.stack(x0s)), dtype=torch.float32)[:, None]
    z = torch.tensor(to_signed(np.stack(zs)), dtype=torch.float32)[:, None]
    return x0, z, torch.tensor(cs, dtype=torch.long)


def lr_lambda(warmup, total):
    def f(step):
        if step < warmup:
            return (step + 1) / warmup
        progress = (step - warmup) / max(1, total - warmup)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))
    return f


def make_optimizer(model, hp):
    return torch.optim.AdamW(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)


def train_step(model, optimizer, x0, z, c, t, eps, schedule, grad_clip=None):
    optimizer.zero_grad(set_to_none=True)
    loss = diffusion_loss(model, x0, z, c, t, eps, schedule)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite training loss {loss.item()}")
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.item())


def fixed_batch(x0, z, c, schedule, seed, size=64):
    """A reproducible evaluation batch with its own timesteps and noise."""
    gen = seeded_rng(seed, "fixed-batch")
    idx = np.sort(gen.choice(len(x0), size=min(size, len(x0)), replace=False))
    t = torch.tensor(gen.integers(1, schedule.T + 1, size=len(idx)), dtype=torch.long)
    eps = torch.tensor(gen.standard_normal((len(idx),) + tuple(x0.shape[1:])), dtype=x0.dtype)
    return x0[idx], z[idx], c[idx], t, eps


@torch.no_grad()
def batch_loss(model, batch, schedule):
    was_training = model.training
    model.eval()
    loss = float(diffusion_loss(model, *batch[:3], batch[3], batch[4], schedule).item())
    model.train(was_training)
    return loss


@dataclass
class Checkpoint:
    model: Denoiser
    schedule: NoiseSchedule
    metadata: dict

    @property
    def config(self):
        return self.model.config

    @property
    def labels(self):
        return self.model.labels


def train(model, manifest, split, hp, schedule, class_index=None, log=None):
    """Fit ``model`` on the training partition and return a checkpoint.

    Pairs are augmented once up front (``hp.augment.n_copies`` per sample);
    every step draws fresh timesteps uniform on [1, T] and standard-normal
    noise. The learning rate warms up linearly, then decays on a cosine.
    """
    if not split.train:
        raise InvalidArgumentError("split has an empty training partition")
    x0, z, c = training_pairs(manifest, split.train, hp, class_index)
    monitor_ids = split.val if split.val else split.train
    vx0, vz, vc = training_pairs(manifest, monitor_ids, hp, class_index)
    monitor = fixed_batch(vx0, vz, vc, schedule, hp.seed)
    init_loss = batch_loss(model, monitor, schedule)

    n = len(x0)
    steps_per_epoch = math.ceil(n / hp.batch_size)
    total = steps_per_epoch * hp.epochs
    optimizer = make_optimizer(model, hp)
    sched = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda(hp.warmup_steps, total))
    noise_gen = torch.Generator().manual_seed(derive_seed(hp.seed, "train-noise"))
    curve = []
    model.train()
    for epoch in range(hp.epochs):
        order = torch.from_numpy(seeded_rng(hp.seed, "epoch", epoch).permutation(n))
        total_loss = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * hp.batch_size:(s + 1) * hp.batch_size]
            t = torch.randint(1, schedule.T + 1, (len(idx),), generator=noise_gen)
            eps = torch.randn(x0[idx].shape, generator=noise_gen, dtype=x0.dtype)
            total_loss += train_step(model, optimizer, x0[idx], z[idx], c[idx], t, eps,
                                     schedule, hp.grad_clip) * len(idx)
            sched.step()
        curve.append(total_loss / n)
        if log is not None:
            log(f"epoch {epoch + 1}/{hp.epochs} loss {curve[-1]:.5f}")
    model.eval()
    final_loss = batch_loss(model, monitor, schedule)
    metadata = {
        "seed": hp.seed,
        "epochs": hp.epochs,
        "steps": total,
        "hyperparams": hp.to_dict(),
        "loss_curve": curve,
        "loss_curve_smoothed": np.minimum.accumulate(curve).tolist(),
        "monitor_loss_init": init_loss,
        "monitor_loss_final": final_loss,
        "n_train_pairs": n,
    }
    return Checkpoint(model, schedule, metadata)


def save_checkpoint(path, ckpt, extra=None):
    # keys that were top-level entries when the checkpoint was loaded stay top-level
    top = set(ckpt.metadata.get("_top_level", ())) | set(extra or ())
    meta = {
        "config": ckpt.model.config.to_dict(),
        "schedule": ckpt.schedule.to_dict(),
        "classes": [
            {"class_id": i, "label": lbl} for i, lbl in enumerate(ckpt.model.labels)
        ],
        "identity": {
            "mode": ckpt.model.config.identity_mode,
            "sources": ckpt.model.class_embed.sources,
            "reprints": ckpt.model.class_embed.reprints,
        },
        "dtype": str(next(ckpt.model.parameters()).dtype).replace("torch.", ""),
        "training": {k: v for k, v in ckpt.metadata.items() if k not in top and k != "_top_level"},
    }
    meta.update({k: ckpt.metadata[k] for k in top if k in ckpt.metadata})
    if extra:
        meta.update(extra)
    return save_archive(path, "denoiser", meta, ckpt.model.state_dict())


def load_checkpoint(path):
    meta, state = load_archive(path, "denoiser")
    config = DenoiserConfig.from_dict(meta["config"])
    labels = [c["label"] for c in sorted(meta["classes"], key=lambda c: c["class_id"])]
    model = Denoiser(config, labels)
    model.to(getattr(torch, meta.get("dtype", "float32")))
    model.load_state_dict(state)
    model.eval()
    training = dict(meta.get("training", {}))
    extra = {k: v for k, v in meta.items()
             if k not in ("config", "schedule", "classes", "identity", "dtype", "training",
                          "format_version", "kind", "params")}
    training.update(extra)
    training["_top_level"] = sorted(extra)
    return Checkpoint(model, NoiseSchedule.from_dict(meta["schedule"]), training)
