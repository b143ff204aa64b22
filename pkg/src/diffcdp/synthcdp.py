"""Synthetic copy detection patterns.

Binary templates, a five-parameter print-and-scan channel, the Otsu
template-estimation attack, and the six-class printer dataset.

Pixel convention: 0 is ink (dark), 1 is paper (light), for templates and
prints alike. A print through the identity channel therefore equals its
template cast to float.
"""

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateInputError, InvalidArgumentError, InvalidConfigurationError
from .seeding import derive_seed, rng as seeded_rng

MIN_SIDE = 8
SCHEMA_VERSION = 1
_CROSS = ndimage.generate_binary_structure(2, 1)
_LABEL_RE = re.compile(r"^HP(\d{2})(?:_(\d{2}))?$")


@dataclass(frozen=True)
class BinaryTemplate:
    pixels: np.ndarray
    template_id: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise InvalidArgumentError(f"template must be square, got shape {px.shape}")
        if px.shape[0] < MIN_SIDE:
            raise InvalidArgumentError(f"template side must be >= {MIN_SIDE}, got {px.shape[0]}")
        if not np.all((px == 0) | (px == 1)):
            raise InvalidArgumentError("template pixels must be 0 or 1")
        object.__setattr__(self, "pixels", px.astype(np.uint8))

    @property
    def side(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PrintedCdp:
    pixels: np.ndarray
    template_id: int = 0
    class_id: Optional[int] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise InvalidArgumentError(f"printed CDP must be 2-D, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidArgumentError("printed CDP values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class ChannelParams:
    """Print-and-scan channel.

    ``shift`` is a fixed misregistration; ``shift_jitter`` adds a per-print
    uniform offset in ``[-shift_jitter, shift_jitter]`` on each axis. The
    total is clipped to [-0.5, 0.5]. ``stream`` is mixed into the print seed
    so two channels fed the same seed draw independent noise.
    """

    dot_gain: float = 0.0
    blur_sigma: float = 0.0
    noise_std: float = 0.0
    gamma: float = 1.0
    shift: tuple = (0.0, 0.0)
    shift_jitter: float = 0.0
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shift", tuple(float(s) for s in self.shift))
        if not -0.3 <= self.dot_gain <= 0.3:
            raise InvalidArgumentError(f"dot_gain must be in [-0.3, 0.3], got {self.dot_gain}")
        if self.blur_sigma < 0:
            raise InvalidArgumentError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.noise_std < 0:
            raise InvalidArgumentError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.gamma <= 0:
            raise InvalidArgumentError(f"gamma must be > 0, got {self.gamma}")
        if len(self.shift) != 2 or any(abs(s) > 0.5 for s in self.shift):
            raise InvalidArgumentError(f"shift must be a 2-vector in [-0.5, 0.5], got {self.shift}")
        if not 0 <= self.shift_jitter <= 0.5:
            raise InvalidArgumentError(f"shift_jitter must be in [0, 0.5], got {self.shift_jitter}")
        if self.stream < 0:
            raise InvalidArgumentError("stream must be non-negative")

    @property
    def is_identity(self):
        return (self.dot_gain == 0 and self.blur_sigma == 0 and self.noise_std == 0
                and self.gamma == 1 and self.shift == (0.0, 0.0) and self.shift_jitter == 0)

    def to_dict(self):
        d = asdict(self)
        d["shift"] = list(self.shift)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


IDENTITY_CHANNEL = ChannelParams()


def default_channels():
    """The two authentic printer channels, keyed by printer code."""
    return {
        "55": ChannelParams(dot_gain=0.12, blur_sigma=0.6, noise_std=0.03, gamma=1.1,
                            shift_jitter=0.25, stream=55),
        "76": ChannelParams(dot_gain=-0.08, blur_sigma=0.9, noise_std=0.02, gamma=0.9,
                            shift_jitter=0.25, stream=76),
    }


@dataclass(frozen=True)
class PrinterClass:
    class_id: int
    label: str
    source_channel: ChannelParams
    reprint_channel: Optional[ChannelParams] = None
    is_authentic: bool = True

    def __post_init__(self):
        m = _LABEL_RE.match(self.label)
        if m is None:
            raise InvalidConfigurationError(f"label {self.label!r} is not HPXX or HPXX_YY", "label")
        counterfeit_label = m.group(2) is not None
        if counterfeit_label == self.is_authentic:
            raise InvalidConfigurationError(
                f"label {self.label!r} disagrees with is_authentic={self.is_authentic}", "is_authentic")
        if (self.reprint_channel is not None) != counterfeit_label:
            raise InvalidConfigurationError(
                f"class {self.label!r}: reprint_channel must be present iff counterfeit",
                "reprint_channel")

    @property
    def source_printer(self):
        return _LABEL_RE.match(self.label).group(1)

    @property
    def reprint_printer(self):
        return _LABEL_RE.match(self.label).group(2)

    @property
    def claimed_label(self):
        """Label of the authentic printer a probe of this class claims to come from."""
        return "HP" + self.source_printer

    def to_dict(self):
        return {
            "class_id": self.class_id,
            "label": self.label,
            "is_authentic": self.is_authentic,
            "source_channel": self.source_channel.to_dict(),
            "reprint_channel": None if self.reprint_channel is None else self.reprint_channel.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        rc = d.get("reprint_channel")
        return cls(
            class_id=int(d["class_id"]),
            label=d["label"],
            source_channel=ChannelParams.from_dict(d["source_channel"]),
            reprint_channel=None if rc is None else ChannelParams.from_dict(rc),
            is_authentic=bool(d["is_authentic"]),
        )


def make_classes(labels, channels=None):
    """Build a contiguous class table from labels such as ``["HP55", "HP55_76"]``."""
    channels = default_channels() if channels is None else channels
    out = []
    for i, label in enumerate(labels):
        m = _LABEL_RE.match(label)
        if m is None:
            raise InvalidConfigurationError(f"bad class label {label!r}", "classes")
        src, dst = m.group(1), m.group(2)
        for code in (src, dst):
            if code is not None and code not in channels:
                raise InvalidConfigurationError(f"no channel defined for printer {code}", "channels")
        out.append(PrinterClass(i, label, channels[src],
                                None if dst is None else channels[dst], dst is None))
    return out


DEFAULT_LABELS = ("HP55", "HP76", "HP55_55", "HP55_76", "HP76_76", "HP76_55")


def default_classes():
    return make_classes(DEFAULT_LABELS)


def validate_classes(classes):
    if not classes:
        raise InvalidConfigurationError("class table is empty", "classes")
    ids = [c.class_id for c in classes]
    if ids != list(range(len(classes))):
        raise InvalidConfigurationError(f"class ids must be 0..K-1 in order, got {ids}", "classes")
    labels = [c.label for c in classes]
    if len(set(labels)) != len(labels):
        raise InvalidConfigurationError("duplicate class labels", "classes")
    # an authentic class fixes the channel of its printer code; counterfeits must agree
    by_code = {c.source_printer: c.source_channel for c in classes if c.is_authentic}
    if len(set(by_code.values())) != len(by_code):
        raise InvalidConfigurationError("two authentic printers share identical channel parameters",
                                        "channels")
    for c in classes:
        pairs = [(c.source_printer, c.source_channel)]
        if not c.is_authentic:
            pairs.append((c.reprint_printer, c.reprint_channel))
        for code, ch in pairs:
            if code in by_code and by_code[code] != ch:
                raise InvalidConfigurationError(
                    f"class {c.label}: channel for HP{code} differs from the authentic HP{code} class",
                    "channels")


def gen_template(seed, side=32, template_id=0):
    """Draw an i.i.d. Bernoulli(1/2) binary template."""
    if side < MIN_SIDE:
        raise InvalidArgumentError(f"side must be >= {MIN_SIDE}, got {side}")
    bits = seeded_rng(seed, "template").integers(0, 2, size=(side, side), dtype=np.uint8)
    return BinaryTemplate(bits, template_id)


def _apply_dot_gain(pixels, dot_gain, gen):
    ink = pixels == 0
    if dot_gain > 0:
        border = ndimage.binary_dilation(ink, _CROSS) & ~ink
        ink = ink | (border & (gen.random(ink.shape) < dot_gain))
    elif dot_gain < 0:
        edge = ink & ~ndimage.binary_erosion(ink, _CROSS, border_value=1)
        ink = ink & ~(edge & (gen.random(ink.shape) < -dot_gain))
    return np.where(ink, 0.0, 1.0)


def _render(pixels, channel, seed):
    """Run the channel; return (pre-clamp output, noiseless output)."""
    gen = seeded_rng(seed, "print", channel.stream)
    v = _apply_dot_gain(pixels, channel.dot_gain, gen)
    dy, dx = channel.shift
    if channel.shift_jitter > 0:
        jy, jx = gen.uniform(-channel.shift_jitter, channel.shift_jitter, size=2)
        dy, dx = float(np.clip(dy + jy, -0.5, 0.5)), float(np.clip(dx + jx, -0.5, 0.5))
    if dy != 0 or dx != 0:
        v = ndimage.shift(v, (dy, dx), order=1, mode="nearest")
    if channel.blur_sigma > 0:
        v = ndimage.gaussian_filter(v, channel.blur_sigma, mode="nearest")
    if channel.gamma != 1:
        v = np.clip(v, 0.0, 1.0) ** channel.gamma
    clean = v
    if channel.noise_std > 0:
        v = v + gen.normal(0.0, channel.noise_std, size=v.shape)
    return v, clean


def print_cdp(template, channel, seed, class_id=None):
    """Print ``template`` through ``channel``.

    Stages, in order: dot gain (each paper pixel 4-adjacent to ink becomes
    ink with probability ``dot_gain`` when positive; each ink pixel on an
    ink boundary becomes paper with probability ``-dot_gain`` when
    negative), sub-pixel shift, Gaussian blur, gamma ``v ** gamma``,
    additive Gaussian noise, clamp to [0, 1].
    """
    raw, _ = _render(template.pixels, channel, seed)
    return PrintedCdp(np.clip(raw, 0.0, 1.0), template.template_id, class_id)


def otsu_threshold_bin(values, bins=256):
    """Index ``k`` of the last bin of the dark class under Otsu's criterion."""
    idx = np.minimum((np.asarray(values, dtype=np.float64).ravel() * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx, minlength=bins).astype(np.float64)
    p = hist / hist.sum()
    centers = np.arange(bins, dtype=np.float64)
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * centers)[:-1]
    mt = float(np.sum(p * centers))
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 - m0) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between)), idx


def estimate_template(printed, bins=256):
    """Binarize a print at its Otsu threshold (ties toward the lower bin)."""
    px = printed.pixels if isinstance(printed, PrintedCdp) else np.asarray(printed, dtype=np.float64)
    if np.unique(px).size < 2:
        raise DegenerateInputError("cannot estimate a template from a constant image")
    k, idx = otsu_threshold_bin(px, bins)
    bits = (idx.reshape(px.shape) > k).astype(np.uint8)
    return BinaryTemplate(bits, getattr(printed, "template_id", 0))


def make_counterfeit(template, src, dst, seed, class_id=None):
    """Print with ``src``, estimate the template by Otsu, reprint with ``dst``."""
    first = print_cdp(template, src, derive_seed(seed, "counterfeit", "first"))
    estimate = estimate_template(first)
    estimate = BinaryTemplate(estimate.pixels, template.template_id)
    return print_cdp(estimate, dst, derive_seed(seed, "counterfeit", "second"), class_id)


def quantize(pixels):
    """Round to the 8-bit grid used for stored images."""
    return np.round(np.asarray(pixels, dtype=np.float64) * 255.0) / 255.0


@dataclass
class SampleRecord:
    template_id: int
    class_id: int
    label: str
    image: str
    template: str
    seed: int


@dataclass
class DatasetManifest:
    """Dataset index plus the pixel arrays it references.

    ``arrays`` maps each relative image path in the records to its pixels
    (templates as uint8 bits, prints as 8-bit-quantized floats).
    """

    classes: list
    side: int
    seed: int
    n_templates: int
    samples: list
    arrays: dict = field(default_factory=dict, repr=False)

    def template_ids(self):
        return sorted({s.template_id for s in self.samples})

    def template_pixels(self, rec):
        return self.arrays[rec.template]

    def image_pixels(self, rec):
        return self.arrays[rec.image]

    def class_by_label(self, label):
        for c in self.classes:
            if c.label == label:
                return c
        raise KeyError(label)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "side": self.side,
            "seed": self.seed,
            "n_templates": self.n_templates,
            "classes": [c.to_dict() for c in self.classes],
            "samples": [asdict(s) for s in self.samples],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, root):
        root = Path(root)
        for rel, px in sorted(self.arrays.items()):
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            if px.dtype == np.uint8:
                data = px * 255
            else:
                data = np.round(px * 255.0).astype(np.uint8)
            Image.fromarray(data.astype(np.uint8), mode="L").save(path, format="PNG")
        (root / "manifest.json").write_text(self.to_json())
        return root / "manifest.json"

    @classmethod
    def from_dict(cls, d, arrays=None):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidConfigurationError(
                f"unsupported manifest schema {d.get('schema_version')!r}", "schema_version")
        return cls(
            classes=[PrinterClass.from_dict(c) for c in d["classes"]],
            side=int(d["side"]),
            seed=int(d["seed"]),
            n_templates=int(d["n_templates"]),
            samples=[SampleRecord(**s) for s in d["samples"]],
            arrays={} if arrays is None else arrays,
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        manifest = cls.from_dict(json.loads(path.read_text()))
        root = path.parent
        for s in manifest.samples:
            for rel, is_template in ((s.template, True), (s.image, False)):
                if rel in manifest.arrays:
                    continue
                data = np.asarray(Image.open(root / rel).convert("L"))
                manifest.arrays[rel] = (data // 255).astype(np.uint8) if is_template else data / 255.0
        return manifest


def _sample_print(template, cls, seed, tid):
    if cls.is_authentic:
        p = print_cdp(template, cls.source_channel, derive_seed(seed, "print", tid, cls.label), cls.class_id)
    else:
        p = make_counterfeit(template, cls.source_channel, cls.reprint_channel,
                             derive_seed(seed, "print", tid, cls.label), cls.class_id)
    return p


def build_dataset(classes, n_templates, seed, side=32):
    """One sample per class for every template id."""
    validate_classes(classes)
    if n_templates < 1:
        raise InvalidArgumentError("n_templates must be >= 1")
    samples, arrays = [], {}
    for tid in range(n_templates):
        template = gen_template(derive_seed(seed, "template", tid), side, tid)
        tpath = f"templates/{tid:05d}.png"
        arrays[tpath] = template.pixels
        for cls in classes:
            p = _sample_print(template, cls, seed, tid)
            ipath = f"images/{cls.label}/{tid:05d}.png"
            arrays[ipath] = quantize(p.pixels)
            samples.append(SampleRecord(tid, cls.class_id, cls.label, ipath, tpath,
                                        derive_seed(seed, "print", tid, cls.label)))
    return DatasetManifest(list(classes), side, seed, n_templates, samples, arrays)
