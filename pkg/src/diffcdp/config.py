"""Run configuration: YAML in, fully resolved dataclasses out.

Every stochastic step takes its seed from the root seed:

    dataset   derive_seed(root, "dataset")          templates and prints
    split     derive_seed(root, "split")            template-id partition
    init      derive_seed(root, "init", variant)    denoiser weights
    train     derive_seed(root, "train", variant)   augmentation, batches, noise
    classify  derive_seed(root, "classify")         per-probe trial streams
    codec     derive_seed(root, "codec", corpus)    codec study

``variant`` names the trained model (``main``, ``unseen``, ``no_template``,
``index``, ``structured``).
"""

import copy
import dataclasses
import hashlib
import json
import re
from pathlib import Path

import yaml

from .codec import CodecConfig, CodecHyperparams
from .denoiser import DenoiserConfig
from .errors import CdpError, InvalidConfigurationError
from .evaluation.augment import AugmentParams
from .schedule import NoiseSchedule
from .seeding import derive_seed
from .synthcdp import DEFAULT_LABELS, ChannelParams, default_channels, make_classes, validate_classes


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot, like ``2e-4``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _yaml_load(text):
    return yaml.load(text, Loader=_Loader)

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "workers": 1,
    "dataset": {
        "n_templates": 120,
        "side": 32,
        "classes": list(DEFAULT_LABELS),
        "channels": {code: ch.to_dict() for code, ch in default_channels().items()},
    },
    "schedule": {"T": 200, "beta_start": 1e-4, "beta_end": 0.02, "kind": "linear"},
    "model": {
        "base_width": 32,
        "depth": 3,
        "time_embed_dim": 64,
        "class_embed_dim": 64,
        "identity_mode": "structured",
        "cond_branch": True,
    },
    "train": {
        "epochs": 30,
        "batch_size": 32,
        "lr": 2e-4,
        "warmup_steps": 200,
        "weight_decay": 0.0,
        "grad_clip": 1.0,
    },
    "classify": {"n_trials": 50},
    "eval": {
        "fractions": [0.7, 0.1, 0.2],
        "augment": AugmentParams().to_dict(),
        "unseen_train_classes": ["HP55", "HP76", "HP55_55", "HP76_76"],
        "known_counterfeits": ["HP55_55", "HP76_76"],
        "unseen_counterfeits": ["HP55_76", "HP76_55"],
        "baselines": ["ncc", "ssim"],
    },
    "codec": {
        "n_train": 256,
        "n_heldout": 64,
        "latent_side": 16,
        "latent_channels": 4,
        "width": 32,
        "epochs": 40,
        "batch_size": 32,
        "lr": 2e-3,
    },
}

# fields that do not change results and stay out of the fingerprint
_UNFINGERPRINTED = ("output_dir", "workers")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise InvalidConfigurationError("unknown configuration field", where)
        if key == "channels" and isinstance(value, dict):
            # printers merge field by field; unknown printer names add new channels
            out[key] = {name: {**base[key].get(name, {}), **(ch if isinstance(ch, dict) else {})}
                        if isinstance(ch, dict) else copy.deepcopy(ch)
                        for name, ch in {**base[key], **value}.items()}
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfigurationError("expected a mapping", where)
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def set_dotted(raw, dotted, value):
    """Apply a ``section.field=value`` override to a raw config mapping."""
    node = raw
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise InvalidConfigurationError("cannot override inside a non-mapping", dotted)
    node[parts[-1]] = _yaml_load(value) if isinstance(value, str) else value
    return raw


@dataclasses.dataclass
class RunConfig:
    raw: dict

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def output_dir(self):
        return Path(self.raw["output_dir"])

    @property
    def workers(self):
        return int(self.raw["workers"])

    def seed_for(self, *keys):
        return derive_seed(self.seed, *keys)

    def channels(self):
        return {str(code): ChannelParams.from_dict(ch) for code, ch in self.raw["dataset"]["channels"].items()}

    def classes(self, labels=None):
        labels = self.raw["dataset"]["classes"] if labels is None else labels
        return make_classes(labels, self.channels())

    def schedule(self):
        return NoiseSchedule.from_dict(self.raw["schedule"])

    def denoiser_config(self, **overrides):
        d = dict(self.raw["model"], image_side=self.raw["dataset"]["side"])
        d.update(overrides)
        return DenoiserConfig(**d)

    def augment(self):
        return AugmentParams.from_dict(self.raw["eval"]["augment"])

    def codec_config(self):
        c = self.raw["codec"]
        return CodecConfig(side=self.raw["dataset"]["side"], latent_side=c["latent_side"],
                           latent_channels=c["latent_channels"], width=c["width"])

    def codec_hyperparams(self, corpus):
        c = self.raw["codec"]
        return CodecHyperparams(epochs=c["epochs"], batch_size=c["batch_size"], lr=c["lr"],
                                seed=self.seed_for("codec", corpus))

    @property
    def n_trials(self):
        return int(self.raw["classify"]["n_trials"])

    def resolved(self):
        return copy.deepcopy(self.raw)

    def fingerprint(self):
        d = {k: v for k, v in self.raw.items() if k not in _UNFINGERPRINTED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_yaml(self):
        return yaml.safe_dump(self.resolved(), sort_keys=True)

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.resolved.yaml").write_text(self.to_yaml())
        (directory / "fingerprint.txt").write_text(self.fingerprint() + "\n")


def _check(field, ok, message):
    if not ok:
        raise InvalidConfigurationError(message, field)


def resolve_config(overrides=None):
    """Merge ``overrides`` into the defaults and validate every section."""
    raw = _merge(DEFAULTS, overrides or {})
    _check("seed", isinstance(raw["seed"], int) and raw["seed"] >= 0, "must be a non-negative integer")
    _check("workers", isinstance(raw["workers"], int) and raw["workers"] >= 1, "must be >= 1")
    ds = raw["dataset"]
    _check("dataset.n_templates", isinstance(ds["n_templates"], int) and ds["n_templates"] >= 3,
           "must be an integer >= 3")
    _check("dataset.side", isinstance(ds["side"], int) and ds["side"] >= 8, "must be an integer >= 8")
    _check("dataset.classes", isinstance(ds["classes"], list) and ds["classes"], "must be a non-empty list")
    _check("dataset.channels", isinstance(ds["channels"], dict), "must be a mapping")
    cfg = RunConfig(raw)
    sections = [
        ("dataset.channels", cfg.channels),
        ("dataset.classes", lambda: validate_classes(cfg.classes())),
        ("schedule", cfg.schedule),
        ("model", cfg.denoiser_config),
        ("eval.augment", cfg.augment),
        ("codec", cfg.codec_config),
    ]
    for field, build in sections:
        try:
            build()
        except InvalidConfigurationError as exc:
            raise InvalidConfigurationError(str(exc), exc.field if exc.field and "." in exc.field else field) from exc
        except (CdpError, TypeError, ValueError) as exc:
            raise InvalidConfigurationError(str(exc), field) from exc
    tr = raw["train"]
    for key in ("epochs", "batch_size"):
        _check(f"train.{key}", isinstance(tr[key], int) and tr[key] >= 1, "must be an integer >= 1")
    _check("train.lr", isinstance(tr["lr"], (int, float)) and tr["lr"] >= 0, "must be >= 0")
    _check("classify.n_trials", isinstance(raw["classify"]["n_trials"], int) and raw["classify"]["n_trials"] >= 1,
           "must be an integer >= 1")
    ev = raw["eval"]
    _check("eval.fractions", isinstance(ev["fractions"], list) and len(ev["fractions"]) == 3
           and all(isinstance(f, (int, float)) and f > 0 for f in ev["fractions"])
           and abs(sum(ev["fractions"]) - 1) < 1e-9, "must be three positive numbers summing to 1")
    _check("eval.augment.crop_side", ev["augment"]["crop_side"] <= ds["side"], "exceeds dataset.side")
    labels = set(ds["classes"])
    for key in ("unseen_train_classes", "known_counterfeits", "unseen_counterfeits"):
        _check(f"eval.{key}", set(ev[key]) <= labels, "names classes absent from dataset.classes")
    _check("eval.baselines", set(ev["baselines"]) <= {"ncc", "ssim"}, "supported baselines are ncc, ssim")
    return cfg


def load_config(path=None, overrides=()):
    """Read a YAML config (or defaults when ``path`` is None) and apply ``key=value`` overrides."""
    raw = {}
    if path is not None:
        # an unreadable file is an I/O failure, not a configuration error
        text = Path(path).read_text()
        try:
            raw = _yaml_load(text) or {}
        except yaml.YAMLError as exc:
            raise InvalidConfigurationError(f"invalid YAML: {exc}", str(path)) from exc
        if not isinstance(raw, dict):
            raise InvalidConfigurationError("top level must be a mapping", str(path))
    for item in overrides:
        if "=" not in item:
            raise InvalidConfigurationError("override must look like section.field=value", item)
        key, value = item.split("=", 1)
        set_dotted(raw, key.strip(), value)
    return resolve_config(raw)
