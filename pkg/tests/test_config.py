import pytest

from diffcdp.config import DEFAULTS, load_config, resolve_config
from diffcdp.errors import InvalidConfigurationError
from diffcdp.seeding import derive_seed


def test_defaults_resolve():
    cfg = resolve_config()
    assert cfg.schedule().T == 200
    assert cfg.n_trials == 50
    assert [c.label for c in cfg.classes()] == ["HP55", "HP76", "HP55_55", "HP55_76", "HP76_76", "HP76_55"]
    assert cfg.raw["dataset"]["n_templates"] == 120


def test_fingerprint_ignores_output_and_workers():
    a = resolve_config({"output_dir": "x", "workers": 1})
    b = resolve_config({"output_dir": "y", "workers": 4})
    c = resolve_config({"train": {"epochs": 5}})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()
    assert len(a.fingerprint()) == 16


def test_yaml_round_trip(tmp_path):
    cfg = resolve_config({"seed": 9, "train": {"lr": 1e-3}})
    (tmp_path / "c.yaml").write_text(cfg.to_yaml())
    again = load_config(tmp_path / "c.yaml")
    assert again.raw == cfg.raw and again.fingerprint() == cfg.fingerprint()
    cfg.write(tmp_path / "out")
    assert (tmp_path / "out" / "fingerprint.txt").read_text().strip() == cfg.fingerprint()


def test_exponent_floats_parse(tmp_path):
    (tmp_path / "c.yaml").write_text("train:\n  lr: 2e-4\n")
    assert load_config(tmp_path / "c.yaml").raw["train"]["lr"] == 2e-4
    assert load_config(None, ["train.lr=5e-3"]).raw["train"]["lr"] == 5e-3


def test_overrides_apply_in_order():
    cfg = load_config(None, ["seed=4", "seed=6", "dataset.side=16", "eval.augment.crop_side=16"])
    assert cfg.seed == 6 and cfg.raw["dataset"]["side"] == 16


@pytest.mark.parametrize("override,field", [
    ({"bogus": 1}, "bogus"),
    ({"train": {"epochs": 0}}, "train.epochs"),
    ({"dataset": {"side": 30}}, "model"),
    ({"schedule": {"beta_end": 2.0}}, "schedule"),
    ({"dataset": {"classes": ["HP55", "HP55_99"]}}, "dataset.classes"),
    ({"model": {"identity_mode": "clip"}}, "model"),
])
def test_invalid_fields_named(override, field):
    with pytest.raises(InvalidConfigurationError) as info:
        resolve_config(override)
    assert info.value.field.startswith(field)


def test_seed_tree():
    cfg = resolve_config({"seed": 11})
    assert cfg.seed_for("dataset") == derive_seed(11, "dataset")
    assert cfg.seed_for("init", "main") != cfg.seed_for("init", "unseen")
    assert len({cfg.seed_for(k) for k in ("dataset", "split", "classify", "codec")}) == 4


def test_defaults_not_mutated():
    before = repr(DEFAULTS)
    resolve_config({"train": {"epochs": 3}, "dataset": {"channels": {"55": {"noise_std": 0.1}}}})
    assert repr(DEFAULTS) == before


def test_channel_override_merges_per_printer():
    cfg = resolve_config({"dataset": {"channels": {"55": {"noise_std": 0.1}}}})
    ch = cfg.channels()
    assert ch["55"].noise_std == 0.1 and ch["55"].blur_sigma == 0.6
    assert ch["76"] == resolve_config().channels()["76"]
