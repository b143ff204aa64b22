import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcdp.codec import (
    CodecConfig,
    CodecHyperparams,
    generic_corpus,
    identity_codec,
    load_codec,
    recon_mse,
    save_codec,
    train_codec,
)
from diffcdp.errors import CheckpointFormatError, InvalidArgumentError
from diffcdp.synthcdp import gen_template


def _templates(n, side=16, offset=0):
    return [gen_template(offset + i, side).pixels.astype(np.float64) for i in range(n)]


def test_identity_codec_is_lossless():
    codec = identity_codec(16)
    assert recon_mse(codec, _templates(8)) < 1e-10
    assert recon_mse(codec, generic_corpus(4, 16, 0)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), perm_seed=st.integers(0, 1000))
def test_recon_mse_nonnegative_and_permutation_invariant(seed, perm_seed):
    codec = train_codec(_templates(4), CodecHyperparams(epochs=0, seed=seed),
                        CodecConfig(side=16, latent_side=8, width=8))[0]
    imgs = _templates(6, offset=seed)
    perm = np.random.default_rng(perm_seed).permutation(6)
    a = recon_mse(codec, imgs)
    assert a >= 0
    assert recon_mse(codec, [imgs[i] for i in perm]) == a


def test_generic_corpus_range_and_determinism():
    g = generic_corpus(5, 16, 3)
    assert g.min() == 0.0 and g.max() == 1.0
    assert np.array_equal(g, generic_corpus(5, 16, 3))
    assert not np.array_equal(g, generic_corpus(5, 16, 4))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        CodecConfig(side=32, latent_side=12)
    with pytest.raises(InvalidArgumentError):
        CodecConfig(side=24, latent_side=8)
    with pytest.raises(InvalidArgumentError):
        CodecConfig(side=32, latent_side=16, linear=True)
    with pytest.raises(InvalidArgumentError):
        train_codec([])


HP = CodecHyperparams(epochs=20, batch_size=16, lr=5e-3, seed=1)


@pytest.fixture(scope="module")
def fitted():
    cfg = CodecConfig(side=16, latent_side=8, width=16)
    return train_codec(_templates(128), HP, cfg), cfg


def test_training_reduces_loss(fitted):
    (codec, curve), _ = fitted
    # short run on a small corpus; the full-size drop is checked with the acceptance suite
    assert curve[-1] * 2 <= curve[0]
    assert curve[-1] < 0.25


def test_training_deterministic(fitted):
    (codec, curve), cfg = fitted
    again, curve2 = train_codec(_templates(128), HP, cfg)
    assert curve == curve2


def test_round_trip(fitted, tmp_path):
    (codec, _), _ = fitted
    path = save_codec(tmp_path / "c.ckpt", codec, {"note": "x"})
    loaded, meta = load_codec(path)
    assert meta["note"] == "x" and loaded.corpus_tag == "templates"
    imgs = _templates(4, offset=500)
    assert recon_mse(loaded, imgs) == recon_mse(codec, imgs)
    with pytest.raises(CheckpointFormatError):
        from diffcdp.denoiser import load_checkpoint
        load_checkpoint(path)


def test_side_mismatch_rejected(fitted):
    (codec, _), _ = fitted
    with pytest.raises(InvalidArgumentError):
        recon_mse(codec, _templates(2, side=32))
