import time

import numpy as np
import pytest
import torch

from diffcdp.config import resolve_config
from diffcdp.denoiser import DenoiserConfig
from diffcdp.schedule import make_schedule, to_signed


class OracleDenoiser:
    """Returns the exact injected noise for ``true_class`` and noise + ``bias`` otherwise.

    The oracle recovers the noise from ``x_t`` because it knows ``x0``.
    Every call is logged so tests can inspect the (t, x_t) stream.
    """

    def __init__(self, x0, true_class, schedule, bias=0.5):
        self.x0 = to_signed(np.asarray(x0, dtype=np.float64))
        self.true_class = true_class
        self.schedule = schedule
        self.bias = bias
        self.calls = []

    def __call__(self, x_t, t, z, c):
        self.calls.append((x_t.clone(), t.clone(), c.clone()))
        ab = self.schedule.alpha_bar_at(t.numpy())[:, None, None]
        eps = (x_t[:, 0].numpy() - np.sqrt(ab) * self.x0) / np.sqrt(1.0 - ab)
        eps = eps + self.bias * (c.numpy() != self.true_class)[:, None, None]
        return torch.from_numpy(eps)[:, None]


@pytest.fixture(scope="session")
def schedule():
    return make_schedule(200, 1e-4, 0.02)


@pytest.fixture
def tiny_config():
    return DenoiserConfig(base_width=8, depth=2, time_embed_dim=8, class_embed_dim=8, image_side=8)


@pytest.fixture
def tiny_run_config(tmp_path):
    """A full pipeline config small enough to train in seconds."""
    return resolve_config({
        "seed": 3,
        "output_dir": str(tmp_path / "run"),
        "dataset": {"n_templates": 10, "side": 16},
        "schedule": {"T": 50},
        "model": {"base_width": 8, "depth": 2, "time_embed_dim": 16, "class_embed_dim": 16},
        "train": {"epochs": 2, "batch_size": 16, "warmup_steps": 5},
        "classify": {"n_trials": 4},
        "eval": {"augment": {"n_copies": 1, "crop_side": 16}},
        "codec": {"n_train": 16, "n_heldout": 8, "latent_side": 8, "epochs": 2},
    })


# acceptance bookkeeping: criterion number -> (passed, detail)
CRITERIA = {}


def record_criterion(number, title, passed, detail):
    CRITERIA[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


def run_main_pipeline(out):
    """synth -> train -> eval(main) with the default configuration; returns (config, report path, seconds)."""
    from diffcdp.cli import cmd_eval, cmd_synth, cmd_train

    config = resolve_config({"output_dir": str(out)})
    start = time.perf_counter()
    cmd_synth(config)
    cmd_train(config)
    report = cmd_eval(config, "main")
    return config, report, time.perf_counter() - start


@pytest.fixture(scope="session")
def main_run(tmp_path_factory):
    return run_main_pipeline(tmp_path_factory.mktemp("main") / "run")


@pytest.fixture(scope="session")
def unseen_run(main_run):
    from diffcdp.cli import cmd_eval, cmd_train

    config = main_run[0]
    cmd_train(config, variant="unseen")
    return config, cmd_eval(config, "unseen_counterfeit")


def gradient_errors(config, schedule, n_params=24, h=1e-5, seed=0):
    """Relative errors between autograd and central differences of the training loss.

    Runs in double precision. The zero projections get random weights first so
    the conditioning branch carries gradient too. Parameters are drawn at
    random among those whose gradient exceeds 1e-6, where a relative error is
    meaningful.
    """
    from diffcdp.denoiser import diffusion_loss, init_model
    from diffcdp.synthcdp import DEFAULT_LABELS

    model = init_model(config, seed, list(DEFAULT_LABELS)).double()
    with torch.no_grad():
        for p in model.zero_proj.parameters():
            p.copy_(torch.randn(p.shape, generator=torch.Generator().manual_seed(seed), dtype=p.dtype) * 0.2)
    g = torch.Generator().manual_seed(seed + 1)
    side = config.image_side
    x0 = torch.randint(0, 2, (4, 1, side, side), generator=g).double() * 2 - 1
    z = torch.rand(4, 1, side, side, generator=g, dtype=torch.float64) * 2 - 1
    c = torch.tensor([0, 2, 3, 5])
    t = torch.tensor([3, 50, 120, 199])
    eps = torch.randn(4, 1, side, side, generator=g, dtype=torch.float64)

    def loss_fn():
        return diffusion_loss(model, x0, z, c, t, eps, schedule)

    model.zero_grad()
    loss_fn().backward()
    flat = [(name, p, i) for name, p in model.named_parameters() for i in range(p.numel())
            if abs(p.grad.view(-1)[i].item()) > 1e-6]
    picks = np.random.default_rng(seed).choice(len(flat), size=n_params, replace=False)
    errors, names = [], set()
    for k in picks:
        name, p, i = flat[k]
        with torch.no_grad():
            orig = p.view(-1)[i].item()
            p.view(-1)[i] = orig + h
            up = loss_fn().item()
            p.view(-1)[i] = orig - h
            down = loss_fn().item()
            p.view(-1)[i] = orig
        fd = (up - down) / (2 * h)
        an = p.grad.view(-1)[i].item()
        errors.append(abs(fd - an) / max(abs(fd), abs(an)))
        names.add(name)
    return errors, names
