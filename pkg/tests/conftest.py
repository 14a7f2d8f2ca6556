import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from vitcgan.config import DiscriminatorConfig, GanConfig, GeneratorConfig, TrainConfig


def tiny_gen_cfg(**kw):
    base = dict(z_dim=16, init_grid=(1, 1), out_resolution=(16, 16), stage_dims=(128, 128, 32, 8),
                encoders_per_stage=(1, 1, 1, 1), window_sizes={3: 4, 4: 8})
    base.update(kw)
    return GeneratorConfig(**base)


def tiny_disc_cfg(**kw):
    base = dict(in_resolution=(16, 16), patch_sizes=(2, 4, 8), embed_dims=(16, 16, 16),
                encoders_per_stage=(1, 1, 1, 1))
    base.update(kw)
    return DiscriminatorConfig(**base)


def tiny_gan_cfg(**kw):
    return GanConfig(generator=tiny_gen_cfg(), discriminator=tiny_disc_cfg(), **kw)


@pytest.fixture
def tiny_gan():
    return tiny_gan_cfg()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


# -- acceptance reporting ------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _CRITERIA[mark.args[0]] = (mark.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
