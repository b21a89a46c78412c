import numpy as np
import pytest

from ivgn.config import (
    BackboneConfig,
    DecoderConfig,
    EncoderConfig,
    GiaConfig,
    ModelConfig,
)


def tiny_model_config(vocab_size=9, scheme="dsp", views=1, layers=1, pos_embed=True,
                      init_state="zeros", dropout=0.0):
    """A model small enough for exhaustive finite differences."""
    return ModelConfig(
        backbone=BackboneConfig(widths=(3, 4), strides=(2, 2), kernels=(3, 3), image_side=8,
                                gia_stages=(1, 2)),
        gia=GiaConfig(scheme=scheme),
        encoder=EncoderConfig(layers=layers, heads=2, dim=4, ff_dim=6, dropout=dropout,
                              pos_embed=pos_embed),
        decoder=DecoderConfig(hidden=5, embed=4, attn=3, init_state=init_state),
        views=views,
        vocab_size=vocab_size,
    )


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_RUN_OVERRIDES = {
    "backbone.widths": "4,6", "backbone.strides": "2,2", "backbone.kernels": "3,3",
    "backbone.image_side": 16, "backbone.gia_stages": "1,2",
    "encoder.layers": 1, "encoder.heads": 2, "encoder.dim": 8, "encoder.ff_dim": 12,
    "decoder.hidden": 8, "decoder.embed": 6, "decoder.attn": 6,
    "train.epochs": 2, "train.batch_size": 4, "train.max_len": 12,
}


def tiny_run_config(**overrides):
    """Toy preset shrunk so a full training epoch takes well under a second."""
    from ivgn.config import resolve_config

    merged = dict(TINY_RUN_OVERRIDES)
    merged.update(overrides)
    return resolve_config("toy", overrides=merged, environ={})


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts collected by tests/test_acceptance.py."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "VERDICTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[n])
