import dataclasses

import pytest
from hypothesis import given, strategies as st

from mue.config import ConfigError, RunConfig


def test_defaults_resolve_per_task():
    v = RunConfig().resolved()
    assert (v.code_dim, v.warmup_iters, v.max_iters, v.calib_topk) == (32, 2000, 30000, 512)
    assert v.skip_widths == [64, 64] and v.latent_widths == [128, 128] and v.decoder_widths == [64, 64]
    img = RunConfig(task="image_game", mnist_train_images="a", mnist_train_labels="b",
                    mnist_test_images="c", mnist_test_labels="d").resolved()
    assert (img.code_dim, img.warmup_iters, img.max_iters) == (128, 234, 120000)
    assert img.skip_widths == [16, 32, 64, 128] and img.decoder_widths == [64, 32, 16, 1]


def test_paper_constants():
    c = RunConfig()
    assert c.beta == 0.25 and c.n_codes == 512 and c.batch_size == 256
    assert c.lr_values == [1e-4, 5e-5, 1e-5, 5e-6]
    assert c.lr_boundaries == [0, 30000, 90000, 120000]


def test_round_trip():
    c = RunConfig(seed=7, n_codes=64, output_dir="runs/x", skip_widths=[8, 8])
    assert RunConfig.loads(c.dumps()) == c


@given(st.integers(0, 2**31), st.floats(1e-3, 10), st.integers(1, 1024))
def test_round_trip_property(seed, beta, n_codes):
    c = RunConfig(seed=seed, beta=beta, n_codes=n_codes)
    assert RunConfig.loads(c.dumps()) == c


def test_comments_and_blank_lines():
    c = RunConfig.loads("# vector game\n\ntask = \"vector_game\"\nseed = 3  \n")
    assert c.seed == 3


@pytest.mark.parametrize("text,field", [
    ("bogus = 1", "bogus"),
    ("beta = -1", "beta"),
    ("n_codes = \"many\"", "n_codes"),
    ("task = \"lidc\"", "task"),
    ("ema_decay = 1.5", "ema_decay"),
    ("lr_boundaries = [5, 10, 20, 30]", "lr_boundaries"),
    ("seed = -2", "seed"),
    ("beta = nope", "beta"),
    ("n_codes = 1.5", "n_codes"),
    ("skip_widths = [8, \"x\"]", "skip_widths"),
    ("reseed_dead_codes = 1", "reseed_dead_codes"),
    ("task = \"image_game\"", "mnist_train_images"),
])
def test_invalid_config_names_field(text, field):
    with pytest.raises(ConfigError) as exc:
        RunConfig.loads(text)
    assert exc.value.field == field


def test_every_field_serialised():
    text = RunConfig().dumps()
    for f in dataclasses.fields(RunConfig):
        assert f"{f.name} = " in text
