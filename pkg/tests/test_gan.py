import math

import numpy as np
import pytest

from dploc import gan
from dploc.data import TestbedSpec, synthesize_testbed
from dploc.errors import ConfigError, SchemaError, StateError


@pytest.fixture(scope="module")
def radiomap():
    return synthesize_testbed(TestbedSpec())


def params_bytes(net):
    return b"".join(p.tobytes() for p in net.params)


def quick(**kw):
    base = dict(generator_steps=3, gen_layers=(16,), disc_layers=(16,), latent_dim=8, batch_size=32)
    base.update(kw)
    return gan.GanConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        gan.GanConfig(variant="vae")
    with pytest.raises(ConfigError):
        gan.GanConfig(clip_value=0.0)
    with pytest.raises(ConfigError):
        gan.GanConfig(private=True)
    with pytest.raises(ConfigError):
        gan.GanConfig(private=True, epsilon=-1.0)


def test_variant_defaults():
    w, c = gan.GanConfig(), gan.GanConfig(variant="cgan")
    assert (w.optimizer, c.optimizer) == ("rmsprop", "adam")
    assert w.gradient_clip < c.gradient_clip
    assert gan.GanConfig(clip_norm=0.3).gradient_clip == 0.3


def test_cgan_rejected_in_location_mode(radiomap):
    with pytest.raises(ConfigError):
        gan.make_trainer(radiomap, quick(variant="cgan"), "location_based")


@pytest.mark.parametrize("variant,mode", [("wgan", "location_based"), ("wgan", "zone_based"), ("cgan", "zone_based")])
def test_zero_noise_private_path_is_bitwise_identical(radiomap, variant, mode):
    plain = gan.make_trainer(radiomap, quick(variant=variant, seed=5), mode)
    dp = gan.make_trainer(radiomap, quick(variant=variant, seed=5, private=True, noise_multiplier=0.0, clip_norm=1e6), mode)
    for _ in range(4):
        for _ in range(3):
            plain.critic_update()
            dp.critic_update()
        plain.generator_update()
        dp.generator_update()
    assert dp.last_clip_norms is not None and np.all(dp.last_clip_norms < 1e6)
    assert params_bytes(plain.model.discriminator) == params_bytes(dp.model.discriminator)
    assert params_bytes(plain.model.generator) == params_bytes(dp.model.generator)


@pytest.mark.parametrize("variant,mode", [("wgan", "location_based"), ("cgan", "zone_based")])
def test_clipping_invariants_hold_after_every_update(radiomap, variant, mode):
    cfg = quick(variant=variant, private=True, noise_multiplier=1.0, clip_norm=0.01)
    tr = gan.make_trainer(radiomap, cfg, mode)
    for _ in range(40):
        tr.critic_update()
        assert np.all(tr.last_clip_norms <= cfg.gradient_clip)
        if variant == "wgan":
            assert tr.model.discriminator.max_abs() <= cfg.clip_value


def test_wgan_discriminator_starts_clipped(radiomap):
    tr = gan.make_trainer(radiomap, quick(clip_value=0.02), "location_based")
    assert tr.model.discriminator.max_abs() <= 0.02


def test_accountant_ticks_once_per_critic_update(radiomap):
    tr = gan.make_trainer(radiomap, quick(private=True, epsilon=10.0), "location_based")
    for i in range(1, 6):
        tr.critic_update()
        assert tr.accountant.state.steps_recorded == i
    disc = params_bytes(tr.model.discriminator)
    gen = params_bytes(tr.model.generator)
    tr.generator_update()
    assert tr.accountant.state.steps_recorded == 5
    assert params_bytes(tr.model.discriminator) == disc
    assert params_bytes(tr.model.generator) != gen


@pytest.mark.parametrize("variant,mode", [("wgan", "location_based"), ("cgan", "zone_based")])
def test_generator_loss_falls_against_frozen_critic(radiomap, variant, mode):
    tr = gan.make_trainer(radiomap, quick(variant=variant, seed=2), mode)
    for _ in range(20):
        tr.critic_update()
    rng = np.random.default_rng(0)
    z = rng.normal(size=(64, tr.model.config.latent_dim))
    labels = rng.integers(0, 15, size=64) if variant == "cgan" else None
    first = tr.generator_update(z, labels)
    for _ in range(199):
        last = tr.generator_update(z, labels)
    assert last < first


def test_cgan_update_needs_labels(radiomap):
    tr = gan.make_trainer(radiomap, quick(variant="cgan"), "zone_based")
    with pytest.raises(SchemaError):
        tr.critic_update_cgan(tr.table[:4], None)
    with pytest.raises(SchemaError):
        tr.critic_update_cgan(tr.table[:4], np.array([0, 1, 2, 15]))


def test_training_table_width_checked(radiomap):
    tr = gan.make_trainer(radiomap, quick(), "location_based")
    with pytest.raises(SchemaError):
        gan.GanTrainer(tr.model, np.zeros((10, 5)))


def test_training_is_seeded(radiomap):
    a, _ = gan.train(radiomap, quick(seed=3, private=True, epsilon=5.0), "location_based")
    b, _ = gan.train(radiomap, quick(seed=3, private=True, epsilon=5.0), "location_based")
    c, _ = gan.train(radiomap, quick(seed=4, private=True, epsilon=5.0), "location_based")
    assert params_bytes(a.generator) == params_bytes(b.generator)
    assert params_bytes(a.generator) != params_bytes(c.generator)


def test_private_run_lands_inside_budget(radiomap):
    model, trace = gan.train(radiomap, quick(private=True, epsilon=1.0, generator_steps=20), "location_based")
    assert 0.9 < model.meta["epsilon"] <= 1.0
    assert not trace.budget_exhausted
    assert model.meta["critic_steps"] == 100
    eps = [row[3] for row in trace.rows]
    assert eps == sorted(eps)


def test_budget_exhaustion_stops_early(radiomap):
    cfg = quick(private=True, epsilon=3.0, noise_multiplier=2.0, generator_steps=200)
    model, trace = gan.train(radiomap, cfg, "location_based")
    assert trace.budget_exhausted
    assert 0 < len(trace.rows) < 200
    assert model.meta["epsilon"] <= 3.0


def test_nonprivate_meta(radiomap):
    model, trace = gan.train(radiomap, quick(), "location_based")
    assert model.meta["epsilon"] == math.inf
    assert model.meta["generator_steps"] == 3 and len(trace.rows) == 3


def test_learns_correlated_gaussian():
    rng = np.random.default_rng(0)
    cov = np.array([[0.04, 0.03], [0.03, 0.04]])
    table = rng.multivariate_normal([0.2, -0.1], cov, size=2000)
    cfg = gan.GanConfig(generator_steps=3000, gen_layers=(32, 32), disc_layers=(32, 32), latent_dim=4, seed=1)
    model, _ = gan.train_table(table, cfg)
    out, _ = gan.sample(model, 5000, seed=1)
    assert np.max(np.abs(out.mean(axis=0) - table.mean(axis=0))) < 0.15
    assert np.max(np.abs(np.cov(out.T) - np.cov(table.T))) < 0.25 * np.max(np.abs(cov))
    assert np.corrcoef(out.T)[0, 1] > 0.5


@pytest.fixture(scope="module")
def models(radiomap):
    return {
        "loc": gan.train(radiomap, quick(), "location_based"),
        "zone": gan.train(radiomap, quick(), "zone_based"),
        "cgan": gan.train(radiomap, quick(variant="cgan"), "zone_based"),
    }


def test_sample_shapes(models):
    loc, _ = models["loc"]
    out, labels = gan.sample(loc, 10)
    assert out.shape == (10, 11) and labels is None
    zone, _ = models["zone"]
    out, labels = gan.sample(zone, 50)
    assert out.shape == (50, 9)
    assert labels.min() >= 0 and labels.max() < 15
    assert np.all(np.abs(out) < 1.0)


def test_cgan_sampling(models):
    cg, _ = models["cgan"]
    out, labels = gan.sample(cg, per_label=3)
    assert out.shape == (45, 9)
    np.testing.assert_array_equal(np.bincount(labels), np.full(15, 3))
    with pytest.raises(ConfigError):
        gan.sample(cg, 10)
    with pytest.raises(SchemaError):
        gan.sample(cg, labels=[0, 15])
    ds = gan.generate(cg, 31)
    assert np.bincount(ds.zones, minlength=15).max() - np.bincount(ds.zones, minlength=15).min() <= 1


def test_generated_records_are_schema_valid(models):
    ds = gan.generate(models["loc"][0], 200, seed=3)
    ds.validate()
    assert len(ds) == 200 and ds.zones is None
    again = gan.generate(models["loc"][0], 200, seed=3)
    assert again.rss.tobytes() == ds.rss.tobytes()
    assert not np.array_equal(gan.generate(models["loc"][0], 200, seed=4).rss, ds.rss)
    gan.generate(models["zone"][0], 20).validate()


def test_sample_size_checked(models):
    with pytest.raises(ConfigError):
        gan.sample(models["loc"][0], 0)


def test_checkpoint_round_trip(tmp_path, radiomap):
    for cfg, mode in ((quick(private=True, epsilon=5.0), "location_based"), (quick(variant="cgan"), "zone_based")):
        model, trace = gan.train(radiomap, cfg, mode)
        path = tmp_path / "model.json"
        gan.save_checkpoint(model, trace, path)
        back, back_trace = gan.load_checkpoint(path)
        assert params_bytes(back.generator) == params_bytes(model.generator)
        assert params_bytes(back.discriminator) == params_bytes(model.discriminator)
        assert back.meta == model.meta and back_trace.rows == trace.rows
        a, b = gan.generate(model, 30, seed=1), gan.generate(back, 30, seed=1)
        assert a.rss.tobytes() == b.rss.tobytes()


def test_checkpoint_corruption(tmp_path, models):
    path = tmp_path / "m.json"
    gan.save_checkpoint(*models["loc"], path)
    assert '"epsilon": "inf"' in path.read_text()
    path.write_text(path.read_text()[:200])
    with pytest.raises(StateError):
        gan.load_checkpoint(path)
    with pytest.raises(StateError):
        gan.load_checkpoint(tmp_path / "missing.json")


def test_training_trace_csv(tmp_path, models):
    path = tmp_path / "trace.csv"
    gan.write_training_trace(models["loc"][1], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,critic_loss,gen_loss,epsilon_so_far"
    assert len(lines) == 4
