"""WGAN / CGAN training with optional differentially private critic updates.

The critic (discriminator) is the only network that touches real records, so
it is the only one that is clipped, noised and accounted for. Generator steps
read nothing but the critic's parameters and cost no privacy budget.

Private and non-private critic steps share one code path: per-example
gradient norms come from the layer-wise outer-product identity, clipping is
a per-row rescale of the output gradient before a single batch backprop,
and noise is added to the summed gradient. With zero noise and no active
clip the two paths are bitwise identical.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dploc import nn
from dploc.data import RSS_CEIL, RSS_FLOOR, FeatureScaler, FingerprintDataset, Schema
from dploc.errors import BudgetExhausted, ConfigError, DataError, SchemaError, StateError
from dploc.privacy import (
    DEFAULT_CLIP_NORM,
    DEFAULT_DELTA,
    PrivacyAccountant,
    add_noise,
    calibrate_noise,
    clip_factors,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
VARIANTS = ("wgan", "cgan")
MODES = ("location_based", "zone_based")
WGAN_CLIP_NORM = 0.05


@dataclass
class GanConfig:
    variant: str = "wgan"
    private: bool = False
    latent_dim: int = 32
    gen_layers: tuple[int, ...] = (64, 64)
    disc_layers: tuple[int, ...] = (64, 64)
    batch_size: int = 64
    n_critic: int = 5
    clip_value: float = 0.05  # c_p, WGAN family only
    generator_steps: int = 2000
    lr: float | None = None  # default depends on variant
    seed: int = 0
    epsilon: float | None = None
    delta: float = DEFAULT_DELTA
    clip_norm: float | None = None  # c_g, default depends on variant
    noise_multiplier: float | None = None  # calibrated from epsilon when None

    def __post_init__(self) -> None:
        self.gen_layers = tuple(self.gen_layers)
        self.disc_layers = tuple(self.disc_layers)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.latent_dim < 1 or self.batch_size < 1 or self.n_critic < 1 or self.generator_steps < 0:
            raise ConfigError("latent_dim, batch_size and n_critic must be >= 1")
        if self.variant == "wgan" and not self.clip_value > 0:
            raise ConfigError("WGAN weight clip bound must be positive")
        if self.private:
            if self.epsilon is None and self.noise_multiplier is None:
                raise ConfigError("private training needs epsilon or noise_multiplier")
            if self.epsilon is not None and not self.epsilon > 0:
                raise ConfigError("epsilon must be positive")
            if not self.gradient_clip > 0:
                raise ConfigError("gradient clip norm must be positive")
            if not 0 < self.delta < 1:
                raise ConfigError("delta must lie in (0, 1)")

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return 5e-4 if self.variant == "wgan" else 1e-4

    @property
    def gradient_clip(self) -> float:
        # a weight-clipped critic starts with per-example norms near 0.4; a
        # bound of 1.0 would add noise sized for gradients it never sees
        if self.clip_norm is not None:
            return self.clip_norm
        return WGAN_CLIP_NORM if self.variant == "wgan" else DEFAULT_CLIP_NORM

    @property
    def optimizer(self) -> str:
        return "rmsprop" if self.variant == "wgan" else "adam"

    @property
    def critic_steps(self) -> int:
        return self.generator_steps * self.n_critic


@dataclass
class GanModel:
    generator: nn.DenseNet
    discriminator: nn.DenseNet
    config: GanConfig
    mode: str
    feature_dim: int  # continuous features (RSS + maybe x,y)
    label_cardinality: int = 0  # CGAN condition width / WGAN one-hot block width
    scaler: FeatureScaler | None = None
    schema: Schema = field(default_factory=Schema)
    meta: dict = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def onehot_block(self) -> int:
        """Width of the one-hot zone block the WGAN generates in zone mode."""
        return self.label_cardinality if (self.variant == "wgan" and self.mode == "zone_based") else 0


@dataclass
class TrainingTrace:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    budget_exhausted: bool = False
    accountant: list[tuple[int, float, float]] = field(default_factory=list)

    def final_epsilon(self) -> float:
        return self.rows[-1][3] if self.rows else 0.0


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise SchemaError(f"label outside 0..{k - 1}")
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


# --- table preparation ---------------------------------------------------------


def prepare_table(dataset: FingerprintDataset, mode: str, variant: str) -> tuple[np.ndarray, np.ndarray | None, FeatureScaler, int]:
    """Scaled training matrix, labels (CGAN), scaler, and label cardinality.

    location_based: [RSS, x, y] scaled to [-1, 1].
    zone_based/wgan: [RSS scaled, one-hot zone mapped to {-1, 1}].
    zone_based/cgan: RSS scaled, zones returned as labels.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if mode == "location_based":
        if variant == "cgan":
            raise ConfigError("CGAN conditions on zone labels and is only available in zone_based mode")
        if dataset.coords is None:
            raise SchemaError("location_based mode needs coordinates")
        raw = np.hstack([dataset.rss, dataset.coords])
        scaler = FeatureScaler.fit(raw)
        return scaler.transform(raw), None, scaler, 0
    if dataset.zones is None:
        raise SchemaError("zone_based mode needs zone labels")
    k = dataset.schema.n_zones
    scaler = FeatureScaler.fit(dataset.rss)
    x = scaler.transform(dataset.rss)
    if variant == "cgan":
        return x, dataset.zones.copy(), scaler, k
    return np.hstack([x, 2.0 * _onehot(dataset.zones, k) - 1.0]), None, scaler, k


def build_model(config: GanConfig, mode: str, feature_dim: int, label_cardinality: int,
                rng: np.random.Generator, scaler: FeatureScaler | None = None,
                schema: Schema = Schema()) -> GanModel:
    cond = label_cardinality if config.variant == "cgan" else 0
    out_dim = feature_dim + (label_cardinality if config.variant == "wgan" and mode == "zone_based" else 0)
    gen = nn.DenseNet.build([config.latent_dim + cond, *config.gen_layers, out_dim], rng, "relu", "tanh")
    disc = nn.DenseNet.build([out_dim + cond, *config.disc_layers, 1], rng, "relu", "identity")
    if config.variant == "wgan":
        nn.clip_weights(disc, config.clip_value)
    return GanModel(gen, disc, config, mode, feature_dim, label_cardinality, scaler, schema)


# --- trainer -----------------------------------------------------------------------


class GanTrainer:
    """Owns one run's model, optimizer states, accountant and RNG streams.

    Independent streams (init, batch sampling, latent draws, DP noise) keep
    private and non-private runs on the same seed aligned step for step.
    """

    def __init__(self, model: GanModel, table: np.ndarray, labels: np.ndarray | None = None,
                 accountant: PrivacyAccountant | None = None, seed: int | None = None):
        cfg = model.config
        self.model = model
        self.table = np.asarray(table, dtype=np.float64)
        self.labels = labels
        if model.variant == "cgan" and labels is None:
            raise SchemaError("CGAN training needs labels")
        if self.table.shape[1] != model.generator.output_dim:
            raise SchemaError(f"table has {self.table.shape[1]} columns, generator emits {model.generator.output_dim}")
        seq = np.random.SeedSequence(cfg.seed if seed is None else seed)
        s_batch, s_latent, s_noise = seq.spawn(4)[1:]
        self.batch_rng = np.random.default_rng(s_batch)
        self.latent_rng = np.random.default_rng(s_latent)
        self.noise_rng = np.random.default_rng(s_noise)
        self.d_opt = nn.OptimizerState.create(model.discriminator, cfg.optimizer, cfg.learning_rate)
        self.g_opt = nn.OptimizerState.create(model.generator, cfg.optimizer, cfg.learning_rate)
        self.accountant = accountant
        self.batch_size = min(cfg.batch_size, len(self.table))
        self.last_clip_norms: np.ndarray | None = None
        self.force_private_path = False

    @property
    def sampling_rate(self) -> float:
        return self.batch_size / len(self.table)

    def draw_batch(self) -> tuple[np.ndarray, np.ndarray | None]:
        idx = self.batch_rng.choice(len(self.table), size=self.batch_size, replace=False)
        return self.table[idx], (None if self.labels is None else self.labels[idx])

    def draw_latent(self, m: int) -> np.ndarray:
        return self.latent_rng.normal(size=(m, self.model.config.latent_dim))

    def draw_labels(self, m: int) -> np.ndarray:
        return self.latent_rng.integers(0, self.model.label_cardinality, size=m)

    def _private(self) -> bool:
        return self.model.config.private and (self.accountant is not None or self.force_private_path)

    @property
    def noise_multiplier(self) -> float:
        return self.accountant.noise_multiplier if self.accountant is not None else 0.0

    def _factors(self, passes) -> np.ndarray:
        """Per-example clip factors (all ones when training is not private)."""
        m = passes[0][1].shape[0]
        if not self._private():
            self.last_clip_norms = None
            return np.ones(m)
        norms = np.sqrt(nn.per_example_sq_norms(self.model.discriminator, passes))
        factors = clip_factors(norms, self.model.config.gradient_clip)
        self.last_clip_norms = norms * factors
        return factors

    def _noised(self, total: list[np.ndarray]) -> list[np.ndarray]:
        if not self._private():
            return total
        flat = np.concatenate([g.ravel() for g in total])
        flat = add_noise(flat, self.noise_multiplier, self.model.config.gradient_clip, self.noise_rng)
        return nn.unflatten(flat, total)

    def _tick(self) -> None:
        if self.accountant is not None and self.model.config.private:
            self.accountant.step()

    def _check_budget(self) -> None:
        if self.accountant is not None and self.model.config.private and self.accountant.would_exceed():
            raise BudgetExhausted(f"privacy budget exhausted after {self.accountant.state.steps_recorded} critic steps")

    def critic_update_wgan(self, real: np.ndarray | None = None, z: np.ndarray | None = None) -> float:
        """One critic step ascending f(x) - f(G(z)); returns the critic loss.

        Example ``i``'s gradient covers the pair (x_i, z_i); it is clipped as
        a whole before the Gaussian noise is added to the sum.
        """
        model, cfg = self.model, self.model.config
        self._check_budget()
        if real is None:
            real, _ = self.draw_batch()
        m = real.shape[0]
        z = self.draw_latent(m) if z is None else z
        disc = model.discriminator
        fake = nn.forward(model.generator, z, keep_cache=False)
        out_r = nn.forward(disc, real)
        cache_r = disc.cache
        out_f = nn.forward(disc, fake)
        cache_f = disc.cache
        up_r, up_f = -np.ones((m, 1)), np.ones((m, 1))
        s = self._factors([(cache_r, up_r), (cache_f, up_f)])[:, None]
        g_r = nn.backward(disc, up_r * s, cache_r)
        g_f = nn.backward(disc, up_f * s, cache_f)
        total = self._noised([a + b for a, b in zip(g_r, g_f)])
        disc.cache = None
        nn.optimizer_step(disc, [g / m for g in total], self.d_opt)
        nn.clip_weights(disc, cfg.clip_value)
        self._tick()
        return float(out_f.mean() - out_r.mean())

    def critic_update_cgan(self, real: np.ndarray | None = None, labels: np.ndarray | None = None,
                           z: np.ndarray | None = None, fake_labels: np.ndarray | None = None) -> float:
        """One discriminator step on the conditional log-loss, real and fake terms split.

        Real-record gradients and generated-record gradients are clipped
        separately; the noise goes on the real sum, the only one that reads
        private data.
        """
        model = self.model
        self._check_budget()
        if real is None:
            real, labels = self.draw_batch()
        if labels is None:
            raise SchemaError("CGAN critic update needs labels")
        k = model.label_cardinality
        m = real.shape[0]
        y_real = _onehot(labels, k)
        z = self.draw_latent(m) if z is None else z
        fake_labels = self.draw_labels(m) if fake_labels is None else fake_labels
        y_fake = _onehot(fake_labels, k)
        disc = model.discriminator
        fake = nn.forward(model.generator, np.hstack([z, y_fake]), keep_cache=False)
        l_r = nn.forward(disc, np.hstack([real, y_real]))
        cache_r = disc.cache
        l_f = nn.forward(disc, np.hstack([fake, y_fake]))
        cache_f = disc.cache
        up_r, up_f = _sigmoid(l_r) - 1.0, _sigmoid(l_f)
        s_r = self._factors([(cache_r, up_r)])[:, None]
        real_norms = self.last_clip_norms
        s_f = self._factors([(cache_f, up_f)])[:, None]
        fake_norms = self.last_clip_norms
        if real_norms is not None:
            self.last_clip_norms = np.concatenate([real_norms, fake_norms])
        g_r = self._noised(nn.backward(disc, up_r * s_r, cache_r))
        g_f = nn.backward(disc, up_f * s_f, cache_f)
        disc.cache = None
        nn.optimizer_step(disc, [(a + b) / m for a, b in zip(g_r, g_f)], self.d_opt)
        self._tick()
        return float(_softplus(-l_r).mean() + _softplus(l_f).mean())

    def generator_update(self, z: np.ndarray | None = None, labels: np.ndarray | None = None) -> float:
        """One generator step against the current (frozen) critic; returns the pre-step loss."""
        model = self.model
        gen, disc = model.generator, model.discriminator
        m = self.batch_size if z is None else z.shape[0]
        z = self.draw_latent(m) if z is None else z
        if model.variant == "cgan":
            labels = self.draw_labels(m) if labels is None else labels
            y = _onehot(labels, model.label_cardinality)
            fake = nn.forward(gen, np.hstack([z, y]))
            logit = nn.forward(disc, np.hstack([fake, y]))
            loss = float(_softplus(-logit).mean())
            d_in = nn.input_gradient(disc, (_sigmoid(logit) - 1.0) / m)[:, : fake.shape[1]]
        else:
            fake = nn.forward(gen, z)
            score = nn.forward(disc, fake)
            loss = float(-score.mean())
            d_in = nn.input_gradient(disc, -np.ones((m, 1)) / m)
        disc.cache = None
        nn.optimizer_step(gen, nn.backward(gen, d_in), self.g_opt)
        return loss

    def critic_update(self) -> float:
        if self.model.variant == "cgan":
            return self.critic_update_cgan()
        return self.critic_update_wgan()


def critic_update_wgan(trainer: GanTrainer, real_batch: np.ndarray | None = None) -> float:
    return trainer.critic_update_wgan(real_batch)


def critic_update_cgan(trainer: GanTrainer, real_batch: np.ndarray | None = None, labels: np.ndarray | None = None) -> float:
    return trainer.critic_update_cgan(real_batch, labels)


def generator_update(trainer: GanTrainer) -> float:
    return trainer.generator_update()


def make_trainer(dataset: FingerprintDataset, config: GanConfig, mode: str) -> GanTrainer:
    """Scale ``dataset``, build networks, calibrate noise (if private)."""
    table, labels, scaler, k = prepare_table(dataset, mode, config.variant)
    feature_dim = table.shape[1] - (k if (config.variant == "wgan" and mode == "zone_based") else 0)
    return trainer_for_table(table, config, mode, feature_dim, labels, k, scaler, dataset.schema)


def trainer_for_table(table: np.ndarray, config: GanConfig, mode: str = "table", feature_dim: int | None = None,
                      labels: np.ndarray | None = None, label_cardinality: int = 0,
                      scaler: FeatureScaler | None = None, schema: Schema = Schema()) -> GanTrainer:
    """Trainer over an already-scaled table (columns in the generator's range)."""
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or len(table) == 0:
        raise DataError("cannot train on an empty table")
    feature_dim = table.shape[1] if feature_dim is None else feature_dim
    init_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[0])
    model = build_model(config, mode, feature_dim, label_cardinality, init_rng, scaler, schema)
    accountant = None
    if config.private:
        q = min(config.batch_size, len(table)) / len(table)
        sigma = config.noise_multiplier
        if sigma is None:
            sigma = calibrate_noise(config.epsilon, config.delta, q, max(config.critic_steps, 1))
        accountant = PrivacyAccountant(sigma, q, config.delta, config.epsilon) if sigma > 0 else None
        model.meta["noise_multiplier"] = sigma
        model.meta["sampling_rate"] = q
    trainer = GanTrainer(model, table, labels, accountant)
    if config.private and accountant is None:
        # sigma == 0: no formal guarantee, but clip + (zero) noise path still runs
        trainer.force_private_path = True
    return trainer


def run_training(trainer: GanTrainer) -> tuple[GanModel, TrainingTrace]:
    """Alternate ``n_critic`` critic steps with one generator step.

    Stops early, returning the model so far, if the next critic step would
    overrun the privacy budget; ``trace.budget_exhausted`` records that.
    """
    config = trainer.model.config
    trace = TrainingTrace()
    acc = trainer.accountant
    for step in range(1, config.generator_steps + 1):
        try:
            c_loss = 0.0
            for _ in range(config.n_critic):
                c_loss = trainer.critic_update()
        except BudgetExhausted as exc:
            log.warning("%s", exc)
            trace.budget_exhausted = True
            break
        g_loss = trainer.generator_update()
        eps = acc.epsilon() if acc is not None else 0.0
        trace.rows.append((step, c_loss, g_loss, eps))
    model = trainer.model
    model.meta.update(
        generator_steps=len(trace.rows),
        critic_steps=acc.state.steps_recorded if acc is not None else len(trace.rows) * config.n_critic,
        epsilon=acc.epsilon() if acc is not None else math.inf,
        budget_exhausted=trace.budget_exhausted,
    )
    if acc is not None:
        trace.accountant = list(acc.trace)
    return model, trace


def train(dataset: FingerprintDataset, config: GanConfig, mode: str = "location_based") -> tuple[GanModel, TrainingTrace]:
    """Train a GAN on a radiomap in the given localization mode."""
    return run_training(make_trainer(dataset, config, mode))


def train_table(table: np.ndarray, config: GanConfig, labels: np.ndarray | None = None,
                label_cardinality: int = 0) -> tuple[GanModel, TrainingTrace]:
    """Train on an arbitrary pre-scaled table (no radiomap schema)."""
    return run_training(trainer_for_table(table, config, labels=labels, label_cardinality=label_cardinality))


# --- sampling ----------------------------------------------------------------------


def balanced_labels(n: int, k: int) -> np.ndarray:
    """``n`` labels spread as evenly as possible over ``k`` classes."""
    return np.repeat(np.arange(k), [n // k + (1 if i < n % k else 0) for i in range(k)])


def sample(model: GanModel, n: int | None = None, labels: Sequence[int] | None = None,
           per_label: int | None = None, seed: int = 0) -> tuple[np.ndarray, np.ndarray | None]:
    """Generate scaled rows; returns (features, labels or None).

    For CGAN, give either explicit ``labels`` (one per row) or ``per_label``.
    A zone-mode WGAN decodes its one-hot block by argmax.
    """
    rng = np.random.default_rng(seed)
    if model.variant == "cgan":
        if labels is None and per_label is None:
            raise ConfigError("CGAN sampling needs labels or a per-label count")
        if labels is None:
            labels = np.repeat(np.arange(model.label_cardinality), per_label)
        labels = np.asarray(labels, dtype=np.int64)
        if n is not None and n != labels.size:
            raise ConfigError("n does not match the number of labels")
        n = labels.size
    if n is None or n < 1:
        raise ConfigError("sample size must be at least 1")
    z = rng.normal(size=(n, model.config.latent_dim))
    if model.variant == "cgan":
        out = nn.forward(model.generator, np.hstack([z, _onehot(labels, model.label_cardinality)]), keep_cache=False)
        return out, labels
    out = nn.forward(model.generator, z, keep_cache=False)
    k = model.onehot_block
    if k:
        return out[:, :-k], np.argmax(out[:, -k:], axis=1)
    return out, None


def to_dataset(model: GanModel, features: np.ndarray, labels: np.ndarray | None) -> FingerprintDataset:
    """Inverse-scale generated rows into a schema-conformant dataset."""
    if model.scaler is None:
        raise StateError("model carries no scaler")
    raw = model.scaler.inverse_transform(features)
    n_aps = model.schema.n_aps
    rss = np.round(np.clip(raw[:, :n_aps], RSS_FLOOR, RSS_CEIL), 6)
    coords = None
    if model.mode == "location_based":
        coords = raw[:, n_aps:n_aps + 2]
        coords = np.round(np.column_stack([
            np.clip(coords[:, 0], 0.0, model.schema.width),
            np.clip(coords[:, 1], 0.0, model.schema.height),
        ]), 6)
    return FingerprintDataset(rss, coords, labels, model.schema)


def generate(model: GanModel, n: int, seed: int = 0) -> FingerprintDataset:
    """``n`` synthetic records in data units (CGAN labels balanced over zones)."""
    labels = balanced_labels(n, model.label_cardinality) if model.variant == "cgan" else None
    feats, lab = sample(model, n if labels is None else None, labels=labels, seed=seed)
    return to_dataset(model, feats, lab)


# --- checkpoints ------------------------------------------------------------------


def _net_to_dict(net: nn.DenseNet) -> list[dict]:
    return [{"weight": l.weight.tolist(), "bias": l.bias.tolist(), "activation": l.activation} for l in net.layers]


def _net_from_dict(layers: list[dict]) -> nn.DenseNet:
    return nn.DenseNet([
        nn.Layer(np.asarray(l["weight"], dtype=np.float64).reshape(len(l["bias"]), -1),
                 np.asarray(l["bias"], dtype=np.float64), l["activation"])
        for l in layers
    ])


def _json_safe(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def save_checkpoint(model: GanModel, trace: TrainingTrace, path: str | Path) -> None:
    cfg = asdict(model.config)
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "mode": model.mode,
        "feature_dim": model.feature_dim,
        "label_cardinality": model.label_cardinality,
        "schema": asdict(model.schema),
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "meta": {k: _json_safe(v) for k, v in model.meta.items()},
        "generator": _net_to_dict(model.generator),
        "discriminator": _net_to_dict(model.discriminator),
        "trace": {
            "rows": [list(r) for r in trace.rows],
            "budget_exhausted": trace.budget_exhausted,
            "accountant": [list(r) for r in trace.accountant],
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[GanModel, TrainingTrace]:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != CHECKPOINT_VERSION:
            raise StateError(f"unsupported checkpoint version {doc.get('version')!r}")
        cfg = GanConfig(**doc["config"])
        meta = {k: (math.inf if v == "inf" else v) for k, v in doc["meta"].items()}
        model = GanModel(
            generator=_net_from_dict(doc["generator"]),
            discriminator=_net_from_dict(doc["discriminator"]),
            config=cfg,
            mode=doc["mode"],
            feature_dim=doc["feature_dim"],
            label_cardinality=doc["label_cardinality"],
            scaler=FeatureScaler.from_dict(doc["scaler"]) if doc["scaler"] else None,
            schema=Schema(**doc["schema"]),
            meta=meta,
        )
        t = doc["trace"]
        trace = TrainingTrace(
            rows=[tuple(r) for r in t["rows"]],
            budget_exhausted=t["budget_exhausted"],
            accountant=[tuple(r) for r in t["accountant"]],
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise StateError(f"cannot load checkpoint {path}: {exc}") from exc
    return model, trace


def write_training_trace(trace: TrainingTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "critic_loss", "gen_loss", "epsilon_so_far"])
        for step, c, g, e in trace.rows:
            w.writerow([step, repr(float(c)), repr(float(g)), repr(float(e))])
