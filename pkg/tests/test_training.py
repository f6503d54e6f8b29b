import math

import numpy as np
import pytest

from usgan.dataset import default_calibration, default_sweep_config, generate_sweep
from usgan.geometry import fit_grid_stats, build_grid
from usgan.nn.adam import Adam
from usgan.nn.specs import DiscriminatorSpec, GeneratorSpec
from usgan.phantom import PhantomConfig, make_phantom
from usgan.training import (
    EPS,
    NonFiniteLossError,
    StepRecord,
    TrainConfig,
    d_loss,
    dataset_grid_stats,
    g_loss,
    l2_term,
    train,
    train_gan,
    train_l2gan,
    train_regression,
)

DIMS = (16, 12)
TOY_G = GeneratorSpec(out_dims=DIMS, noise_dim=5, n_upsample=2, initial_channels=8)
TOY_D = DiscriminatorSpec(in_dims=DIMS, n_stages=2, initial_channels=4, hidden_width=8)


@pytest.fixture(scope="module")
def toy_ds():
    ph = make_phantom(PhantomConfig(), seed=0)
    calib = default_calibration(DIMS)
    return generate_sweep(ph, calib, default_sweep_config(8, seed=3), DIMS)


def toy_cfg(**kw):
    base = dict(steps=2, batch_size=4, seed=7, checkpoint_interval=0)
    base.update(kw)
    return TrainConfig(**base)


class TestLosses:
    def test_d_loss_hand_oracle(self):
        # alpha=0.9, p_real=0.8, p_fake=0.3
        want = -0.5 * (0.9 * math.log(0.8) + 0.1 * math.log(0.2)) - 0.5 * math.log(0.7)
        assert abs(d_loss([0.8], [0.3], alpha=0.9) - want) < 1e-12

    def test_d_loss_no_smoothing(self):
        want = -0.5 * math.log(0.6) - 0.5 * math.log(1 - 0.2)
        assert abs(d_loss([0.6], [0.2], alpha=1.0) - want) < 1e-12

    def test_g_loss_hand_oracle(self):
        assert abs(g_loss([0.25, 0.5]) - (-0.5 * (math.log(0.25) + math.log(0.5)) / 2)) < 1e-12

    def test_clamp_keeps_losses_finite(self):
        assert math.isfinite(d_loss([1.0, 0.0], [1.0, 0.0], alpha=0.9))
        assert math.isfinite(g_loss([0.0]))
        assert abs(g_loss([0.0]) - (-0.5 * math.log(EPS))) < 1e-12

    def test_l2_term(self):
        a = np.zeros((2, 1, 2, 2))
        b = np.ones((2, 1, 2, 2)) * 3.0
        assert l2_term(a, b) == 9.0

    def test_d_loss_gradient_formula(self):
        # analytic d(J_D)/d(logit) vs central differences
        rng = np.random.default_rng(0)
        lr = rng.normal(size=4)
        lf = rng.normal(size=4)
        alpha = 0.9
        sig = lambda x: 1 / (1 + np.exp(-x))

        def J(lr_, lf_):
            return d_loss(sig(lr_), sig(lf_), alpha)

        eps = 1e-6
        for i in range(4):
            e = np.zeros(4)
            e[i] = eps
            num_r = (J(lr + e, lf) - J(lr - e, lf)) / (2 * eps)
            num_f = (J(lr, lf + e) - J(lr, lf - e)) / (2 * eps)
            assert abs(num_r - (-(alpha - sig(lr[i])) / (2 * 4))) < 1e-8
            assert abs(num_f - (sig(lf[i]) / (2 * 4))) < 1e-8

    def test_g_loss_gradient_formula(self):
        rng = np.random.default_rng(1)
        lf = rng.normal(size=3)
        sig = lambda x: 1 / (1 + np.exp(-x))
        eps = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            num = (g_loss(sig(lf + e)) - g_loss(sig(lf - e))) / (2 * eps)
            assert abs(num - (-(1 - sig(lf[i])) / (2 * 3))) < 1e-8


class TestAdam:
    def test_scalar_closed_form_two_steps(self):
        lr, b1, b2, eps = 0.01, 0.5, 0.999, 1e-8
        opt = Adam(lr, b1, b2, eps)
        w = np.array([1.0])
        g1, g2 = 0.3, -0.2
        # step 1
        m = (1 - b1) * g1
        v = (1 - b2) * g1**2
        w_ref = 1.0 - lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
        opt.step({"w": w}, {"w": np.array([g1])})
        assert abs(w[0] - w_ref) < 1e-10
        # step 2
        m = b1 * m + (1 - b1) * g2
        v = b2 * v + (1 - b2) * g2**2
        w_ref -= lr * (m / (1 - b1**2)) / (math.sqrt(v / (1 - b2**2)) + eps)
        opt.step({"w": w}, {"w": np.array([g2])})
        assert abs(w[0] - w_ref) < 1e-10

    def test_bias_correction_first_step_magnitude(self):
        opt = Adam(0.1, 0.9, 0.999, eps=0.0)
        w = np.array([0.0])
        opt.step({"w": w}, {"w": np.array([5.0])})
        # with bias correction the first step has magnitude ~lr regardless of g
        assert abs(abs(w[0]) - 0.1) < 1e-9


class TestGridStats:
    def test_matches_pooled_oracle(self, toy_ds):
        grids = [build_grid(toy_ds.calibration, f.pose, toy_ds.dims) for f in toy_ds.frames]
        want = fit_grid_stats(grids)
        got = dataset_grid_stats(toy_ds)
        assert np.allclose(got.mean, want.mean, atol=1e-9)
        assert np.allclose(got.std, want.std, atol=1e-9)


def records_equal(a: list[StepRecord], b: list[StepRecord]) -> bool:
    """Bitwise equality of the numeric telemetry; wall_ms is wall-clock."""
    if len(a) != len(b):
        return False
    return all(
        (x.step, x.j_d, x.j_g, x.d_real_mean, x.d_fake_mean)
        == (y.step, y.j_d, y.j_g, y.d_real_mean, y.d_fake_mean)
        for x, y in zip(a, b)
    )


class TestLoops:
    def test_gan_step_updates_both_networks_once(self, toy_ds):
        res = train_gan(toy_cfg(steps=1), toy_ds, TOY_G, TOY_D)
        assert len(res.records) == 1 and res.records[0].step == 1
        fresh_g = type(res.checkpoint.generator)(TOY_G, seed=7)
        fresh_d = type(res.checkpoint.discriminator)(TOY_D, seed=8)
        g_changed = any(
            not np.array_equal(v, fresh_g.parameters()[k])
            for k, v in res.checkpoint.generator.parameters().items()
        )
        d_changed = any(
            not np.array_equal(v, fresh_d.parameters()[k])
            for k, v in res.checkpoint.discriminator.parameters().items()
        )
        assert g_changed and d_changed

    def test_gan_deterministic(self, toy_ds):
        a = train_gan(toy_cfg(), toy_ds, TOY_G, TOY_D)
        b = train_gan(toy_cfg(), toy_ds, TOY_G, TOY_D)
        assert records_equal(a.records, b.records)
        for k, v in a.checkpoint.generator.state_dict().items():
            assert np.array_equal(v, b.checkpoint.generator.state_dict()[k]), k

    def test_l2gan_zero_weight_matches_gan(self, toy_ds):
        a = train_gan(toy_cfg(), toy_ds, TOY_G, TOY_D)
        b = train_l2gan(toy_cfg(mode="l2gan", l2_weight=0.0), toy_ds, TOY_G, TOY_D)
        assert records_equal(a.records, b.records)
        for k, v in a.checkpoint.generator.state_dict().items():
            assert np.array_equal(v, b.checkpoint.generator.state_dict()[k]), k

    def test_l2gan_positive_weight_changes_generator_loss(self, toy_ds):
        a = train_gan(toy_cfg(), toy_ds, TOY_G, TOY_D)
        b = train_l2gan(toy_cfg(mode="l2gan", l2_weight=1.0), toy_ds, TOY_G, TOY_D)
        assert a.records[0].j_g != b.records[0].j_g
        # D update precedes the G update, so step-1 D telemetry is identical
        assert a.records[0].j_d == b.records[0].j_d

    def test_regression_loss_decreases(self, toy_ds):
        res = train_regression(toy_cfg(mode="regress", steps=40, lr=0.002), toy_ds, TOY_G)
        first = np.mean([r.j_g for r in res.records[:5]])
        last = np.mean([r.j_g for r in res.records[-5:]])
        assert last < first

    def test_train_indices_restricts_pool(self, toy_ds):
        res = train(toy_cfg(mode="regress", steps=3), toy_ds, TOY_G, None, train_indices=[0, 1])
        assert len(res.records) == 3
        with pytest.raises(Exception):
            train(toy_cfg(mode="regress"), toy_ds, TOY_G, None, train_indices=[])

    def test_checkpoint_series_and_log(self, toy_ds, tmp_path):
        out = tmp_path / "run" / "ck"
        res = train_gan(toy_cfg(steps=4, checkpoint_interval=2), toy_ds, TOY_G, TOY_D, out=out)
        assert (tmp_path / "run" / "ck_step2.npz").exists()
        assert (tmp_path / "run" / "ck_step4.npz").exists()
        assert (tmp_path / "run" / "ck.npz").exists()
        log = (tmp_path / "run" / "ck.log.csv").read_text().splitlines()
        assert log[0] == "step,J_D,J_G,d_real_mean,d_fake_mean,wall_ms"
        assert len(log) == 5
        assert len(res.checkpoint_paths) == 3

    def test_nonfinite_aborts_with_diagnostic(self, toy_ds, tmp_path, monkeypatch):
        import usgan.training as tr

        real = tr.Generator

        class BadGen(real):
            def forward(self, z, grids, train=True):
                out = super().forward(z, grids, train)
                return np.full_like(out, np.nan)

        monkeypatch.setattr(tr, "Generator", BadGen)
        out = tmp_path / "ck"
        with pytest.raises(NonFiniteLossError) as ei:
            tr.train(toy_cfg(mode="regress"), toy_ds, TOY_G, None, out=out)
        assert ei.value.diagnostic_path is not None
        assert (tmp_path / "ck_diverged.npz").exists()

    def test_dims_mismatch_rejected(self, toy_ds):
        bad = GeneratorSpec(out_dims=(32, 24), noise_dim=5, n_upsample=2, initial_channels=8)
        with pytest.raises(Exception):
            train(toy_cfg(mode="regress"), toy_ds, bad, None)


class TestConfig:
    def test_invalid_mode(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=1, mode="wgan")

    def test_invalid_smoothing(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=1, label_smoothing=0.0)

    def test_round_trip(self):
        cfg = toy_cfg(mode="l2gan", l2_weight=0.5)
        assert TrainConfig(**cfg.to_json_dict()) == cfg
