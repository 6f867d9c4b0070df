import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fontmanifold import autodiff as ad
from fontmanifold.errors import CheckpointError, EmptyDataset, RangeError
from fontmanifold.ingest import GlyphBitmap
from fontmanifold.rng import Rng
from fontmanifold.vae import (LATENT_DIM, TrainConfig, VaeModel, decode, encode,
                              init_params, kl_divergence, model_from_bytes,
                              model_to_bytes, new_model, reconstruction_loss,
                              reparameterize, sample_generated_corpus,
                              slider_to_latent, train, _sample_loss)


def _random_glyph(seed: int) -> GlyphBitmap:
    rng = np.random.default_rng(seed)
    return GlyphBitmap(rng.uniform(0.0, 1.0, size=(28, 28)))


class TestEncodeDecode:
    def test_encode_arity(self, tiny_model):
        mu, logvar = encode(tiny_model, _random_glyph(0))
        assert mu.shape == (5,)
        assert logvar.shape == (5,)

    def test_encode_deterministic(self, tiny_model):
        g = _random_glyph(1)
        mu1, lv1 = encode(tiny_model, g)
        mu2, lv2 = encode(tiny_model, g)
        assert np.array_equal(mu1, mu2)
        assert np.array_equal(lv1, lv2)

    def test_zero_params_give_bias(self):
        model = new_model(3)
        zeroed = {k: np.zeros_like(v) for k, v in model.params.items()}
        zeroed["enc_mu.bias"] = np.arange(5.0)
        model = VaeModel(params=zeroed, hyper=model.hyper)
        mu, logvar = encode(model, _random_glyph(2))
        assert np.array_equal(mu, np.arange(5.0))
        assert np.array_equal(logvar, np.zeros(5))

    def test_decode_range_and_determinism(self, tiny_model):
        z = np.array([0.3, -1.0, 0.0, 2.0, -0.5])
        a = decode(tiny_model, z)
        b = decode(tiny_model, z)
        assert a.pixels.shape == (28, 28)
        assert (a.pixels > 0.0).all() and (a.pixels < 1.0).all()
        assert np.array_equal(a.pixels, b.pixels)

    def test_decode_validates_latent(self, tiny_model):
        with pytest.raises(RangeError):
            decode(tiny_model, [0.0, 1.0, 2.0])
        with pytest.raises(RangeError):
            decode(tiny_model, [0.0, 1.0, 2.0, np.nan, 0.0])

    def test_encoder_shape_algebra(self, tiny_model):
        # 1x28x28 -> 16x14x14 -> 32x7x7 -> 32x7x7 -> 32x7x7 -> flatten 1568
        from fontmanifold.vae import _tensors, _encoder
        tape = ad.Tape()
        pt = _tensors(tiny_model.params)
        x = ad.Tensor(_random_glyph(4).pixels[None])
        shapes = []
        h = x
        for name, stride in (("enc_conv1", 2), ("enc_conv2", 2),
                             ("enc_conv3", 1), ("enc_conv4", 1)):
            h = ad.relu(tape, ad.conv2d(tape, h, pt[f"{name}.kernel"],
                                        pt[f"{name}.bias"], stride))
            shapes.append(h.values.shape)
        assert shapes == [(16, 14, 14), (32, 7, 7), (32, 7, 7), (32, 7, 7)]
        assert np.prod(shapes[-1]) == 1568


class TestReparameterize:
    def test_zero_noise_returns_mu(self):
        mu = np.arange(5.0)
        assert np.array_equal(reparameterize(mu, np.ones(5), np.zeros(5)), mu)

    def test_unit_sigma(self):
        n = np.array([0.5, -1.0, 2.0, 0.0, 3.0])
        out = reparameterize(np.zeros(5), np.zeros(5), n)
        assert np.array_equal(out, n)

    def test_sigma_two(self):
        logvar = np.full(5, 2.0 * math.log(2.0))
        n = np.ones(5)
        out = reparameterize(np.ones(5), logvar, n)
        assert np.allclose(out, 1.0 + 2.0, atol=1e-12)


class TestLosses:
    def test_kl_zero_at_prior(self):
        assert kl_divergence(np.zeros(5), np.zeros(5)) == 0.0

    def test_kl_half_mu_squared(self):
        mu = np.array([1.0, 0, 0, 0, 0])
        assert abs(kl_divergence(mu, np.zeros(5)) - 0.5) < 1e-15

    @given(st.lists(st.floats(min_value=-3, max_value=3), min_size=5, max_size=5),
           st.lists(st.floats(min_value=-3, max_value=3), min_size=5, max_size=5))
    @settings(max_examples=200)
    def test_kl_non_negative(self, mu, logvar):
        assert kl_divergence(np.array(mu), np.array(logvar)) >= 0.0

    def test_kl_non_negative_ten_thousand_draws(self):
        rng = np.random.default_rng(8)
        for _ in range(10_000):
            mu = rng.normal(scale=3.0, size=5)
            logvar = rng.normal(scale=2.0, size=5)
            assert kl_divergence(mu, logvar) >= 0.0

    def test_bce_at_half(self):
        half = GlyphBitmap(np.full((28, 28), 0.5))
        assert abs(reconstruction_loss(half, half) - 784 * math.log(2.0)) < 1e-9

    def test_bce_near_perfect(self):
        ones = GlyphBitmap(np.ones((28, 28)))
        almost = GlyphBitmap(np.full((28, 28), 1.0 - 1e-7))
        assert reconstruction_loss(almost, ones) < 1e-4

    def test_bce_minimized_at_target(self):
        rng = np.random.default_rng(5)
        t = np.clip(rng.uniform(0.1, 0.9, size=(28, 28)), 0, 1)
        target = GlyphBitmap(t)
        at_target = reconstruction_loss(GlyphBitmap(t), target)
        for delta in (0.05, -0.05):
            perturbed = GlyphBitmap(np.clip(t + delta, 1e-6, 1 - 1e-6))
            assert reconstruction_loss(perturbed, target) > at_target

    def test_tape_losses_match_pure_functions(self, tiny_model):
        g = _random_glyph(6)
        noise = np.zeros(5)
        tape, pt, loss, recon, kl = _sample_loss(tiny_model.params, g.pixels, noise)
        mu, logvar = encode(tiny_model, g)
        z = reparameterize(mu, logvar, noise)
        out = decode(tiny_model, z)
        assert abs(float(recon.values) - reconstruction_loss(out, g)) < 1e-9
        assert abs(float(kl.values) - kl_divergence(mu, logvar)) < 1e-9


class TestTraining:
    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            train([_random_glyph(0)], TrainConfig(epochs=1))

    def test_loss_decreases(self, small_bitmaps):
        logs = []
        train(small_bitmaps[:24], TrainConfig(epochs=3, batch_size=8, seed=7),
              log_fn=lambda e: logs.append(e))
        assert logs[-1]["mean_loss"] < logs[0]["mean_loss"]

    def test_deterministic_checkpoint_and_log(self, small_bitmaps):
        def run():
            logs = []
            model = train(small_bitmaps[:16], TrainConfig(epochs=2, batch_size=8, seed=3),
                          log_fn=lambda e: logs.append(e))
            return model_to_bytes(model), logs

        bytes1, logs1 = run()
        bytes2, logs2 = run()
        assert bytes1 == bytes2
        assert logs1 == logs2

    def test_epoch_log_fields(self, small_bitmaps):
        logs = []
        train(small_bitmaps[:8], TrainConfig(epochs=2, batch_size=4, seed=1),
              log_fn=lambda e: logs.append(e))
        assert [e["epoch"] for e in logs] == [1, 2]
        for e in logs:
            assert set(e) == {"epoch", "mean_loss", "mean_recon", "mean_kl"}
            assert abs(e["mean_loss"] - e["mean_recon"] - e["mean_kl"]) < 1e-9


class TestFullLossGradient:
    def test_matches_finite_differences_on_sampled_coords(self, small_bitmaps):
        """End-to-end gradient of BCE+KL over a 2-image batch vs central FD,
        on random coordinates of every parameter tensor.

        Biases get continuous random values: zero biases put every
        background-only ReLU pre-activation exactly on the kink, where
        central differences are undefined by construction.
        """
        init_rng = Rng(21)
        params = init_params(init_rng)
        for name in sorted(params):
            jitter = ad.gaussian_sample(init_rng, params[name].size) * 0.05
            params[name] = params[name] + jitter.reshape(params[name].shape)
        images = [b.pixels for b in small_bitmaps[:2]]
        noises = [ad.gaussian_sample(Rng(100 + i), LATENT_DIM) for i in range(2)]

        def batch_loss(p):
            total = 0.0
            for pix, noise in zip(images, noises):
                _, _, loss, _, _ = _sample_loss(p, pix, noise)
                total += float(loss.values)
            return total / len(images)

        acc: dict[str, np.ndarray] = {}
        for pix, noise in zip(images, noises):
            tape, pt, loss, _, _ = _sample_loss(params, pix, noise)
            grads = ad.backward(tape, loss)
            for name, tensor in pt.items():
                g = grads.get(tensor)
                if g is not None:
                    acc[name] = acc.get(name, 0.0) + g / len(images)

        eps = 1e-5
        coord_rng = np.random.default_rng(9)
        worst = 0.0
        for name in sorted(params):
            flat = params[name].reshape(-1)
            picks = coord_rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for j in picks:
                plus = {k: v.copy() for k, v in params.items()}
                minus = {k: v.copy() for k, v in params.items()}
                plus[name].reshape(-1)[j] += eps
                minus[name].reshape(-1)[j] -= eps
                fd = (batch_loss(plus) - batch_loss(minus)) / (2 * eps)
                g = acc[name].reshape(-1)[j]
                worst = max(worst, abs(g - fd) / max(1.0, abs(g), abs(fd)))
        assert worst < 1e-5


class TestSliderMap:
    def test_endpoints(self):
        z0 = slider_to_latent([0] * 5)
        z99 = slider_to_latent([99] * 5)
        assert np.allclose(z0, -1.6448536, atol=1e-6)
        assert np.allclose(z99, 1.6448536, atol=1e-6)

    def test_antisymmetry_all_positions(self):
        for k in range(100):
            z = slider_to_latent([k] * 5)
            mirrored = slider_to_latent([99 - k] * 5)
            assert np.allclose(z, -mirrored, atol=1e-9)

    def test_midpoint_is_monotone(self):
        values = [slider_to_latent([k] * 5)[0] for k in range(100)]
        assert all(b > a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("bad", [[100, 0, 0, 0, 0], [-1, 0, 0, 0, 0],
                                     [0, 0, 0, 0], [0, 0, 0, 0, 0, 0],
                                     [0.5, 0, 0, 0, 0]])
    def test_range_errors(self, bad):
        with pytest.raises(RangeError):
            slider_to_latent(bad)


class TestGeneratedCorpus:
    def test_count_unique_and_deterministic(self, tiny_model):
        a = sample_generated_corpus(tiny_model, count=40, seed=9)
        b = sample_generated_corpus(tiny_model, count=40, seed=9)
        assert len(a) == 40
        assert len({s.sliders for s in a}) == 40
        for x, y in zip(a, b):
            assert x.sliders == y.sliders
            assert np.array_equal(x.bitmap.pixels, y.bitmap.pixels)

    def test_latents_within_slider_band(self, tiny_model):
        edge = slider_to_latent([99] * 5)[0]
        for s in sample_generated_corpus(tiny_model, count=25, seed=2):
            assert (np.abs(s.latent) <= edge + 1e-12).all()


class TestCheckpoint:
    def test_round_trip_bitwise(self, tiny_model):
        blob = model_to_bytes(tiny_model)
        loaded = model_from_bytes(blob)
        assert loaded.hyper == tiny_model.hyper
        for name, values in tiny_model.params.items():
            assert np.array_equal(loaded.params[name], values)
        assert model_to_bytes(loaded) == blob

    def test_decode_identical_after_round_trip(self, tiny_model):
        z = np.array([0.1, -0.7, 1.2, 0.0, -1.6])
        before = decode(tiny_model, z)
        after = decode(model_from_bytes(model_to_bytes(tiny_model)), z)
        assert np.array_equal(before.pixels, after.pixels)

    def test_bad_magic(self, tiny_model):
        blob = bytearray(model_to_bytes(tiny_model))
        blob[:4] = b"NOPE"
        with pytest.raises(CheckpointError):
            model_from_bytes(bytes(blob))

    def test_bad_version(self, tiny_model):
        blob = bytearray(model_to_bytes(tiny_model))
        blob[4] = 99
        with pytest.raises(CheckpointError):
            model_from_bytes(bytes(blob))

    def test_truncated_payload(self, tiny_model):
        blob = model_to_bytes(tiny_model)
        with pytest.raises(CheckpointError):
            model_from_bytes(blob[:-16])
