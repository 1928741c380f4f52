import numpy as np
import pytest

from blindbwe import AudioBuffer, GaussianPrior, score_from_denoised

FS = 22050


class TestGaussianDenoise:
    def test_zero_sigma_is_identity(self, small_prior, rng):
        x = AudioBuffer(rng.standard_normal(4096), FS)
        out = small_prior.denoise(x, 0.0)
        assert np.allclose(out.samples, x.samples, atol=1e-12)

    def test_large_sigma_shrinks_to_mean(self, small_prior, rng):
        x = AudioBuffer(rng.standard_normal(4096), FS)
        sigma = np.sqrt(1e6 * small_prior.spectral_variances.max())
        out = small_prior.denoise(x, sigma)
        assert np.linalg.norm(out.samples) <= 1e-4 * np.linalg.norm(x.samples)

    def test_flat_unit_variance_scalar_analogue(self):
        # lambda = 1 everywhere, sigma = 1: D = x / 2, so x = 2 maps to 1.
        prior = GaussianPrior(64, FS, np.ones(33))
        x = AudioBuffer(np.full(64, 2.0), FS)
        out = prior.denoise(x, 1.0)
        assert np.allclose(out.samples, 1.0, atol=1e-12)

    def test_length_mismatch(self, small_prior, rng):
        with pytest.raises(ValueError, match="supported_length"):
            small_prior.denoise(AudioBuffer(rng.standard_normal(100), FS), 0.1)

    def test_nonzero_mean(self, rng):
        mean = rng.standard_normal(256) * 0.1
        prior = GaussianPrior(256, FS, np.full(129, 1e-6), mean=mean)
        x = AudioBuffer(rng.standard_normal(256), FS)
        out = prior.denoise(x, 10.0)  # sigma^2 >> lambda: collapse to mean
        assert np.allclose(out.samples, mean, atol=1e-5)

    def test_shrinkage_monotone_in_sigma(self, small_prior, rng):
        x = AudioBuffer(rng.standard_normal(4096), FS)
        norms = [
            np.linalg.norm(small_prior.denoise(x, s).samples)
            for s in [0.0, 0.01, 0.05, 0.2, 1.0, 5.0]
        ]
        assert np.all(np.diff(norms) < 0)


class TestGaussianVjp:
    def test_zero_vector(self, small_prior, rng):
        x = AudioBuffer(rng.standard_normal(4096), FS)
        v = AudioBuffer(np.zeros(4096), FS)
        assert np.allclose(small_prior.vjp(x, 0.3, v).samples, 0.0)

    def test_zero_sigma_identity_jacobian(self, small_prior, rng):
        x = AudioBuffer(rng.standard_normal(4096), FS)
        v = AudioBuffer(rng.standard_normal(4096), FS)
        assert np.allclose(small_prior.vjp(x, 0.0, v).samples, v.samples, atol=1e-12)

    def test_matches_directional_finite_difference(self, small_prior, rng):
        x = AudioBuffer(rng.standard_normal(4096), FS)
        v = AudioBuffer(rng.standard_normal(4096), FS)
        sigma, eps = 0.25, 1e-4
        plus = small_prior.denoise(x.with_samples(x.samples + eps * v.samples), sigma)
        minus = small_prior.denoise(x.with_samples(x.samples - eps * v.samples), sigma)
        jv = (plus.samples - minus.samples) / (2 * eps)
        # denoiser is linear with a symmetric Jacobian: J v == J^T v
        jtv = small_prior.vjp(x, sigma, v).samples
        assert np.linalg.norm(jv - jtv) <= 1e-6 * np.linalg.norm(jtv)

    def test_linearity(self, small_prior, rng):
        x = AudioBuffer(rng.standard_normal(4096), FS)
        v = rng.standard_normal(4096)
        w = rng.standard_normal(4096)
        a, bcoef = 2.5, -0.7
        combined = small_prior.vjp(
            x, 0.4, AudioBuffer(a * v + bcoef * w, FS)
        ).samples
        split = a * small_prior.vjp(x, 0.4, AudioBuffer(v, FS)).samples + (
            bcoef * small_prior.vjp(x, 0.4, AudioBuffer(w, FS)).samples
        )
        assert np.allclose(combined, split, atol=1e-9)


class TestScore:
    def test_zero_when_estimate_equals_state(self, rng):
        x = AudioBuffer(rng.standard_normal(512), FS)
        assert np.allclose(score_from_denoised(x, x, 0.5).samples, 0.0)

    def test_algebraic_identity(self, rng):
        sigma = 0.37
        x = AudioBuffer(rng.standard_normal(512), FS)
        u = rng.standard_normal(512)
        x_hat = x.with_samples(x.samples + sigma**2 * u)
        assert np.allclose(score_from_denoised(x_hat, x, sigma).samples, u, atol=1e-10)

    def test_zero_sigma_rejected(self, rng):
        x = AudioBuffer(rng.standard_normal(16), FS)
        with pytest.raises(ValueError, match="score undefined"):
            score_from_denoised(x, x, 0.0)

    def test_matches_exact_marginal_score(self, small_prior, rng):
        # (D(x, sigma) - x)/sigma^2 equals -x per-bin weighted by 1/(lambda+sigma^2)
        x = AudioBuffer(rng.standard_normal(4096), FS)
        for sigma in (0.01, 0.1, 0.5):
            approx = score_from_denoised(small_prior.denoise(x, sigma), x, sigma)
            exact = small_prior.marginal_score(x, sigma)
            assert np.linalg.norm(approx.samples - exact.samples) <= 1e-6 * (
                np.linalg.norm(exact.samples)
            )

    def test_scalar_lambda_closed_form(self, rng):
        prior = GaussianPrior(128, FS, np.ones(65))
        x = AudioBuffer(rng.standard_normal(128), FS)
        sigma = 0.8
        got = score_from_denoised(prior.denoise(x, sigma), x, sigma).samples
        assert np.allclose(got, -x.samples / (1.0 + sigma**2), atol=1e-12)


class TestPriorSampling:
    def test_sigma_data_calibration(self):
        prior = GaussianPrior.with_spectral_knee(8192, FS, sigma_data=0.07)
        assert prior.sigma_data == pytest.approx(0.07, rel=1e-9)

    def test_sample_scale(self, rng):
        prior = GaussianPrior.with_spectral_knee(8192, FS, sigma_data=0.07)
        stds = [np.std(prior.sample(rng).samples) for _ in range(20)]
        assert np.mean(stds) == pytest.approx(0.07, rel=0.05)

    def test_spectral_variances_realized(self, rng):
        prior = GaussianPrior.with_spectral_knee(2048, FS)
        acc = np.zeros(1025)
        draws = 400
        for _ in range(draws):
            acc += np.abs(np.fft.rfft(prior.sample(rng).samples)) ** 2
        acc /= draws
        expected = prior.spectral_variances * 2048
        for sl in (slice(1, 256), slice(256, 512), slice(512, 1024)):
            assert acc[sl].mean() == pytest.approx(expected[sl].mean(), rel=0.1)

    def test_ancestral_consistency(self, rng):
        # For draws x0 ~ prior, x = x0 + sigma * eps, the estimation residual
        # x0 - D(x) must be orthogonal to x in expectation.
        prior = GaussianPrior.with_spectral_knee(256, FS)
        sigma = 0.05
        draws = 1000
        stats = np.empty(draws)
        for i in range(draws):
            x0 = prior.sample(rng)
            x = x0.with_samples(x0.samples + sigma * rng.standard_normal(256))
            resid = x0.samples - prior.denoise(x, sigma).samples
            stats[i] = float(np.dot(resid, x.samples))
        t = np.mean(stats) / (np.std(stats, ddof=1) / np.sqrt(draws))
        assert abs(t) < 3.0

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            GaussianPrior(64, FS, np.zeros(33))
        with pytest.raises(ValueError, match="one-sided"):
            GaussianPrior(64, FS, np.ones(10))
