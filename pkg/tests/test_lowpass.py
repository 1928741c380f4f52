import numpy as np
import pytest

import blindbwe.lowpass as lowpass
from blindbwe import (
    AudioBuffer,
    FilterBounds,
    FilterOptimizationError,
    FilterParams,
    FreqWeighting,
    GaussianPrior,
    StftPlan,
    apply_filter,
    cost_filter,
    default_filter_init,
    filter_response_db,
    grad_cost_filter,
    istft,
    optimize_filter,
    project,
    response_gain,
    stft,
    weighted_magnitude_cost,
)
from blindbwe.lowpass import _grad_from_mags

FS = 22050
BOUNDS = FilterBounds.for_rate(FS)


def random_params(gen, n):
    cutoffs = gen.uniform(0.5 * BOUNDS.fc_min, 1.2 * BOUNDS.fc_max, n)
    slopes = gen.uniform(BOUNDS.slope_min - 10, BOUNDS.slope_max + 10, n)
    return FilterParams(cutoffs, slopes)


class TestResponse:
    def test_single_breakpoint(self):
        phi = FilterParams([1000.0], [-20.0])
        h = filter_response_db(phi, [500.0, 2000.0, 4000.0])
        assert h == pytest.approx([0.0, -20.0, -40.0], abs=1e-9)

    def test_two_breakpoints_hand_derived(self):
        # One octave at -10 then one octave at -30 with the -10 offset
        phi = FilterParams([1000.0, 2000.0], [-10.0, -30.0])
        h = filter_response_db(phi, [2000.0, 4000.0])
        assert h == pytest.approx([-10.0, -40.0], abs=1e-9)

    def test_flat_below_first_cutoff(self, rng):
        for _ in range(50):
            phi = project(random_params(rng, int(rng.integers(1, 6))), BOUNDS)
            f = phi.cutoffs_hz[0] * (1 - 1e-9)
            assert filter_response_db(phi, [f])[0] == pytest.approx(0.0, abs=1e-9)

    def test_continuity_at_breakpoints(self, rng):
        # Branch values at each cutoff agree with the cumulative offsets.
        for _ in range(200):
            n = int(rng.integers(1, 7))
            phi = project(random_params(rng, n), BOUNDS)
            fc = phi.cutoffs_hz
            slopes = phi.slopes_db_oct
            offsets = np.concatenate(
                [[0.0], np.cumsum(slopes[:-1] * np.log2(fc[1:] / fc[:-1]))]
            )
            h = filter_response_db(phi, fc)
            assert np.all(np.abs(h - offsets) <= 1e-9)

    def test_unordered_rejected(self):
        with pytest.raises(ValueError, match="unordered"):
            filter_response_db(FilterParams([2000.0, 1000.0], [-5.0, -10.0]), [100.0])
        with pytest.raises(ValueError, match="unordered"):
            filter_response_db(FilterParams([1000.0, 2000.0], [-10.0, -5.0]), [100.0])

    def test_dc_is_flat(self):
        phi = FilterParams([1000.0], [-20.0])
        assert filter_response_db(phi, [0.0])[0] == 0.0


class TestProject:
    def test_clamp_to_fc_min(self):
        out = project(FilterParams([10.0], [-20.0]), BOUNDS)
        assert out.cutoffs_hz[0] == 20.0

    def test_inversion_repair_with_gap(self):
        out = project(FilterParams([1000.0, 900.0], [-5.0, -10.0]), BOUNDS)
        assert out.cutoffs_hz == pytest.approx([1000.0, 1010.0])

    def test_slope_chain(self):
        out = project(FilterParams([1000.0, 2000.0], [-0.5, -0.5]), BOUNDS)
        assert out.slopes_db_oct == pytest.approx([-1.0, -2.0])

    def test_idempotent(self, rng):
        for _ in range(300):
            phi = random_params(rng, int(rng.integers(1, 7)))
            once = project(phi, BOUNDS)
            twice = project(once, BOUNDS)
            assert np.array_equal(once.cutoffs_hz, twice.cutoffs_hz)
            assert np.array_equal(once.slopes_db_oct, twice.slopes_db_oct)

    def test_constraints_hold(self, rng):
        for _ in range(300):
            phi = random_params(rng, int(rng.integers(1, 7)))
            out = project(phi, BOUNDS)
            assert out.is_ordered() or out.n_breakpoints == 1
            assert np.all(out.cutoffs_hz >= BOUNDS.fc_min)
            assert np.all(out.cutoffs_hz <= BOUNDS.fc_max)
            assert np.all(out.slopes_db_oct <= BOUNDS.slope_max)
            assert np.all(out.slopes_db_oct >= BOUNDS.slope_min)
            assert np.all(np.diff(out.cutoffs_hz) > 0)
            assert np.all(np.diff(out.slopes_db_oct) < 0)

    def test_upper_pileup_stays_ordered(self):
        out = project(
            FilterParams([20000.0, 30000.0, 40000.0], [-60.0, -70.0, -80.0]), BOUNDS
        )
        assert np.all(np.diff(out.cutoffs_hz) > 0)
        assert out.cutoffs_hz[-1] == BOUNDS.fc_max
        assert np.all(np.diff(out.slopes_db_oct) < 0)
        assert out.slopes_db_oct[-1] == BOUNDS.slope_min

    def test_capacity_validation(self):
        tight = FilterBounds(fc_min=20.0, fc_max=60.0, fc_gap=10.0)
        with pytest.raises(ValueError, match="cannot hold"):
            project(FilterParams(np.linspace(20, 60, 6), -np.arange(1.0, 7.0)), tight)


class TestApplyFilter:
    def test_identity_at_fc_max(self, plan, rng):
        phi = project(FilterParams([BOUNDS.fc_max], [-1.0]), BOUNDS)
        x = AudioBuffer(rng.standard_normal(16384), FS)
        out = apply_filter(x, phi, plan)
        roundtrip = istft(stft(x, plan), plan)
        assert np.allclose(out.samples, roundtrip.samples, atol=1e-9)
        rel = np.linalg.norm(out.samples - x.samples) / np.linalg.norm(x.samples)
        assert rel <= 1e-6

    def test_white_noise_band_attenuation(self, rng):
        # Welch-style band estimate over >= 100 frames: -40 dB at two octaves
        plan = StftPlan(window_len=1024, hop=512)
        n = 110 * 512 + 1024
        x = AudioBuffer(rng.standard_normal(n), FS)
        phi = project(FilterParams([1000.0], [-20.0]), BOUNDS)
        out = apply_filter(x, phi, plan)
        f = plan.bin_freqs(FS)
        band = (f >= 3900) & (f <= 4100)
        pin = np.sum(np.abs(stft(x, plan).frames[band]) ** 2)
        pout = np.sum(np.abs(stft(out, plan).frames[band]) ** 2)
        ratio_db = 10 * np.log10(pout / pin)
        assert ratio_db == pytest.approx(-40.0, abs=1.0)


class TestCost:
    def test_zero_for_equal(self, plan, rng):
        y = AudioBuffer(rng.standard_normal(8192), FS)
        assert cost_filter(y, y, plan) == 0.0

    def test_phase_agnostic(self, plan, rng):
        y = AudioBuffer(rng.standard_normal(8192), FS)
        flipped = AudioBuffer(-y.samples, FS)
        assert cost_filter(y, flipped, plan) == pytest.approx(0.0, abs=1e-18)

    def test_single_bin_kernel(self):
        # One frame, one active bin at Nyquist where w = 1: C = (2-1)^2 = 1
        weights = np.array([0.0, 0.5, 1.0])
        ref = np.array([[0.0], [0.0], [2.0]])
        est = np.array([[0.0], [0.0], [1.0]])
        assert weighted_magnitude_cost(ref, est, weights) == pytest.approx(1.0)

    def test_length_mismatch(self, plan, rng):
        y = AudioBuffer(rng.standard_normal(8192), FS)
        z = AudioBuffer(rng.standard_normal(4096), FS)
        with pytest.raises(ValueError, match="equal lengths"):
            cost_filter(y, z, plan)

    def test_nonnegative(self, plan, rng):
        y = AudioBuffer(rng.standard_normal(8192), FS)
        z = AudioBuffer(rng.standard_normal(8192), FS)
        assert cost_filter(y, z, plan) > 0.0


def fd_gradient(mag_y, mag_x0, phi, freqs, weights, step_fc=1.0, step_slope=0.01):
    """Finite-difference oracle: central differences of the magnitude cost
    via independent response evaluation (no chain rule)."""

    def cost_at(cutoffs, slopes):
        gains = response_gain(FilterParams(cutoffs, slopes), freqs)
        return weighted_magnitude_cost(mag_y, gains[:, None] * mag_x0, weights)

    n = phi.n_breakpoints
    g_fc = np.empty(n)
    g_slope = np.empty(n)
    for i in range(n):
        up = np.array(phi.cutoffs_hz)
        dn = np.array(phi.cutoffs_hz)
        up[i] += step_fc
        dn[i] -= step_fc
        g_fc[i] = (cost_at(up, phi.slopes_db_oct) - cost_at(dn, phi.slopes_db_oct)) / (
            2 * step_fc
        )
        up = np.array(phi.slopes_db_oct)
        dn = np.array(phi.slopes_db_oct)
        up[i] += step_slope
        dn[i] -= step_slope
        g_slope[i] = (cost_at(phi.cutoffs_hz, up) - cost_at(phi.cutoffs_hz, dn)) / (
            2 * step_slope
        )
    return g_fc, g_slope


def safe_random_filter(gen, n_breakpoints, freqs):
    """Random projected filter whose cutoffs sit > 2 Hz from any analysis bin
    (central differences straddle a kink when a cutoff crosses a bin)."""
    while True:
        cutoffs = np.sort(gen.uniform(150.0, 8000.0, n_breakpoints))
        slopes = np.sort(gen.uniform(-45.0, -2.0, n_breakpoints))[::-1]
        phi = project(FilterParams(cutoffs, slopes), BOUNDS)
        dist = np.abs(phi.cutoffs_hz[:, None] - freqs[None, :]).min(axis=1)
        if np.all(dist > 2.0) and np.all(np.diff(phi.cutoffs_hz) > 25.0):
            return phi


class TestGradient:
    def test_zero_estimate_gives_zero_gradient(self, plan, rng):
        y = AudioBuffer(rng.standard_normal(8192), FS)
        silent = AudioBuffer(np.zeros(8192), FS)
        phi = project(FilterParams([1000.0], [-20.0]), BOUNDS)
        g_fc, g_slope = grad_cost_filter(y, silent, phi, plan)
        assert np.all(g_fc == 0.0) and np.all(g_slope == 0.0)

    @pytest.mark.parametrize("n_breakpoints", [1, 3, 5])
    def test_matches_finite_differences(self, plan, n_breakpoints):
        gen = np.random.default_rng(100 + n_breakpoints)
        prior = GaussianPrior.with_spectral_knee(22050, FS)
        freqs = plan.bin_freqs(FS)
        weights = FreqWeighting.for_plan(plan, FS).weights
        for _ in range(5):
            x0 = prior.sample(gen)
            target = project(
                FilterParams(
                    np.sort(gen.uniform(400, 4000, n_breakpoints)),
                    np.sort(gen.uniform(-40, -5, n_breakpoints))[::-1],
                ),
                BOUNDS,
            )
            y = apply_filter(x0, target, plan)
            phi = safe_random_filter(gen, n_breakpoints, freqs)
            mag_y = stft(y, plan).magnitudes()
            mag_x0 = stft(x0, plan).magnitudes()
            g_fc, g_slope, _ = _grad_from_mags(mag_y, mag_x0, phi, freqs, weights)
            fd_fc, fd_slope = fd_gradient(mag_y, mag_x0, phi, freqs, weights)
            got = np.concatenate([g_fc, g_slope])
            want = np.concatenate([fd_fc, fd_slope])
            assert np.linalg.norm(got - want) <= 1e-4 * np.linalg.norm(want)

    def test_gradient_smaller_at_truth_than_one_octave_off(self, plan):
        gen = np.random.default_rng(7)
        prior = GaussianPrior.with_spectral_knee(44100, FS)
        x0 = prior.sample(gen)
        truth = project(FilterParams([1000.0], [-20.0]), BOUNDS)
        y = apply_filter(x0, truth, plan)
        g_true = np.concatenate(grad_cost_filter(y, x0, truth, plan))
        offset = project(FilterParams([2000.0], [-20.0]), BOUNDS)
        g_off = np.concatenate(grad_cost_filter(y, x0, offset, plan))
        assert np.linalg.norm(g_true) < np.linalg.norm(g_off)


class TestOptimize:
    def test_step_size_defaults(self):
        import inspect

        sig = inspect.signature(optimize_filter)
        assert sig.parameters["mu_fc"].default == 1000.0
        assert sig.parameters["mu_slope"].default == 10.0
        assert sig.parameters["tol"].default == 5e-3

    @pytest.mark.parametrize("seed", range(10))
    def test_self_consistency_recovery(self, plan, seed):
        gen = np.random.default_rng(seed)
        prior = GaussianPrior.with_spectral_knee(65536, FS)
        x0 = prior.sample(gen)
        truth = project(FilterParams([1000.0], [-20.0]), BOUNDS)
        y = apply_filter(x0, truth, plan)
        phi, info = optimize_filter(
            y, x0, FilterParams([300.0], [-50.0]), plan, BOUNDS, max_iters=2000
        )
        assert abs(np.log2(phi.cutoffs_hz[0] / 1000.0)) <= 1 / 3
        assert abs(phi.slopes_db_oct[0] + 20.0) <= 6.0

    def test_local_minimum_returns_quickly(self, plan, rng):
        # Gradient ~0 at the start: the first step moves nothing and the
        # relative-change criterion fires immediately.
        y = AudioBuffer(np.zeros(8192) + 0.0, FS)
        silent = AudioBuffer(np.zeros(8192), FS)
        phi0 = project(FilterParams([1000.0], [-20.0]), BOUNDS)
        phi, info = optimize_filter(y, silent, phi0, plan, BOUNDS)
        assert info.iterations == 1
        assert np.allclose(phi.cutoffs_hz, phi0.cutoffs_hz)
        assert np.allclose(phi.slopes_db_oct, phi0.slopes_db_oct)

    def test_zero_iters_returns_initial(self, plan, rng):
        y = AudioBuffer(rng.standard_normal(8192), FS)
        phi0 = project(FilterParams([500.0], [-30.0]), BOUNDS)
        phi, info = optimize_filter(y, y, phi0, plan, BOUNDS, max_iters=0)
        assert info.iterations == 0
        assert np.array_equal(phi.cutoffs_hz, phi0.cutoffs_hz)

    def test_iterates_stay_in_constraint_set(self, plan, rng, monkeypatch):
        seen = []
        original = lowpass.project

        def recording_project(phi, bounds):
            out = original(phi, bounds)
            seen.append(out)
            return out

        monkeypatch.setattr(lowpass, "project", recording_project)
        gen = np.random.default_rng(3)
        prior = GaussianPrior.with_spectral_knee(32768, FS)
        x0 = prior.sample(gen)
        truth = original(FilterParams([1000.0], [-20.0]), BOUNDS)
        y = apply_filter(x0, truth, plan)
        optimize_filter(y, x0, default_filter_init(3), plan, BOUNDS, max_iters=50)
        assert len(seen) > 1
        for phi in seen:
            assert np.all(np.diff(phi.cutoffs_hz) > 0)
            assert np.all(phi.cutoffs_hz >= BOUNDS.fc_min)
            assert np.all(phi.cutoffs_hz <= BOUNDS.fc_max)

    def test_non_finite_gradient_aborts_with_step(self):
        mag = np.full((5, 2), np.nan)
        freqs = np.linspace(0, FS / 2, 5)
        weights = np.sqrt(freqs / (FS / 2))
        with pytest.raises(FilterOptimizationError) as err:
            lowpass._optimize_from_mags(
                mag,
                mag,
                project(FilterParams([1000.0], [-20.0]), BOUNDS),
                freqs,
                weights,
                BOUNDS,
            )
        assert err.value.iteration == 1


class TestSerialization:
    def test_round_trip(self):
        phi = FilterParams([1000.0, 3000.0], [-12.0, -25.0])
        data = phi.to_dict(FS)
        assert data["sample_rate"] == FS
        assert data["breakpoints"][0] == {"fc_hz": 1000.0, "slope_db_oct": -12.0}
        back = FilterParams.from_dict(data)
        assert np.array_equal(back.cutoffs_hz, phi.cutoffs_hz)
        assert np.array_equal(back.slopes_db_oct, phi.slopes_db_oct)


class TestDefaultInit:
    def test_shape_and_ranges(self):
        phi = default_filter_init(5)
        assert phi.cutoffs_hz[0] == pytest.approx(300.0)
        assert phi.cutoffs_hz[-1] == pytest.approx(300.0 * 2**0.5)
        assert phi.slopes_db_oct[0] == pytest.approx(-15.0)
        assert phi.slopes_db_oct[-1] == pytest.approx(-50.0)
        assert project(phi, BOUNDS).n_breakpoints == 5

    def test_single_breakpoint(self):
        phi = default_filter_init(1)
        assert phi.cutoffs_hz == pytest.approx([300.0])
