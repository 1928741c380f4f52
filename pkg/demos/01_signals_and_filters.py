"""Tour of the signal substrate: buffers, STFT analysis, and the parametric
lowpass model.

Run:  python demos/01_signals_and_filters.py
"""

import numpy as np

from blindbwe import (
    AudioBuffer,
    FilterBounds,
    FilterParams,
    StftPlan,
    apply_filter,
    fft_mag,
    filter_response_db,
    istft,
    project,
    rms,
    stft,
)

FS = 22050
rng = np.random.default_rng(0)

# --- buffers and levels ----------------------------------------------------
t = np.arange(FS) / FS
tone = AudioBuffer(0.3 * np.sin(2 * np.pi * 440.0 * t), FS)
print(f"440 Hz tone: {tone.duration_seconds:.2f} s, rms = {rms(tone):.4f} "
      f"(amplitude/sqrt(2) = {0.3 / np.sqrt(2):.4f})")

freqs, mags = fft_mag(tone)
peak = freqs[np.argmax(mags)]
print(f"full-signal spectrum peaks at {peak:.1f} Hz")

# --- STFT round trip -------------------------------------------------------
plan = StftPlan()  # 4096-sample Hamming window, hop 2048
noise = AudioBuffer(rng.standard_normal(32768), FS)
spec = stft(noise, plan)
back = istft(spec, plan)
err = np.linalg.norm(back.samples - noise.samples) / np.linalg.norm(noise.samples)
print(f"\nSTFT geometry: {spec.n_bins} bins x {spec.n_frames} frames")
print(f"analysis/synthesis round-trip relative error: {err:.2e}")

# --- the piecewise-linear lowpass model -------------------------------------
# Breakpoints are (cutoff Hz, slope dB/octave); the response is 0 dB below
# the first cutoff and decays piecewise-linearly in log2 frequency.
bounds = FilterBounds.for_rate(FS)
phi = project(FilterParams([1000.0, 3000.0], [-12.0, -30.0]), bounds)
probe = np.array([500.0, 1000.0, 2000.0, 3000.0, 6000.0, 11025.0])
response = filter_response_db(phi, probe)
print("\ntwo-breakpoint response:")
for f, h in zip(probe, response):
    print(f"  H({f:7.0f} Hz) = {h:8.2f} dB")

# projection repairs arbitrary parameters onto the constraint set
messy = FilterParams([5.0, 4.0, 90000.0], [-0.1, -0.2, -99.0])
fixed = project(messy, bounds)
print("\nprojection of unordered/out-of-range parameters:")
print("  cutoffs:", np.round(fixed.cutoffs_hz, 1))
print("  slopes: ", np.round(fixed.slopes_db_oct, 1))

# --- zero-phase application --------------------------------------------------
wide = AudioBuffer(rng.standard_normal(4 * FS), FS)
narrow = apply_filter(wide, phi, plan)
f_axis = plan.bin_freqs(FS)
band = (f_axis > 5500) & (f_axis < 6500)
before = np.abs(stft(wide, plan).frames[band]).mean()
after = np.abs(stft(narrow, plan).frames[band]).mean()
print(f"\nwhite noise through the filter: 6 kHz band drops "
      f"{20 * np.log10(after / before):.1f} dB "
      f"(model says {filter_response_db(phi, [6000.0])[0]:.1f} dB)")
