"""
From raw record to spectrogram window
=====================================

Build a few synthetic strong-motion records, clean a flatline buffer out of
one of them and look at what the network actually sees.
"""

import numpy as np

from pwave_vae.experiments import SynthParams, haversine_km, make_synthetic_dataset
from pwave_vae.preprocess import augment_record, detect_artifacts, fit_noise_profile
from pwave_vae.signal_model import extract_window
from pwave_vae.spectrogram import stft_magnitude, to_spectrogram

# Every record carries a zero-filled buffer at the start, as a triggered
# accelerograph would write before the trigger.
records = make_synthetic_dataset(4, seed=2, params=SynthParams(flatline_prob=1.0))
rec = records[0]
print(rec.record_id, rec.samples.shape, "P at sample", rec.p_arrival)
print("epicentral distance %.1f km" % haversine_km(rec.station_coords, rec.event_coords))

# %%
# The flatline detector works block by block on the pre-P part of one axis.
report = detect_artifacts(rec, axis=0)
print("flat segments:", report.flat_segments, "clean stretch:", report.clean_pre_event)

a, b = report.clean_pre_event
profile = fit_noise_profile(rec.samples[0, a:b])
print("fitted noise: H=%.2f, period=%.2fs, scale=%.3g" % (profile.hurst, profile.dominant_period, profile.amplitude_scale))

# Replace the buffer with noise of the same character. Samples outside the
# flagged segment do not change.
clean = augment_record(rec, report, profile, seed=0)
s, e = report.flat_segments[0]
print("still flat after repair:", np.ptp(clean.samples[0, s:e]) == 0)
print("untouched elsewhere:", np.array_equal(clean.samples[0, e:], rec.samples[0, e:]))

# %%
# A training window is 2.44 s long with the arrival 1 s in.
win = extract_window(clean, clean.p_arrival - 100, axis=0, label=True)
mag = stft_magnitude(win)
print("raw STFT magnitude:", mag.shape)
spec = to_spectrogram(win)
print("network input:", spec.pixels.shape, spec.pixels.dtype, "range", spec.pixels.min(), spec.pixels.max())

# The onset shows up as a jump in energy around frame 50 (sample 100 / hop 2).
energy = spec.pixels.mean(axis=0)
print("mean energy before / after onset: %.3f / %.3f" % (energy[:40].mean(), energy[55:].mean()))
