"""Audio and transcript augmentation and dataset expansion.

Run: python3 demos/06_augmentation.py
"""
import tempfile

import numpy as np

from msmtfn.augment import AugmentPolicy, HomophoneDict, expand_dataset, gaussian_noise, homophone_substitute, random_mask, speed_perturb
from msmtfn.dataio import synth_dataset

rng = np.random.default_rng(0)
sr = 8000
tone = np.sin(2 * np.pi * 220.0 * np.arange(sr) / sr)

noisy = gaussian_noise(tone, 0.05, rng)
print("noise std", round(float((noisy - tone).std()), 4))

for factor in (0.9, 1.1):
    out = speed_perturb(tone, factor)
    n = 1 << 16
    peak = np.argmax(np.abs(np.fft.rfft(out * np.hanning(out.size), n))) * sr / n
    print(f"speed x{factor}: {tone.size} -> {out.size} samples, pitch {peak:.1f} Hz")

masked = random_mask(tone, 0.1, 400, rng)
print("fraction of samples zeroed", round(float(np.mean(masked == 0) - np.mean(tone == 0)), 3))

homophones = HomophoneDict.sample()
print("homophones:", "".join(homophone_substitute("我想买牙膏", homophones, 0.5, rng)))

with tempfile.TemporaryDirectory() as d:
    _, records = synth_dataset(d, n_calls=5, segments_per_call=2, mode="raw")
    expanded = expand_dataset(records, AugmentPolicy(audio_multiplicity=2, text_multiplicity=1), homophones)
    print(f"{len(records)} calls expanded to {len(expanded)} records:",
          sorted({(r.call_id, r.variant) for r in expanded})[:4], "...")
