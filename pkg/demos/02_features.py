import tempfile
from pathlib import Path

import numpy as np

from genrelyrics.data import GenreClass, render_line
from genrelyrics.features import (AudioBuffer, CmvnStats, apply_cmvn, compute_features, read_feature_cache,
                                  write_feature_cache, write_wav, read_wav)

"""
A synthetic sung line
"""
# render_line turns words into a 16 kHz waveform whose spectral character
# depends on the genre: harmonic pop vocals, distorted metal, percussive hip hop.
rng = np.random.default_rng(0)
audio = render_line(["love", "baby", "night"], GenreClass.METAL, rng)
print("samples:", audio.shape, "seconds:", audio.shape[0] / 16000)

"""
80 log-mel filterbanks + 3 pitch features per 10 ms frame
"""
fm = compute_features(AudioBuffer(audio))
print("frames x dims:", fm.frames.shape)
print("first frame, first five filterbanks:", np.round(fm.frames[0, :5], 2))
print("pitch block (last three dims) of frame 50:", np.round(fm.frames[50, 80:], 3))

"""
Pure tone sanity check
"""
t = np.arange(16000) / 16000
tone = compute_features(AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t)))
print("loudest mel bin for a 1 kHz tone:", int(tone.frames[:, :80].mean(axis=0).argmax()))

"""
Corpus normalisation and the on-disk cache
"""
stats = CmvnStats.from_matrices([fm.frames, tone.frames])
norm = apply_cmvn(fm.frames, stats)
print("normalised mean/std of dim 0:", round(float(norm[:, 0].mean()), 3), round(float(norm[:, 0].std()), 3))

with tempfile.TemporaryDirectory() as tmp:
    write_wav(Path(tmp) / "line.wav", AudioBuffer(audio))
    again = compute_features(read_wav(Path(tmp) / "line.wav")).frames
    write_feature_cache(Path(tmp) / "line.fbk", again)
    cached = read_feature_cache(Path(tmp) / "line.fbk")
    print("cache round trip is float32-exact:", np.array_equal(cached, again.astype(np.float32)))
