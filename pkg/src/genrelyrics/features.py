"""83-dim acoustic frontend: 80 log-mel filterbank + 3 autocorrelation pitch dims."""

from __future__ import annotations

import struct
import warnings
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

SAMPLE_RATE = 16000
WIN = 400  # 25 ms
HOP = 160  # 10 ms
N_FFT = 512
N_MELS = 80
N_PITCH = 3
FEAT_DIM = N_MELS + N_PITCH
LOG_FLOOR = 1e-10
VOICING_THRESHOLD = 0.3
F0_MIN, F0_MAX = 60.0, 400.0


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.rate <= 0:
            raise FeatureError(f"sample rate must be positive, got {self.rate}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, 83)
    frame_shift_ms: int = 10
    frame_len_ms: int = 25
    warning: bool = False  # set when the audio was too short to yield a frame

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != FEAT_DIM:
            raise FeatureError(f"feature matrix must be T x {FEAT_DIM}, got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def num_frames(n_samples: int) -> int:
    return 0 if n_samples < WIN else 1 + (n_samples - WIN) // HOP


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels: int = N_MELS, fmin: float = 0.0, fmax: float = SAMPLE_RATE / 2) -> np.ndarray:
    """Centre frequencies (Hz) of the triangular filters."""
    pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return pts[1:-1]


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: Optional[float] = None) -> np.ndarray:
    """Unit-peak triangular filters on an HTK mel grid, shape (n_mels, n_fft//2+1)."""
    fmax = rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


_FBANK = mel_filterbank()
_WINDOW = np.hanning(WIN)


def frame_signal(samples: np.ndarray) -> np.ndarray:
    n = num_frames(len(samples))
    if n == 0:
        return np.zeros((0, WIN))
    idx = np.arange(WIN)[None, :] + HOP * np.arange(n)[:, None]
    return np.asarray(samples, dtype=np.float64)[idx]


def _check_rate(audio: AudioBuffer) -> None:
    if audio.rate != SAMPLE_RATE:
        raise FeatureError(f"expected {SAMPLE_RATE} Hz audio, got {audio.rate} Hz (resample first)")


def compute_fbank(audio: AudioBuffer, n_mels: int = N_MELS) -> Tuple[np.ndarray, bool]:
    """Log-mel filterbank energies.

    Returns ``(feats, warning)`` where ``feats`` is (T, n_mels) and ``warning`` is
    True when the audio is shorter than one window (then T == 0).
    """
    _check_rate(audio)
    frames = frame_signal(audio.samples)
    if frames.shape[0] == 0:
        warnings.warn(f"audio of {len(audio)} samples is shorter than one {WIN}-sample window")
        return np.zeros((0, n_mels)), True
    fb = _FBANK if n_mels == N_MELS else mel_filterbank(n_mels)
    mag = np.abs(np.fft.rfft(frames * _WINDOW, n=N_FFT, axis=1))
    return np.log(np.maximum(mag @ fb.T, LOG_FLOOR)), False


def _normalized_autocorr(frames: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """Normalised cross-correlation of each frame with its lagged self, (T, len(lags))."""
    x = frames - frames.mean(axis=1, keepdims=True)
    n = x.shape[1]
    spectrum = np.fft.rfft(x, n=2 * n, axis=1)
    ac = np.fft.irfft(spectrum * np.conj(spectrum), n=2 * n, axis=1)[:, lags]
    sq = np.cumsum(x * x, axis=1)
    head = sq[:, n - 1 - lags]  # energy of x[:n-lag]
    tail = sq[:, -1:] - np.concatenate([np.zeros((len(x), 1)), sq], axis=1)[:, lags]  # energy of x[lag:]
    den = np.sqrt(np.maximum(head * tail, 0.0))
    return np.where(den > 1e-12, ac / np.where(den > 1e-12, den, 1.0), 0.0)


def compute_pitch(audio: AudioBuffer) -> np.ndarray:
    """Per-frame ``[voicing, log2(f0/100), delta log-pitch]``, shape (T, 3).

    The lag is the earliest local autocorrelation maximum within 90% of the
    global one in the 60-400 Hz range, which avoids picking period multiples.
    """
    _check_rate(audio)
    frames = frame_signal(audio.samples)
    T = frames.shape[0]
    lags = np.arange(int(np.ceil(SAMPLE_RATE / F0_MAX)), int(SAMPLE_RATE / F0_MIN) + 1)
    voicing = np.zeros(T)
    logp = np.zeros(T)
    voiced = np.zeros(T, dtype=bool)
    corr = _normalized_autocorr(frames, lags) if T else np.zeros((0, len(lags)))
    for t in range(T):
        r = corr[t]
        peak = float(r.max()) if r.size else 0.0
        voicing[t] = max(peak, 0.0)
        if peak < VOICING_THRESHOLD:
            continue
        is_max = np.r_[r[0] >= r[1], (r[1:-1] >= r[:-2]) & (r[1:-1] >= r[2:]), r[-1] >= r[-2]]
        cand = np.flatnonzero(is_max & (r >= 0.9 * peak))
        lag = lags[cand[0]] if cand.size else lags[int(np.argmax(r))]
        logp[t] = np.log2(SAMPLE_RATE / lag / 100.0)
        voiced[t] = True
    delta = np.zeros(T)
    if T >= 3:
        delta[1:-1] = 0.5 * (logp[2:] - logp[:-2])
    delta[~voiced] = 0.0
    return np.stack([voicing, logp, delta], axis=1) if T else np.zeros((0, N_PITCH))


def compute_features(audio: AudioBuffer) -> FeatureMatrix:
    """Full 83-dim frame matrix (fbank followed by pitch)."""
    fbank, warn = compute_fbank(audio)
    if warn:
        return FeatureMatrix(np.zeros((0, FEAT_DIM)), warning=True)
    pitch = compute_pitch(audio)
    return FeatureMatrix(np.concatenate([fbank, pitch], axis=1))


# ----------------------------------------------------------------------------
# normalisation


@dataclass
class CmvnStats:
    mean: np.ndarray
    var: np.ndarray
    count: int = 0

    @classmethod
    def from_matrices(cls, mats) -> "CmvnStats":
        mats = [m.frames if isinstance(m, FeatureMatrix) else m for m in mats]
        stacked = np.concatenate([m for m in mats if len(m)], axis=0)
        return cls(stacked.mean(axis=0), stacked.var(axis=0), int(stacked.shape[0]))

    def to_json(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "CmvnStats":
        return cls(np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["var"], dtype=np.float64),
                   int(obj.get("count", 0)))


def apply_cmvn(feats, stats: CmvnStats):
    """Per-dimension ``(x - mean) / sqrt(var + 1e-10)``.

    Not idempotent: applying twice with the same stats normalises the already
    normalised values a second time.
    """
    frames = feats.frames if isinstance(feats, FeatureMatrix) else np.asarray(feats)
    if frames.shape[-1] != stats.mean.shape[0] or stats.var.shape != stats.mean.shape:
        raise FeatureError(f"CMVN dim mismatch: features {frames.shape[-1]}, stats {stats.mean.shape[0]}")
    out = (frames - stats.mean) / np.sqrt(stats.var + 1e-10)
    if isinstance(feats, FeatureMatrix):
        return FeatureMatrix(out, feats.frame_shift_ms, feats.frame_len_ms, feats.warning)
    return out


# ----------------------------------------------------------------------------
# I/O


def read_wav(path) -> AudioBuffer:
    """Read 16-bit signed mono PCM WAV into floats in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise FeatureError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise FeatureError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return AudioBuffer(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate)


def write_wav(path, audio: AudioBuffer) -> None:
    pcm = np.clip(np.round(np.asarray(audio.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.rate)
        w.writeframes(pcm.tobytes())


def write_feature_cache(path, frames: np.ndarray) -> None:
    """Header ``<u4 T, <u4 83`` then row-major ``<f4`` values."""
    frames = np.asarray(frames)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(struct.pack("<II", frames.shape[0], frames.shape[1]))
        f.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())
    tmp.replace(path)


def read_feature_cache(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) != 8:
            raise FeatureError(f"{path}: truncated feature cache header")
        T, D = struct.unpack("<II", head)
        body = f.read()
    if len(body) != 4 * T * D:
        raise FeatureError(f"{path}: expected {T}x{D} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float64)
