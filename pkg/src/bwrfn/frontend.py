"""Audio frontend: WAV IO, 40-dim log-mel filterbank features, crops.

Per-frame pipeline: Hann window -> power spectrum (FFT size = next power of
two >= window length) -> triangular HTK-mel filterbank spanning 0 Hz to
Nyquist -> natural log floored at 1e-10 power. No mean/variance
normalization happens here; normalization is the subject of the norm
layers. The frame count is T = 1 + floor((len - win) / hop).

Feature cache format: magic ``BWF1``, little-endian u32 F, u32 T, then
F*T little-endian f32 values row-major.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, FormatError

LOG_FLOOR_POWER = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise FormatError("empty waveform")
        if self.sample_rate <= 0:
            raise FormatError(f"sample_rate must be positive, got {self.sample_rate}")


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (F, T) log-mel energies
    frame_shift: float  # seconds

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise FormatError("feature matrix must be rank 2 (F, T)")


def read_wav(path: str) -> Waveform:
    """Read a RIFF/WAVE PCM-16 mono file; samples scaled by 1/32768."""
    try:
        with wave.open(path, "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise FormatError(f"{path}: compression type {wf.getcomptype()!r}, need PCM")
            if wf.getnchannels() != 1:
                raise FormatError(f"{path}: nchannels={wf.getnchannels()}, need mono")
            if wf.getsampwidth() != 2:
                raise FormatError(f"{path}: sampwidth={wf.getsampwidth()}, need 16-bit")
            nframes = wf.getnframes()
            raw = wf.readframes(nframes)
            if len(raw) != 2 * nframes:
                raise FormatError(f"{path}: truncated data chunk ({len(raw)} bytes for {nframes} frames)")
            rate = wf.getframerate()
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path: str, w: Waveform) -> None:
    """Write PCM-16 mono (round-trip counterpart of read_wav)."""
    ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(path, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(ints.tobytes())


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular filters (n_mels, fft_size//2 + 1), HTK scale, 0 Hz..Nyquist."""
    nyquist = sample_rate / 2.0
    mel_pts = np.linspace(0.0, float(hz_to_mel(nyquist)), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def filter_centers_hz(n_mels: int, sample_rate: int) -> np.ndarray:
    nyquist = sample_rate / 2.0
    mel_pts = np.linspace(0.0, float(hz_to_mel(nyquist)), n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


def logmel(w: Waveform, n_mels: int = 40, win_seconds: float = 0.025,
           hop_seconds: float = 0.010) -> FeatureMatrix:
    win = int(round(win_seconds * w.sample_rate))
    hop = int(round(hop_seconds * w.sample_rate))
    if len(w.samples) < win:
        raise DomainError(
            f"waveform of {len(w.samples)} samples shorter than one {win}-sample window"
        )
    fft_size = 1
    while fft_size < win:
        fft_size *= 2
    n_frames = 1 + (len(w.samples) - win) // hop
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)  # periodic Hann
    fb = mel_filterbank(n_mels, fft_size, w.sample_rate)
    feats = np.empty((n_mels, n_frames))
    for t in range(n_frames):
        frame = w.samples[t * hop : t * hop + win] * window
        spec = np.fft.rfft(frame, n=fft_size)
        power = np.abs(spec) ** 2
        feats[:, t] = np.log(np.maximum(fb @ power, LOG_FLOOR_POWER))
    return FeatureMatrix(values=feats, frame_shift=hop_seconds)


def crop_segments(f: FeatureMatrix, seconds: float,
                  rng: np.random.Generator) -> list[np.ndarray]:
    """Fixed-length (F, T_seg) crops with random starts; short inputs wrap."""
    if seconds <= 0:
        raise ConfigError("segment length must be positive")
    t_seg = int(round(seconds / f.frame_shift))
    t = f.values.shape[1]
    if t <= t_seg:
        cols = np.arange(t_seg) % t
        return [f.values[:, cols].copy()]
    n_crops = t // t_seg
    starts = rng.integers(0, t - t_seg + 1, size=n_crops)
    return [f.values[:, s : s + t_seg].copy() for s in starts]


CACHE_MAGIC = b"BWF1"


def write_feature_cache(path: str, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise FormatError("feature cache stores a rank-2 (F, T) matrix")
    f, t = values.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", f, t))
        fh.write(values.astype("<f4").tobytes())


def read_feature_cache(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CACHE_MAGIC:
        raise FormatError(f"{path}: bad cache magic {raw[:4]!r}")
    f, t = struct.unpack_from("<II", raw, 4)
    expect = 12 + 4 * f * t
    if len(raw) != expect:
        raise FormatError(f"{path}: expected {expect} bytes, found {len(raw)}")
    vals = np.frombuffer(raw, dtype="<f4", count=f * t, offset=12)
    return vals.reshape(f, t).astype(np.float64)
