"""Signal pipeline: STFT analysis/synthesis, masks, SNR mixing, WAV I/O and synthetic data.

Defaults are 16 kHz audio, 20 ms frames (320 samples), 10 ms hop (160
samples) and a 320-point FFT, giving 161 frequency bins. Analysis uses a
periodic Hann window; synthesis is weighted overlap-add normalised by the
summed squared window.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.signal import lfilter

SAMPLE_RATE = 16000
FFT_SIZE = 320
FRAME_LEN = 320
HOP = 160


class AudioFormatError(ValueError):
    """Raised for audio that does not meet the pipeline's format requirements."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: NDArray[np.float64]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise AudioFormatError(f"audio must be mono (1-D), got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise AudioFormatError("audio contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True, eq=False)
class Spectrogram:
    frames: NDArray[np.complex128]
    fft_size: int = FFT_SIZE
    frame_len: int = FRAME_LEN
    hop: int = HOP
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        f = np.asarray(self.frames, dtype=np.complex128)
        if f.ndim != 2 or f.shape[1] != self.fft_size // 2 + 1:
            raise ValueError(f"spectrogram must be (T, {self.fft_size // 2 + 1}), got {f.shape}")
        if self.frame_len > self.fft_size or self.hop <= 0:
            raise ValueError("frame_len must not exceed fft_size and hop must be positive")
        object.__setattr__(self, "frames", f)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames: NDArray[np.complex128]) -> Spectrogram:
        return Spectrogram(frames, self.fft_size, self.frame_len, self.hop, self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = FFT_SIZE
    frame_len: int = FRAME_LEN
    hop: int = HOP

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


FULL_STFT = StftConfig()
DESK_STFT = StftConfig(64, 64, 32)


def hann(n: int) -> NDArray[np.float64]:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _require_rate(x: AudioBuffer) -> None:
    if x.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"expected {SAMPLE_RATE} Hz audio, got {x.sample_rate} Hz")


def stft(x: AudioBuffer, cfg: StftConfig = FULL_STFT) -> Spectrogram:
    _require_rate(x)
    n = len(x)
    if n < cfg.frame_len:
        raise ValueError(f"signal of {n} samples is shorter than one {cfg.frame_len}-sample frame")
    num = (n - cfg.frame_len) // cfg.hop + 1
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(num)[:, None]
    frames = x.samples[idx] * hann(cfg.frame_len)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return Spectrogram(spec, cfg.fft_size, cfg.frame_len, cfg.hop, x.sample_rate)


def istft(s: Spectrogram) -> AudioBuffer:
    """Weighted overlap-add inverse of :func:`stft`.

    Output length is ``(T - 1) * hop + frame_len``. Samples are exact up to
    rounding wherever the summed squared window is nonzero, which excludes
    only the very first sample for a periodic Hann.
    """
    if s.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"expected {SAMPLE_RATE} Hz spectrogram, got {s.sample_rate} Hz")
    win = hann(s.frame_len)
    T_ = s.num_frames
    length = (T_ - 1) * s.hop + s.frame_len if T_ else 0
    out = np.zeros(length)
    norm = np.zeros(length)
    if T_:
        frames = np.fft.irfft(s.frames, n=s.fft_size, axis=1)[:, : s.frame_len] * win
        for t in range(T_):
            sl = slice(t * s.hop, t * s.hop + s.frame_len)
            out[sl] += frames[t]
            norm[sl] += win * win
    nz = norm > 1e-12
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return AudioBuffer(out, s.sample_rate)


def magnitude(s: Spectrogram | NDArray[np.complex128]) -> NDArray[np.float64]:
    frames = s.frames if isinstance(s, Spectrogram) else np.asarray(s)
    return np.abs(frames)


def apply_mask(noisy: Spectrogram, mask: NDArray[np.float64]) -> Spectrogram:
    """Scale each bin's magnitude by ``mask``; the noisy phase is kept."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != noisy.frames.shape:
        raise ValueError(f"mask shape {mask.shape} does not match spectrogram {noisy.frames.shape}")
    if np.any(mask < 0.0) or np.any(mask > 1.0) or not np.all(np.isfinite(mask)):
        raise ValueError("mask entries must lie in [0, 1]")
    return noisy.with_frames(noisy.frames * mask)


def irm_target(clean_mag: NDArray[np.float64], noise_mag: NDArray[np.float64]) -> NDArray[np.float64]:
    """Ideal ratio mask |S| / (|S| + |N|), with 0/0 taken as 0."""
    s = np.asarray(clean_mag, dtype=np.float64)
    n = np.asarray(noise_mag, dtype=np.float64)
    if s.shape != n.shape:
        raise ValueError(f"shape mismatch {s.shape} vs {n.shape}")
    if np.any(s < 0) or np.any(n < 0):
        raise ValueError("magnitudes must be nonnegative")
    den = s + n
    out = np.zeros_like(den)
    np.divide(s, den, out=out, where=den > 0)
    return out


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


def power(x: NDArray[np.float64]) -> float:
    return float(np.mean(np.square(x)))


def snr_db(signal: NDArray[np.float64], noise: NDArray[np.float64]) -> float:
    return 10.0 * np.log10(power(signal) / power(noise))


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, spec: MixSpec) -> tuple[AudioBuffer, AudioBuffer]:
    """Scale ``noise`` to sit ``spec.snr_db`` below ``clean`` and add them."""
    if len(clean) != len(noise):
        raise ValueError(f"clean has {len(clean)} samples but noise has {len(noise)}")
    pc, pn = power(clean.samples), power(noise.samples)
    if pc == 0.0:
        raise ValueError("clean signal is silent")
    if pn == 0.0:
        raise ValueError("noise signal is silent")
    gain = np.sqrt(pc / (pn * 10.0 ** (spec.snr_db / 10.0)))
    scaled = noise.samples * gain
    return AudioBuffer(clean.samples + scaled, clean.sample_rate), AudioBuffer(scaled, noise.sample_rate)


def read_wav(path: str | Path) -> AudioBuffer:
    """Read 16-bit PCM mono 16 kHz WAV, scaling by 1/32768."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit samples")
        if wf.getframerate() != SAMPLE_RATE:
            raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz sample rate, got {wf.getframerate()} Hz")
        raw = wf.readframes(wf.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(data, SAMPLE_RATE)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    _require_rate(audio)
    pcm = np.round(np.clip(audio.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())


def synth_clean(rng: np.random.Generator, seconds: float = 1.0) -> AudioBuffer:
    """Harmonic tone complex (2-4 partials) under a random on/off amplitude envelope."""
    n = int(round(seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(150.0, 600.0)
    n_harm = int(rng.integers(2, 5))
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        f = f0 * k * rng.uniform(0.98, 1.02)
        if f >= 0.45 * SAMPLE_RATE:
            break
        x += rng.uniform(0.3, 1.0) / k * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    # Syllable-like envelope: a few raised-cosine bursts.
    env = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        centre = rng.uniform(0.1, 0.9) * n
        width = rng.uniform(0.08, 0.25) * n
        d = np.abs(np.arange(n) - centre) / width
        env = np.maximum(env, np.where(d < 1.0, 0.5 + 0.5 * np.cos(np.pi * d), 0.0))
    x *= env
    peak = np.max(np.abs(x))
    if peak > 0:
        x *= rng.uniform(0.2, 0.5) / peak
    return AudioBuffer(x)


def synth_noise(rng: np.random.Generator, seconds: float = 1.0) -> AudioBuffer:
    """White noise through a random one-pole low- or high-pass filter."""
    n = int(round(seconds * SAMPLE_RATE))
    white = rng.standard_normal(n)
    pole = rng.uniform(0.0, 0.9) * (1.0 if rng.random() < 0.7 else -1.0)
    colored = lfilter([1.0 - abs(pole)], [1.0, -pole], white)
    return AudioBuffer(0.1 * colored / np.sqrt(np.mean(colored**2)))


@dataclass(frozen=True, eq=False)
class Utterance:
    clean: AudioBuffer
    noise: AudioBuffer
    noisy: AudioBuffer
    snr_db: float


def synth_utterance(
    rng: np.random.Generator,
    snr_range: tuple[float, float] = (-5.0, 15.0),
    seconds: float = 1.0,
    snr: float | None = None,
) -> Utterance:
    clean = synth_clean(rng, seconds)
    noise = synth_noise(rng, seconds)
    level = float(rng.uniform(*snr_range)) if snr is None else float(snr)
    noisy, scaled = mix_at_snr(clean, noise, MixSpec(level))
    return Utterance(clean, scaled, noisy, level)


def synth_dataset(
    n: int, seed: int, snr_range: tuple[float, float] = (-5.0, 15.0), seconds: float = 1.0
) -> list[Utterance]:
    rng = np.random.default_rng(seed)
    return [synth_utterance(rng, snr_range, seconds) for _ in range(n)]
