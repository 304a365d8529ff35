"""Spectral front-end and back-end.

STFT with a periodic Hann window and no centering (frame ``t`` covers
samples ``[t*hop, t*hop + n_fft)``), an HTK-scale triangular mel filterbank
with unit peaks, natural-log mel spectrograms floored at 1e-10, frame RMS
energy, Griffin-Lim phase reconstruction as the reference vocoder, and
linear resampling. All functions are pure; Griffin-Lim randomness is
confined to an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .media_io import AudioBuffer

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class SpectrogramConfig:
    """Front-end geometry shared by one pipeline run.

    ``f_max=None`` means Nyquist. The window is always a periodic Hann and
    the mel scale is HTK; neither is configurable.
    """

    n_fft: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float | None = None

    def __post_init__(self):
        if self.n_fft <= 0 or self.hop_length <= 0 or self.n_mels <= 0:
            raise ValidationError("n_fft, hop_length, and n_mels must be positive")
        if self.hop_length > self.n_fft:
            raise ValidationError("hop_length must not exceed n_fft")
        if self.f_min < 0:
            raise ValidationError("f_min must be non-negative")

    def resolved_f_max(self, sample_rate: int) -> float:
        f_max = sample_rate / 2 if self.f_max is None else self.f_max
        if not (0 <= self.f_min < f_max <= sample_rate / 2):
            raise ValidationError(
                f"need 0 <= f_min < f_max <= sr/2, got [{self.f_min}, {f_max}] at {sample_rate} Hz"
            )
        return f_max

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class MelSpectrogram:
    """T x n_mels matrix of natural-log mel energies, floored at 1e-10."""

    sample_rate: int
    n_fft: int
    hop_length: int
    n_mels: int
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.n_mels:
            raise ValidationError(f"mel frames must be T x {self.n_mels}")
        if self.frames.size and self.frames.min() < np.log(LOG_FLOOR) - 1e-9:
            raise ValidationError("mel entries below the log floor")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def matches(self, cfg: SpectrogramConfig) -> bool:
        return (
            self.n_fft == cfg.n_fft
            and self.hop_length == cfg.hop_length
            and self.n_mels == cfg.n_mels
        )


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _require_mono(buf: AudioBuffer, op: str) -> np.ndarray:
    if buf.channels != 1:
        raise ValidationError(f"{op} requires mono input, got {buf.channels} channels")
    return buf.samples


def frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    return 0 if n_samples < n_fft else 1 + (n_samples - n_fft) // hop


def _frame_signal(x: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    t = frame_count(x.size, cfg.n_fft, cfg.hop_length)
    if t == 0:
        return np.zeros((0, cfg.n_fft))
    windows = np.lib.stride_tricks.sliding_window_view(x, cfg.n_fft)[:: cfg.hop_length]
    return windows[:t] * hann_periodic(cfg.n_fft)


def stft(buf: AudioBuffer, cfg: SpectrogramConfig) -> np.ndarray:
    """One-sided STFT, shape T x (n_fft/2 + 1); empty for inputs < n_fft."""
    x = _require_mono(buf, "stft")
    frames = _frame_signal(x, cfg)
    if frames.shape[0] == 0:
        return np.zeros((0, cfg.n_bins), dtype=np.complex128)
    return np.fft.rfft(frames, axis=1)


def _overlap_add(spec: np.ndarray, cfg: SpectrogramConfig, length: int) -> np.ndarray:
    window = hann_periodic(cfg.n_fft)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1) * window
    out = np.zeros(length)
    wsum = np.zeros(length)
    for t in range(spec.shape[0]):
        lo = t * cfg.hop_length
        out[lo : lo + cfg.n_fft] += frames[t]
        wsum[lo : lo + cfg.n_fft] += window**2
    nz = wsum > 1e-12
    out[nz] /= wsum[nz]
    return out


def hz_to_mel(f):
    """HTK mel scale: mel(f) = 2595 log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: SpectrogramConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters, n_mels x (n_fft/2 + 1), peak height 1.

    Peaks sit at n_mels + 2 points equally spaced on the HTK mel scale
    between f_min and f_max; no area normalization. Raises if the FFT
    resolution leaves any filter with no nonzero bin.
    """
    f_max = cfg.resolved_f_max(sample_rate)
    mel_points = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(f_max), cfg.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(cfg.n_bins) * sample_rate / cfg.n_fft

    lower = hz_points[:-2, None]
    center = hz_points[1:-1, None]
    upper = hz_points[2:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        rising = (bin_freqs - lower) / (center - lower)
        falling = (upper - bin_freqs) / (upper - center)
    bank = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    bank[~np.isfinite(bank)] = 0.0
    if cfg.n_mels and not bank.any(axis=1).all():
        raise ValidationError(
            f"n_mels={cfg.n_mels} too large for n_fft={cfg.n_fft} at {sample_rate} Hz: empty filter"
        )
    return bank


def mel_spectrogram(buf: AudioBuffer, cfg: SpectrogramConfig) -> MelSpectrogram:
    """ln(max(filterbank . |stft|^2, 1e-10)) of a mono buffer."""
    bank = mel_filterbank(cfg, buf.sample_rate)
    spec = stft(buf, cfg)
    power = np.abs(spec) ** 2
    mel = np.log(np.maximum(power @ bank.T, LOG_FLOOR))
    return MelSpectrogram(buf.sample_rate, cfg.n_fft, cfg.hop_length, cfg.n_mels, mel)


def frame_energy(buf: AudioBuffer, window_samples: int, hop_samples: int) -> np.ndarray:
    """RMS per window at the given hop; the last partial window is dropped."""
    if window_samples <= 0 or hop_samples <= 0:
        raise ValidationError("window and hop must be positive")
    x = _require_mono(buf, "frame_energy")
    t = frame_count(x.size, window_samples, hop_samples)
    if t == 0:
        return np.zeros(0)
    windows = np.lib.stride_tricks.sliding_window_view(x, window_samples)[::hop_samples][:t]
    return np.sqrt(np.mean(windows**2, axis=1))


def griffin_lim(
    mel: MelSpectrogram,
    cfg: SpectrogramConfig,
    iterations: int = 32,
    seed: int = 0,
) -> AudioBuffer:
    """Reconstruct a waveform from a log-mel spectrogram.

    Mel-to-linear inversion uses the filterbank pseudo-inverse clamped at
    zero; the initial phase comes from a generator seeded with ``seed``, so
    output is bit-reproducible. Output length is exactly
    ``(T-1)*hop + n_fft``, clipped to [-1, 1].
    """
    if not mel.matches(cfg):
        raise ValidationError("mel geometry does not match the spectrogram config")
    t = mel.frame_count
    if t == 0:
        return AudioBuffer(mel.sample_rate, 1, np.zeros(0))
    bank = mel_filterbank(cfg, mel.sample_rate)
    mel_power = np.exp(mel.frames)
    lin_power = np.clip(mel_power @ np.linalg.pinv(bank).T, 0.0, None)
    magnitude = np.sqrt(lin_power)

    length = (t - 1) * cfg.hop_length + cfg.n_fft
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=magnitude.shape)
    spec = magnitude * np.exp(1j * phase)
    for _ in range(iterations):
        x = _overlap_add(spec, cfg, length)
        reanalysis = np.fft.rfft(_frame_signal(np.asarray(x), cfg), axis=1)
        spec = magnitude * np.exp(1j * np.angle(reanalysis))
    x = np.clip(_overlap_add(spec, cfg, length), -1.0, 1.0)
    return AudioBuffer(mel.sample_rate, 1, x)


def resample_linear(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Linear interpolation at exact rational positions i*src/target.

    Duration is preserved to within one output sample. The source rate path
    is still exact: positions land on integers and values copy through.
    """
    if target_rate <= 0:
        raise ValidationError("target_rate must be positive")
    src = buf.sample_rate
    n = buf.frame_count
    out_n = (2 * n * target_rate + src) // (2 * src)  # round-half-up of n*target/src
    if n == 0 or out_n == 0:
        return AudioBuffer(target_rate, buf.channels, np.zeros(0))
    pos_num = np.arange(out_n, dtype=np.int64) * src
    idx = pos_num // target_rate
    frac = (pos_num - idx * target_rate) / target_rate
    idx = np.minimum(idx, n - 1)
    nxt = np.minimum(idx + 1, n - 1)
    per_channel = buf.samples.reshape(n, buf.channels)
    out = (1.0 - frac)[:, None] * per_channel[idx] + frac[:, None] * per_channel[nxt]
    return AudioBuffer(target_rate, buf.channels, out.reshape(-1))


# --- serialization ----------------------------------------------------------


def mel_to_text(mel: MelSpectrogram) -> str:
    lines = [
        f"mel v1 {mel.sample_rate} {mel.n_fft} {mel.hop_length} {mel.n_mels} {mel.frame_count}"
    ]
    for row in mel.frames:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def mel_from_text(text: str) -> MelSpectrogram:
    lines = text.strip().splitlines()
    if not lines:
        raise FormatError("empty mel payload")
    head = lines[0].split()
    if len(head) != 7 or head[0] != "mel" or head[1] != "v1":
        raise FormatError(f"bad mel header: {lines[0]!r}")
    try:
        sr, n_fft, hop, n_mels, t = (int(v) for v in head[2:])
    except ValueError:
        raise FormatError(f"bad mel header: {lines[0]!r}") from None
    if len(lines) - 1 != t:
        raise FormatError(f"mel payload has {len(lines) - 1} rows, header says {t}")
    if t == 0:
        frames = np.zeros((0, n_mels))
    else:
        try:
            frames = np.array([[float(v) for v in line.split()] for line in lines[1:]])
        except ValueError:
            raise FormatError("non-numeric mel row") from None
        if frames.shape != (t, n_mels):
            raise FormatError("mel row width does not match header")
    return MelSpectrogram(sr, n_fft, hop, n_mels, np.maximum(frames, np.log(LOG_FLOOR)))


def write_mel(mel: MelSpectrogram, path) -> None:
    Path(path).write_text(mel_to_text(mel))


def read_mel(path) -> MelSpectrogram:
    return mel_from_text(Path(path).read_text())
