"""Waveform <-> (log-)Mel spectrogram conversions and Griffin-Lim phase recovery.

Everything in this module is a pure function of its inputs: no global state,
safe to call concurrently.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

MEL_FLOOR = 1e-10
VARIANCE_FLOOR = 1e-12
DEFAULT_SAMPLE_RATE = 16000


class FrontendError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray  # float64, nominal range [-1, 1]
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise FrontendError("waveform must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise FrontendError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise FrontendError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class StftConfig:
    window_len: int = 800   # 50 ms at 16 kHz
    hop_len: int = 200      # 12.5 ms
    fft_size: int = 1024
    window_kind: str = "hann"

    def __post_init__(self):
        if self.window_len <= 0 or self.hop_len <= 0:
            raise FrontendError("window_len and hop_len must be positive")
        if self.hop_len > self.window_len:
            raise FrontendError("hop_len must not exceed window_len")
        if self.fft_size < self.window_len or self.fft_size & (self.fft_size - 1):
            raise FrontendError("fft_size must be a power of two >= window_len")
        if self.window_kind != "hann":
            raise FrontendError(f"unsupported window kind: {self.window_kind}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        # periodic Hann: satisfies COLA for hop = window/4 (and window/2)
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_len)


@dataclass
class MelFilterbank:
    weights: np.ndarray  # n_mels x n_bins
    f_min_hz: float
    f_max_hz: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@dataclass
class LogMelSpectrogram:
    """Per-utterance normalized log-Mel features plus the stats to undo it."""

    values: np.ndarray  # frames x n_mels
    mean: float = 0.0
    scale: float = 1.0

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]

    def denormalized(self) -> np.ndarray:
        return self.values * self.scale + self.mean


def read_wav(path) -> Waveform:
    """Read a 16 kHz PCM WAV file, downmixing multi-channel audio to mono."""
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            sampwidth = fh.getsampwidth()
            rate = fh.getframerate()
            n_frames = fh.getnframes()
            raw = fh.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise FrontendError(f"malformed WAV file {path}: {exc}") from exc
    if sampwidth != 2:
        raise FrontendError(f"unsupported encoding: {8 * sampwidth}-bit (expected 16-bit PCM)")
    if rate != DEFAULT_SAMPLE_RATE:
        raise FrontendError(f"unsupported sample rate {rate} Hz (expected {DEFAULT_SAMPLE_RATE})")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return Waveform(np.clip(data, -1.0, 1.0), rate)


def write_wav(w: Waveform, path) -> int:
    """Write 16-bit PCM, clipping out-of-range samples.

    Returns the number of clipped samples.
    """
    clipped = np.clip(w.samples, -1.0, 1.0)
    n_clipped = int(np.sum(clipped != w.samples))
    ints = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(ints.tobytes())
    return n_clipped


def _frame_signal(x: np.ndarray, cfg: StftConfig, center: bool) -> np.ndarray:
    if center:
        pad = cfg.window_len // 2
        x = np.pad(x, pad, mode="reflect" if len(x) > 1 else "constant")
    n = len(x)
    if n < cfg.window_len:
        x = np.pad(x, (0, cfg.window_len - n))
        n = cfg.window_len
    n_frames = 1 + (n - cfg.window_len) // cfg.hop_len
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop_len * np.arange(n_frames)[:, None]
    return x[idx]


def stft(w: Waveform, cfg: StftConfig | None = None, center: bool = True) -> np.ndarray:
    """Complex spectrogram, frames x (fft_size/2 + 1)."""
    cfg = cfg or StftConfig()
    if len(w.samples) < 1:
        raise FrontendError("cannot STFT an empty waveform")
    frames = _frame_signal(w.samples, cfg, center)
    return np.fft.rfft(frames * cfg.window()[None, :], n=cfg.fft_size, axis=1)


def check_cola(cfg: StftConfig) -> None:
    """Reject window/hop pairs whose squared-window overlap-add is not constant."""
    win_sq = cfg.window() ** 2
    n = cfg.window_len * 4
    acc = np.zeros(n + cfg.window_len)
    for start in range(0, n, cfg.hop_len):
        acc[start:start + cfg.window_len] += win_sq
    interior = acc[cfg.window_len:n]
    if interior.min() < 1e-8 or (interior.max() - interior.min()) / interior.max() > 1e-8:
        raise FrontendError("window does not satisfy COLA for this hop length")


def istft(spec: np.ndarray, cfg: StftConfig | None = None, length: int | None = None,
          center: bool = True) -> Waveform:
    """Inverse STFT via window-square-normalized overlap-add."""
    cfg = cfg or StftConfig()
    check_cola(cfg)
    spec = np.asarray(spec, dtype=np.complex128)
    n_frames = spec.shape[0]
    win = cfg.window()
    frames_t = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, :cfg.window_len]
    total = (n_frames - 1) * cfg.hop_len + cfg.window_len
    out = np.zeros(total)
    norm = np.zeros(total)
    for f in range(n_frames):
        start = f * cfg.hop_len
        out[start:start + cfg.window_len] += frames_t[f] * win
        norm[start:start + cfg.window_len] += win ** 2
    out /= np.maximum(norm, 1e-12)
    if center:
        pad = cfg.window_len // 2
        out = out[pad:total - pad]
    if length is not None:
        if len(out) >= length:
            out = out[:length]
        else:
            out = np.pad(out, (0, length - len(out)))
    return Waveform(out)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(n_mels: int = 80, cfg: StftConfig | None = None,
                         f_min_hz: float = 0.0, f_max_hz: float = 8000.0,
                         sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> MelFilterbank:
    """Triangular filters with centers equally spaced on the Mel scale."""
    cfg = cfg or StftConfig()
    nyquist = sample_rate_hz / 2.0
    if not (0.0 <= f_min_hz < f_max_hz <= nyquist):
        raise FrontendError("need 0 <= f_min < f_max <= sample_rate/2")
    mel_pts = np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(cfg.n_bins) * sample_rate_hz / cfg.fft_size
    weights = np.zeros((n_mels, cfg.n_bins))
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        weights[i] = np.maximum(0.0, np.minimum(up, down))
    if np.any(weights.sum(axis=1) == 0.0):
        raise FrontendError("n_mels too large for FFT bin resolution: some filter is all-zero")
    return MelFilterbank(weights, f_min_hz, f_max_hz)


def log_mel(w: Waveform, fb: MelFilterbank | None = None,
            cfg: StftConfig | None = None, normalize: bool = True) -> LogMelSpectrogram:
    """80-channel log-Mel features with per-utterance mean/variance normalization."""
    cfg = cfg or StftConfig()
    fb = fb or build_mel_filterbank(cfg=cfg)
    power = np.abs(stft(w, cfg)) ** 2
    mel = power @ fb.weights.T
    logmel = np.log10(np.maximum(mel, MEL_FLOOR))
    if not normalize:
        return LogMelSpectrogram(logmel, 0.0, 1.0)
    mean = float(logmel.mean())
    var = float(logmel.var())
    if var < VARIANCE_FLOOR:
        return LogMelSpectrogram(logmel - mean, mean, 1.0)
    scale = float(np.sqrt(var))
    return LogMelSpectrogram((logmel - mean) / scale, mean, scale)


def mel_to_linear(m: LogMelSpectrogram, fb: MelFilterbank | None = None,
                  cfg: StftConfig | None = None) -> np.ndarray:
    """Magnitude spectrogram (frames x bins) from log-Mel via filterbank pseudo-inverse."""
    cfg = cfg or StftConfig()
    fb = fb or build_mel_filterbank(cfg=cfg)
    mel_power = 10.0 ** m.denormalized()
    inv = np.linalg.pinv(fb.weights)
    linear_power = np.maximum(mel_power @ inv.T, 0.0)
    return np.sqrt(linear_power)


def griffin_lim(mag: np.ndarray, cfg: StftConfig | None = None, n_iters: int = 60,
                return_distances: bool = False):
    """Phase reconstruction by alternating STFT projections, starting from zero phase.

    The spectral distance || |stft(x_i)| - mag ||_2 is non-increasing across
    iterations (classic fixed-point property).
    """
    cfg = cfg or StftConfig()
    if n_iters < 1:
        raise FrontendError("n_iters must be >= 1")
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise FrontendError("magnitude spectrogram must be nonnegative")
    check_cola(cfg)
    spec = mag.astype(np.complex128)  # zero initial phase
    distances = []
    # Uncentered analysis/synthesis so the STFT pair is an exact least-squares
    # projection pair, which is what makes the distance sequence monotone.
    w = istft(spec, cfg, center=False)
    for _ in range(n_iters):
        s = stft(w, cfg, center=False)
        s = s[:mag.shape[0]]
        if s.shape[0] < mag.shape[0]:
            s = np.pad(s, ((0, mag.shape[0] - s.shape[0]), (0, 0)))
        absval = np.abs(s)
        distances.append(float(np.linalg.norm(absval - mag)))
        phase = s / np.maximum(absval, 1e-16)
        w = istft(mag * phase, cfg, length=len(w.samples), center=False)
    if return_distances:
        return w, distances
    return w


def dump_spectrogram_csv(m: LogMelSpectrogram, path) -> None:
    """One frame per row, 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in m.values:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def dump_spectrogram_pgm(m: LogMelSpectrogram, path) -> None:
    """8-bit PGM, row = Mel channel, column = frame, min->0 max->255."""
    vals = m.values.T  # n_mels x frames
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-30:
        scaled = np.zeros_like(vals, dtype=np.uint8)
    else:
        scaled = np.round((vals - lo) / (hi - lo) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{scaled.shape[1]} {scaled.shape[0]}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())
