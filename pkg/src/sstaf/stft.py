"""Hann-windowed STFT power features and the on-disk feature store."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigError


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 128
    hop: int = 64
    window: str = "hann"
    log_power: bool = False

    def validate(self) -> None:
        if self.n_fft < 2 or self.n_fft % 2:
            raise ConfigError(f"n_fft must be an even integer >= 2, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ConfigError(f"hop must satisfy 0 < hop <= n_fft, got {self.hop}")
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")

    @property
    def f_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, length: int) -> int:
        if length < self.n_fft:
            raise ValueError(f"signal of {length} samples is shorter than n_fft={self.n_fft}")
        return (length - self.n_fft) // self.hop + 1


@dataclass
class Spectrogram:
    power: np.ndarray  # channels x f_bins x t_frames
    frame_times: np.ndarray  # seconds, frame centres
    freqs: np.ndarray  # Hz


def hann_window(length: int) -> np.ndarray:
    """Symmetric Hann taper, zero at both ends."""
    if length < 2:
        raise ConfigError(f"window length must be >= 2, got {length}")
    n = np.arange(length)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / (length - 1)))


def stft_power_batch(epochs: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Power spectrograms for a stack of epochs.

    ``epochs`` is (n, T, C); the result is (n, C, f_bins, t_frames). Frames
    start at sample 0 with no padding.
    """
    cfg.validate()
    x = np.asarray(epochs, dtype=np.float64)
    cfg.n_frames(x.shape[1])
    frames = sliding_window_view(x, cfg.n_fft, axis=1)[:, ::cfg.hop]  # (n, t, C, n_fft)
    spec = np.fft.rfft(frames * hann_window(cfg.n_fft), axis=-1)
    power = spec.real**2 + spec.imag**2
    if cfg.log_power:
        power = np.log(power + 1e-10)
    return np.ascontiguousarray(power.transpose(0, 2, 3, 1))


def stft_power(epoch: np.ndarray, cfg: StftConfig = StftConfig(), fs: float = 160.0) -> Spectrogram:
    epoch = np.asarray(epoch, dtype=np.float64)
    if epoch.ndim != 2:
        raise ValueError(f"epoch must be (T, C), got {epoch.shape}")
    power = stft_power_batch(epoch[None], cfg)[0]
    t = power.shape[-1]
    times = (np.arange(t) * cfg.hop + cfg.n_fft / 2) / fs
    freqs = np.arange(cfg.f_bins) * fs / cfg.n_fft
    return Spectrogram(power, times, freqs)


def bin_frequencies(cfg: StftConfig, fs: float) -> np.ndarray:
    return np.arange(cfg.f_bins) * fs / cfg.n_fft


# -- feature store -----------------------------------------------------------

def is_feature_store(path) -> bool:
    p = Path(path)
    return (p / "features.bin").exists() and (p / "features.json").exists()


def featurize_store(epoch_store, out, cfg: StftConfig = StftConfig(), chunk: int = 256) -> Path:
    """STFT every epoch of an epoch store into ``features.bin`` + ``features.json``."""
    from .ingest.store import read_epoch_store

    cfg.validate()
    src = Path(epoch_store)
    eps = read_epoch_store(src)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t_frames = cfg.n_frames(eps.data.shape[1])
    with open(out / "features.bin", "wb") as fh:
        for start in range(0, len(eps), chunk):
            block = stft_power_batch(eps.data[start:start + chunk], cfg)
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())
    meta = {
        **asdict(cfg), "f_bins": cfg.f_bins, "t_frames": t_frames, "channels": eps.n_channels,
        "n_epochs": len(eps), "fs": eps.fs, "source": str(src.resolve()),
        "index": "index.json", "standardized": False, "format": "sstaf-features-1",
    }
    (out / "features.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out


def read_feature_store(path) -> tuple[np.ndarray, dict]:
    p = Path(path)
    meta = json.loads((p / "features.json").read_text())
    shape = (meta["n_epochs"], meta["channels"], meta["f_bins"], meta["t_frames"])
    blob = (p / "features.bin").read_bytes()
    need = 4 * int(np.prod(shape))
    if len(blob) != need:
        raise ValueError(f"{p}/features.bin holds {len(blob)} bytes, expected {need}")
    return np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float64), meta
