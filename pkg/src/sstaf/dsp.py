"""Signal conditioning: Butterworth band-pass, powerline notch, CAR, z-scoring."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .tensor import ConfigError

CHAIN_ORDER = ("bandpass", "notch", "car")


class StabilityError(ValueError):
    """A filter has a pole on or outside the unit circle."""


@dataclass(frozen=True)
class Recording:
    data: np.ndarray  # samples x channels
    fs: float
    channel_labels: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"recording data must be 2-d (samples x channels), got {data.shape}")
        if self.fs <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if data.shape[1] != len(self.channel_labels):
            raise ValueError(
                f"{data.shape[1]} channels but {len(self.channel_labels)} labels"
            )
        if np.isnan(data).any():
            raise ValueError("recording contains NaN")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> Recording:
        return replace(self, data=data)


@dataclass(frozen=True)
class SosFilter:
    sections: np.ndarray  # (n_sections, 6): b0 b1 b2 a0 a1 a2 with a0 == 1
    description: dict = field(default_factory=dict)

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sections])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex response H(e^{jw}) evaluated directly from the section coefficients."""
        w = 2.0 * np.pi * np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64)) / fs
        z1 = np.exp(-1j * w)
        z2 = z1 * z1
        h = np.ones_like(z1)
        for b0, b1, b2, a0, a1, a2 in self.sections:
            h *= (b0 + b1 * z1 + b2 * z2) / (a0 + a1 * z1 + a2 * z2)
        return h


def _bilinear_pair(p: complex, fs2: float) -> complex:
    return (fs2 + p) / (fs2 - p)


def _section_from_poles(p: complex) -> np.ndarray:
    """Denominator ``[1, a1, a2]`` for the conjugate pair ``p, conj(p)``."""
    return np.array([1.0, -2.0 * p.real, abs(p) ** 2])


def design_butterworth_bandpass(order: int = 5, low_hz: float = 8.0, high_hz: float = 30.0,
                                fs: float = 160.0) -> SosFilter:
    """Digital Butterworth band-pass as cascaded biquads.

    Analog prototype poles are shifted to band-pass via s -> (s^2 + w0^2)/(s*bw)
    with tan-prewarped edges, then mapped by the bilinear transform. Each
    biquad carries one conjugate pole pair plus the zeros at z = +1 and z = -1.
    """
    if order < 1:
        raise ConfigError(f"filter order must be >= 1, got {order}")
    if not 0 < low_hz < high_hz < fs / 2:
        raise ConfigError(f"band [{low_hz}, {high_hz}] Hz must satisfy 0 < low < high < fs/2 = {fs / 2}")
    fs2 = 2.0 * fs
    wl = fs2 * np.tan(np.pi * low_hz / fs)
    wh = fs2 * np.tan(np.pi * high_hz / fs)
    bw = wh - wl
    w0sq = wl * wh

    k = np.arange(order)
    proto = np.exp(1j * np.pi * (2 * k + order + 1) / (2 * order))

    analog = []
    for p in proto:
        disc = np.sqrt((p * bw) ** 2 - 4.0 * w0sq + 0j)
        analog.extend([(p * bw + disc) / 2.0, (p * bw - disc) / 2.0])
    analog = np.array(analog)

    # gain of the analog band-pass is bw^order; bilinear maps it with the
    # (fs2 - z)/(fs2 - p) products (order zeros at s=0, order at infinity)
    gain = (bw**order * fs2**order / np.prod(fs2 - analog)).real
    digital = np.array([_bilinear_pair(p, fs2) for p in analog])

    upper = digital[digital.imag > 1e-12]
    real = np.sort(digital[np.abs(digital.imag) <= 1e-12].real)
    sections = []
    for p in sorted(upper, key=lambda z: abs(z)):
        sections.append(np.concatenate([[1.0, 0.0, -1.0], _section_from_poles(p)]))
    for i in range(0, len(real), 2):
        r1, r2 = real[i], real[i + 1]
        sections.append(np.array([1.0, 0.0, -1.0, 1.0, -(r1 + r2), r1 * r2]))
    sos = np.array(sections)
    sos[:, :3] *= np.sign(gain) * abs(gain) ** (1.0 / len(sos))

    filt = SosFilter(sos, {"type": "butterworth-bandpass", "order": order,
                           "band": [low_hz, high_hz], "fs": fs})
    if not filt.is_stable():
        raise StabilityError("designed band-pass is unstable")
    return filt


def design_notch(f0_hz: float = 50.0, q: float = 30.0, fs: float = 160.0) -> SosFilter:
    """Second-order IIR notch with -3 dB bandwidth ``f0/q``."""
    if not 0 < f0_hz < fs / 2:
        raise ConfigError(f"notch frequency {f0_hz} Hz must lie in (0, {fs / 2})")
    if q <= 0:
        raise ConfigError(f"notch quality factor must be positive, got {q}")
    w0 = 2.0 * np.pi * f0_hz / fs
    beta = np.tan(w0 / q / 2.0)
    g = 1.0 / (1.0 + beta)
    c = np.cos(w0)
    sos = np.array([[g, -2.0 * g * c, g, 1.0, -2.0 * g * c, 2.0 * g - 1.0]])
    return SosFilter(sos, {"type": "notch", "f0": f0_hz, "q": q, "fs": fs})


def filter_array(data: np.ndarray, filt: SosFilter, axis: int = 0) -> np.ndarray:
    """Causal SOS filtering along ``axis`` from a zero initial state."""
    if not filt.is_stable():
        raise StabilityError(f"refusing to apply unstable filter {filt.description}")
    return sps.sosfilt(filt.sections, np.asarray(data, dtype=np.float64), axis=axis)


def apply_filter(rec: Recording, filt: SosFilter) -> Recording:
    return rec.with_data(filter_array(rec.data, filt, axis=0))


def car_array(data: np.ndarray, channel_axis: int = -1) -> np.ndarray:
    return data - data.mean(axis=channel_axis, keepdims=True)


def common_average_reference(rec: Recording) -> Recording:
    if rec.n_channels < 2:
        raise ValueError("common average reference needs at least 2 channels")
    return rec.with_data(car_array(rec.data, channel_axis=1))


@dataclass
class BandpassConfig:
    low_hz: float = 8.0
    high_hz: float = 30.0
    order: int = 5


@dataclass
class NotchConfig:
    freq_hz: float = 50.0
    q: float = 30.0


@dataclass
class CarConfig:
    enabled: bool = True


@dataclass
class PreprocessConfig:
    bandpass: BandpassConfig = field(default_factory=BandpassConfig)
    notch: NotchConfig = field(default_factory=NotchConfig)
    car: CarConfig = field(default_factory=CarConfig)
    steps: tuple[str, ...] = CHAIN_ORDER

    def __post_init__(self):
        self.steps = tuple(self.steps)

    def validate(self, fs: float | None = None) -> None:
        steps = tuple(self.steps)
        positions = []
        for s in steps:
            if s not in CHAIN_ORDER:
                raise ConfigError(f"unknown preprocessing step {s!r}")
            positions.append(CHAIN_ORDER.index(s))
        if positions != sorted(positions) or len(set(positions)) != len(positions):
            raise ConfigError(f"preprocessing steps must follow {CHAIN_ORDER}, got {steps}")
        if fs is not None:
            if "bandpass" in steps:
                b = self.bandpass
                if not 0 < b.low_hz < b.high_hz < fs / 2:
                    raise ConfigError(f"band-pass edges {b.low_hz}-{b.high_hz} Hz invalid for fs={fs}")
            if "notch" in steps and not 0 < self.notch.freq_hz < fs / 2:
                raise ConfigError(f"notch {self.notch.freq_hz} Hz invalid for fs={fs}")


def preprocess_array(data: np.ndarray, fs: float, cfg: PreprocessConfig | None = None,
                     time_axis: int = 0, channel_axis: int = -1) -> np.ndarray:
    """Run the band-pass -> notch -> CAR chain on an array."""
    cfg = cfg or PreprocessConfig()
    cfg.validate(fs)
    out = np.asarray(data, dtype=np.float64)
    if "bandpass" in cfg.steps:
        b = cfg.bandpass
        out = filter_array(out, design_butterworth_bandpass(b.order, b.low_hz, b.high_hz, fs), axis=time_axis)
    if "notch" in cfg.steps:
        out = filter_array(out, design_notch(cfg.notch.freq_hz, cfg.notch.q, fs), axis=time_axis)
    if "car" in cfg.steps and cfg.car.enabled:
        if out.shape[channel_axis] < 2:
            raise ValueError("common average reference needs at least 2 channels")
        out = car_array(out, channel_axis)
    return out


def preprocess(rec: Recording, cfg: PreprocessConfig | None = None) -> Recording:
    return rec.with_data(preprocess_array(rec.data, rec.fs, cfg))


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> ChannelStats:
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   float(d.get("eps", 1e-8)))


def fit_channel_stats(training_epochs, eps: float = 1e-8) -> ChannelStats:
    """Per-channel mean/std pooled over every training epoch and time point.

    ``training_epochs`` is an array (n, T, C) or a sequence of (T, C) arrays.
    """
    if isinstance(training_epochs, np.ndarray):
        arr = training_epochs
        if arr.ndim == 2:
            arr = arr[None]
    else:
        if len(training_epochs) == 0:
            raise ValueError("cannot fit channel statistics on an empty training set")
        arr = np.stack([np.asarray(e) for e in training_epochs])
    if arr.shape[0] == 0:
        raise ValueError("cannot fit channel statistics on an empty training set")
    pooled = arr.reshape(-1, arr.shape[-1]).astype(np.float64)
    return ChannelStats(pooled.mean(axis=0), pooled.std(axis=0), eps)


def apply_standardize(epoch: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return (np.asarray(epoch, dtype=np.float64) - stats.mean) / (stats.std + stats.eps)
