"""Deterministic class-conditional synthetic EEG.

Each trial is 1/f background noise plus sinusoidal rhythms whose amplitude
on the left/right motor channel groups depends on the class: rest keeps a
strong mu rhythm on both hemispheres, imagery attenuates the hemisphere
contralateral to the imagined hand.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dsp import PreprocessConfig, preprocess_array
from .ingest.epochs import CLASS_NAMES, EPOCH_LEN
from .ingest.store import EpochSet
from .tensor import ConfigError

EEGMMIDB_CHANNELS = (
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "Fp1", "Fpz", "Fp2", "AF7", "AF3", "AFz",
    "AF4", "AF8", "F7", "F5", "F3", "F1", "Fz", "F2", "F4", "F6", "F8", "FT7", "FT8", "T7", "T8",
    "T9", "T10", "TP7", "TP8", "P7", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "P8", "PO7", "PO3",
    "POz", "PO4", "PO8", "O1", "Oz", "O2", "Iz",
)
_LEFT_MOTOR = ("FC5", "FC3", "FC1", "C5", "C3", "C1", "CP5", "CP3", "CP1")
_RIGHT_MOTOR = ("FC2", "FC4", "FC6", "C2", "C4", "C6", "CP2", "CP4", "CP6")

DEFAULT_SIGNATURES = (
    {"class": "relax", "group": "left_motor", "band": [8.0, 12.0], "amplitude": 1.0},
    {"class": "relax", "group": "right_motor", "band": [8.0, 12.0], "amplitude": 1.0},
    {"class": "left", "group": "left_motor", "band": [8.0, 12.0], "amplitude": 1.0},
    {"class": "left", "group": "right_motor", "band": [8.0, 12.0], "amplitude": 0.25},
    {"class": "right", "group": "left_motor", "band": [8.0, 12.0], "amplitude": 0.25},
    {"class": "right", "group": "right_motor", "band": [8.0, 12.0], "amplitude": 1.0},
)


def channel_labels(n: int) -> tuple[str, ...]:
    if n == len(EEGMMIDB_CHANNELS):
        return EEGMMIDB_CHANNELS
    return tuple(f"Ch{i + 1:02d}" for i in range(n))


def channel_groups(labels) -> dict[str, list[int]]:
    """Index sets of the left/right motor groups for a montage."""
    labels = list(labels)
    if tuple(labels) == EEGMMIDB_CHANNELS:
        return {"left_motor": [labels.index(c) for c in _LEFT_MOTOR],
                "right_motor": [labels.index(c) for c in _RIGHT_MOTOR]}
    n = len(labels)
    if n < 2:
        raise ConfigError("synthetic montage needs at least 2 channels")
    k = max(1, n // 4)
    return {"left_motor": list(range(0, k)), "right_motor": list(range(n - k, n))}


@dataclass
class SynthConfig:
    n_subjects: int = 6
    trials_per_class: int = 40
    fs: float = 160.0
    channels: int = 64
    classes: tuple[str, ...] = CLASS_NAMES
    signatures: tuple[dict, ...] = DEFAULT_SIGNATURES
    noise_exponent: float = 1.0
    noise_amplitude: float = 1.0
    amplitude_jitter: float = 0.1
    preprocess: bool = False
    seed: int = 42

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.signatures = tuple(dict(s) for s in self.signatures)

    def validate(self) -> None:
        if self.n_subjects < 1 or self.trials_per_class < 1 or self.channels < 2:
            raise ConfigError("synth needs n_subjects >= 1, trials_per_class >= 1, channels >= 2")
        if self.fs <= 0:
            raise ConfigError("synth fs must be positive")
        if not 0 <= self.amplitude_jitter < 1:
            raise ConfigError("amplitude_jitter must be in [0, 1)")
        groups = channel_groups(channel_labels(self.channels))
        for s in self.signatures:
            if s["class"] not in self.classes:
                raise ConfigError(f"signature for unknown class {s['class']!r}")
            if s["group"] not in groups:
                raise ConfigError(f"unknown channel group {s['group']!r}")
            lo, hi = s["band"]
            if not 0 < lo <= hi < self.fs / 2:
                raise ConfigError(f"band {s['band']} must lie inside (0, fs/2)")
            if s["amplitude"] < 0:
                raise ConfigError("signature amplitudes must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["signatures"] = [dict(s) for s in self.signatures]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**d)


def pink_noise(rng: np.random.Generator, n: int, channels: int, exponent: float) -> np.ndarray:
    """Unit-variance noise with power spectrum ~ 1/f**exponent, shape (n, channels)."""
    spec = rng.standard_normal((n // 2 + 1, channels)) + 1j * rng.standard_normal((n // 2 + 1, channels))
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    spec *= (f ** (-exponent / 2.0))[:, None]
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n, axis=0)
    return x / x.std(axis=0, keepdims=True)


def generate(cfg: SynthConfig | None = None) -> EpochSet:
    """Balanced, subject-tagged synthetic trials (fully determined by ``cfg.seed``)."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    labels = channel_labels(cfg.channels)
    groups = channel_groups(labels)
    lead = int(cfg.fs) if cfg.preprocess else 0
    n = EPOCH_LEN + lead
    t = np.arange(n) / cfg.fs

    data, ys, subs, runs = [], [], [], []
    for subject in range(1, cfg.n_subjects + 1):
        srng = np.random.default_rng([cfg.seed, subject])
        phase = srng.uniform(0, 2 * np.pi, cfg.channels)
        gain = {g: 1.0 + srng.uniform(-cfg.amplitude_jitter, cfg.amplitude_jitter) for g in sorted(groups)}
        for ci, cls in enumerate(cfg.classes):
            sigs = [s for s in cfg.signatures if s["class"] == cls]
            for trial in range(cfg.trials_per_class):
                trng = np.random.default_rng([cfg.seed, subject, ci, trial])
                x = cfg.noise_amplitude * pink_noise(trng, n, cfg.channels, cfg.noise_exponent)
                shift = trng.uniform(0, 2 * np.pi)
                for s in sigs:
                    freq = 0.5 * (s["band"][0] + s["band"][1])
                    amp = s["amplitude"] * gain[s["group"]] * np.sqrt(2.0)
                    idx = groups[s["group"]]
                    x[:, idx] += amp * np.sin(2 * np.pi * freq * t[:, None] + phase[idx] + shift)
                data.append(x)
                ys.append(ci)
                subs.append(subject)
                runs.append(ci + 1)
    arr = np.stack(data)
    if cfg.preprocess:
        arr = preprocess_array(arr, cfg.fs, PreprocessConfig(), time_axis=1, channel_axis=2)[:, lead:]
    return EpochSet(arr, ys, subs, runs, cfg.fs, labels, cfg.classes,
                    {"synth": cfg.to_dict()})


def band_power(epochs: np.ndarray, fs: float, band: tuple[float, float]) -> np.ndarray:
    """Periodogram power in ``band`` per epoch and channel, shape (n, C)."""
    x = np.asarray(epochs, dtype=np.float64)
    spec = np.abs(np.fft.rfft(x, axis=1)) ** 2 / x.shape[1]
    freqs = np.fft.rfftfreq(x.shape[1], 1.0 / fs)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    return spec[:, sel].mean(axis=1)
