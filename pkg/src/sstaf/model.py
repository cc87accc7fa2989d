"""SSTAF network built on :mod:`sstaf.tensor`.

Input features are (batch, channels, f_bins, t_frames) power spectrograms;
output is (batch, n_classes) logits.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ConfigError, DimensionError, Parameter, Tensor

ABLATIONS = {
    "full": {},
    "no-spectral": {"use_spectral": False},
    "no-spatial": {"use_spatial": False},
    "no-transformer": {"use_transformer": False},
}


@dataclass
class ModelConfig:
    channels: int = 64
    f_bins: int = 65
    t_frames: int = 9
    d_h: int = 64
    heads: int = 8
    layers: int = 2
    d_ff: int = 256
    n_classes: int = 3
    h_spec: int | None = None
    h_spat: int | None = None
    attn_dropout: float = 0.1
    transformer_dropout: float = 0.2
    head_dropout: float = 0.2
    use_spectral: bool = True
    use_spatial: bool = True
    use_transformer: bool = True
    explicit_fusion_product: bool = False
    zero_init_attention: bool = True
    ln_eps: float = 1e-5
    seed: int = 0

    @property
    def spectral_hidden(self) -> int:
        return self.h_spec if self.h_spec is not None else max(1, self.f_bins // 2)

    @property
    def spatial_hidden(self) -> int:
        return self.h_spat if self.h_spat is not None else max(1, self.channels // 2)

    def validate(self) -> None:
        for name in ("channels", "f_bins", "d_h", "heads", "layers", "d_ff", "n_classes",
                     "spectral_hidden", "spatial_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.d_h % self.heads:
            raise ConfigError(f"d_h={self.d_h} is not divisible by heads={self.heads}")
        if self.d_h < 2:
            raise ConfigError("d_h must be >= 2 for the halving classifier")
        for name in ("attn_dropout", "transformer_dropout", "head_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"model.{name} must be in [0, 1), got {p}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


class Module:
    """Parameter container; children and parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        bound = np.sqrt(1.0 / fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, (fan_in, fan_out)))
        self.bias = Parameter(np.zeros(fan_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, axis=-1, eps=self.eps)


class _AttentionMLP(Module):
    """Squeeze-style MLP producing a softmax weight vector from a pooled descriptor."""

    def __init__(self, dim: int, hidden: int, p: float, rng: np.random.Generator, zero_init: bool = True):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        if zero_init:
            # uniform weights at init; raw power descriptors would otherwise saturate the softmax
            self.fc2.weight.data[...] = 0.0
        self.p = p

    def weights(self, pooled: Tensor, training: bool, rng) -> Tensor:
        h = T.dropout(T.relu(self.fc1(pooled)), self.p, training, rng)
        return T.softmax(self.fc2(h), axis=-1)


class SpectralAttention(_AttentionMLP):
    def weights(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        """(b, f) frequency weights from the channel/time mean of ``x``."""
        return super().weights(T.reduce_mean(x, (1, 3)), training, rng)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        w = self.weights(x, training, rng)
        b, _, f, _ = x.shape
        return x * w.reshape(b, 1, f, 1)


class SpatialAttention(_AttentionMLP):
    def weights(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        """(b, C) channel weights from the frequency/time mean of ``x``."""
        return super().weights(T.reduce_mean(x, (2, 3)), training, rng)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        w = self.weights(x, training, rng)
        b, c, _, _ = x.shape
        return x * w.reshape(b, c, 1, 1)


class MultiHeadAttention(Module):
    """Self-attention with per-head output maps summed across heads.

    ``w_q``/``w_k``/``w_v`` hold the per-head projections side by side
    (head i owns columns ``i*d_k:(i+1)*d_k``); ``w_o`` is (heads, d_k, d_h).
    """

    def __init__(self, d_h: int, heads: int, rng: np.random.Generator):
        if d_h % heads:
            raise ConfigError(f"d_h={d_h} is not divisible by heads={heads}")
        self.heads = heads
        self.d_k = d_h // heads
        bound = np.sqrt(1.0 / d_h)
        self.w_q = Parameter(rng.uniform(-bound, bound, (d_h, d_h)))
        self.w_k = Parameter(rng.uniform(-bound, bound, (d_h, d_h)))
        self.w_v = Parameter(rng.uniform(-bound, bound, (d_h, d_h)))
        self.w_o = Parameter(rng.uniform(-bound, bound, (heads, self.d_k, d_h)))
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.d_k).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor) -> Tensor:
        q = self._split(x @ self.w_q)
        k = self._split(x @ self.w_k)
        v = self._split(x @ self.w_v)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.d_k))
        attn = T.softmax(scores, axis=-1)  # (b, h, t, t)
        self.last_attention = attn.data
        z = attn @ v  # (b, h, t, d_k)
        return T.reduce_sum(z @ self.w_o, 1)


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.ln1 = LayerNorm(cfg.d_h, cfg.ln_eps)
        self.attn = MultiHeadAttention(cfg.d_h, cfg.heads, rng)
        self.ln2 = LayerNorm(cfg.d_h, cfg.ln_eps)
        self.ff1 = Linear(cfg.d_h, cfg.d_ff, rng)
        self.ff2 = Linear(cfg.d_ff, cfg.d_h, rng)
        self.p = cfg.transformer_dropout

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        x = x + T.dropout(self.attn(self.ln1(x)), self.p, training, rng)
        h = self.ff2(T.gelu(self.ff1(self.ln2(x))))
        return x + T.dropout(h, self.p, training, rng)


class TransformerEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.layers)]

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        for layer in self.layers:
            x = layer(x, training, rng)
        return x


class ClassifierHead(Module):
    def __init__(self, d_h: int, n_classes: int, p: float, rng: np.random.Generator):
        self.fc1 = Linear(d_h, d_h // 2, rng)
        self.fc2 = Linear(d_h // 2, n_classes, rng)
        self.p = p

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        pooled = T.reduce_mean(x, 1)
        h = T.dropout(T.relu(self.fc1(pooled)), self.p, training, rng)
        return self.fc2(h)


class SstafModel(Module):
    def __init__(self, cfg: ModelConfig | None = None):
        cfg = cfg or ModelConfig()
        cfg.validate()
        self.cfg = cfg
        init = np.random.default_rng(cfg.seed)
        self.spectral = SpectralAttention(cfg.f_bins, cfg.spectral_hidden, cfg.attn_dropout, init,
                                          cfg.zero_init_attention) if cfg.use_spectral else None
        self.spatial = SpatialAttention(cfg.channels, cfg.spatial_hidden, cfg.attn_dropout, init,
                                        cfg.zero_init_attention) if cfg.use_spatial else None
        self.proj = Linear(cfg.channels * cfg.f_bins, cfg.d_h, init)
        self.encoder = TransformerEncoder(cfg, init) if cfg.use_transformer else None
        self.head = ClassifierHead(cfg.d_h, cfg.n_classes, cfg.head_dropout, init)
        self.dropout_rng = np.random.default_rng([cfg.seed, 1])

    def named_parameters(self, prefix: str = ""):
        for key in ("spectral", "spatial", "proj", "encoder", "head"):
            mod = getattr(self, key)
            if mod is not None:
                yield from mod.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        out = []
        for name, p in self.named_parameters():
            p.name = name
            out.append(p)
        return out

    def _check(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise DimensionError(f"model input must be (b, C, f, t), got {x.shape}")
        _, c, f, t = x.shape
        if c != self.cfg.channels or f != self.cfg.f_bins or t < 1:
            raise DimensionError(
                f"input {x.shape} does not match channels={self.cfg.channels}, f_bins={self.cfg.f_bins}"
            )

    def attend(self, x: Tensor, training: bool = False) -> Tensor:
        """Spectral then spatial reweighting (identity for disabled stages)."""
        rng = self.dropout_rng
        out = self.spectral(x, training, rng) if self.spectral is not None else x
        spectral_out = out
        if self.spatial is not None:
            out = self.spatial(out, training, rng)
            if self.cfg.explicit_fusion_product:
                out = out * spectral_out
        return out

    def project(self, x: Tensor) -> Tensor:
        b, c, f, t = x.shape
        frames = x.transpose(0, 3, 1, 2).reshape(b, t, c * f)
        return self.proj(frames)

    def encode(self, h: Tensor, training: bool = False) -> Tensor:
        if self.encoder is None:
            return h
        return self.encoder(h, training, self.dropout_rng)

    def classify(self, h: Tensor, training: bool = False) -> Tensor:
        return self.head(h, training, self.dropout_rng)

    def __call__(self, x, training: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check(x)
        h = self.project(self.attend(x, training))
        return self.classify(self.encode(h, training), training)

    forward = __call__

    def attention_weights(self, x) -> dict[str, np.ndarray]:
        """Eval-mode spectral (b, f) and spatial (b, C) weights; all ones for disabled stages."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check(x)
        b = x.shape[0]
        with T.no_grad():
            if self.spectral is not None:
                spec = self.spectral.weights(x).data
                xs = self.spectral(x)
            else:
                spec, xs = np.ones((b, self.cfg.f_bins)), x
            spat = self.spatial.weights(xs).data if self.spatial is not None else np.ones((b, self.cfg.channels))
        return {"spectral": spec, "spatial": spat}

    def astype(self, dtype) -> SstafModel:
        """Cast every parameter in place (float32 for speed, float64 for checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    # -- persistence ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing, extra = sorted(set(own) - set(state)), sorted(set(state) - set(own))
            raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            if p.shape != state[name].shape:
                raise DimensionError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        T.save_checkpoint(self.parameters(), d / "model.ckpt")
        (d / "model.json").write_text(json.dumps(self.cfg.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> SstafModel:
        d = Path(directory)
        cfg = ModelConfig.from_dict(json.loads((d / "model.json").read_text()))
        model = cls(cfg)
        model.load_state_dict(T.load_checkpoint(d / "model.ckpt"))
        return model


def parameter_count(model: Module) -> int:
    return sum(p.size for p in model.parameters())
