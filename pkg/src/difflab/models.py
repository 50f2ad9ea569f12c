"""Trainable v-prediction denoisers with named hidden-feature taps.

Two sizes are provided: an MLP for 2-D point data and a tiny three-level
U-Net for small grayscale images. Both take (x_t, t, class) and return a
prediction shaped like x_t, and both can expose hidden activations at
named tap points (encoder stages, bottleneck, decoder stages) so a frozen
copy can serve as a feature-distance network.

Class conditioning uses a learned table with one reserved null row, which
doubles as the unconditional query for guidance and the dropout target
during training.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import (
    Tensor,
    add,
    add_channelwise,
    concat,
    conv1x1,
    conv2d,
    embedding,
    group_norm,
    linear,
    silu,
    upsample_nearest2x,
)

__all__ = [
    "NULL_CLASS",
    "Conditioning",
    "FeatureTap",
    "DenoiserModel",
    "Mlp2d",
    "TinyUnet",
    "time_embedding",
    "freeze_copy",
    "save_tensors",
    "load_tensors",
    "save_model",
    "load_model",
    "build_model",
]

NULL_CLASS = -1


@dataclass(frozen=True, eq=False)
class Conditioning:
    """Per-sample class ids; NULL_CLASS marks unconditioned rows."""

    class_ids: np.ndarray

    @staticmethod
    def of(ids) -> "Conditioning":
        arr = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        return Conditioning(arr)

    @staticmethod
    def null(n: int) -> "Conditioning":
        return Conditioning(np.full(n, NULL_CLASS, dtype=np.int64))

    @property
    def batch_size(self) -> int:
        return self.class_ids.shape[0]

    def is_null(self) -> np.ndarray:
        return self.class_ids == NULL_CLASS

    def all_null(self) -> bool:
        return bool(np.all(self.is_null()))

    def table_ids(self, num_classes: int) -> np.ndarray:
        """Map onto embedding rows; the reserved null row comes last."""
        ids = self.class_ids
        bad = (ids != NULL_CLASS) & ((ids < 0) | (ids >= num_classes))
        if np.any(bad):
            raise ContractError(f"class id out of range [0, {num_classes})")
        return np.where(ids == NULL_CLASS, num_classes, ids)


class FeatureTap(Enum):
    ENCODER_ALL = "encoder_all"
    DECODER_ALL = "decoder_all"
    ENCODER_PLUS_MID = "encoder_plus_mid"
    MID_ONLY = "mid_only"


def _select_features(stages: dict[str, list[Tensor]], tap: FeatureTap) -> list[Tensor]:
    if tap is FeatureTap.ENCODER_ALL:
        return list(stages["enc"])
    if tap is FeatureTap.DECODER_ALL:
        return list(stages["dec"])
    if tap is FeatureTap.ENCODER_PLUS_MID:
        return list(stages["enc"]) + list(stages["mid"])
    if tap is FeatureTap.MID_ONLY:
        return list(stages["mid"])
    raise ConfigError(f"unknown feature tap {tap!r}")


def time_embedding(t: int, dim: int, T: int = 1000) -> Tensor:
    """Sinusoidal embedding of t/T with unit-amplitude sin/cos halves."""
    if dim % 2 != 0:
        raise ConfigError(f"time embedding dim must be even, got {dim}")
    return Tensor(_time_embedding_batch(np.asarray([t]), dim, T)[0])


def _time_embedding_batch(tvec: np.ndarray, dim: int, T: int) -> np.ndarray:
    half = dim // 2
    if half > 1:
        freqs = 10000.0 ** (np.arange(half, dtype=np.float64) / (half - 1))
    else:
        freqs = np.ones(1)
    arg = (np.asarray(tvec, dtype=np.float64) / T)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(arg), np.cos(arg)], axis=1)
    return emb.astype(np.float32)


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class DenoiserModel:
    """Common surface shared by both denoiser kinds."""

    kind: str = ""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def config(self) -> dict:
        raise NotImplementedError

    @property
    def sample_shape(self) -> tuple:
        raise NotImplementedError

    def _run(self, x_t: Tensor, t: np.ndarray, c: Conditioning):
        raise NotImplementedError

    def _prep(self, x_t: Tensor, t, c: Conditioning) -> np.ndarray:
        batch = x_t.shape[0]
        tvec = np.full(batch, int(t), dtype=np.int64) if np.ndim(t) == 0 else np.asarray(t, dtype=np.int64)
        if tvec.shape != (batch,):
            raise DimensionError(f"timesteps {tvec.shape} do not match batch {batch}")
        if tvec.min() < 1 or tvec.max() > self.T:
            raise ContractError(f"timestep out of range [1, {self.T}]")
        if c.batch_size != batch:
            raise DimensionError(f"conditioning batch {c.batch_size} != input batch {batch}")
        if x_t.shape[1:] != self.sample_shape:
            raise DimensionError(f"input shape {x_t.shape[1:]} != expected {self.sample_shape}")
        return tvec

    def forward(self, x_t: Tensor, t, c: Conditioning) -> Tensor:
        tvec = self._prep(x_t, t, c)
        v, _ = self._run(x_t, tvec, c)
        return v

    def forward_with_features(self, x_t: Tensor, t, c: Conditioning,
                              tap: FeatureTap) -> tuple[Tensor, list[Tensor]]:
        tvec = self._prep(x_t, t, c)
        v, stages = self._run(x_t, tvec, c)
        return v, _select_features(stages, tap)

    def clone(self, requires_grad: bool | None = None) -> "DenoiserModel":
        """Deep copy; optionally overriding grad participation of the copy."""
        other = build_model(self.kind, self.config(), seed=0, dtype=self.dtype)
        for name, p in self.params.items():
            q = other.params[name]
            q.data = p.data.copy()
            q.requires_grad = p.requires_grad if requires_grad is None else requires_grad
            q.grad = None
        return other

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise ConfigError(f"checkpoint missing parameter '{name}'")
            if state[name].shape != p.shape:
                raise ConfigError(f"checkpoint shape mismatch for '{name}'")
            p.data = np.ascontiguousarray(state[name], dtype=p.dtype)
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}


class Mlp2d(DenoiserModel):
    """Four SiLU hidden layers on concat(x_t, time embedding, class embedding).

    Tap convention for an MLP: "encoder" is layers 1-2, "midblock" is the
    layer-2 activation, "decoder" is layers 3-4.
    """

    kind = "mlp2d"

    def __init__(self, num_classes: int, hidden: int = 256, time_dim: int = 64,
                 class_dim: int = 16, T: int = 1000, zero_init_final: bool = True,
                 seed: int = 0, dtype=np.float32):
        super().__init__()
        if num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if time_dim % 2 != 0:
            raise ConfigError("time_dim must be even")
        self.num_classes = num_classes
        self.hidden = hidden
        self.time_dim = time_dim
        self.class_dim = class_dim
        self.T = T
        self.zero_init_final = zero_init_final
        self.dtype = np.dtype(dtype)

        rng = np.random.default_rng(seed)
        d_in = 2 + time_dim + class_dim
        self.params["class_emb"] = Tensor(
            (rng.standard_normal((num_classes + 1, class_dim)) / np.sqrt(class_dim)).astype(dtype),
            requires_grad=True,
        )
        dims = [d_in, hidden, hidden, hidden, hidden]
        for i in range(4):
            self.params[f"w{i + 1}"] = _kaiming_uniform(rng, (dims[i], dims[i + 1]), dims[i], dtype)
            self.params[f"b{i + 1}"] = _zeros((dims[i + 1],), dtype)
        if zero_init_final:
            self.params["w_out"] = _zeros((hidden, 2), dtype)
        else:
            self.params["w_out"] = _kaiming_uniform(rng, (hidden, 2), hidden, dtype)
        self.params["b_out"] = _zeros((2,), dtype)

    def config(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "hidden": self.hidden,
            "time_dim": self.time_dim,
            "class_dim": self.class_dim,
            "T": self.T,
            "zero_init_final": self.zero_init_final,
        }

    @property
    def sample_shape(self) -> tuple:
        return (2,)

    def _run(self, x_t: Tensor, tvec: np.ndarray, c: Conditioning):
        p = self.params
        temb = Tensor(_time_embedding_batch(tvec, self.time_dim, self.T).astype(self.dtype))
        cemb = embedding(p["class_emb"], c.table_ids(self.num_classes))
        h = concat([x_t, temb, cemb], axis=1)
        acts = []
        for i in range(4):
            h = silu(linear(h, p[f"w{i + 1}"], p[f"b{i + 1}"]))
            acts.append(h)
        v = linear(h, p["w_out"], p["b_out"])
        stages = {"enc": acts[0:2], "mid": [acts[1]], "dec": acts[2:4]}
        return v, stages


class TinyUnet(DenoiserModel):
    """Three-resolution U-Net: stride-2 3x3 downsampling, nearest-upsample +
    conv upsampling, group norm, one residual block per stage, and additive
    time/class conditioning per block. The midblock is the lowest-resolution
    residual block.
    """

    kind = "tiny_unet"

    def __init__(self, num_classes: int, in_channels: int = 1, image_size: int = 16,
                 widths: tuple = (32, 64, 128), time_dim: int = 64, groups: int = 8,
                 T: int = 1000, zero_init_final: bool = True, seed: int = 0,
                 dtype=np.float32):
        super().__init__()
        if num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if image_size % 4 != 0:
            raise ConfigError("image_size must be divisible by 4")
        if len(widths) != 3:
            raise ConfigError("widths must list three channel counts")
        if any(w % groups != 0 for w in widths):
            raise ConfigError(f"widths {widths} must be divisible by groups={groups}")
        if time_dim % 2 != 0:
            raise ConfigError("time_dim must be even")
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.image_size = image_size
        self.widths = tuple(int(w) for w in widths)
        self.time_dim = time_dim
        self.groups = groups
        self.T = T
        self.zero_init_final = zero_init_final
        self.dtype = np.dtype(dtype)

        rng = np.random.default_rng(seed)
        w1, w2, w3 = self.widths
        self._conv(rng, "stem", in_channels, w1)
        # conditioning trunk: sinusoidal time -> 2-layer mlp, plus class table
        self._linear(rng, "cond1", time_dim, time_dim)
        self._linear(rng, "cond2", time_dim, time_dim)
        self.params["class_emb"] = Tensor(
            (rng.standard_normal((num_classes + 1, time_dim)) / np.sqrt(time_dim)).astype(dtype),
            requires_grad=True,
        )
        self._res_block(rng, "enc1", w1, w1)
        self._conv(rng, "down1", w1, w2)
        self._res_block(rng, "enc2", w2, w2)
        self._conv(rng, "down2", w2, w3)
        self._res_block(rng, "mid", w3, w3)
        self._conv(rng, "up1", w3, w2)
        self._res_block(rng, "dec1", 2 * w2, w2)
        self._conv(rng, "up2", w2, w1)
        self._res_block(rng, "dec2", 2 * w1, w1)
        self.params["head_gn_g"] = Tensor(np.ones(w1, dtype=dtype), requires_grad=True)
        self.params["head_gn_b"] = _zeros((w1,), dtype)
        if zero_init_final:
            self.params["head_k"] = _zeros((in_channels, w1, 3, 3), dtype)
        else:
            self.params["head_k"] = _kaiming_uniform(
                rng, (in_channels, w1, 3, 3), w1 * 9, dtype)
        self.params["head_b"] = _zeros((in_channels,), dtype)

    def _conv(self, rng, name: str, cin: int, cout: int) -> None:
        self.params[f"{name}_k"] = _kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9, self.dtype)
        self.params[f"{name}_b"] = _zeros((cout,), self.dtype)

    def _linear(self, rng, name: str, n_in: int, n_out: int) -> None:
        self.params[f"{name}_w"] = _kaiming_uniform(rng, (n_in, n_out), n_in, self.dtype)
        self.params[f"{name}_b"] = _zeros((n_out,), self.dtype)

    def _res_block(self, rng, name: str, cin: int, cout: int) -> None:
        self.params[f"{name}_gn1_g"] = Tensor(np.ones(cin, dtype=self.dtype), requires_grad=True)
        self.params[f"{name}_gn1_b"] = _zeros((cin,), self.dtype)
        self._conv(rng, f"{name}_c1", cin, cout)
        self._linear(rng, f"{name}_emb", self.time_dim, cout)
        self.params[f"{name}_gn2_g"] = Tensor(np.ones(cout, dtype=self.dtype), requires_grad=True)
        self.params[f"{name}_gn2_b"] = _zeros((cout,), self.dtype)
        self._conv(rng, f"{name}_c2", cout, cout)
        if cin != cout:
            self.params[f"{name}_skip_w"] = _kaiming_uniform(rng, (cout, cin), cin, self.dtype)

    def config(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "image_size": self.image_size,
            "widths": list(self.widths),
            "time_dim": self.time_dim,
            "groups": self.groups,
            "T": self.T,
            "zero_init_final": self.zero_init_final,
        }

    @property
    def sample_shape(self) -> tuple:
        return (self.in_channels, self.image_size, self.image_size)

    def _apply_res_block(self, name: str, x: Tensor, cond: Tensor) -> Tensor:
        p = self.params
        h = group_norm(x, p[f"{name}_gn1_g"], p[f"{name}_gn1_b"], self.groups)
        h = conv2d(silu(h), p[f"{name}_c1_k"], p[f"{name}_c1_b"])
        h = add_channelwise(h, linear(silu(cond), p[f"{name}_emb_w"], p[f"{name}_emb_b"]))
        h = group_norm(h, p[f"{name}_gn2_g"], p[f"{name}_gn2_b"], self.groups)
        h = conv2d(silu(h), p[f"{name}_c2_k"], p[f"{name}_c2_b"])
        shortcut = conv1x1(x, p[f"{name}_skip_w"]) if f"{name}_skip_w" in p else x
        return add(h, shortcut)

    def _run(self, x_t: Tensor, tvec: np.ndarray, c: Conditioning):
        p = self.params
        temb = Tensor(_time_embedding_batch(tvec, self.time_dim, self.T).astype(self.dtype))
        cond = linear(silu(linear(temb, p["cond1_w"], p["cond1_b"])), p["cond2_w"], p["cond2_b"])
        cond = add(cond, embedding(p["class_emb"], c.table_ids(self.num_classes)))

        h = conv2d(x_t, p["stem_k"], p["stem_b"])
        e1 = self._apply_res_block("enc1", h, cond)
        h = conv2d(e1, p["down1_k"], p["down1_b"], stride=2)
        e2 = self._apply_res_block("enc2", h, cond)
        h = conv2d(e2, p["down2_k"], p["down2_b"], stride=2)
        m = self._apply_res_block("mid", h, cond)
        h = conv2d(upsample_nearest2x(m), p["up1_k"], p["up1_b"])
        d1 = self._apply_res_block("dec1", concat([h, e2], axis=1), cond)
        h = conv2d(upsample_nearest2x(d1), p["up2_k"], p["up2_b"])
        d2 = self._apply_res_block("dec2", concat([h, e1], axis=1), cond)
        out = group_norm(d2, p["head_gn_g"], p["head_gn_b"], self.groups)
        v = conv2d(silu(out), p["head_k"], p["head_b"])
        stages = {"enc": [e1, e2], "mid": [m], "dec": [d1, d2]}
        return v, stages


_MODEL_KINDS = {"mlp2d": Mlp2d, "tiny_unet": TinyUnet}


def build_model(kind: str, config: dict, seed: int = 0, dtype=np.float32) -> DenoiserModel:
    if kind not in _MODEL_KINDS:
        raise ConfigError(f"unknown model kind '{kind}'")
    cfg = dict(config)
    if "widths" in cfg:
        cfg["widths"] = tuple(cfg["widths"])
    return _MODEL_KINDS[kind](seed=seed, dtype=dtype, **cfg)


def freeze_copy(model: DenoiserModel) -> DenoiserModel:
    """Deep copy with all parameters excluded from gradient accumulation.

    The copy still participates in forward graphs, so gradients flow
    through it to its inputs; only its own parameters stay fixed.
    """
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)):
            raise ContractError(f"cannot freeze model with non-finite parameter '{name}'")
    return model.clone(requires_grad=False)


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, kind, meta json, named f32 tensors

_MAGIC = b"DLCK"
_VERSION = 1


def save_tensors(path: str, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        kind_b = kind.encode("utf-8")
        fh.write(struct.pack("<I", len(kind_b)))
        fh.write(kind_b)
        meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(meta_b)))
        fh.write(meta_b)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path: str) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", fh.read(4))
        kind = fh.read(n).decode("utf-8")
        (n,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(n).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", fh.read(4))
            name = fh.read(n).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            payload = fh.read(4 * int(np.prod(shape, dtype=np.int64)))
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        return kind, meta, tensors


def save_model(model: DenoiserModel, path: str, extra_meta: dict | None = None) -> None:
    meta = {"config": model.config()}
    if extra_meta:
        meta.update(extra_meta)
    save_tensors(path, model.kind, meta, model.state())


def load_model(path: str) -> DenoiserModel:
    kind, meta, tensors = load_tensors(path)
    model = build_model(kind, meta["config"])
    model.load_state(tensors)
    return model
