"""Fourier-feature coordinate network with modulated sine activations.

Every hidden layer computes ``a * sin(b * omega0 * (W h + bias) + c) + d``
with four learnable scalars ``(a, b, c, d)`` per layer, initialised to
``(1, 1, 0, 0)`` so the network starts out as a plain sine network. The
output head is linear. Gradients are obtained by a hand-written reverse pass
over a cached forward pass.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "EncodingConfig",
    "InrConfig",
    "InrModel",
    "ForwardCache",
    "encode",
    "inr_forward",
    "inr_backward",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_MAGIC = b"INRCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncodingConfig:
    mapping_size: int = 256
    scale: float = 5.0
    input_dim: int = 3
    time_scale: float = 1.0
    """Multiplier on the frequency column of the last (time) coordinate."""

    @property
    def out_dim(self) -> int:
        return 2 * self.mapping_size


@dataclass(frozen=True)
class InrConfig:
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    hidden: int = 256
    n_layers: int = 3
    omega0: float = 30.0
    seed: int = 0
    dtype: str = "float32"


def encode(coords: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``[cos(2 pi B v), sin(2 pi B v)]`` for every row ``v`` of ``coords``."""
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != B.shape[1]:
        raise ValueError(f"coords of shape {coords.shape} do not match B {B.shape}")
    proj = (2.0 * np.pi) * (coords.astype(B.dtype, copy=False) @ B.T)
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=1)


class InrModel:
    """Network parameters stored in one flat vector with per-layer views.

    ``layers[l]`` holds views ``W`` (out x in), ``bias`` (out,) and ``mod``
    (4,) = ``(a, b, c, d)``; ``w_out`` (hidden,) and ``b_out`` (1,) form the
    head. ``B`` is the frozen Gaussian frequency matrix.
    """

    def __init__(self, cfg: InrConfig = InrConfig(), params: np.ndarray | None = None, B: np.ndarray | None = None):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        enc = cfg.encoding
        sizes = [enc.out_dim] + [cfg.hidden] * cfg.n_layers
        self._shapes = []
        offset = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            entry = {}
            for name, shape in (("W", (n_out, n_in)), ("bias", (n_out,)), ("mod", (4,))):
                size = int(np.prod(shape))
                entry[name] = (offset, shape)
                offset += size
            self._shapes.append(entry)
        self._head = {"w_out": (offset, (cfg.hidden,)), "b_out": (offset + cfg.hidden, (1,))}
        self.n_params = offset + cfg.hidden + 1

        b_rng, w_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
        if B is None:
            B = b_rng.normal(0.0, enc.scale, size=(enc.mapping_size, enc.input_dim))
            B[:, -1] *= enc.time_scale
        self.B = np.asarray(B, dtype=self.dtype)
        if self.B.shape != (enc.mapping_size, enc.input_dim):
            raise ValueError(f"B has shape {self.B.shape}, expected {(enc.mapping_size, enc.input_dim)}")
        if params is None:
            params = self._init_params(w_rng, sizes)
        params = np.asarray(params, dtype=self.dtype)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params.copy()
        self._bind()

    def _init_params(self, rng, sizes):
        p = np.empty(self.n_params, dtype=np.float64)
        w0 = self.cfg.omega0
        for l, (entry, n_in) in enumerate(zip(self._shapes, sizes[:-1])):
            bound = 1.0 / n_in if l == 0 else np.sqrt(6.0 / n_in) / w0
            o, shape = entry["W"]
            p[o : o + np.prod(shape)] = rng.uniform(-bound, bound, size=int(np.prod(shape)))
            o, shape = entry["bias"]
            p[o : o + shape[0]] = rng.uniform(-1.0, 1.0, size=shape[0]) / np.sqrt(n_in)
            o, _ = entry["mod"]
            p[o : o + 4] = (1.0, 1.0, 0.0, 0.0)
        bound = np.sqrt(6.0 / self.cfg.hidden) / w0
        o, _ = self._head["w_out"]
        p[o : o + self.cfg.hidden] = rng.uniform(-bound, bound, size=self.cfg.hidden)
        p[o + self.cfg.hidden] = 0.0
        return p

    def _views(self, flat):
        layers = []
        for entry in self._shapes:
            layers.append(
                {name: flat[o : o + int(np.prod(shape))].reshape(shape) for name, (o, shape) in entry.items()}
            )
        head = {name: flat[o : o + int(np.prod(shape))].reshape(shape) for name, (o, shape) in self._head.items()}
        return layers, head

    def _bind(self):
        self.layers, head = self._views(self.params)
        self.w_out = head["w_out"]
        self.b_out = head["b_out"]

    def zeros_like_params(self) -> np.ndarray:
        return np.zeros_like(self.params)

    def grad_views(self, flat):
        """Per-layer views into a gradient vector laid out like ``params``."""
        return self._views(flat)

    def set_params(self, flat: np.ndarray) -> None:
        self.params[...] = flat

    def copy(self) -> "InrModel":
        return InrModel(self.cfg, self.params, self.B)

    def modulation_slices(self):
        """Flat-vector index of every ``(a, b, c, d)`` entry, layer by layer."""
        return [np.arange(e["mod"][0], e["mod"][0] + 4) for e in self._shapes]

    def encode(self, coords):
        return encode(coords, self.B)

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return inr_forward(self, self.encode(coords))[0]


@dataclass
class ForwardCache:
    features: np.ndarray
    hidden: list  # inputs of every layer, then the last hidden output
    pre: list  # W h + bias per layer
    arg: list  # b * omega0 * pre + c per layer
    sin: list


def _check_finite_params(model: InrModel):
    if not np.all(np.isfinite(model.params)):
        bad = np.flatnonzero(~np.isfinite(model.params))
        raise FloatingPointError(f"{bad.size} non-finite network parameters (first at index {bad[0]})")


def inr_forward(model: InrModel, features: np.ndarray, keep_cache: bool = True):
    """Evaluate the network on encoded features; returns ``(values, cache)``."""
    _check_finite_params(model)
    features = np.asarray(features, dtype=model.dtype)
    if features.ndim != 2 or features.shape[1] != model.cfg.encoding.out_dim:
        raise ValueError(f"features of shape {features.shape} do not match the first layer")
    w0 = model.dtype.type(model.cfg.omega0)
    h = features
    hidden, pres, args, sins = [h], [], [], []
    for layer in model.layers:
        a, b, c, d = layer["mod"]
        pre = h @ layer["W"].T
        pre += layer["bias"]
        arg = pre * (b * w0)
        arg += c
        s = np.sin(arg)
        h = a * s + d
        if keep_cache:
            pres.append(pre)
            args.append(arg)
            sins.append(s)
            hidden.append(h)
    out = h @ model.w_out + model.b_out[0]
    cache = ForwardCache(features, hidden, pres, args, sins) if keep_cache else None
    return out, cache


def inr_backward(model: InrModel, cache: ForwardCache | None, grad_out: np.ndarray) -> np.ndarray:
    """Reverse pass: gradient of ``sum(grad_out * values)`` w.r.t. ``params``."""
    if cache is None or not cache.sin:
        raise ValueError("inr_backward needs the cache of a forward pass run with keep_cache=True")
    g_out = np.asarray(grad_out, dtype=model.dtype).reshape(-1)
    grad = model.zeros_like_params()
    glayers, ghead = model.grad_views(grad)
    w0 = model.dtype.type(model.cfg.omega0)
    h_last = cache.hidden[-1]
    ghead["w_out"][...] = g_out @ h_last
    ghead["b_out"][0] = g_out.sum()
    gh = np.outer(g_out, model.w_out)
    for l in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[l]
        gl = glayers[l]
        a, b, c, d = layer["mod"]
        s = cache.sin[l]
        pre = cache.pre[l]
        gcos = gh * np.cos(cache.arg[l])
        gcos *= a
        gl["mod"][0] = np.vdot(gh, s)
        gl["mod"][3] = gh.sum()
        gl["mod"][2] = gcos.sum()
        gl["mod"][1] = w0 * np.vdot(gcos, pre)
        gz = gcos
        gz *= b * w0
        gl["W"][...] = gz.T @ cache.hidden[l]
        gl["bias"][...] = gz.sum(axis=0)
        if l > 0:
            gh = gz @ layer["W"]
    return grad


def save_checkpoint(model: InrModel, path, extra: dict | None = None) -> None:
    """Write ``model`` in the portable checkpoint layout.

    Layout (all little-endian): 8-byte magic ``INRCKPT\\0``, uint32 version,
    uint32 header length, UTF-8 JSON header, ``n_params`` float32
    parameters, then ``B`` as float32 in row-major order.
    """
    cfg = asdict(model.cfg)
    header = {"config": cfg, "n_params": model.n_params, "B_shape": list(model.B.shape)}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.asarray(model.params, dtype="<f4").tobytes())
        fh.write(np.asarray(model.B, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[InrModel, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not an INR checkpoint")
    version, n_header = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + n_header].decode("utf-8"))
    cfg_dict = header["config"]
    cfg = InrConfig(**{**cfg_dict, "encoding": EncodingConfig(**cfg_dict["encoding"])})
    n = header["n_params"]
    off = 16 + n_header
    params = np.frombuffer(data, dtype="<f4", count=n, offset=off)
    m, d = header["B_shape"]
    B = np.frombuffer(data, dtype="<f4", count=m * d, offset=off + 4 * n).reshape(m, d)
    return InrModel(cfg, params, B), header.get("extra", {})
