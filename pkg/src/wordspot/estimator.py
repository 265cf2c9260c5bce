"""Attribute estimator: a small CNN with hand-written forward and backward passes.

The network maps a normalized word image (ink = 1) to sigmoid attribute
estimates, one per PHOC dimension. Tensors are laid out NHWC.
"""
from __future__ import annotations

import copy
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .corpus import INPUT_HEIGHT, INPUT_WIDTH
from .exceptions import (BadArchitecture, ChecksumMismatch, EmptyDataset, GeometryMismatch,
                         LengthMismatch, ShapeMismatch, VersionMismatch, WordSpotError)
from .phoc import PhocConfig, phoc_dim

LOG_CLAMP = 1e-7
MAGIC = b"WSAF"
FORMAT_VERSION = 1
_OUT_CLIP = 1e-12


def default_architecture(output_dim: int = 540, dropout: float = 0.5) -> list[dict]:
    return [
        {"type": "conv", "filters": 8, "kernel": 3},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "conv", "filters": 16, "kernel": 3},
        {"type": "relu"},
        {"type": "maxpool", "size": 2},
        {"type": "flatten"},
        {"type": "dense", "units": 256},
        {"type": "relu"},
        {"type": "dropout", "p": dropout},
        {"type": "dense", "units": output_dim},
        {"type": "sigmoid"},
    ]


@dataclass
class EstimatorModel:
    architecture: list[dict]
    params: list[np.ndarray]
    phoc_config: PhocConfig
    geometry: tuple[int, int] = (INPUT_HEIGHT, INPUT_WIDTH)

    @property
    def dtype(self):
        return self.params[0].dtype if self.params else np.dtype(np.float32)

    @property
    def dropout(self) -> float:
        ps = [layer["p"] for layer in self.architecture if layer["type"] == "dropout"]
        return float(ps[0]) if ps else 0.0

    @property
    def phoc_config_hash(self) -> str:
        return self.phoc_config.config_hash

    @property
    def output_dim(self) -> int:
        return self.architecture[-2]["units"]

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def copy(self) -> "EstimatorModel":
        return EstimatorModel(copy.deepcopy(self.architecture), [p.copy() for p in self.params],
                              self.phoc_config, tuple(self.geometry))

    def with_dropout(self, p: float) -> "EstimatorModel":
        """Same parameters, every dropout layer set to probability ``p``."""
        arch = [dict(l, p=float(p)) if l["type"] == "dropout" else dict(l) for l in self.architecture]
        return EstimatorModel(arch, self.params, self.phoc_config, tuple(self.geometry))


# --------------------------------------------------------------------------
# architecture validation and initialization
# --------------------------------------------------------------------------

def _param_shapes(architecture: Sequence[dict], geometry: tuple[int, int]) -> list[tuple[int, ...]]:
    """Walk the layer list, checking it, and return parameter shapes in order."""
    h, w = geometry
    c = 1
    flat: Optional[int] = None
    shapes = []
    seen_dense = False
    for i, layer in enumerate(architecture):
        kind = layer.get("type")
        if kind == "conv":
            if flat is not None:
                raise BadArchitecture(f"layer {i}: conv after flatten")
            k = int(layer.get("kernel", 3))
            if k % 2 != 1:
                raise BadArchitecture(f"layer {i}: kernel must be odd")
            f = int(layer["filters"])
            shapes += [(k * k * c, f), (f,)]
            c = f
        elif kind == "maxpool":
            s = int(layer.get("size", 2))
            if flat is not None or h % s or w % s:
                raise BadArchitecture(f"layer {i}: maxpool {s} does not divide {h}x{w}")
            h, w = h // s, w // s
        elif kind == "flatten":
            flat = h * w * c
        elif kind == "dense":
            if flat is None:
                raise BadArchitecture(f"layer {i}: dense before flatten")
            u = int(layer["units"])
            shapes += [(flat, u), (u,)]
            flat = u
            seen_dense = True
        elif kind == "dropout":
            p = float(layer.get("p", 0.5))
            if not 0.0 <= p < 1.0 or not seen_dense:
                raise BadArchitecture(f"layer {i}: dropout must follow a hidden dense layer, p in [0,1)")
        elif kind in ("relu", "sigmoid"):
            if kind == "sigmoid" and i != len(architecture) - 1:
                raise BadArchitecture("sigmoid is only allowed as the final layer")
        else:
            raise BadArchitecture(f"layer {i}: unknown type {kind!r}")
    if len(architecture) < 2 or architecture[-1].get("type") != "sigmoid" \
            or architecture[-2].get("type") != "dense":
        raise BadArchitecture("network must end with dense + sigmoid")
    return shapes


def init_model(architecture: Optional[list[dict]] = None, seed: int = 0,
               phoc_config: Optional[PhocConfig] = None,
               geometry: tuple[int, int] = (INPUT_HEIGHT, INPUT_WIDTH),
               dtype=np.float32) -> EstimatorModel:
    """Create a model with fan-in scaled uniform weights and zero biases."""
    phoc_config = phoc_config or PhocConfig()
    D = phoc_dim(phoc_config)
    architecture = copy.deepcopy(architecture) if architecture is not None else default_architecture(D)
    shapes = _param_shapes(architecture, geometry)
    if architecture[-2]["units"] != D:
        raise BadArchitecture(f"output dim {architecture[-2]['units']} != PHOC dim {D}")
    rng = np.random.default_rng(seed)
    params = []
    n_weighted = len(shapes) // 2
    for j in range(n_weighted):
        wshape, bshape = shapes[2 * j], shapes[2 * j + 1]
        fan_in = wshape[0]
        # He-uniform for ReLU layers, LeCun-uniform for the sigmoid head
        gain = 3.0 if j == n_weighted - 1 else 6.0
        limit = math.sqrt(gain / fan_in)
        params.append(rng.uniform(-limit, limit, size=wshape).astype(dtype))
        params.append(np.zeros(bshape, dtype=dtype))
    return EstimatorModel(architecture, params, phoc_config, tuple(geometry))


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

def _as_batch(model: EstimatorModel, images) -> tuple[np.ndarray, bool]:
    x = np.asarray(images)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or tuple(x.shape[1:]) != tuple(model.geometry):
        raise GeometryMismatch(f"expected images of shape {tuple(model.geometry)}, got {x.shape[-2:]}")
    return x.astype(model.dtype, copy=False)[..., None], single


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # N,H,W,C,k,k
    n, h, w = x.shape[:3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, -1)


def _col2im(cols: np.ndarray, shape: tuple[int, ...], k: int) -> np.ndarray:
    n, h, w, c = shape
    pad = k // 2
    cols = cols.reshape(n, h, w, k, k, c)
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, di:di + h, dj:dj + w, :] += cols[:, :, :, di, dj, :]
    return out[:, pad:pad + h, pad:pad + w, :]


def _forward(model: EstimatorModel, x: np.ndarray, mode: str, rng,
             start: int = 0, stop: Optional[int] = None) -> tuple[np.ndarray, list]:
    caches = []
    pi = 2 * sum(l["type"] in ("conv", "dense") for l in model.architecture[:start])
    for layer in model.architecture[start:stop]:
        kind = layer["type"]
        if kind == "conv":
            W, b = model.params[pi], model.params[pi + 1]
            pi += 2
            k = int(layer.get("kernel", 3))
            cols = _im2col(x, k)
            n, h, w, _ = x.shape
            caches.append((cols, x.shape))
            x = (cols @ W + b).reshape(n, h, w, -1)
        elif kind == "relu":
            mask = x > 0
            caches.append(mask)
            x = x * mask
        elif kind == "maxpool":
            s = int(layer.get("size", 2))
            n, h, w, c = x.shape
            pooled = x[:, ::s, ::s]
            for di in range(s):
                for dj in range(s):
                    if di or dj:
                        pooled = np.maximum(pooled, x[:, di::s, dj::s])
            caches.append((x, pooled))
            x = pooled
        elif kind == "flatten":
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif kind == "dense":
            W, b = model.params[pi], model.params[pi + 1]
            pi += 2
            caches.append(x)
            x = x @ W + b
        elif kind == "dropout":
            p = float(layer["p"])
            if mode == "eval" or p == 0.0:
                caches.append(None)
            else:
                keep = rng.random(x.shape) >= p
                mask = keep.astype(x.dtype) / x.dtype.type(1.0 - p)
                caches.append(mask)
                x = x * mask
        elif kind == "sigmoid":
            z = x.astype(np.float64)
            x = np.clip(expit(z), _OUT_CLIP, 1.0 - _OUT_CLIP)
            caches.append(None)
    return x, caches


def forward(model: EstimatorModel, images, mode: str = "eval",
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Attribute estimates for one image (returns shape (D,)) or a batch (N, D).

    ``mode`` is ``"eval"`` (deterministic, no dropout), ``"train"`` or
    ``"mc_dropout"``; the latter two sample inverted-dropout masks from ``rng``
    on the hidden dense layers.
    """
    if mode not in ("eval", "train", "mc_dropout"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "eval" and rng is None:
        raise ValueError(f"mode {mode!r} needs an rng")
    x, single = _as_batch(model, images)
    out, _ = _forward(model, x, mode, rng)
    return out[0] if single else out


def mc_dropout_moments(model: EstimatorModel, images, passes: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-attribute mean and sample variance over ``passes`` dropout passes.

    Equivalent to ``passes`` calls of ``forward(..., mode="mc_dropout")`` with
    the same ``rng``, but the deterministic layers below the first dropout
    layer are evaluated only once.
    """
    if passes < 2:
        raise ValueError("need at least two passes for a sample variance")
    x, _ = _as_batch(model, images)
    kinds = [l["type"] for l in model.architecture]
    split = kinds.index("dropout") if "dropout" in kinds else len(kinds)
    h, _ = _forward(model, x, "eval", None, 0, split)
    mean = np.zeros((x.shape[0], model.output_dim))
    m2 = np.zeros_like(mean)
    for k in range(1, passes + 1):
        out, _ = _forward(model, h, "mc_dropout", rng, split)
        delta = out - mean
        mean += delta / k
        m2 += delta * (out - mean)
    return mean, m2 / (passes - 1)


def bce_loss(pred, target) -> float:
    """Mean binary cross entropy over attributes (and over rows for batches)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, LOG_CLAMP, 1.0 - LOG_CLAMP)
    return float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))))


def _backward(model: EstimatorModel, out: np.ndarray, caches: list, targets: np.ndarray) -> list[np.ndarray]:
    n, D = out.shape
    inside = (out > LOG_CLAMP) & (out < 1.0 - LOG_CLAMP)
    g = ((out - targets) * inside / (n * D)).astype(model.dtype)
    grads: list[Optional[np.ndarray]] = [None] * len(model.params)
    pi = len(model.params)
    for layer, cache in zip(reversed(model.architecture), reversed(caches)):
        kind = layer["type"]
        if kind == "sigmoid":
            continue  # folded into the BCE gradient above
        if kind == "dense":
            pi -= 2
            x = cache
            grads[pi] = x.T @ g
            grads[pi + 1] = g.sum(axis=0)
            g = g @ model.params[pi].T
        elif kind == "dropout":
            if cache is not None:
                g = g * cache
        elif kind == "relu":
            g = g * cache
        elif kind == "flatten":
            g = g.reshape(cache)
        elif kind == "maxpool":
            x, pooled = cache
            s = int(layer.get("size", 2))
            # ties only arise between ReLU zeros, whose gradient is zero anyway
            gin = np.zeros_like(x)
            for di in range(s):
                for dj in range(s):
                    gin[:, di::s, dj::s] = g * (x[:, di::s, dj::s] == pooled)
            g = gin
        elif kind == "conv":
            pi -= 2
            cols, shape = cache
            k = int(layer.get("kernel", 3))
            g2 = g.reshape(-1, g.shape[-1])
            grads[pi] = cols.T @ g2
            grads[pi + 1] = g2.sum(axis=0)
            if pi > 0:
                g = _col2im(g2 @ model.params[pi].T, shape, k)
    return grads


def loss_and_grad(model: EstimatorModel, images, targets, mode: str = "train",
                  rng: Optional[np.random.Generator] = None) -> tuple[float, list[np.ndarray]]:
    """Mean BCE over a batch and its gradient w.r.t. every parameter.

    The backward pass reuses the dropout masks sampled in the forward pass.
    """
    x, single = _as_batch(model, images)
    t = np.asarray(targets, dtype=np.float64)
    if single:
        t = t[None]
    if t.shape != (x.shape[0], model.output_dim):
        raise LengthMismatch(f"targets shape {t.shape} does not match ({x.shape[0]}, {model.output_dim})")
    if mode != "eval" and rng is None:
        raise ValueError("train mode needs an rng")
    out, caches = _forward(model, x, mode, rng)
    return bce_loss(out, t), _backward(model, out, caches, t)


def backward(model: EstimatorModel, image, target, rng: Optional[np.random.Generator] = None) -> list[np.ndarray]:
    """Gradient of the BCE loss; train-mode dropout when ``rng`` is given, else eval."""
    return loss_and_grad(model, image, target, "train" if rng is not None else "eval", rng)[1]


# --------------------------------------------------------------------------
# optimization
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-5
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected ADAM update with decoupled weight decay, in place."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeMismatch("parameter and gradient shapes differ")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif any(m.shape != p.shape for m, p in zip(state.m, params)) or len(state.m) != len(params):
        raise ShapeMismatch("optimizer state does not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    step = state.lr * math.sqrt(c2) / c1
    eps_hat = state.eps * math.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            p -= p.dtype.type(state.lr * state.weight_decay) * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        # lr*mhat/(sqrt(vhat)+eps) rewritten to avoid two temporaries
        p -= p.dtype.type(step) * m / (np.sqrt(v) + p.dtype.type(eps_hat))


@dataclass
class TrainSchedule:
    """Piecewise-constant learning rate: ``segments`` is a list of (iterations, lr)."""
    segments: list = field(default_factory=lambda: [(4000, 1e-4), (500, 1e-5)])
    batch_size: int = 10
    weight_decay: float = 5e-5
    seed: int = 0

    @property
    def iterations(self) -> int:
        return int(sum(n for n, _ in self.segments))

    @classmethod
    def epochs(cls, n_samples: int, epochs: int = 1, lr: float = 1e-5, batch_size: int = 10,
               weight_decay: float = 5e-5, seed: int = 0) -> "TrainSchedule":
        per_epoch = math.ceil(n_samples / batch_size)
        return cls([(per_epoch * epochs, lr)], batch_size, weight_decay, seed)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches from successive shuffled epochs."""
    while True:
        perm = rng.permutation(n)
        for s in range(0, n, batch_size):
            yield perm[s:s + batch_size]


def train(model: EstimatorModel, images, targets, schedule: TrainSchedule,
          state: Optional[AdamState] = None, callback=None) -> tuple[EstimatorModel, list[float]]:
    """Mini-batch ADAM training; updates ``model`` in place and returns it with the loss trace."""
    images = np.asarray(images)
    targets = np.asarray(targets)
    if len(images) == 0:
        raise EmptyDataset("no training samples")
    if len(images) != len(targets):
        raise LengthMismatch("images and targets differ in length")
    state = state or AdamState(weight_decay=schedule.weight_decay)
    rng = np.random.default_rng(schedule.seed)
    shuffle_rng, dropout_rng = rng.spawn(2)
    batches = _batches(len(images), schedule.batch_size, shuffle_rng)
    trace = []
    for n_iter, lr in schedule.segments:
        state.lr = lr
        for _ in range(int(n_iter)):
            idx = next(batches)
            loss, grads = loss_and_grad(model, images[idx], targets[idx], "train", dropout_rng)
            adam_step(state, model.params, grads)
            trace.append(loss)
            if callback is not None:
                callback(len(trace), loss)
    return model, trace


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

class ModelFormatError(WordSpotError, ValueError):
    pass


def save_model(model: EstimatorModel, path) -> None:
    """Write the ``WSAF`` container: magic, version, JSON header, float32 LE params, CRC32."""
    header = {
        "architecture": model.architecture,
        "alphabet": model.phoc_config.alphabet.symbols,
        "levels": list(model.phoc_config.levels),
        "overlap_threshold": model.phoc_config.overlap_threshold,
        "phoc_config_hash": model.phoc_config_hash,
        "geometry": list(model.geometry),
        "dropout": model.dropout,
        "param_shapes": [list(p.shape) for p in model.params],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", len(hbytes)) + hbytes
    payload += b"".join(p.astype("<f4").tobytes() for p in model.params)
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([FORMAT_VERSION]) + payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_model(path) -> EstimatorModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 13 or data[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a WSAF model file")
    if data[4] != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {data[4]} not supported")
    payload, (crc,) = data[5:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack("<I", payload[:4])
    header = json.loads(payload[4:4 + hlen].decode("utf-8"))
    config = PhocConfig.from_dict(header)
    if config.config_hash != header["phoc_config_hash"]:
        raise ModelFormatError(f"{path}: PHOC configuration hash mismatch")
    body = payload[4 + hlen:]
    if len(body) % 4:
        raise ModelFormatError(f"{path}: parameter payload size mismatch")
    flat = np.frombuffer(body, dtype="<f4")
    params, pos = [], 0
    for shape in header["param_shapes"]:
        size = int(np.prod(shape))
        params.append(flat[pos:pos + size].reshape(shape).astype(np.float32))
        pos += size
    if pos != flat.size:
        raise ModelFormatError(f"{path}: parameter payload size mismatch")
    geometry = tuple(header["geometry"])
    if [tuple(s) for s in header["param_shapes"]] != _param_shapes(header["architecture"], geometry):
        raise ModelFormatError(f"{path}: parameter shapes do not match architecture")
    return EstimatorModel(header["architecture"], params, config, geometry)
