"""Branched MLP marginaliser with explicit backpropagation and Adam.

One branch per network layer (R, D, S). Every branch reads the full
``2n``-wide 2xBoolean input and runs ``n_hidden`` blocks of

    affine -> batch norm -> sigmoid

followed by an affine head of width ``2 * N_layer`` and a two-way softmax per
node. The second softmax component is ``Q(X_i = 1 | x_b)``.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .network import LAYERS

CHECKPOINT_VERSION = 1
CLAMP = 1e-12


class ForwardMode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class ModelError(ValueError):
    pass


class CheckpointError(ModelError):
    pass


def _sigmoid_(z):
    """In-place logistic function via tanh (no overflow for large |z|)."""
    z *= 0.5
    np.tanh(z, out=z)
    z += 1.0
    z *= 0.5
    return z


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pairs: np.ndarray
    branches: dict = field(default_factory=dict)


class UmModel:
    def __init__(
        self,
        layer_sizes,
        hidden_width: int = 512,
        n_hidden: int = 3,
        momentum: float = 0.99,
        bn_eps: float = 1e-5,
    ):
        self.layer_sizes = tuple(int(v) for v in layer_sizes)
        self.hidden_width = int(hidden_width)
        self.n_hidden = int(n_hidden)
        self.momentum = float(momentum)
        self.bn_eps = float(bn_eps)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    @property
    def n(self) -> int:
        return sum(self.layer_sizes)

    @property
    def input_width(self) -> int:
        return 2 * self.n

    @property
    def branch_names(self) -> tuple[str, ...]:
        return LAYERS

    def config(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_width": self.hidden_width,
            "n_hidden": self.n_hidden,
            "momentum": self.momentum,
            "bn_eps": self.bn_eps,
        }

    def parameter_names(self) -> tuple[list[str], list[str]]:
        """Parameter and buffer names in canonical order."""
        params, buffers = [], []
        for branch in self.branch_names:
            for l in range(self.n_hidden):
                params += [f"{branch}.fc{l}.weight", f"{branch}.fc{l}.bias"]
                params += [f"{branch}.bn{l}.scale", f"{branch}.bn{l}.shift"]
                buffers += [f"{branch}.bn{l}.running_mean", f"{branch}.bn{l}.running_var"]
            params += [f"{branch}.out.weight", f"{branch}.out.bias"]
        return params, buffers

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def checkpoint_id(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].tobytes())
        for name in sorted(self.buffers):
            h.update(name.encode())
            h.update(self.buffers[name].tobytes())
        return h.hexdigest()[:12]

    def copy(self) -> "UmModel":
        other = UmModel(self.layer_sizes, self.hidden_width, self.n_hidden, self.momentum, self.bn_eps)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other

    # -- forward ---------------------------------------------------------------

    def forward(self, inputs, mode: ForwardMode = ForwardMode.EVAL):
        """Return ``(q, cache)`` with ``q[b, i] = Q(X_i = 1 | x_b)``.

        Train mode normalises with batch statistics and updates the running
        averages; Eval mode uses the running averages and mutates nothing.
        """
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ModelError(f"expected inputs of shape (batch, {self.input_width}), got {x.shape}")
        train = mode is ForwardMode.TRAIN
        batch = x.shape[0]
        if batch == 0:
            raise ModelError("empty batch")
        if train and batch < 2:
            raise ModelError("train mode needs a batch of at least 2")

        cache = ForwardCache(inputs=x, pairs=np.empty((batch, self.n, 2)))
        start = 0
        for branch, size in zip(self.branch_names, self.layer_sizes):
            p = self.params
            act = x
            layers = []
            for l in range(self.n_hidden):
                pre = f"{branch}.fc{l}"
                bn = f"{branch}.bn{l}"
                z = act @ p[pre + ".weight"]
                z += p[pre + ".bias"]
                if train:
                    mean = z.mean(axis=0)
                    z -= mean
                    var = np.einsum("ij,ij->j", z, z) / batch
                    m = self.momentum
                    rm, rv = self.buffers[bn + ".running_mean"], self.buffers[bn + ".running_var"]
                    rm *= m
                    rm += (1 - m) * mean
                    rv *= m
                    rv += (1 - m) * var * (batch / (batch - 1))
                else:
                    z -= self.buffers[bn + ".running_mean"]
                    var = self.buffers[bn + ".running_var"]
                inv_std = 1.0 / np.sqrt(var + self.bn_eps)
                xhat = z
                xhat *= inv_std
                h = xhat * p[bn + ".scale"]
                h += p[bn + ".shift"]
                _sigmoid_(h)
                if train:
                    layers.append((act, xhat, inv_std, h))
                act = h
            logits = act @ p[f"{branch}.out.weight"] + p[f"{branch}.out.bias"]
            logits = logits.reshape(batch, size, 2)
            logits -= logits.max(axis=2, keepdims=True)
            e = np.exp(logits)
            pairs = e / e.sum(axis=2, keepdims=True)
            cache.pairs[:, start : start + size] = pairs
            if train:
                cache.branches[branch] = (layers, act)
            start += size
        return cache.pairs[:, :, 1].copy(), cache

    def predict(self, inputs) -> np.ndarray:
        q, _ = self.forward(inputs, ForwardMode.EVAL)
        return q

    def predict_pairs(self, inputs) -> np.ndarray:
        """Both softmax components, ``(batch, n, 2)``: (P(false), P(true))."""
        _, cache = self.forward(inputs, ForwardMode.EVAL)
        return cache.pairs

    # -- backward ------------------------------------------------------------------

    def backward(self, cache: ForwardCache | None, targets, nodes=None) -> dict[str, np.ndarray]:
        """Exact gradients of :func:`loss` (mean over the batch) for every parameter.

        ``nodes`` optionally restricts the loss to a subset of node indices.
        """
        if cache is None or not cache.branches:
            raise ModelError("backward needs the cache of a train-mode forward pass")
        y = np.asarray(targets, dtype=np.float64)
        batch = cache.inputs.shape[0]
        if y.shape != (batch, self.n):
            raise ModelError(f"targets shape {y.shape} != {(batch, self.n)}")
        onehot = np.stack([1.0 - y, y], axis=-1)
        dpairs = (cache.pairs - onehot) / batch
        if nodes is not None:
            keep = np.zeros(self.n, dtype=bool)
            keep[list(nodes)] = True
            dpairs[:, ~keep] = 0.0

        grads: dict[str, np.ndarray] = {}
        p = self.params
        start = 0
        for branch, size in zip(self.branch_names, self.layer_sizes):
            layers, last = cache.branches[branch]
            dlogits = dpairs[:, start : start + size].reshape(batch, 2 * size)
            start += size
            grads[f"{branch}.out.weight"] = last.T @ dlogits
            grads[f"{branch}.out.bias"] = dlogits.sum(axis=0)
            dh = dlogits @ p[f"{branch}.out.weight"].T
            for l in reversed(range(self.n_hidden)):
                pre = f"{branch}.fc{l}"
                bn = f"{branch}.bn{l}"
                act, xhat, inv_std, h = layers[l]
                dy = np.subtract(1.0, h)
                dy *= h
                dy *= dh
                grads[bn + ".scale"] = np.einsum("ij,ij->j", dy, xhat)
                grads[bn + ".shift"] = dy.sum(axis=0)
                dz = dy
                dz *= p[bn + ".scale"]
                mean_dz = dz.mean(axis=0)
                proj = np.einsum("ij,ij->j", dz, xhat) / batch
                dz -= mean_dz
                dz -= xhat * proj
                dz *= inv_std
                grads[pre + ".weight"] = act.T @ dz
                grads[pre + ".bias"] = dz.sum(axis=0)
                if l:
                    dh = dz @ p[pre + ".weight"].T
        return {name: grads[name] for name in self.params}


def init_model(layer_sizes, seed: int, hidden_width: int = 512, n_hidden: int = 3, **kwargs) -> UmModel:
    """Weights ~ N(0, 1/fan_in), biases 0, batch-norm scale 1 / shift 0,
    running mean 0 / variance 1."""
    model = UmModel(layer_sizes, hidden_width, n_hidden, **kwargs)
    rng = np.random.default_rng(seed)
    for branch, size in zip(model.branch_names, model.layer_sizes):
        fan_in = model.input_width
        for l in range(model.n_hidden):
            pre, bn = f"{branch}.fc{l}", f"{branch}.bn{l}"
            model.params[pre + ".weight"] = rng.standard_normal((fan_in, hidden_width)) / np.sqrt(fan_in)
            model.params[pre + ".bias"] = np.zeros(hidden_width)
            model.params[bn + ".scale"] = np.ones(hidden_width)
            model.params[bn + ".shift"] = np.zeros(hidden_width)
            model.buffers[bn + ".running_mean"] = np.zeros(hidden_width)
            model.buffers[bn + ".running_var"] = np.ones(hidden_width)
            fan_in = hidden_width
        model.params[f"{branch}.out.weight"] = rng.standard_normal((fan_in, 2 * size)) / np.sqrt(fan_in)
        model.params[f"{branch}.out.bias"] = np.zeros(2 * size)
    return model


def loss(predictions, targets, nodes=None) -> float:
    """Mean over samples of the summed per-node binary cross entropy.

    Every node contributes, observed or not. ``predictions`` are
    ``Q(X_i = 1 | x_b)``, clamped to ``[1e-12, 1 - 1e-12]`` before the log.
    """
    q = np.clip(np.asarray(predictions, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(targets, dtype=np.float64)
    if q.shape != y.shape:
        raise ModelError(f"prediction shape {q.shape} != target shape {y.shape}")
    ce = -(y * np.log(q) + (1.0 - y) * np.log1p(-q))
    if nodes is not None:
        ce = ce[:, list(nodes)]
    return float(ce.sum(axis=1).mean())


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: UmModel, lr: float = 1e-4, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        state.m = {k: np.zeros_like(v) for k, v in model.params.items()}
        state.v = {k: np.zeros_like(v) for k, v in model.params.items()}
        return state

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def adam_step(model: UmModel, grads: dict, state: AdamState):
    if set(grads) != set(model.params) or set(state.m) != set(model.params):
        raise ModelError("gradient / optimizer state does not match the model parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for name, param in model.params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        tmp = g * (1.0 - b1)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        # tmp <- lr * (m / c1) / (sqrt(v / c2) + eps)
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / c1
        param -= tmp
    return model, state


# -- checkpoints ----------------------------------------------------------------

_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_model(path, model: UmModel, adam: AdamState | None = None, metadata: dict | None = None) -> None:
    """Write a versioned zip container; identical inputs give identical bytes."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model": model.config(),
        "adam": adam.hyperparameters() if adam is not None else None,
        "metadata": metadata or {},
    }
    entries = [("header.json", json.dumps(header, sort_keys=True, indent=1).encode())]
    for group, arrays in (("params", model.params), ("buffers", model.buffers)):
        entries += [(f"{group}/{k}.npy", _npy_bytes(v)) for k, v in arrays.items()]
    if adam is not None:
        entries += [(f"adam_m/{k}.npy", _npy_bytes(v)) for k, v in adam.m.items()]
        entries += [(f"adam_v/{k}.npy", _npy_bytes(v)) for k, v in adam.v.items()]
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in entries:
            info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)


def load_model(path):
    """Return ``(model, adam_state_or_None, metadata)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            version = header.get("format_version")
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"checkpoint version {version!r} != {CHECKPOINT_VERSION}")
            model = UmModel(**header["model"])
            arrays: dict[str, dict] = {"params": {}, "buffers": {}, "adam_m": {}, "adam_v": {}}
            for name in zf.namelist():
                group, _, rest = name.partition("/")
                if group in arrays:
                    arrays[group][rest[: -len(".npy")]] = np.lib.format.read_array(
                        io.BytesIO(zf.read(name)), allow_pickle=False
                    )
    except (zipfile.BadZipFile, KeyError, EOFError, ValueError, OSError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    order, buffer_order = model.parameter_names()
    if sorted(order) != sorted(arrays["params"]) or sorted(buffer_order) != sorted(arrays["buffers"]):
        raise CheckpointError("checkpoint parameter set does not match its architecture")
    model.params = {k: arrays["params"][k] for k in order}
    model.buffers = {k: arrays["buffers"][k] for k in buffer_order}
    adam = None
    if header["adam"] is not None:
        hp = header["adam"]
        adam = AdamState(
            lr=hp["lr"], beta1=hp["beta1"], beta2=hp["beta2"], eps=hp["eps"], t=hp["t"],
            m={k: arrays["adam_m"][k] for k in order},
            v={k: arrays["adam_v"][k] for k in order},
        )
    return model, adam, header["metadata"]
