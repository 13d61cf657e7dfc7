"""Minimal differentiable-network substrate shared by the adversarial models.

Supports exactly the layer kinds the imputation models need: 2D conv
(stride 1, odd kernel, zero "same" padding), dense, relu, sigmoid,
dropout, batchnorm (normalizing one image over its spatial positions),
and reshape.  Forward returns a tape; backward consumes it and yields
parameter gradients plus the input gradient, so latent vectors can be
optimized through a frozen network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import BACKEND, conv2d_backward, conv2d_forward

__all__ = [
    "BACKEND",
    "Conv2d",
    "Dense",
    "Relu",
    "Sigmoid",
    "Dropout",
    "BatchNorm",
    "Reshape",
    "Network",
    "AdamState",
    "forward",
    "backward",
    "adam_step",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    padding: str = "same"
    stride: int = 1
    kind: str = field(default="conv2d", init=False)

    def __post_init__(self):
        if self.padding != "same" or self.stride != 1:
            raise ValueError("only stride-1 'same' convolutions are supported")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd for 'same' padding")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class Relu:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class Sigmoid:
    kind: str = field(default="sigmoid", init=False)


@dataclass(frozen=True)
class Dropout:
    rate: float
    kind: str = field(default="dropout", init=False)

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class BatchNorm:
    channels: int
    kind: str = field(default="batchnorm", init=False)


@dataclass(frozen=True)
class Reshape:
    shape: tuple[int, int, int]
    kind: str = field(default="reshape", init=False)


_LAYER_KINDS = {
    "conv2d": Conv2d,
    "dense": Dense,
    "relu": Relu,
    "sigmoid": Sigmoid,
    "dropout": Dropout,
    "batchnorm": BatchNorm,
    "reshape": Reshape,
}


def _layer_to_json(layer) -> dict:
    spec = {"kind": layer.kind}
    for name, value in vars(layer).items():
        if name == "kind":
            continue
        spec[name] = list(value) if isinstance(value, tuple) else value
    return spec


def _layer_from_json(spec: dict):
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    if "shape" in kwargs:
        kwargs["shape"] = tuple(kwargs["shape"])
    return _LAYER_KINDS[spec["kind"]](**kwargs)


class Network:
    """Ordered layer stack with its parameter and batchnorm-statistic store."""

    def __init__(self, layers, seed: int = 0):
        self.layers = tuple(layers)
        self.seed = int(seed)
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.param_order: list[str] = []
        rng = np.random.default_rng(seed)
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d):
                fan_in = layer.in_channels * layer.kernel_size**2
                bound = 1.0 / np.sqrt(fan_in)
                shape = (layer.out_channels, layer.in_channels,
                         layer.kernel_size, layer.kernel_size)
                self._add(f"{idx}.weight", rng.uniform(-bound, bound, shape))
                self._add(f"{idx}.bias", rng.uniform(-bound, bound, layer.out_channels))
            elif isinstance(layer, Dense):
                bound = 1.0 / np.sqrt(layer.in_features)
                self._add(f"{idx}.weight",
                          rng.uniform(-bound, bound, (layer.out_features, layer.in_features)))
                self._add(f"{idx}.bias", rng.uniform(-bound, bound, layer.out_features))
            elif isinstance(layer, BatchNorm):
                self._add(f"{idx}.gamma", np.ones(layer.channels))
                self._add(f"{idx}.beta", np.zeros(layer.channels))
                self.state[f"{idx}.running_mean"] = np.zeros(layer.channels)
                self.state[f"{idx}.running_var"] = np.ones(layer.channels)

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = np.ascontiguousarray(value, dtype=np.float64)
        self.param_order.append(name)

    def has_dropout(self) -> bool:
        return any(isinstance(l, Dropout) and l.rate > 0 for l in self.layers)


@dataclass
class Tape:
    net: Network
    training: bool
    records: list = field(default_factory=list)


def _as_grid(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (channels, rows, cols) input, got shape {x.shape}")
    return x


def forward(net: Network, x, training: bool = False, rng=None):
    """Run the stack; returns (output grid, tape for backward).

    Dropout draws from rng when training; batchnorm uses batch statistics
    in training mode (and updates the running ones), frozen running
    statistics in eval mode.
    """
    x = _as_grid(x)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    tape = Tape(net=net, training=training)
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, Conv2d):
            if x.shape[0] != layer.in_channels:
                raise ValueError(
                    f"layer {idx}: expected {layer.in_channels} channels, got {x.shape[0]}"
                )
            w = net.params[f"{idx}.weight"]
            b = net.params[f"{idx}.bias"]
            tape.records.append(("conv2d", idx, x))
            x = conv2d_forward(x, w, b)
        elif isinstance(layer, Dense):
            flat = x.reshape(-1)
            if flat.size != layer.in_features:
                raise ValueError(
                    f"layer {idx}: expected {layer.in_features} inputs, got {flat.size}"
                )
            w = net.params[f"{idx}.weight"]
            b = net.params[f"{idx}.bias"]
            tape.records.append(("dense", idx, (flat, x.shape)))
            x = (w @ flat + b).reshape(layer.out_features, 1, 1)
        elif isinstance(layer, Relu):
            mask = x > 0
            tape.records.append(("relu", idx, mask))
            x = np.where(mask, x, 0.0)
        elif isinstance(layer, Sigmoid):
            x = 1.0 / (1.0 + np.exp(-x))
            tape.records.append(("sigmoid", idx, x))
        elif isinstance(layer, Dropout):
            if training and layer.rate > 0:
                if rng is None:
                    raise ValueError("training forward through dropout requires an rng")
                keep = rng.random(x.shape) >= layer.rate
                scale = 1.0 / (1.0 - layer.rate)
                tape.records.append(("dropout", idx, (keep, scale)))
                x = np.where(keep, x * scale, 0.0)
            else:
                tape.records.append(("dropout", idx, None))
        elif isinstance(layer, BatchNorm):
            gamma = net.params[f"{idx}.gamma"]
            beta = net.params[f"{idx}.beta"]
            if training:
                mean = x.mean(axis=(1, 2))
                var = x.var(axis=(1, 2))
                std = np.sqrt(var + _BN_EPS)
                xhat = (x - mean[:, None, None]) / std[:, None, None]
                rm = net.state[f"{idx}.running_mean"]
                rv = net.state[f"{idx}.running_var"]
                net.state[f"{idx}.running_mean"] = (1 - _BN_MOMENTUM) * rm + _BN_MOMENTUM * mean
                net.state[f"{idx}.running_var"] = (1 - _BN_MOMENTUM) * rv + _BN_MOMENTUM * var
                tape.records.append(("batchnorm", idx, (xhat, std, True)))
            else:
                mean = net.state[f"{idx}.running_mean"]
                std = np.sqrt(net.state[f"{idx}.running_var"] + _BN_EPS)
                xhat = (x - mean[:, None, None]) / std[:, None, None]
                tape.records.append(("batchnorm", idx, (xhat, std, False)))
            x = gamma[:, None, None] * xhat + beta[:, None, None]
        elif isinstance(layer, Reshape):
            if x.size != int(np.prod(layer.shape)):
                raise ValueError(
                    f"layer {idx}: cannot reshape {x.shape} to {layer.shape}"
                )
            tape.records.append(("reshape", idx, x.shape))
            x = x.reshape(layer.shape)
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return x, tape


def backward(net: Network, tape: Tape, output_gradient):
    """Backpropagate; returns ({param name: gradient}, input gradient)."""
    if tape.net is not net:
        raise ValueError("stale tape: it was produced by a different network")
    g = np.ascontiguousarray(output_gradient, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    for kind, idx, saved in reversed(tape.records):
        if kind == "conv2d":
            x = saved
            w = net.params[f"{idx}.weight"]
            g = g.reshape(w.shape[0], x.shape[1], x.shape[2])
            gx, gw, gb = conv2d_backward(x, w, np.ascontiguousarray(g))
            grads[f"{idx}.weight"] = gw
            grads[f"{idx}.bias"] = gb
            g = gx
        elif kind == "dense":
            flat, in_shape = saved
            w = net.params[f"{idx}.weight"]
            gvec = g.reshape(-1)
            grads[f"{idx}.weight"] = np.outer(gvec, flat)
            grads[f"{idx}.bias"] = gvec
            g = (w.T @ gvec).reshape(in_shape)
        elif kind == "relu":
            g = np.where(saved, g, 0.0)
        elif kind == "sigmoid":
            y = saved
            g = g * y * (1.0 - y)
        elif kind == "dropout":
            if saved is not None:
                keep, scale = saved
                g = np.where(keep, g * scale, 0.0)
        elif kind == "batchnorm":
            xhat, std, batch_mode = saved
            gamma = net.params[f"{idx}.gamma"]
            grads[f"{idx}.gamma"] = (g * xhat).sum(axis=(1, 2))
            grads[f"{idx}.beta"] = g.sum(axis=(1, 2))
            gxhat = g * gamma[:, None, None]
            if batch_mode:
                n = xhat.shape[1] * xhat.shape[2]
                s1 = gxhat.sum(axis=(1, 2))[:, None, None]
                s2 = (gxhat * xhat).sum(axis=(1, 2))[:, None, None]
                g = (gxhat - s1 / n - xhat * s2 / n) / std[:, None, None]
            else:
                g = gxhat / std[:, None, None]
        elif kind == "reshape":
            g = g.reshape(saved)
    return grads, g


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float) -> "AdamState":
        state = cls(lr=lr)
        for name, value in params.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState):
    """One Adam update, in place; returns (params, state)."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def grad_check(net: Network, x, eps: float = 1e-4, training: bool = True) -> float:
    """Max relative error between analytic and central-difference gradients.

    Uses the scalar loss 0.5 * sum(output^2).  Refuses nets whose output is
    stochastic under repeated forwards.
    """
    if training and net.has_dropout():
        raise ValueError("non-deterministic layer in grad_check (dropout in training mode)")
    x = _as_grid(x)
    state_backup = {k: v.copy() for k, v in net.state.items()}

    def loss() -> float:
        out, _ = forward(net, x, training=training)
        return 0.5 * float((out * out).sum())

    out, tape = forward(net, x, training=training)
    grads, _ = backward(net, tape, out)

    worst = 0.0
    for name, p in net.params.items():
        analytic = grads.get(name, np.zeros_like(p))
        flat = p.reshape(-1)
        a_flat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss()
            flat[i] = orig - eps
            down = loss()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    for k, v in state_backup.items():
        net.state[k] = v
    return worst


def save_checkpoint(net: Network, path, extra: dict | None = None):
    """Write a JSON manifest plus a flat little-endian float64 parameter file."""
    path = Path(path)
    bin_name = path.name + ".bin"
    manifest = {
        "layers": [_layer_to_json(l) for l in net.layers],
        "seed": net.seed,
        "param_order": net.param_order,
        "param_shapes": {k: list(net.params[k].shape) for k in net.param_order},
        "state_order": sorted(net.state),
        "params_file": bin_name,
        "extra": extra or {},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    blobs = [net.params[k] for k in net.param_order]
    blobs += [net.state[k] for k in sorted(net.state)]
    flat = np.concatenate([b.reshape(-1) for b in blobs]) if blobs else np.empty(0)
    (path.parent / bin_name).write_bytes(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[Network, dict]:
    """Inverse of save_checkpoint; returns (network, extra manifest block)."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    layers = [_layer_from_json(spec) for spec in manifest["layers"]]
    net = Network(layers, seed=manifest["seed"])
    raw = np.frombuffer((path.parent / manifest["params_file"]).read_bytes(), dtype="<f8")
    offset = 0
    for name in manifest["param_order"]:
        shape = tuple(manifest["param_shapes"][name])
        size = int(np.prod(shape)) if shape else 1
        net.params[name] = raw[offset : offset + size].reshape(shape).copy()
        offset += size
    for name in manifest["state_order"]:
        size = net.state[name].size
        net.state[name] = raw[offset : offset + size].reshape(net.state[name].shape).copy()
        offset += size
    if offset != raw.size:
        raise ValueError(f"checkpoint size mismatch: consumed {offset} of {raw.size} values")
    return net, manifest.get("extra", {})
