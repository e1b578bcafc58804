"""Fully-connected networks and the Adam update on top of :mod:`autodiff`."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError

ACTIVATIONS = {
    "identity": lambda x: x,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
}
_ACT_CODES = {"identity": 0, "relu": 1, "tanh": 2, "sigmoid": 3}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class DenseLayer:
    weight: Tensor  # (n_in, n_out)
    bias: Tensor    # (n_out,)
    activation: str = "identity"

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseNet:
    layers: list[DenseLayer]

    def __post_init__(self):
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer dims do not chain: {a.n_out} -> {b.n_in}")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ContractError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.n_out,):
                raise ShapeError("bias length must equal layer output width")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def dims(self) -> list[int]:
        return [self.n_in] + [layer.n_out for layer in self.layers]

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x):
        return forward_dense(self, x)


def init_dense(dims: Sequence[int], activations: Sequence[str],
               rng: np.random.Generator) -> DenseNet:
    """Glorot-uniform weights, zero biases.

    ``dims`` lists every width from input to output, so a net with
    ``len(dims) - 1`` layers is built.
    """
    if len(activations) != len(dims) - 1:
        raise ContractError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(dims[:-1], dims[1:], activations):
        lim = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-lim, lim, size=(n_in, n_out))
        layers.append(DenseLayer(Tensor(w, True), Tensor(np.zeros(n_out), True), act))
    return DenseNet(layers)


def forward_dense(net: DenseNet, x) -> Tensor:
    """Apply ``net`` to the last axis of ``x``; leading axes are batch axes."""
    x = ad.as_tensor(x)
    if x.ndim == 0 or x.shape[-1] != net.n_in:
        raise ShapeError(f"input width {x.shape[-1:]} does not match net input {net.n_in}")
    lead = x.shape[:-1]
    h = ad.reshape(x, (-1, net.n_in))
    for layer in net.layers:
        h = ACTIVATIONS[layer.activation](h @ layer.weight + layer.bias)
    return ad.reshape(h, lead + (net.n_out,))


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: AdamState, ascent: bool = True) -> None:
    """One bias-corrected Adam update, in place on ``params``.

    The default moves along ``+grad`` because the training objective is a
    utility to be maximised.
    """
    if len(params) != len(grads):
        raise ShapeError("one gradient per parameter required")
    if not state.m:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    sign = 1.0 if ascent else -1.0
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.values = p.values + sign * state.lr * mhat / (np.sqrt(vhat) + state.eps)


# --------------------------------------------------------------- serialising

def write_dense(fh: BinaryIO, net: DenseNet) -> None:
    fh.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        fh.write(struct.pack("<IIB", layer.n_in, layer.n_out, _ACT_CODES[layer.activation]))
        fh.write(np.ascontiguousarray(layer.weight.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(layer.bias.values, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContractError("truncated checkpoint")
    return buf


def read_dense(fh: BinaryIO) -> DenseNet:
    (n_layers,) = struct.unpack("<I", _read_exact(fh, 4))
    layers = []
    for _ in range(n_layers):
        n_in, n_out, code = struct.unpack("<IIB", _read_exact(fh, 9))
        if code not in _ACT_NAMES:
            raise ContractError(f"unknown activation code {code}")
        w = np.frombuffer(_read_exact(fh, 8 * n_in * n_out), dtype="<f8").reshape(n_in, n_out)
        b = np.frombuffer(_read_exact(fh, 8 * n_out), dtype="<f8")
        layers.append(DenseLayer(Tensor(w.astype(np.float64), True),
                                 Tensor(b.astype(np.float64), True), _ACT_NAMES[code]))
    return DenseNet(layers)
