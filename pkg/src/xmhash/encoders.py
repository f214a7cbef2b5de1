"""Fully-connected hash encoders with a tanh hashing layer.

Both modalities use the same family: ``d -> hidden (relu) -> k (tanh)``.
Gradients are summed over the mini-batch, not averaged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .errors import ContractError
from .numerics import read_matrix, write_matrix

ACTIVATIONS = ("relu", "tanh", "none")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # out x in
    bias: np.ndarray  # out
    activation: str

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class MlpParams:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ContractError("an encoder needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ContractError(f"layer widths do not chain: {a.fan_out} -> {b.fan_in}")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ContractError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.fan_out,):
                raise ContractError("bias length must equal layer output width")
        if self.layers[-1].activation != "tanh":
            raise ContractError("the hashing layer must use tanh")

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.fan_out for layer in self.layers]


@dataclass(frozen=True)
class LayerGrad:
    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class ForwardTrace:
    inputs: tuple[np.ndarray, ...]  # input to each layer
    pre: tuple[np.ndarray, ...]  # pre-activation of each layer
    outputs: np.ndarray


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def init_params(sizes: Sequence[int], rng_seed, hidden_activation: str = "relu") -> MlpParams:
    """Xavier-uniform weights, zero biases; the last layer is the tanh hashing layer."""
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ContractError(f"invalid layer sizes {list(sizes)}")
    rng = np.random.default_rng(rng_seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = "tanh" if i == len(sizes) - 2 else hidden_activation
        layers.append(Layer(weight, np.zeros(fan_out), act))
    return MlpParams(tuple(layers))


def forward(params: MlpParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ContractError(f"encoder expects batch x {params.input_dim} input, got {x.shape}")
    layer_inputs, pre = [], []
    for layer in params.layers:
        layer_inputs.append(x)
        z = x @ layer.weight.T + layer.bias
        pre.append(z)
        x = _activate(z, layer.activation)
    return x, ForwardTrace(tuple(layer_inputs), tuple(pre), x)


def backward(params: MlpParams, trace: ForwardTrace, output_grad: np.ndarray) -> list[LayerGrad]:
    """Backpropagate d(loss)/d(outputs) to per-layer weight and bias gradients."""
    g = np.asarray(output_grad, dtype=np.float64)
    if len(trace.pre) != len(params.layers) or g.shape != trace.outputs.shape:
        raise ContractError("trace does not match these parameters or the output gradient shape")
    grads: list[LayerGrad] = [None] * len(params.layers)  # type: ignore[list-item]
    act_out = trace.outputs
    for li in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[li]
        if layer.weight.shape[1] != trace.inputs[li].shape[1]:
            raise ContractError("trace does not match these parameters")
        dz = g * _activation_grad(trace.pre[li], act_out, layer.activation)
        grads[li] = LayerGrad(weight=dz.T @ trace.inputs[li], bias=dz.sum(axis=0))
        g = dz @ layer.weight
        act_out = trace.inputs[li]
    return grads


def sgd_step(params: MlpParams, grads: Sequence[LayerGrad], lr: float) -> MlpParams:
    if len(grads) != len(params.layers):
        raise ContractError("gradient list does not match the layers")
    return MlpParams(tuple(
        Layer(layer.weight - lr * g.weight, layer.bias - lr * g.bias, layer.activation)
        for layer, g in zip(params.layers, grads)
    ))


def write_params(f: BinaryIO, params: MlpParams) -> None:
    """JSON header line with sizes/activations, then weight and 1 x out bias matrices per layer."""
    header = {"sizes": params.sizes, "activations": [layer.activation for layer in params.layers]}
    f.write(json.dumps(header).encode("utf-8") + b"\n")
    for layer in params.layers:
        write_matrix(f, layer.weight)
        write_matrix(f, layer.bias[None, :])


def read_params(f: BinaryIO) -> MlpParams:
    header = json.loads(f.readline().decode("utf-8"))
    sizes, acts = header["sizes"], header["activations"]
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], acts):
        weight = read_matrix(f)
        bias = read_matrix(f)
        if weight.shape != (fan_out, fan_in) or bias.shape != (1, fan_out):
            raise ValueError("checkpoint matrices disagree with the header sizes")
        layers.append(Layer(weight, bias[0].copy(), act))
    return MlpParams(tuple(layers))


def save_params(path, params: MlpParams) -> None:
    with open(path, "wb") as f:
        write_params(f, params)


def load_params(path) -> MlpParams:
    with open(path, "rb") as f:
        return read_params(f)
