"""Latent-to-RGB networks with hand-derived reverse passes.

The main head is a sinusoidal synthesizer on t whose hidden activations are
gated elementwise by a LeakyReLU modulator fed with the latent vector. Plain
MLP stacks double as the no-modulation ablation head and as the SIREN / RFF
baseline fields.

Forward passes return a tape of cached pre-activations; backward passes
consume the tape exactly once and accumulate parameter gradients into a
caller-provided buffer map. Tapes are invalidated whenever the owning
network's parameters are updated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import ops
from .optim import ParamBlock

LEAKY_SLOPE = 0.01


class StaleTapeError(RuntimeError):
    """Tape reused, or parameters changed since the matching forward."""


class Affine:
    """Weight/bias pair used by every network in this module."""

    def __init__(self, name: str, in_dim: int, out_dim: int):
        self.A = ParamBlock.zeros(f"{name}.A", (out_dim, in_dim))
        self.b = ParamBlock.zeros(f"{name}.b", (out_dim,))

    @property
    def in_dim(self) -> int:
        return self.A.value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.A.value.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return ops.linear_forward(x, self.A.value, self.b.value)

    def backward(self, x, upstream, grads: Mapping[str, np.ndarray]) -> np.ndarray:
        dA, db, dx = ops.linear_backward(x, self.A.value, upstream)
        grads[self.A.name] += dA
        grads[self.b.name] += db
        return dx

    def parameters(self) -> list[ParamBlock]:
        return [self.A, self.b]


def _apply_act(kind, pre):
    if kind[0] == "sin":
        return ops.sin_act(pre, kind[1])
    if kind[0] == "lrelu":
        return ops.leaky_relu(pre, LEAKY_SLOPE)
    if kind[0] == "relu":
        return np.maximum(pre, 0)
    if kind[0] == "none":
        return pre
    raise ValueError(f"unknown activation {kind!r}")


def _act_backward(kind, pre, upstream):
    if kind[0] == "sin":
        return ops.sin_act_backward(pre, kind[1], upstream)
    if kind[0] == "lrelu":
        return ops.leaky_relu_backward(pre, LEAKY_SLOPE, upstream)
    if kind[0] == "relu":
        return np.where(pre >= 0, upstream, 0.0)
    if kind[0] == "none":
        return upstream
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class MlpTape:
    owner: object
    version: int
    inputs: list  # per layer input
    pres: list  # per layer pre-activation
    consumed: bool = False


class Mlp:
    """Affine stack with a per-layer activation spec."""

    def __init__(self, name: str, dims: list[int], acts: list[tuple]):
        if len(dims) < 2 or len(acts) != len(dims) - 1:
            raise ValueError("need one activation per affine layer")
        self.layers = [
            Affine(f"{name}/{i}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)
        ]
        self.acts = list(acts)
        self.version = 0

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpTape]:
        inputs, pres = [], []
        h = x
        for layer, act in zip(self.layers, self.acts):
            inputs.append(h)
            pre = layer.forward(h)
            pres.append(pre)
            h = _apply_act(act, pre)
        return h, MlpTape(self, self.version, inputs, pres)

    def backward(self, tape: MlpTape, upstream, grads: Mapping[str, np.ndarray]):
        _consume(self, tape)
        d = upstream
        for layer, act, x_in, pre in zip(
            reversed(self.layers), reversed(self.acts), reversed(tape.inputs), reversed(tape.pres)
        ):
            d = layer.backward(x_in, _act_backward(act, pre, d), grads)
        return d

    def parameters(self) -> list[ParamBlock]:
        return [p for layer in self.layers for p in layer.parameters()]


def _consume(owner, tape) -> None:
    if tape.owner is not owner:
        raise StaleTapeError("tape belongs to a different network")
    if tape.consumed:
        raise StaleTapeError("tape already consumed by a backward pass")
    if tape.version != owner.version:
        raise StaleTapeError("parameters changed since this tape's forward pass")
    tape.consumed = True


@dataclass
class FieldTape:
    owner: object
    version: int
    z: np.ndarray
    mod_tape: MlpTape
    gates: list  # z_k, k = 1..K-1
    synth_inputs: list  # alpha_{k-1} per synthesizer layer
    synth_pres: list  # A_k alpha + b_k per gated layer
    sins: list  # sin(sigma_k * pre)
    consumed: bool = False


class ModulatedField:
    """Sinusoidal MLP on t, gated per hidden layer by a modulator on z.

    alpha_0 = t; alpha_k = z_k * sin(sigma_k * (A_k alpha_{k-1} + b_k));
    rgb = A_K alpha_{K-1} + b_K, unclamped.
    """

    def __init__(self, z_dim: int, hidden: int, depth: int, sigmas: tuple[float, ...]):
        if depth < 2:
            raise ValueError("synthesizer needs at least two layers")
        if len(sigmas) != depth - 1:
            raise ValueError(f"need {depth - 1} frequencies, got {len(sigmas)}")
        self.z_dim = int(z_dim)
        self.hidden = int(hidden)
        self.depth = int(depth)
        self.sigmas = tuple(float(s) for s in sigmas)
        dims = [1] + [hidden] * (depth - 1) + [3]
        self.synth = [Affine(f"synth/{k}", dims[k], dims[k + 1]) for k in range(depth)]
        mod_dims = [z_dim] + [hidden] * (depth - 1)
        self.modulator = Mlp("mod", mod_dims, [("lrelu",)] * (depth - 1))
        self.version = 0

    def bump_version(self) -> None:
        self.version += 1
        self.modulator.version += 1

    def forward(self, z: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, FieldTape]:
        """rgb for latent rows z and times t; t is (n,) or scalar."""
        z = np.atleast_2d(z)
        if z.shape[1] != self.z_dim:
            raise ops.ShapeError(f"latent dim {z.shape[1]} != expected {self.z_dim}")
        t = np.broadcast_to(np.atleast_1d(t), (z.shape[0],))

        gates = []
        h = z
        mod_inputs, mod_pres = [], []
        for layer, act in zip(self.modulator.layers, self.modulator.acts):
            mod_inputs.append(h)
            pre = layer.forward(h)
            mod_pres.append(pre)
            h = _apply_act(act, pre)
            gates.append(h)
        mod_tape = MlpTape(self.modulator, self.modulator.version, mod_inputs, mod_pres)

        alpha = t[:, None].astype(z.dtype)
        synth_inputs, synth_pres, sins = [], [], []
        for k in range(self.depth - 1):
            synth_inputs.append(alpha)
            pre = self.synth[k].forward(alpha)
            synth_pres.append(pre)
            s = ops.sin_act(pre, self.sigmas[k])
            sins.append(s)
            alpha = gates[k] * s
        synth_inputs.append(alpha)
        rgb = self.synth[-1].forward(alpha)
        return rgb, FieldTape(
            self, self.version, z, mod_tape, gates, synth_inputs, synth_pres, sins
        )

    def backward(
        self, tape: FieldTape, upstream: np.ndarray, grads: Mapping[str, np.ndarray]
    ) -> np.ndarray:
        """Gradients for every parameter plus dz for the grid scatter."""
        _consume(self, tape)
        upstream = np.atleast_2d(upstream)
        d_alpha = self.synth[-1].backward(tape.synth_inputs[-1], upstream, grads)

        gate_grads: list[np.ndarray | None] = [None] * (self.depth - 1)
        for k in range(self.depth - 2, -1, -1):
            gate_grads[k] = d_alpha * tape.sins[k]
            d_sin = d_alpha * tape.gates[k]
            d_pre = ops.sin_act_backward(tape.synth_pres[k], self.sigmas[k], d_sin)
            d_alpha = self.synth[k].backward(tape.synth_inputs[k], d_pre, grads)

        # Modulator chain: each hidden state feeds both its gate and the next layer.
        d_gate = gate_grads[-1]
        mt = tape.mod_tape
        _consume(self.modulator, mt)
        for k in range(self.depth - 2, -1, -1):
            d_pre = _act_backward(("lrelu",), mt.pres[k], d_gate)
            d_below = self.modulator.layers[k].backward(mt.inputs[k], d_pre, grads)
            if k > 0:
                d_gate = d_below + gate_grads[k - 1]
        return d_below

    def parameters(self) -> list[ParamBlock]:
        out = []
        for layer in self.synth:
            out.extend(layer.parameters())
        out.extend(self.modulator.parameters())
        return out


class RffEmbedding:
    """Fixed random Fourier feature map [sin(2 pi W z), cos(2 pi W z)]."""

    def __init__(self, in_dim: int, features: int):
        self.weights = np.zeros((features, in_dim))
        self.name = "ffn/embed"

    @property
    def out_dim(self) -> int:
        return 2 * self.weights.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        phase = 2.0 * np.pi * (x @ self.weights.T.astype(x.dtype))
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)
