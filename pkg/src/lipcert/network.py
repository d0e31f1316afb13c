"""Feedforward network model: evaluation, differentiation, slicing, merging, I/O.

A network is an ordered chain of affine layers ``v = W z + b`` with one
elementwise activation applied after every layer except the last; the
final layer is always linear.  Networks are immutable after
construction and all operations here are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATION_KINDS = ("relu", "leaky_relu", "tanh", "sigmoid", "elu", "identity")

FORMAT_VERSION = 1


class NetworkFormatError(ValueError):
    """Malformed network file or inconsistent layer dimensions."""


class UnknownActivation(NetworkFormatError):
    """Activation kind not in the supported catalog."""


@dataclass(frozen=True)
class ActivationSpec:
    """Elementwise activation with an optional shape parameter.

    ``param`` is the negative-side slope for leaky_relu (gamma in (0,1))
    and the scale for elu (gamma > 0); it is ignored otherwise.
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise UnknownActivation(f"unknown activation kind '{self.kind}'")
        if self.kind == "leaky_relu" and not (0.0 < self.param < 1.0):
            raise ValueError(f"leaky_relu slope must lie in (0, 1), got {self.param}")
        if self.kind == "elu" and not (self.param > 0.0):
            raise ValueError(f"elu scale must be positive, got {self.param}")

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "relu":
            return np.maximum(v, 0.0)
        if self.kind == "leaky_relu":
            return np.where(v >= 0.0, v, self.param * v)
        if self.kind == "tanh":
            return np.tanh(v)
        if self.kind == "sigmoid":
            return 1.0 / (1.0 + np.exp(-v))
        if self.kind == "elu":
            return np.where(v >= 0.0, v, self.param * np.expm1(v))
        return v.copy()  # identity

    def derivative(self, v: np.ndarray) -> np.ndarray:
        """Pointwise slope; kinks use the slope of the x > 0 branch."""
        v = np.asarray(v, dtype=float)
        if self.kind == "relu":
            return np.where(v >= 0.0, 1.0, 0.0)
        if self.kind == "leaky_relu":
            return np.where(v >= 0.0, 1.0, self.param)
        if self.kind == "tanh":
            return 1.0 - np.tanh(v) ** 2
        if self.kind == "sigmoid":
            s = 1.0 / (1.0 + np.exp(-v))
            return s * (1.0 - s)
        if self.kind == "elu":
            return np.where(v >= 0.0, 1.0, self.param * np.exp(v))
        return np.ones_like(v)


@dataclass(frozen=True)
class Network:
    """Weight/bias chain with one hidden-layer activation.

    ``weights[i]`` has shape (d_{i+1}, d_i); the activation applies to
    every layer except the last, which stays linear.
    """

    weights: tuple
    biases: tuple
    activation: ActivationSpec

    def __post_init__(self):
        ws = tuple(np.array(W, dtype=float) for W in self.weights)
        bs = tuple(np.array(b, dtype=float) for b in self.biases)
        if not ws:
            raise NetworkFormatError("network needs at least one layer")
        if len(ws) != len(bs):
            raise NetworkFormatError("weight/bias count mismatch")
        for i, (W, b) in enumerate(zip(ws, bs), start=1):
            if W.ndim != 2 or b.ndim != 1:
                raise NetworkFormatError(f"layer {i}: weight must be 2-d and bias 1-d")
            if W.shape[0] != b.shape[0]:
                raise NetworkFormatError(
                    f"layer {i}: bias length {b.shape[0]} does not match {W.shape[0]} rows")
            if i > 1 and W.shape[1] != ws[i - 2].shape[0]:
                raise NetworkFormatError(
                    f"layer {i}: expects {W.shape[1]} inputs but layer {i-1} emits "
                    f"{ws[i - 2].shape[0]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NetworkFormatError(f"layer {i}: non-finite entries")
            if not np.any(W):
                raise NetworkFormatError(f"layer {i}: zero weight matrix")
        for W in ws:
            W.setflags(write=False)
        for b in bs:
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def depth(self) -> int:
        """Number of layers N (hidden layers plus the linear output layer)."""
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> tuple:
        """(d_0, d_1, ..., d_N)."""
        return (self.input_dim,) + tuple(W.shape[0] for W in self.weights)


@dataclass(frozen=True)
class LayerSelection:
    """Sub-network window: layers p+1..i, input indices into the layer-p
    signal and output indices into the layer-i pre-activations.

    Indices are 0-based internally; ``input_indices=None`` or
    ``output_indices=None`` selects everything.
    """

    p: int
    i: int
    input_indices: tuple | None = None
    output_indices: tuple | None = None

    def resolved(self, net: Network) -> tuple:
        """Validate against ``net`` and return (p, i, K, L) as arrays."""
        widths = net.widths
        if not (0 <= self.p < self.i <= net.depth):
            raise ValueError(f"invalid layer window p={self.p}, i={self.i}")

        def _indices(raw, dim, label):
            if raw is None:
                return np.arange(dim)
            idx = np.asarray(raw, dtype=int)
            if idx.size == 0:
                raise ValueError(f"{label} index set is empty")
            if np.unique(idx).size != idx.size:
                raise ValueError(f"{label} index set has duplicates")
            if idx.min() < 0 or idx.max() >= dim:
                raise ValueError(f"{label} index out of range for width {dim}")
            return idx

        K = _indices(self.input_indices, widths[self.p], "input")
        L = _indices(self.output_indices, widths[self.i], "output")
        return self.p, self.i, K, L


def forward(net: Network, z) -> tuple:
    """Evaluate the network; returns (output, [v^(1), ..., v^(N)]).

    The listed vectors are pre-activations; the output equals the last
    one since the final layer is linear.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (net.input_dim,):
        raise ValueError(f"input must have shape ({net.input_dim},), got {z.shape}")
    preacts = []
    h = z
    last = net.depth - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        v = W @ h + b
        preacts.append(v)
        h = net.activation(v) if i < last else v
    return h, preacts


def center_values(net: Network, z_c) -> tuple:
    """Pre- and post-activation values at a fixed center input.

    Returns (pre, post) lists over layers 1..N, computed recursively so
    each layer reuses the previous post-activation value.  The final
    layer is linear, so its post value equals its pre value.
    """
    out, pre = forward(net, z_c)
    last = net.depth - 1
    post = [net.activation(v) if i < last else v for i, v in enumerate(pre)]
    return pre, post


def jacobian(net: Network, z) -> np.ndarray:
    """Exact Jacobian at ``z`` by the reverse-mode chain rule.

    At nondifferentiable kinks the slope of the positive branch is used,
    making the result deterministic.
    """
    _, preacts = forward(net, z)
    J = net.weights[0].copy()
    for i in range(1, net.depth):
        slope = net.activation.derivative(preacts[i - 1])
        J = net.weights[i] @ (slope[:, None] * J)
    return J


def slice_network(net: Network, sel: LayerSelection) -> Network:
    """Sub-network of layers p+1..i with trimmed first columns / last rows.

    The first selected weight keeps only the input-index columns; the
    last keeps only the output-index rows.  Biases of interior layers
    are untouched; the last layer's bias is trimmed to match.
    """
    p, i, K, L = sel.resolved(net)
    ws = [net.weights[k].copy() for k in range(p, i)]
    bs = [net.biases[k].copy() for k in range(p, i)]
    ws[0] = ws[0][:, K]
    ws[-1] = ws[-1][L, :]
    bs[-1] = bs[-1][L]
    return Network(tuple(ws), tuple(bs), net.activation)


def merge_affine(net: Network, start: int, count: int, slopes) -> tuple:
    """Collapse ``count`` consecutive affine layers into one (W, b) pair.

    ``start`` is the 0-based index of the first layer in the run and
    ``slopes[j]`` the per-neuron slope vector of layer start+j (its
    activation must be affine there, i.e. lower slope equals upper).
    Only the slopes of the first count-1 layers enter the composition;
    the run's last layer keeps its own activation downstream.
    """
    if count < 1 or start < 0 or start + count > net.depth:
        raise ValueError("merge window out of range")
    if len(slopes) != count:
        raise ValueError("need one slope vector per merged layer")
    W = net.weights[start].copy()
    b = net.biases[start].copy()
    for j in range(1, count):
        a = np.asarray(slopes[j - 1], dtype=float)
        if a.shape != (W.shape[0],):
            raise ValueError(f"slope vector {j-1} has wrong length")
        Wn, bn = net.weights[start + j], net.biases[start + j]
        W = Wn @ (a[:, None] * W)
        b = Wn @ (a * b) + bn
    return W, b


def save(net: Network, path) -> None:
    """Write the JSON manifest; numbers round-trip exactly as doubles."""
    doc = {
        "version": FORMAT_VERSION,
        "activation": {"kind": net.activation.kind, "param": net.activation.param},
        "layers": [
            {
                "rows": int(W.shape[0]),
                "cols": int(W.shape[1]),
                "weights": [float(x) for x in W.ravel()],
                "bias": [float(x) for x in b],
            }
            for W, b in zip(net.weights, net.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load(path) -> Network:
    """Read a network manifest, validating shape and activation."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "layers" not in doc or "activation" not in doc:
        raise NetworkFormatError("manifest must contain 'activation' and 'layers'")
    act_doc = doc["activation"]
    act = ActivationSpec(str(act_doc.get("kind", "")), float(act_doc.get("param", 0.0)))
    ws, bs = [], []
    for idx, layer in enumerate(doc["layers"], start=1):
        try:
            rows, cols = int(layer["rows"]), int(layer["cols"])
            w = np.asarray(layer["weights"], dtype=float)
            b = np.asarray(layer["bias"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkFormatError(f"layer {idx}: {exc}") from None
        if w.size != rows * cols:
            raise NetworkFormatError(
                f"layer {idx}: {w.size} weights cannot fill a {rows}x{cols} matrix")
        ws.append(w.reshape(rows, cols))
        bs.append(b)
    return Network(tuple(ws), tuple(bs), act)
