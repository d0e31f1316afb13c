"""Activation slope bounds: global catalog values and local refinement.

Per neuron we track an interval [alpha, beta] containing every
subdifferential value of the activation over that neuron's
pre-activation range.  Narrower intervals translate directly into
tighter certificates, so local certification propagates value ranges
layer by layer and recomputes these intervals at every stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import ActivationSpec

# j is degenerate (alpha_j == beta_j for all practical purposes) when the
# interval width falls below this scale-relative tolerance.  Exact float
# equality would be brittle for tanh/sigmoid at tiny radii.
DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class NeuronRanges:
    """Elementwise pre-activation bounds lo <= v <= hi for one layer."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("range bounds must be equal-length vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("range bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("range lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class LayerSlopeBounds:
    """Per-neuron slope interval [alpha, beta] plus its degenerate split.

    ``equal_set`` holds the indices whose interval has collapsed
    (within DEGENERATE_RTOL); ``active_set`` is the complement.
    """

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("slope bounds must be equal-length vectors")
        if np.any(a > b):
            raise ValueError("alpha must not exceed beta")
        if np.any(a * b < 0):
            raise ValueError("sign-mixed slope interval (alpha < 0 < beta) is unsupported")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def width(self) -> int:
        return self.alpha.shape[0]

    @property
    def equal_mask(self) -> np.ndarray:
        return (self.beta - self.alpha) <= DEGENERATE_RTOL * np.maximum(1.0, np.abs(self.beta))

    @property
    def equal_set(self) -> np.ndarray:
        return np.nonzero(self.equal_mask)[0]

    @property
    def active_set(self) -> np.ndarray:
        return np.nonzero(~self.equal_mask)[0]

    @property
    def all_equal(self) -> bool:
        return bool(self.equal_mask.all())


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def refine_interval(act: ActivationSpec, lo: float, hi: float) -> tuple:
    """Tightest slope interval covering the subdifferential over [lo, hi].

    Infinite endpoints are accepted and saturate to the activation's
    global bounds.  At kinks the full subdifferential is included, so a
    range touching 0 from one side still yields a sound interval.
    """
    if lo > hi:
        raise ValueError("lo must not exceed hi")
    kind, g = act.kind, act.param
    if kind == "identity":
        return 1.0, 1.0
    if kind == "relu":
        a = 1.0 if lo > 0 else 0.0
        b = 0.0 if hi < 0 else 1.0
        return a, b
    if kind == "leaky_relu":
        a = 1.0 if lo > 0 else g
        b = g if hi < 0 else 1.0
        return a, b
    if kind == "tanh":
        # slope 1 - tanh(v)^2 peaks at 0 and decays with |v|
        far = max(abs(lo), abs(hi))
        a = 0.0 if math.isinf(far) else 1.0 - math.tanh(far) ** 2
        near = 0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi))
        b = 1.0 - math.tanh(near) ** 2
        return a, b
    if kind == "sigmoid":
        # slope s(v)(1 - s(v)) peaks at 0 with value 1/4
        ends = []
        for v in (lo, hi):
            if math.isinf(v):
                ends.append(0.0)
            else:
                s = _sigmoid(v)
                ends.append(s * (1.0 - s))
        a = min(ends)
        b = 0.25 if lo <= 0.0 <= hi else min(0.25, max(ends))
        return a, b
    if kind == "elu":
        # slope is g*exp(v) below 0 and 1 above; subdifferential at 0
        # spans [min(g,1), max(g,1)]
        if lo > 0:
            a = 1.0
        elif lo == 0.0:
            a = min(g, 1.0)
        else:
            a = 0.0 if math.isinf(lo) else g * math.exp(lo)
        if hi > 0:
            b = 1.0
        elif hi == 0.0:
            b = max(g, 1.0)
        else:
            b = g * math.exp(hi)
        return a, b
    raise AssertionError(f"unhandled activation {kind}")  # pragma: no cover


def global_bounds(act: ActivationSpec, width: int) -> LayerSlopeBounds:
    """Catalog slope bounds valid on the whole real line."""
    a, b = refine_interval(act, -math.inf, math.inf)
    return LayerSlopeBounds(np.full(width, a), np.full(width, b))


def propagate_ranges(pre_center, L_vec, delta_z: float) -> NeuronRanges:
    """Value ranges from a center and per-neuron Lipschitz bounds.

    The interval is symmetric: center +- delta_z * L elementwise, the
    mean-value-theorem enclosure of the layer's pre-activations over an
    input ball of radius delta_z.
    """
    center = np.asarray(pre_center, dtype=float)
    L = np.asarray(L_vec, dtype=float)
    if np.any(L < 0):
        raise ValueError("per-neuron bounds must be nonnegative")
    if delta_z < 0:
        raise ValueError("radius must be nonnegative")
    half = delta_z * L
    return NeuronRanges(center - half, center + half)


def refine_layer(act: ActivationSpec, ranges: NeuronRanges) -> LayerSlopeBounds:
    """Per-neuron slope refinement over the given value ranges."""
    pairs = [refine_interval(act, lo, hi) for lo, hi in zip(ranges.lo, ranges.hi)]
    arr = np.asarray(pairs, dtype=float)
    return LayerSlopeBounds(arr[:, 0], arr[:, 1])


def adjust_for_cf(bounds: LayerSlopeBounds) -> LayerSlopeBounds:
    """Widen each interval to touch zero, enabling the closed-form stage.

    [a, b] with 0 <= a <= b becomes [0, b]; a <= b <= 0 becomes [a, 0].
    The adjusted product alpha * beta is identically zero, and the
    original interval is always contained in the adjusted one.
    """
    a, b = bounds.alpha, bounds.beta
    if np.any((a < 0) & (b > 0)):
        raise ValueError("sign-mixed slope interval cannot be adjusted")
    a_adj = np.where(a >= 0, 0.0, a)
    b_adj = np.where(b <= 0, 0.0, b)
    return LayerSlopeBounds(a_adj, b_adj)
