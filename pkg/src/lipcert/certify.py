"""End-to-end certification: range propagation, slope refinement, affine
skipping, variant dispatch, and the final certified bound.

One certification walks the hidden layers once.  At layer i the
messenger factor M_{i-1} yields per-neuron bounds L^(i) (square roots of
diag(W M^-1 W^T)), which bound the pre-activation ranges around the
center values and drive the slope refinement.  Layers whose slopes
collapse are folded into the next weight instead of being solved;
everything else goes through the scheduled stage variant.  The final
bound is sqrt(sigma_max(W_N M_{N-1}^-1 W_N^T)).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import SpdFactor, diag_quadratic, max_eig_sym, spd_solve
from .network import LayerSelection, Network, center_values, slice_network
from .slopes import (
    LayerSlopeBounds,
    NeuronRanges,
    global_bounds,
    propagate_ranges,
    refine_layer,
)
from .stage import DEFAULT_CAP, StageInput, dispatch

VARIANTS = ("acc", "fast", "cf", "auto")


@dataclass(frozen=True)
class InputRegion:
    """L2 ball B(center, radius); radius = inf requests global bounds."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ValueError("region center must be a finite vector")
        if math.isnan(self.radius) or self.radius < 0:
            raise ValueError("region radius must be nonnegative")
        object.__setattr__(self, "center", c)

    @property
    def is_global(self) -> bool:
        return math.isinf(self.radius)


@dataclass
class CertRequest:
    """What to certify: region, optional sub-network selection, the
    per-stage variant schedule (a single name or one entry per hidden
    layer), and the Lambda cap."""

    region: InputRegion
    selection: LayerSelection | None = None
    schedule: str | list = "auto"
    cap: float = DEFAULT_CAP

    def resolved_schedule(self, n_hidden: int) -> list:
        if isinstance(self.schedule, str):
            sched = [self.schedule] * n_hidden
        else:
            sched = list(self.schedule)
            if len(sched) != n_hidden:
                raise ValueError(
                    f"schedule length {len(sched)} does not match {n_hidden} hidden layers")
        for v in sched:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant '{v}'")
        return sched


@dataclass
class StageRecord:
    """Per-hidden-layer log entry inside a certificate."""

    layer: int
    skipped: bool
    method: str | None
    lam: np.ndarray | None
    c: float | None
    margin: float | None
    alpha: np.ndarray
    beta: np.ndarray
    range_lo: np.ndarray | None
    range_hi: np.ndarray | None
    fallback_log: list = field(default_factory=list)
    time_ms: float = 0.0


@dataclass
class Certificate:
    """Certified Lipschitz bound plus everything needed to falsify it."""

    bound: float
    trivial_bound: float
    variant_schedule: list
    region_center: np.ndarray
    region_radius: float
    per_layer: list
    neuron_bounds: np.ndarray
    output_center: np.ndarray | None
    output_intervals: np.ndarray | None
    timings_ms: dict
    verification: dict | None = None

    def to_json_dict(self) -> dict:
        radius = "inf" if math.isinf(self.region_radius) else self.region_radius
        doc = {
            "bound": self.bound,
            "trivial_bound": self.trivial_bound,
            "variant_schedule": list(self.variant_schedule),
            "region": {"center": self.region_center.tolist(), "radius": radius},
            "per_layer": [
                {
                    "layer": rec.layer,
                    "skipped": rec.skipped,
                    "method": rec.method,
                    "lambda": None if rec.lam is None else rec.lam.tolist(),
                    "c": rec.c,
                    "margin": rec.margin,
                    "alpha": rec.alpha.tolist(),
                    "beta": rec.beta.tolist(),
                    "range_lo": None if rec.range_lo is None else rec.range_lo.tolist(),
                    "range_hi": None if rec.range_hi is None else rec.range_hi.tolist(),
                    "fallback_log": list(rec.fallback_log),
                }
                for rec in self.per_layer
            ],
            "neuron_bounds": self.neuron_bounds.tolist(),
            "output_center": None if self.output_center is None else self.output_center.tolist(),
            "output_intervals": None if self.output_intervals is None
            else self.output_intervals.tolist(),
            "timings_ms": self.timings_ms,
        }
        if self.verification is not None:
            doc["verification"] = self.verification
        return doc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def trivial_bound(net: Network) -> float:
    """Product of layer spectral norms, scaled by the global activation
    slope bound per hidden layer; the loosest valid certificate."""
    total = 1.0
    for W in net.weights:
        total *= math.sqrt(max_eig_sym(W.T @ W if W.shape[0] > W.shape[1] else W @ W.T))
    beta_global = global_bounds(net.activation, 1).beta[0]
    return total * beta_global ** (net.depth - 1)


def _refine_stage(net, region, pre_center, L_vec, width):
    """Slope bounds (and ranges) for one layer under the request."""
    if region.is_global:
        return global_bounds(net.activation, width), None
    ranges = propagate_ranges(pre_center, L_vec, region.radius)
    return refine_layer(net.activation, ranges), ranges


def _run_pipeline(net: Network, region: InputRegion, schedule, cap, upto=None):
    """Walk stages 1..(upto or N)-1, returning the final messenger, the
    effective last weight (with any trailing affine run folded in), the
    per-layer records, and the running center values.

    ``upto`` stops the pipeline just before that layer so the caller can
    inspect the per-neuron bounds there (defaults to the output layer).
    """
    N = net.depth
    last = upto if upto is not None else N
    if region.center.shape != (net.input_dim,):
        raise ValueError(f"region center must have dimension {net.input_dim}")
    M_fact = SpdFactor.identity(net.input_dim)
    records = []
    post_center = region.center
    pre_center = region.center
    carry = None  # (effective weight, slope vector) of a pending affine run
    for i in range(last - 1):
        t0 = time.perf_counter()
        W_eff = net.weights[i] if carry is None else net.weights[i] @ (carry[1][:, None] * carry[0])
        d_vec = np.maximum(diag_quadratic(W_eff, M_fact), 0.0)
        L_vec = np.sqrt(d_vec)
        pre_center = net.weights[i] @ post_center + net.biases[i]
        post_center = net.activation(pre_center)
        bounds, ranges = _refine_stage(net, region, pre_center, L_vec, W_eff.shape[0])
        if bounds.all_equal:
            carry = (W_eff, bounds.alpha)
            records.append(StageRecord(
                layer=i + 1, skipped=True, method=None, lam=None, c=None,
                margin=None, alpha=bounds.alpha, beta=bounds.beta,
                range_lo=None if ranges is None else ranges.lo,
                range_hi=None if ranges is None else ranges.hi,
                time_ms=(time.perf_counter() - t0) * 1e3))
            continue
        w_next = net.weights[i + 1] if i + 1 < N - 1 else None
        sin = StageInput(M_fact, W_eff, w_next, bounds, cap=cap)
        res = dispatch(schedule[i], sin)
        M_fact = res.messenger
        carry = None
        records.append(StageRecord(
            layer=i + 1, skipped=False, method=res.method, lam=res.lam, c=res.c,
            margin=res.margin, alpha=res.alpha, beta=res.beta,
            range_lo=None if ranges is None else ranges.lo,
            range_hi=None if ranges is None else ranges.hi,
            fallback_log=res.fallback_log,
            time_ms=(time.perf_counter() - t0) * 1e3))
    W_last = net.weights[last - 1] if carry is None \
        else net.weights[last - 1] @ (carry[1][:, None] * carry[0])
    pre_last = net.weights[last - 1] @ post_center + net.biases[last - 1]
    return M_fact, W_last, records, pre_last


def certify(net: Network, req: CertRequest) -> Certificate:
    """Produce a certified Lipschitz upper bound for the request."""
    if req.selection is not None:
        return certify_selection(net, req)
    schedule = req.resolved_schedule(net.depth - 1)
    t_start = time.perf_counter()
    M_fact, W_last, records, out_center = _run_pipeline(net, req.region, schedule, req.cap)
    P = W_last @ spd_solve(M_fact, W_last.T)
    bound = math.sqrt(max(max_eig_sym(0.5 * (P + P.T)), 0.0))
    neuron = np.sqrt(np.maximum(np.diag(P), 0.0))
    if req.region.is_global:
        out_c, intervals = None, None
    else:
        half = req.region.radius * neuron
        out_c = out_center
        intervals = np.stack([out_center - half, out_center + half], axis=1)
    total_ms = (time.perf_counter() - t_start) * 1e3
    return Certificate(
        bound=float(bound),
        trivial_bound=trivial_bound(net),
        variant_schedule=schedule,
        region_center=req.region.center,
        region_radius=req.region.radius,
        per_layer=records,
        neuron_bounds=neuron,
        output_center=out_c,
        output_intervals=intervals,
        timings_ms={"total": total_ms,
                    "per_stage": [rec.time_ms for rec in records]},
    )


def neuron_bounds(net: Network, region: InputRegion, layer: int,
                  variant: str = "cf", cap: float = DEFAULT_CAP) -> np.ndarray:
    """Per-neuron bounds L^(i) at layer i (1-based), via the same stage
    pipeline that certify runs up to that layer."""
    if not (1 <= layer <= net.depth):
        raise ValueError(f"layer must lie in 1..{net.depth}")
    schedule = [variant] * (net.depth - 1)
    M_fact, W_eff, _records, _center = _run_pipeline(net, region, schedule, cap, upto=layer)
    d_vec = np.maximum(diag_quadratic(W_eff, M_fact), 0.0)
    return np.sqrt(d_vec)


def selection_subproblem(net: Network, req: CertRequest, v_p_box=None):
    """Reduce a (p, i, K, L) selection to a plain certification problem.

    For p = 0 the non-selected input coordinates are frozen at the
    region center and folded into the first bias.  For p > 0 the input
    region of the sub-network lives in the post-activation space of
    layer p; its box is either supplied on v^(p) or derived by running
    the pipeline from the input layer.
    """
    p, i, K, L = req.selection.resolved(net)
    sub = slice_network(net, req.selection)
    region = req.region
    if region.is_global:
        center = np.zeros(len(K))
        return sub, CertRequest(InputRegion(center, math.inf),
                                schedule=req.schedule, cap=req.cap)
    if p == 0:
        comp = np.setdiff1d(np.arange(net.input_dim), K)
        if comp.size:
            shift = net.weights[0][:, comp] @ region.center[comp]
            ws = list(sub.weights)
            bs = list(sub.biases)
            bs[0] = bs[0] + shift
            sub = Network(tuple(ws), tuple(bs), sub.activation)
        sub_region = InputRegion(region.center[K], region.radius)
        return sub, CertRequest(sub_region, schedule=req.schedule, cap=req.cap)
    if v_p_box is None:
        L_p = neuron_bounds(net, region, p, variant="cf", cap=req.cap)
        pre_all, _post = center_values(net, region.center)
        center_p = pre_all[p - 1]
        lo = center_p - region.radius * L_p
        hi = center_p + region.radius * L_p
    else:
        lo, hi = (np.asarray(v, dtype=float) for v in v_p_box)
    z_lo = net.activation(lo)
    z_hi = net.activation(hi)
    center = 0.5 * (z_lo + z_hi)[K]
    radius = float(np.linalg.norm(0.5 * (z_hi - z_lo)[K]))
    return sub, CertRequest(InputRegion(center, radius),
                            schedule=req.schedule, cap=req.cap)


def certify_selection(net: Network, req: CertRequest, v_p_box=None) -> Certificate:
    """Certificate for an arbitrary layer window and index selection."""
    if req.selection is None:
        raise ValueError("certify_selection needs a selection")
    sub, sub_req = selection_subproblem(net, req, v_p_box)
    cert = certify(sub, sub_req)
    return cert


def sweep_radius(net: Network, center, radii, variant: str = "auto",
                 cap: float = DEFAULT_CAP) -> list:
    """Independent certifications at each radius, in the given order."""
    out = []
    for r in radii:
        req = CertRequest(InputRegion(np.asarray(center, dtype=float), float(r)),
                          schedule=variant, cap=cap)
        out.append(certify(net, req))
    return out


def effective_chain(net: Network, per_layer) -> tuple:
    """Replay a certificate's skip/solve structure on a network.

    Returns (weights, alphas, betas, lambdas) over the solved stages
    plus the final effective weight, i.e. the merged chain on which the
    certificate's block LMI is assembled.  Skipped layers are folded
    into the following weight using their recorded slope vector.
    """
    weights, alphas, betas, lambdas = [], [], [], []
    carry = None
    for rec, W in zip(per_layer, net.weights):
        W_eff = W if carry is None else W @ (carry[1][:, None] * carry[0])
        if rec.skipped:
            carry = (W_eff, np.asarray(rec.alpha, dtype=float))
            continue
        weights.append(W_eff)
        alphas.append(np.asarray(rec.alpha, dtype=float))
        betas.append(np.asarray(rec.beta, dtype=float))
        lambdas.append(np.asarray(rec.lam, dtype=float))
        carry = None
    W_last = net.weights[-1] if carry is None \
        else net.weights[-1] @ (carry[1][:, None] * carry[0])
    weights.append(W_last)
    return weights, alphas, betas, lambdas
