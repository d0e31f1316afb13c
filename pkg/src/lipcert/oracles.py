"""Independent checks that make every certificate falsifiable.

Two layers of defense:

* validity oracles that never touch the stage recursion -- the full
  block-tridiagonal LMI handed to a dense eigensolver, a sampled
  secant-ratio lower bound, the exact Jacobian norm, and the trivial
  spectral-norm product; and
* a deterministic replay that re-derives every stored field (ranges,
  slope bounds, multiplier consequences, objective values, margins, the bound itself)
  from the network and region, so any tampered semantic field is
  detected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certify import Certificate, effective_chain, trivial_bound
from .linalg import (
    NotPositiveDefinite,
    SpdFactor,
    diag_quadratic,
    max_eig_sym,
    min_eig_sym,
    spd_solve,
)
from .network import Network, forward, jacobian
from .slopes import adjust_for_cf, global_bounds, propagate_ranges, refine_layer
from .stage import MARGIN_SHRINK, advance_messenger, boundary_c, stage_block

# Full-LMI verification shrinks F by this factor before asserting
# positive definiteness (the certified F sits on the boundary).
F_SHRINK = 1e-6

# Replayed scalars must match stored ones this tightly (the replay
# repeats the exact floating-point schedule of the original run).
REPLAY_RTOL = 1e-9
REPLAY_ATOL = 1e-12

# Lower bounds may exceed the certified bound by at most this slack.
LOWER_SLACK = 1e-9

MIN_PAIR_DISTANCE = 1e-9


@dataclass
class OracleReport:
    """Summary of the independent checks run against one certificate."""

    lmi_min_eig: float
    trivial_bound: float
    jacobian_norm_center: float
    sampled_lower_bound: float
    n_samples: int
    seed: int
    replay_bound: float
    ok: bool
    failures: list

    def to_json_dict(self) -> dict:
        return {
            "lmi_min_eig": self.lmi_min_eig,
            "trivial_bound": self.trivial_bound,
            "jacobian_norm_center": self.jacobian_norm_center,
            "sampled_lower_bound": self.sampled_lower_bound,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "replay_bound": self.replay_bound,
            "ok": self.ok,
            "failures": list(self.failures),
        }


def assemble_full_lmi(weights, alphas, betas, lambdas, F: float,
                      input_indices=None, output_indices=None) -> np.ndarray:
    """Block-tridiagonal certificate matrix for a weight chain.

    ``weights`` has one more entry than the slope/multiplier lists (the
    final linear layer).  Index selections trim the first weight's
    columns and the last weight's rows; the leading multiplier is the
    identity by convention.
    """
    weights = [np.asarray(W, dtype=float) for W in weights]
    n_stages = len(weights) - 1
    if not (len(alphas) == len(betas) == len(lambdas) == n_stages):
        raise ValueError("need one (alpha, beta, lambda) triple per hidden layer")
    if input_indices is not None:
        weights[0] = weights[0][:, np.asarray(input_indices, dtype=int)]
    if output_indices is not None:
        weights[-1] = weights[-1][np.asarray(output_indices, dtype=int), :]

    sizes = [weights[0].shape[1]] + [W.shape[0] for W in weights[:-1]]
    total = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    B = np.zeros((total, total))

    def put(bi, bj, block):
        r0, r1 = offsets[bi], offsets[bi] + sizes[bi]
        c0, c1 = offsets[bj], offsets[bj] + sizes[bj]
        B[r0:r1, c0:c1] += block

    # Diagonal blocks P_1..P_N and off-diagonals R_2..R_N.
    for k in range(n_stages + 1):
        P = np.eye(sizes[0]) if k == 0 else np.diag(lambdas[k - 1])
        if k < n_stages:
            W = weights[k]
            q = alphas[k] * lambdas[k] * betas[k]
            P = P + W.T @ (q[:, None] * W)
        else:
            W = weights[-1]
            P = P - F * (W.T @ W)
        put(k, k, P)
        if k < n_stages:
            s = (alphas[k] + betas[k]) * lambdas[k]
            R = -0.5 * weights[k].T * s[None, :]
            put(k, k + 1, R)
            put(k + 1, k, R.T)
    return 0.5 * (B + B.T)


def sampled_lower_bound(net: Network, center, radius: float, n_pairs: int,
                        seed: int = 0) -> float:
    """Empirical Lipschitz lower bound from random pairs in the ball.

    Points are uniform in the ball (Gaussian direction, radius scaled by
    u^(1/d)); pairs closer than MIN_PAIR_DISTANCE are resampled so the
    ratio cannot blow up on floating-point noise.
    """
    if n_pairs < 1:
        raise ValueError("need at least one pair")
    if not (radius > 0):
        raise ValueError("sampling needs a positive radius")
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    rng = np.random.default_rng(seed)

    def draw():
        g = rng.standard_normal(d)
        norm = np.linalg.norm(g)
        if norm == 0.0:
            return center.copy()
        u = rng.uniform()
        return center + (radius * u ** (1.0 / d) / norm) * g

    best = 0.0
    produced = 0
    while produced < n_pairs:
        z1, z2 = draw(), draw()
        dist = np.linalg.norm(z1 - z2)
        if dist < MIN_PAIR_DISTANCE:
            continue
        y1, _ = forward(net, z1)
        y2, _ = forward(net, z2)
        best = max(best, float(np.linalg.norm(y1 - y2) / dist))
        produced += 1
    return best


def jacobian_lower_bound(net: Network, z) -> float:
    """Spectral norm of the exact Jacobian at z, a strict lower bound on
    the Lipschitz constant of any region containing z."""
    J = jacobian(net, z)
    G = J @ J.T if J.shape[0] <= J.shape[1] else J.T @ J
    return math.sqrt(max(max_eig_sym(G), 0.0))


def _close_vec(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return False
    return bool(np.allclose(a, b, rtol=REPLAY_RTOL, atol=REPLAY_ATOL))


def _close_scalar(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=REPLAY_RTOL, abs_tol=REPLAY_ATOL)


def replay_certificate(net: Network, cert: Certificate) -> tuple:
    """Re-derive every semantic certificate field from first inputs.

    Walks the layers exactly as certification did, but substitutes the
    stored Lambda at each solved stage instead of optimizing.  Returns
    (replayed bound, list of inconsistency descriptions).
    """
    failures = []
    records = cert.per_layer
    if len(records) != net.depth - 1:
        return math.nan, [f"certificate has {len(records)} layer records, "
                          f"network has {net.depth - 1} hidden layers"]
    region_global = math.isinf(cert.region_radius)
    center = np.asarray(cert.region_center, dtype=float)
    if center.shape != (net.input_dim,):
        return math.nan, ["region center dimension does not match the network"]

    M_fact = SpdFactor.identity(net.input_dim)
    post_center = center
    carry = None
    for idx, rec in enumerate(records):
        W_eff = net.weights[idx] if carry is None \
            else net.weights[idx] @ (carry[1][:, None] * carry[0])
        d_vec = np.maximum(diag_quadratic(W_eff, M_fact), 0.0)
        L_vec = np.sqrt(d_vec)
        pre_center = net.weights[idx] @ post_center + net.biases[idx]
        post_center = net.activation(pre_center)
        tag = f"layer {idx + 1}"
        if region_global:
            refined = global_bounds(net.activation, W_eff.shape[0])
            if rec.range_lo is not None or rec.range_hi is not None:
                failures.append(f"{tag}: global certificate carries ranges")
        else:
            ranges = propagate_ranges(pre_center, L_vec, cert.region_radius)
            refined = refine_layer(net.activation, ranges)
            if rec.range_lo is None or not _close_vec(rec.range_lo, ranges.lo) \
                    or not _close_vec(rec.range_hi, ranges.hi):
                failures.append(f"{tag}: stored ranges disagree with replay")
        if rec.skipped:
            if not refined.all_equal:
                failures.append(f"{tag}: marked skipped but slopes do not collapse")
            if not (_close_vec(rec.alpha, refined.alpha)
                    and _close_vec(rec.beta, refined.beta)):
                failures.append(f"{tag}: stored slopes disagree with replay")
            carry = (W_eff, np.asarray(rec.alpha, dtype=float))
            continue
        expected = adjust_for_cf(refined) if rec.method == "cf" else refined
        if not (_close_vec(rec.alpha, expected.alpha)
                and _close_vec(rec.beta, expected.beta)):
            failures.append(f"{tag}: stored slope bounds disagree with replay")
        if rec.lam is None:
            failures.append(f"{tag}: solved stage without multipliers")
            return math.nan, failures
        lam = np.asarray(rec.lam, dtype=float)
        alpha = np.asarray(rec.alpha, dtype=float)
        beta = np.asarray(rec.beta, dtype=float)
        M_dense = M_fact.reconstruct()
        try:
            new_M = advance_messenger(M_dense, W_eff, alpha, beta, lam)
        except NotPositiveDefinite:
            failures.append(f"{tag}: stored multipliers give a non-SPD messenger")
            return math.nan, failures
        w_next = net.weights[idx + 1] if idx + 1 < net.depth - 1 else None
        c = boundary_c(new_M, w_next)
        if not _close_scalar(rec.c, c):
            failures.append(f"{tag}: stored c {rec.c!r} disagrees with replay {c!r}")
        B = stage_block(M_dense, W_eff, alpha, beta, lam,
                        None if c is None else c * (1.0 - MARGIN_SHRINK), w_next)
        margin = min_eig_sym(B)
        if not _close_scalar(rec.margin, margin):
            failures.append(f"{tag}: stored margin disagrees with replay")
        if margin <= 0:
            failures.append(f"{tag}: replayed margin not positive")
        M_fact = new_M
        carry = None

    W_last = net.weights[-1] if carry is None \
        else net.weights[-1] @ (carry[1][:, None] * carry[0])
    P = W_last @ spd_solve(M_fact, W_last.T)
    bound = math.sqrt(max(max_eig_sym(0.5 * (P + P.T)), 0.0))
    neuron = np.sqrt(np.maximum(np.diag(P), 0.0))
    if not _close_vec(cert.neuron_bounds, neuron):
        failures.append("stored neuron bounds disagree with replay")
    if not region_global:
        pre_last = net.weights[-1] @ post_center + net.biases[-1]
        half = cert.region_radius * neuron
        if cert.output_intervals is None or cert.output_center is None:
            failures.append("local certificate is missing output intervals")
        else:
            expect = np.stack([pre_last - half, pre_last + half], axis=1)
            if not (_close_vec(cert.output_center, pre_last)
                    and _close_vec(cert.output_intervals, expect)):
                failures.append("stored output intervals disagree with replay")
    if not _close_scalar(cert.bound, bound):
        failures.append(f"stored bound {cert.bound!r} disagrees with replay {bound!r}")
    return bound, failures


def verify_certificate(net: Network, cert: Certificate, n_samples: int = 2000,
                       seed: int = 0) -> OracleReport:
    """Re-check a certificate against its network.

    Runs the full-LMI oracle at F shrunk by F_SHRINK, replays the whole
    pipeline from the stored multipliers, and compares the certified
    value against the trivial bound and both lower bounds.  Any
    discrepancy lands in ``failures``.
    """
    bound = cert.bound
    failures = []
    if not (isinstance(bound, float) and math.isfinite(bound) and bound > 0):
        failures.append("bound is not a positive finite number")
        bound = 1e-300

    replay, replay_failures = replay_certificate(net, cert)
    failures.extend(replay_failures)

    lmi_eig = -math.inf
    try:
        weights, alphas, betas, lambdas = effective_chain(net, cert.per_layer)
        F = (1.0 / bound ** 2) * (1.0 - F_SHRINK)
        lmi = assemble_full_lmi(weights, alphas, betas, lambdas, F)
        lmi_eig = min_eig_sym(lmi)
        if lmi_eig <= 0:
            failures.append(
                f"full LMI not positive definite at shrunk F (min eig {lmi_eig:.3e})")
    except (ValueError, TypeError) as exc:
        failures.append(f"LMI assembly failed: {exc}")

    triv = trivial_bound(net)
    if bound > triv * (1.0 + LOWER_SLACK):
        failures.append(f"bound {bound:.6e} exceeds trivial bound {triv:.6e}")
    if not _close_scalar(cert.trivial_bound, triv):
        failures.append("stored trivial bound disagrees with replay")

    center = np.asarray(cert.region_center, dtype=float)
    jac = jacobian_lower_bound(net, center)
    if math.isfinite(cert.region_radius) and jac > bound * (1.0 + LOWER_SLACK):
        failures.append(f"Jacobian norm {jac:.6e} exceeds bound {bound:.6e}")

    if math.isinf(cert.region_radius):
        probe_radius = 1.0  # any finite ball lower-bounds the global constant
    else:
        probe_radius = cert.region_radius
    if probe_radius > 0:
        sampled = sampled_lower_bound(net, center, probe_radius, n_samples, seed)
        if sampled > bound * (1.0 + LOWER_SLACK):
            failures.append(f"sampled ratio {sampled:.6e} exceeds bound {bound:.6e}")
    else:
        sampled = 0.0  # a single point admits no pair ratios

    return OracleReport(
        lmi_min_eig=float(lmi_eig),
        trivial_bound=float(triv),
        jacobian_norm_center=float(jac),
        sampled_lower_bound=float(sampled),
        n_samples=n_samples,
        seed=seed,
        replay_bound=float(replay) if math.isfinite(replay) else replay,
        ok=not failures,
        failures=failures,
    )
