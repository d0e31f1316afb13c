"""Per-stage subproblem solvers and the messenger-matrix recursion.

At every hidden layer the certifier picks a nonnegative diagonal
multiplier Lambda by one of three routes:

* ``cf``   -- closed form: widen the slope intervals to touch zero,
  then lambda = 2 / sigma_max((Da+Db) W M^-1 W^T (Da+Db)).
* ``fast`` -- scalar lambda*I, chosen by a log-grid plus golden-section
  search of the stage objective.
* ``acc``  -- full diagonal Lambda via a small SDP solved by bisection
  on the objective with an inner concave min-eigenvalue ascent.

Whatever route ran, the committed result is re-verified: the new
messenger matrix must factor SPD and the stage block LMI must have a
positive margin after a relative shrink of the objective.  Failures
drop down the fallback chain (acc -> fast -> cf); the closed form
always succeeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    NotPositiveDefinite,
    SpdFactor,
    diag_quadratic,
    factor_spd,
    max_eig_sym,
    min_eig_sym,
    spd_solve,
)
from .slopes import LayerSlopeBounds, adjust_for_cf

# Default ceiling on Lambda entries (numerical upper bound).
DEFAULT_CAP = 1e6

# Degenerate entries of Lambda are set to this multiple of the mean
# active entry, keeping all diagonal entries at a similar scale.
DEGENERATE_FILL = 100.0

# Stage-margin bookkeeping shrinks the committed objective by this much
# before asserting strict feasibility (optima sit on the LMI boundary).
MARGIN_SHRINK = 1e-6

# Fast search: log grid size and golden-section refinement iterations.
GRID_POINTS = 64
GOLDEN_ITERS = 40
GRID_FLOOR = 1e-8


class NoFeasibleLambda(Exception):
    """The scalar-lambda search found no feasible point."""


class MaxIterations(Exception):
    """The generic LMI subsolver could not certify a feasible point."""


# Upstream callers treat a failed subsolver run the same way.
SubsolverFailed = MaxIterations


@dataclass
class StageInput:
    """Everything one stage needs: the incoming messenger factor, the
    (possibly merged) current weight, the raw next weight, and the
    refined slope bounds.  ``w_next`` is None when no downstream weight
    participates in the objective."""

    messenger: SpdFactor
    w_cur: np.ndarray
    w_next: np.ndarray | None
    bounds: LayerSlopeBounds
    cap: float = DEFAULT_CAP
    _dense: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.w_cur = np.asarray(self.w_cur, dtype=float)
        if self.w_next is not None:
            self.w_next = np.asarray(self.w_next, dtype=float)
        d, m = self.w_cur.shape
        if m != self.messenger.order:
            raise ValueError(f"weight has {m} columns but messenger order is {self.messenger.order}")
        if self.bounds.width != d:
            raise ValueError("slope bounds do not match the layer width")
        if self.w_next is not None and self.w_next.shape[1] != d:
            raise ValueError("next weight does not consume this layer's output")

    @property
    def messenger_dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.messenger.reconstruct()
        return self._dense


@dataclass
class StageResult:
    """Committed stage outcome.

    ``lam`` is the full diagonal of Lambda, ``c`` the committed
    objective value (None when the stage has no next weight), and
    ``margin`` the smallest eigenvalue of the stage block LMI with the
    objective shrunk by MARGIN_SHRINK.  ``alpha``/``beta`` are the slope
    bounds the commitment actually used (the CF route widens them).
    """

    lam: np.ndarray
    c: float | None
    method: str
    margin: float
    messenger: SpdFactor
    alpha: np.ndarray
    beta: np.ndarray
    fallback_log: list = field(default_factory=list)


def stage_block(M_dense, W, alpha, beta, lam, c, W_next) -> np.ndarray:
    """Assemble the symmetric stage block LMI for given multipliers."""
    s = (alpha + beta) * lam
    p = alpha * beta * lam
    top_left = np.diag(lam)
    if W_next is not None and c:
        top_left = top_left - c * (W_next.T @ W_next)
    cross = 0.5 * s[:, None] * W
    bottom = M_dense + W.T @ (p[:, None] * W)
    B = np.block([[top_left, cross], [cross.T, bottom]])
    return 0.5 * (B + B.T)


def lmi_margin(s: StageInput, lam, c) -> float:
    """Smallest eigenvalue of the stage block LMI at (lambda, c).

    Positive iff the candidate is strictly feasible; a boundary-optimal
    candidate sits at zero.
    """
    lam = np.asarray(lam, dtype=float)
    B = stage_block(s.messenger_dense, s.w_cur, s.bounds.alpha, s.bounds.beta,
                    lam, c, s.w_next)
    return min_eig_sym(B)


def advance_messenger(M_dense, W, alpha, beta, lam) -> SpdFactor:
    """Messenger update M_i = L - 1/4 L S W X^-1 W^T S L with
    X = M + W^T Da L Db W; raises NotPositiveDefinite if either X or the
    result fails to factor."""
    p = alpha * beta * lam
    X = M_dense + W.T @ (p[:, None] * W)
    Xf = factor_spd(0.5 * (X + X.T))
    G = (lam * (alpha + beta))[:, None] * W  # rows scaled by lambda*s
    M_new = np.diag(lam) - 0.25 * (G @ spd_solve(Xf, G.T))
    return factor_spd(0.5 * (M_new + M_new.T))


def messenger_update(s: StageInput, lam) -> SpdFactor:
    """Advance the messenger using the stage's own slope bounds."""
    lam = np.asarray(lam, dtype=float)
    return advance_messenger(s.messenger_dense, s.w_cur, s.bounds.alpha,
                             s.bounds.beta, lam)


def boundary_c(new_messenger: SpdFactor, W_next) -> float | None:
    """Largest objective value feasible for the committed messenger:
    c = 1 / sigma_max(W_next M_i^-1 W_next^T)."""
    if W_next is None:
        return None
    P = W_next @ spd_solve(new_messenger, W_next.T)
    sigma = max_eig_sym(0.5 * (P + P.T))
    return 1.0 / max(sigma, 1e-300)


def _commit(s: StageInput, lam, alpha, beta, method, fallback_log) -> StageResult:
    """Verify and package a candidate Lambda: factor the messenger,
    recompute the boundary objective, and check the shrunk margin."""
    new_M = advance_messenger(s.messenger_dense, s.w_cur, alpha, beta, lam)
    c = boundary_c(new_M, s.w_next)
    B = stage_block(s.messenger_dense, s.w_cur, alpha, beta, lam,
                    None if c is None else c * (1.0 - MARGIN_SHRINK), s.w_next)
    margin = min_eig_sym(B)
    if margin <= 0.0:
        raise NotPositiveDefinite(1, f"stage margin {margin:.3e} not positive")
    return StageResult(lam=lam, c=c, method=method, margin=margin,
                       messenger=new_M, alpha=alpha, beta=beta,
                       fallback_log=list(fallback_log))


def _cf_lambda(s: StageInput, alpha_adj, beta_adj) -> float:
    """Closed-form scalar lambda = 2 / sigma_max(S W M^-1 W^T S) with the
    adjusted (product-zero) slope bounds."""
    s_adj = alpha_adj + beta_adj
    B = s_adj[:, None] * s.w_cur
    K = B @ spd_solve(s.messenger, B.T)
    sigma = max_eig_sym(0.5 * (K + K.T))
    if sigma <= 0.0:
        raise NotPositiveDefinite(1, "stage weight is numerically zero")
    return 2.0 / sigma


def solve_cf(s: StageInput, fallback_log=()) -> StageResult:
    """Closed-form stage: always well-defined for nonzero weights."""
    adj = adjust_for_cf(s.bounds)
    lam_scalar = min(_cf_lambda(s, adj.alpha, adj.beta), s.cap)
    lam = np.full(s.bounds.width, lam_scalar)
    return _commit(s, lam, adj.alpha, adj.beta, "cf", list(fallback_log) + ["cf"])


def _golden_refine(fn, x_lo, x_hi, best):
    """Golden-section maximization in log space over [x_lo, x_hi].

    ``fn`` returns -inf for infeasible points; ``best`` is the running
    (value, x) pair and the improved pair is returned.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(x_lo), math.log(x_hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(math.exp(c)), fn(math.exp(d))
    best = max(best, (fc, math.exp(c)), (fd, math.exp(d)))
    for _ in range(GOLDEN_ITERS):
        if fc < fd:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(math.exp(d))
            best = max(best, (fd, math.exp(d)))
        else:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(math.exp(c))
            best = max(best, (fc, math.exp(c)))
    return best


def solve_fast(s: StageInput, fallback_log=()) -> StageResult:
    """Scalar-lambda stage via grid search plus golden-section refinement.

    When the slope products are exactly zero the search collapses to the
    closed form, which is then optimal for the scalar problem.  With
    degenerate indices present the searched objective keeps only the
    active rows; the commitment always uses the full matrices.
    """
    bounds = s.bounds
    if bounds.all_equal:
        raise ValueError("all-degenerate stage must be skipped as affine, not solved")
    log = list(fallback_log) + ["fast"]
    p_full = bounds.alpha * bounds.beta

    if not np.any(p_full):
        # alpha (x) beta == 0: the closed form solves the scalar problem
        # exactly, no search needed.
        lam_scalar = min(_cf_lambda(s, bounds.alpha, bounds.beta), s.cap)
        lam = np.full(bounds.width, lam_scalar)
        return _commit(s, lam, bounds.alpha, bounds.beta, "fast", log)

    M_dense = s.messenger_dense
    act = bounds.active_set
    W_act = s.w_cur[act]
    s_act = (bounds.alpha + bounds.beta)[act]
    p_act = p_full[act]
    s_vec = bounds.alpha + bounds.beta
    Wn_act = s.w_next[:, act] if s.w_next is not None else None
    restricted = act.size < bounds.width

    def objective(lam_scalar: float) -> float:
        # Feasibility needs the restricted Schur complement T > 0 and a
        # commit-ready full messenger; the searched value is the
        # restricted stage objective (or the messenger margin when no
        # next weight exists).
        try:
            if restricted:
                X = M_dense + lam_scalar * (W_act.T @ (p_act[:, None] * W_act))
                Xf = factor_spd(0.5 * (X + X.T))
                G = s_act[:, None] * W_act
                T = lam_scalar * np.eye(act.size) \
                    - 0.25 * lam_scalar ** 2 * (G @ spd_solve(Xf, G.T))
                Tf = factor_spd(0.5 * (T + T.T))
                full = advance_messenger(M_dense, s.w_cur, bounds.alpha, bounds.beta,
                                       np.full(bounds.width, lam_scalar))
            else:
                full = advance_messenger(M_dense, s.w_cur, bounds.alpha, bounds.beta,
                                       np.full(bounds.width, lam_scalar))
                Tf = full
            if s.w_next is None:
                return min_eig_sym(full.reconstruct())
            P = Wn_act @ spd_solve(Tf, Wn_act.T)
            return 1.0 / max(max_eig_sym(0.5 * (P + P.T)), 1e-300)
        except NotPositiveDefinite:
            return -math.inf

    grid = np.logspace(math.log10(GRID_FLOOR), math.log10(s.cap), GRID_POINTS)
    values = [objective(x) for x in grid]
    k = int(np.argmax(values))
    if not math.isfinite(values[k]):
        raise NoFeasibleLambda("no feasible lambda on the search grid")
    best = (values[k], float(grid[k]))
    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[min(k + 1, GRID_POINTS - 1)])
    if lo < hi:
        best = _golden_refine(objective, lo, hi, best)
    lam = np.full(bounds.width, best[1])
    return _commit(s, lam, bounds.alpha, bounds.beta, "fast", log)


def _fast_or_cf(s: StageInput, log_prefix=()) -> StageResult:
    try:
        return solve_fast(s, log_prefix)
    except (NoFeasibleLambda, NotPositiveDefinite):
        return solve_cf(s, list(log_prefix) + ["fast"])


def sdp_subsolve(lmi, k: int, objective_index: int, x0, hi_init: float,
                 cap: float = DEFAULT_CAP, nonneg_mask=None, sweeps: int = 20,
                 max_bisect: int = 40, rel_tol: float = 1e-4):
    """Maximize x[objective_index] subject to lmi(x) > 0.

    ``lmi`` must be an affine symmetric-matrix map over the k variables.
    The method bisects on the objective; for each candidate value the
    minimum eigenvalue is maximized over the remaining variables by
    projected coordinate ascent with backtracking (the minimum
    eigenvalue of an affine matrix map is concave, so hill climbing is
    sound).  Returns (x, margin) with margin above the scale-relative
    feasibility threshold; raises MaxIterations when no strictly
    feasible point is certified.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    if x0.shape != (k,):
        raise ValueError("x0 must have length k")
    if nonneg_mask is None:
        nonneg_mask = np.ones(k, dtype=bool)
    free = np.array([j for j in range(k) if j != objective_index])

    base = lmi(np.zeros(k))
    directions = []
    for j in range(k):
        e = np.zeros(k)
        e[j] = 1.0
        directions.append(lmi(e) - base)

    def eps_feas(B):
        return 1e-9 * (1.0 + float(np.abs(B).max()))

    def eval_at(x):
        B = lmi(x)
        w, V = np.linalg.eigh(B)
        return float(w[0]), V[:, 0], eps_feas(B)

    def ascend(x):
        """Improve min-eig over the free coordinates, objective fixed."""
        f, v, eps = eval_at(x)
        if free.size == 0:
            return x, f, eps
        for _ in range(sweeps):
            if f > eps:
                break
            g = np.array([v @ directions[j] @ v for j in free])
            gmax = float(np.abs(g).max())
            if gmax == 0.0:
                break
            step = (1.0 + float(np.abs(x[free]).max())) / gmax
            improved = False
            for _ in range(12):
                x_try = x.copy()
                x_try[free] = x[free] + step * g
                x_try[free] = np.clip(x_try[free],
                                      np.where(nonneg_mask[free], 0.0, -cap), cap)
                f_try, v_try, eps_try = eval_at(x_try)
                if f_try > f:
                    x, f, v, eps = x_try, f_try, v_try, eps_try
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        return x, f, eps

    # Certify a strictly feasible start, retreating on the objective if
    # the warm guess overshoots.
    obj_guess = float(x0[objective_index])
    x = x0.copy()
    f, eps = -math.inf, 0.0
    for frac in (1.0, 0.5, 0.1, 0.0):
        x[objective_index] = frac * obj_guess
        x, f, eps = ascend(x)
        if f > eps:
            break
    if f <= eps:
        raise MaxIterations("no strictly feasible point found from the warm start")
    lo = float(x[objective_index])
    best_x, best_margin = x.copy(), f

    # Grow the bracket until the top is infeasible.
    hi = max(hi_init, lo * (1.0 + 1e-6), 1e-12)
    for _ in range(8):
        x_hi = best_x.copy()
        x_hi[objective_index] = hi
        x_hi, f_hi, eps_hi = ascend(x_hi)
        if f_hi > eps_hi:
            lo, best_x, best_margin = hi, x_hi.copy(), f_hi
            hi *= 4.0
        else:
            break
    else:
        return best_x, best_margin  # objective effectively unbounded; accept

    for _ in range(max_bisect):
        if hi - lo <= rel_tol * max(abs(hi), 1e-12):
            break
        mid = 0.5 * (lo + hi)
        x_mid = best_x.copy()
        x_mid[objective_index] = mid
        x_mid, f_mid, _eps = ascend(x_mid)
        if f_mid > _eps:
            lo, best_x, best_margin = mid, x_mid.copy(), f_mid
        else:
            hi = mid
    return best_x, best_margin


# Projected-gradient budget for the diagonal-Lambda stage objective.
PGA_MAX_ITERS = 200
PGA_REL_TOL = 1e-10


def _acc_objective_grad(s: StageInput, lam, act):
    """Committed stage objective c(Lambda) and its gradient on the
    active coordinates.

    c(Lambda) = 1 / sigma_max(W_next M_i(Lambda)^-1 W_next^T) is concave
    on the region where the messenger stays SPD, so gradient ascent with
    backtracking converges to the stage optimum.  Returns (c, grad) or
    (None, None) when the messenger fails to factor.
    """
    alpha, beta = s.bounds.alpha, s.bounds.beta
    W, Wn = s.w_cur, s.w_next
    try:
        new_M = advance_messenger(s.messenger_dense, W, alpha, beta, lam)
    except NotPositiveDefinite:
        return None, None
    P = Wn @ spd_solve(new_M, Wn.T)
    P = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(P)
    sigma = float(vals[-1])
    if sigma <= 0.0:
        return None, None
    u = vecs[:, -1]
    q = spd_solve(new_M, Wn.T @ u)
    # d sigma / d lam_j = -(q_j - a_j y_j / 2)(q_j - b_j y_j / 2) with
    # y = W X^-1 W^T S Lambda q; then dc = -dsigma / sigma^2.
    p = alpha * beta * lam
    X = s.messenger_dense + W.T @ (p[:, None] * W)
    Xf = factor_spd(0.5 * (X + X.T))
    g = W.T @ ((alpha + beta) * lam * q)
    y = W @ spd_solve(Xf, g)
    grad = (q - 0.5 * alpha * y) * (q - 0.5 * beta * y) / sigma ** 2
    return 1.0 / sigma, grad[act]


def _solve_acc_pga(s: StageInput, lam_warm: float, log) -> StageResult:
    """Maximize the committed objective over diagonal Lambda by projected
    gradient ascent from the scalar warm start."""
    bounds = s.bounds
    act = bounds.active_set
    lam = np.full(bounds.width, min(lam_warm, s.cap))
    if act.size < bounds.width:
        lam[bounds.equal_set] = min(DEGENERATE_FILL * lam_warm, s.cap)
    c_cur, grad = _acc_objective_grad(s, lam, act)
    if c_cur is None:
        raise MaxIterations("warm start is infeasible for the diagonal stage")
    step = None
    for _ in range(PGA_MAX_ITERS):
        gmax = float(np.abs(grad).max()) if grad.size else 0.0
        if gmax == 0.0:
            break
        if step is None:
            step = 0.25 * (1.0 + float(lam[act].max())) / gmax
        improved = False
        for _ in range(25):
            lam_try = lam.copy()
            lam_try[act] = np.clip(lam[act] + step * grad, 0.0, s.cap)
            if np.array_equal(lam_try, lam):
                break
            c_try, grad_try = _acc_objective_grad(s, lam_try, act)
            if c_try is not None and c_try > c_cur:
                rel_gain = (c_try - c_cur) / max(c_cur, 1e-300)
                lam, c_cur, grad = lam_try, c_try, grad_try
                step *= 2.0
                improved = True
                break
            step *= 0.25
        if not improved or rel_gain < PGA_REL_TOL:
            break
    if act.size < bounds.width:
        lam[bounds.equal_set] = min(
            DEGENERATE_FILL * float(np.mean(lam[act])), s.cap)
    return _commit(s, lam, bounds.alpha, bounds.beta, "acc", log)


def _solve_acc_bisect(s: StageInput, lam_warm: float, c_warm: float, log) -> StageResult:
    """Restricted small-SDP route through the generic subsolver: bisection
    on the objective with an inner min-eigenvalue ascent over Lambda."""
    bounds = s.bounds
    M_dense = s.messenger_dense
    act = bounds.active_set
    W_act = s.w_cur[act]
    a_act = bounds.alpha[act]
    b_act = bounds.beta[act]
    G_act = s.w_next[:, act].T @ s.w_next[:, act]
    n_act = act.size

    def build(x):
        lam_act = x[:-1]
        c = x[-1]
        s_part = (a_act + b_act) * lam_act
        p_part = a_act * b_act * lam_act
        top = np.diag(lam_act) - c * G_act
        cross = 0.5 * s_part[:, None] * W_act
        bottom = M_dense + W_act.T @ (p_part[:, None] * W_act)
        B = np.block([[top, cross], [cross.T, bottom]])
        return 0.5 * (B + B.T)

    x0 = np.concatenate([np.full(n_act, lam_warm), [max(c_warm, 0.0)]])
    x_star, _ = sdp_subsolve(build, n_act + 1, n_act, x0,
                             hi_init=64.0 * max(c_warm, 1e-12), cap=s.cap)
    lam_full = np.zeros(bounds.width)
    lam_full[act] = np.minimum(x_star[:-1], s.cap)
    if act.size < bounds.width:
        fill = min(DEGENERATE_FILL * float(np.mean(x_star[:-1])), s.cap)
        lam_full[bounds.equal_set] = fill
    return _commit(s, lam_full, bounds.alpha, bounds.beta, "acc", log)


def solve_acc(s: StageInput, fallback_log=()) -> StageResult:
    """Diagonal-Lambda stage with safeguards.

    The committed objective is maximized directly by projected gradient
    ascent warm-started from the scalar solution; if that route cannot
    move, the restricted small SDP is handed to the generic bisection
    subsolver instead.  Degenerate Lambda entries are filled at
    DEGENERATE_FILL times the mean active entry (capped) before the full
    commitment is re-verified.  The scalar and closed-form candidates
    are computed alongside and the largest committed objective wins, so
    the diagonal stage never loses to its own fallbacks.
    """
    bounds = s.bounds
    if bounds.all_equal:
        raise ValueError("all-degenerate stage must be skipped as affine, not solved")
    log = list(fallback_log) + ["acc"]

    fast_res = _fast_or_cf(s, log)
    candidates = [fast_res]
    if fast_res.method != "cf":
        try:
            candidates.append(solve_cf(s, log))
        except NotPositiveDefinite:  # pragma: no cover - CF always succeeds
            pass

    if s.w_next is None:
        # Final stage: no objective to maximize beyond the messenger
        # margin, which the scalar search already optimized.
        chosen = candidates[0]
        chosen.fallback_log = log + [chosen.method]
        return chosen

    lam_warm = float(fast_res.lam[0])
    c_warm = fast_res.c if fast_res.c is not None else 0.0
    try:
        candidates.append(_solve_acc_pga(s, lam_warm, log))
    except (MaxIterations, NotPositiveDefinite):
        try:
            candidates.append(_solve_acc_bisect(s, lam_warm, c_warm, log))
        except (MaxIterations, NotPositiveDefinite):
            pass

    chosen = max(candidates, key=lambda r: -math.inf if r.c is None else r.c)
    chosen.fallback_log = log + [chosen.method]
    return chosen


def dispatch(variant: str, s: StageInput) -> StageResult:
    """Run the requested variant with its fallback chain.

    ``auto`` tries the diagonal SDP for narrow stages and the scalar
    search otherwise, with the closed form as the terminal fallback.
    """
    if variant == "cf":
        return solve_cf(s)
    if variant == "fast":
        return _fast_or_cf(s)
    if variant == "acc":
        return solve_acc(s)
    if variant == "auto":
        if s.bounds.width > 128:
            return _fast_or_cf(s, ["auto"])
        return solve_acc(s, ["auto"])
    raise ValueError(f"unknown variant '{variant}'")
