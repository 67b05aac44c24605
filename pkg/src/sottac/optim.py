"""Actor update rules.

``solve_direction`` turns a gradient into an update direction:

* Vanilla      -- d = g.
* Natural      -- solve (lam I + Fisher) d = g by conjugate gradient.
* Newton kinds -- solve P d = g on the damped ascent operator
                  P = lam I - Htilde, by CG (default) or by the fixed-point
                  iteration d <- d + eta (g - P d) with eta = 1 / M_hat.

CG exposes non-positive curvature directly: with screening enabled, any
iterate with p . P p <= 1e-12 ||p||^2 aborts the solve, flags the report,
and falls back to the plain gradient direction, so a rejected Newton step
still makes progress.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .curvature import CurvatureKind, CurvatureOperator, SpectrumEstimate, _dominant
from .errors import NumericError

SCREEN_EPS = 1e-12
AMPLIFICATION_HEADROOM = 50.0


@dataclass(frozen=True)
class Vanilla:
    alpha: float = 5e-3

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class Natural:
    alpha: float = 5e-2
    lam: float = 1e-3
    cg_iters: int = 20
    cg_tol: float = 1e-6

    def __post_init__(self):
        if self.alpha <= 0 or self.cg_iters < 1 or self.cg_tol <= 0:
            raise ValueError("require alpha > 0, cg_iters >= 1, cg_tol > 0")


@dataclass(frozen=True)
class Newton:
    kind: CurvatureKind
    alpha: float = 5e-2
    lam: float = 0.1
    cg_iters: int = 20
    cg_tol: float = 1e-6
    screening: bool = True
    solver: str = "cg"  # cg | fixed_point

    def __post_init__(self):
        if self.alpha <= 0 or self.cg_iters < 1 or self.cg_tol <= 0:
            raise ValueError("require alpha > 0, cg_iters >= 1, cg_tol > 0")
        if self.solver not in ("cg", "fixed_point"):
            raise ValueError(f"unknown solver {self.solver!r}")


UpdateRule = Vanilla | Natural | Newton


@dataclass
class UpdateReport:
    grad_norm: float = 0.0
    direction_norm: float = 0.0
    cg_iterations: int = 0
    screening_triggered: bool = False
    fallback_used: bool = False
    m_hat: float = math.nan
    M_hat: float = math.nan
    step_bound_alpha: float = math.nan
    wall_clock_ns: int = 0
    cg_residual: float = math.nan
    cg_flag: bool = False
    alpha_used: float = math.nan


def policy_gradient(policy, states, actions, weights) -> np.ndarray:
    """(1/N) sum_t w_t grad log pi(a_t | s_t)."""
    w = np.asarray(weights, dtype=np.float64)
    n = len(w)
    if n == 0:
        return np.zeros(policy.dim)
    g = policy.weighted_score_sum(states, actions, w) / n
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite policy gradient")
    return g


def _conjugate_gradient(apply, g, max_iters, tol, screening):
    """Returns (x, iters, rel_residual, screening_triggered)."""
    g_norm = float(np.linalg.norm(g))
    x = np.zeros_like(g)
    if g_norm == 0.0:
        return x, 0, 0.0, False
    r = g.copy()
    p = r.copy()
    rs = float(r @ r)
    iters = 0
    for _ in range(max_iters):
        Pp = apply(p)
        curv = float(p @ Pp)
        pp = float(p @ p)
        if curv <= SCREEN_EPS * pp:
            if screening:
                return x, iters, math.sqrt(rs) / g_norm, True
            break  # numerical breakdown without screening: keep current x
        a = rs / curv
        x = x + a * p
        r = r - a * Pp
        rs_new = float(r @ r)
        iters += 1
        if math.sqrt(rs_new) <= tol * g_norm:
            rs = rs_new
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, iters, math.sqrt(rs) / g_norm, False


def _fixed_point(operator, g, max_iters, tol, rng):
    """d <- d + eta (g - P d) with eta = 1 / M_hat, the consistent-form inner
    loop. Returns (x, iters, rel_residual)."""
    g_norm = float(np.linalg.norm(g))
    x = np.zeros_like(g)
    if g_norm == 0.0:
        return x, 0, 0.0
    radius, _, _ = _dominant(operator.apply, operator.dim, 2, 50, rng, 1e-10)
    M_hat = abs(radius)
    if M_hat == 0.0:
        return x, 0, 1.0
    eta = 1.0 / M_hat
    iters = 0
    res_norm = g_norm
    for _ in range(max_iters):
        res = g - operator.apply(x)
        res_norm = float(np.linalg.norm(res))
        if res_norm <= tol * g_norm:
            break
        x = x + eta * res
        iters += 1
    return x, iters, res_norm / g_norm


def solve_direction(rule: UpdateRule, operator: CurvatureOperator | None, g: np.ndarray):
    """Compute the update direction for one batch; returns (d, UpdateReport)."""
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to solve_direction")
    t0 = time.perf_counter_ns()
    report = UpdateReport(grad_norm=float(np.linalg.norm(g)))

    if isinstance(rule, Vanilla):
        d = g.copy()
    else:
        if operator is None:
            raise ValueError("Natural/Newton rules need a curvature operator")
        screening = isinstance(rule, Newton) and rule.screening
        solver = rule.solver if isinstance(rule, Newton) else "cg"
        if solver == "fixed_point":
            d, iters, rel_res = _fixed_point(
                operator, g, rule.cg_iters, rule.cg_tol, np.random.default_rng(0)
            )
            triggered = False
        else:
            d, iters, rel_res, triggered = _conjugate_gradient(
                operator.apply, g, rule.cg_iters, rule.cg_tol, screening
            )
        # Amplification guard, part of PD screening: P >= lam I implies
        # ||P^-1 g|| <= ||g|| / lam. A direction far beyond that bound proves
        # curvature collapsed below the damping floor even when CG never saw
        # a negative p'Pp; the fixed headroom tolerates benign indefiniteness.
        if (
            screening
            and not triggered
            and operator.lam > 0.0
            and float(np.linalg.norm(d)) > AMPLIFICATION_HEADROOM * report.grad_norm / operator.lam
        ):
            triggered = True
        report.cg_iterations = iters
        report.cg_residual = rel_res
        if triggered:
            report.screening_triggered = True
            report.fallback_used = True
            d = g.copy()
        elif rel_res > 10.0 * rule.cg_tol:
            report.cg_flag = True

    report.direction_norm = float(np.linalg.norm(d))
    report.wall_clock_ns = max(1, time.perf_counter_ns() - t0)
    return d, report


def apply_update(policy, d: np.ndarray, alpha: float) -> np.ndarray:
    """theta <- theta + alpha * d; aborts on non-finite parameters."""
    if not np.all(np.isfinite(d)):
        raise NumericError("non-finite update direction")
    theta = policy.theta + alpha * np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise NumericError(
            f"non-finite parameters after update: alpha={alpha}, |d|={np.linalg.norm(d)}"
        )
    policy.set_theta(theta)
    return theta


def step_size_bound(spectrum: SpectrumEstimate, L_hat: float) -> float:
    """2 m^2 / (L M - m^2) when the denominator is positive, else +inf."""
    m, M = spectrum.m_hat, spectrum.M_hat
    denom = L_hat * M - m * m
    if denom <= 0.0:
        return math.inf
    return 2.0 * m * m / denom
