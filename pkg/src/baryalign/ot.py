"""Entropic optimal transport between discrete distributions.

The solver runs plain Sinkhorn scaling while it is numerically safe and falls
back to log-sum-exp updates on the dual potentials once a scaling factor
leaves ``[1/threshold, threshold]`` or the Gibbs kernel underflows.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .embed_io import DiscreteDistribution, squared_euclidean_cost

logger = logging.getLogger(__name__)


class SinkhornNaNError(FloatingPointError):
    """Raised when iterates become NaN; usually epsilon too small without log updates."""


@dataclass(frozen=True)
class SinkhornConfig:
    """Entropic OT settings.

    With ``relative=True`` the effective regularization is
    ``epsilon * median(C)``; otherwise ``epsilon`` is used as given.
    """

    epsilon: float = 1e-2
    max_iters: int = 1000
    tolerance: float = 1e-6
    log_domain_threshold: float = 1e30
    relative: bool = True
    force_log_domain: bool = False
    annealing_factor: float = 4.0
    annealing_iters: int = 50
    round_feasible: bool = True
    newton_after: int = 200
    newton_max_dim: int = 400  # Newton polish only when n + m is at most this

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.log_domain_threshold > 1:
            raise ValueError("log_domain_threshold must be > 1")
        if not self.annealing_factor >= 1:
            raise ValueError("annealing_factor must be >= 1 (1 disables annealing)")

    def with_(self, **kw) -> "SinkhornConfig":
        return replace(self, **kw)


@dataclass
class Coupling:
    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    f: np.ndarray | None = None
    g: np.ndarray | None = None
    epsilon: float | None = None
    n_iter: int = 0
    converged: bool = True
    marginal_error: float = 0.0
    log_domain: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def violation(self) -> float:
        P = self.matrix
        return max(
            float(np.abs(P.sum(1) - self.row_marginal).max()),
            float(np.abs(P.sum(0) - self.col_marginal).max()),
        )

    def cost(self, C) -> float:
        return float(np.sum(self.matrix * C))

    @classmethod
    def diagonal(cls, mass) -> "Coupling":
        mass = np.asarray(mass, dtype=np.float64)
        return cls(np.diag(mass), mass.copy(), mass.copy())


def cost_scale(C: np.ndarray) -> float:
    """Median of the cost entries, falling back to the max (then 1) when zero."""
    scale = float(np.median(C))
    if scale <= 0:
        scale = float(np.max(C))
    if scale <= 0:
        scale = 1.0
    return scale


def effective_epsilon(C: np.ndarray, cfg: SinkhornConfig) -> float:
    return cfg.epsilon * cost_scale(C) if cfg.relative else cfg.epsilon


def _lse(M: np.ndarray, axis: int) -> np.ndarray:
    m = M.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.exp(M - m).sum(axis=axis, keepdims=True)) + m
    return out.squeeze(axis)


def sinkhorn(a, b, C, cfg: SinkhornConfig | None = None, init=None) -> Coupling:
    """Solve ``min <P, C> + eps * sum P (log P - 1)`` over couplings of ``a`` and ``b``.

    Parameters
    ----------
    a, b : (n,), (m,) array_like
        Strictly positive marginals, each summing to one.
    C : (n, m) array_like
        Cost matrix.
    cfg : SinkhornConfig, optional
    init : tuple of arrays, optional
        Warm-start dual potentials ``(f, g)`` in cost units.

    Returns
    -------
    Coupling
        ``matrix = exp((f + g - C) / eps)``. Column sums match ``b`` to rounding;
        row sums match ``a`` within ``cfg.tolerance`` unless ``converged`` is False,
        in which case the last iterate is returned.
    """
    cfg = cfg or SinkhornConfig()
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginals must be strictly positive; strip zero-mass points first")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    eps = effective_epsilon(C, cfg)

    if init is None:
        f, g, total, err, log_domain = _annealed_solve(a, b, C, eps, cfg)
    else:
        f = np.asarray(init[0], dtype=np.float64).copy()
        g = np.asarray(init[1], dtype=np.float64).copy()
        f, g, total, err, log_domain = _solve(a, b, C, eps, f, g, cfg)
        if err > cfg.tolerance:
            # warm starts can stall at tiny epsilon; a cold annealed run usually does not
            cold = _annealed_solve(a, b, C, eps, cfg)
            if cold[3] < err:
                f, g, _, err, log_domain = cold
            total += cold[2]

    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    if np.isnan(P).any():
        raise SinkhornNaNError(f"NaN in transport plan (eps={eps:g})")
    converged = err <= cfg.tolerance
    if not converged:
        logger.debug("sinkhorn: not converged after %d iterations (violation %.3g)", total, err)
    if cfg.round_feasible:
        P = round_to_feasible(P, a, b)
    return Coupling(P, a, b, f, g, eps, total, converged, float(err), log_domain)


def _annealed_solve(a, b, C, eps, cfg):
    """Cold start with epsilon decreased geometrically from the cost spread."""
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    total = 0
    used_log = False
    stage = float(C.max() - C.min())
    if cfg.annealing_factor > 1 and stage > eps * cfg.annealing_factor:
        loose = cfg.with_(max_iters=cfg.annealing_iters, tolerance=max(cfg.tolerance, 1e-3 * a.min()))
        while stage > eps:
            f, g, it, _, lg = _solve(a, b, C, stage, f, g, loose)
            total += it
            used_log |= lg
            stage /= cfg.annealing_factor
    f, g, it, err, lg = _solve(a, b, C, eps, f, g, cfg)
    return f, g, total + it, err, used_log or lg


def _solve(a, b, C, eps, f, g, cfg):
    """One fixed-epsilon solve; returns ``(f, g, iterations, violation, used_log_domain)``.

    Problems with ``n + m <= newton_max_dim`` that are still infeasible after
    ``newton_after`` scaling iterations are finished with damped Newton steps
    on the dual.
    """
    newton = a.size + b.size <= cfg.newton_max_dim and cfg.newton_after < cfg.max_iters
    first = cfg.with_(max_iters=cfg.newton_after) if newton else cfg
    used_log = cfg.force_log_domain
    if used_log:
        f, g, it, err = _log_loop(a, b, C, eps, f, g, first, 0)
    else:
        f, g, it, err, used_log = _scaling_loop(a, b, C, eps, f, g, first)
        if used_log and err > cfg.tolerance:
            f, g, it, err = _log_loop(a, b, C, eps, f, g, first, it)
    if err <= cfg.tolerance or not newton:
        return f, g, it, err, used_log
    f, g, it, err = _newton_loop(a, b, C, eps, f, g, cfg, it)
    if err > cfg.tolerance and it < cfg.max_iters:
        f, g, it, err = _log_loop(a, b, C, eps, f, g, cfg, it)
        used_log = True
    return f, g, it, err, used_log


def _dual_value(a, b, C, eps, f, g):
    with np.errstate(over="ignore"):
        mass = np.exp((f[:, None] + g[None, :] - C) / eps).sum()
    return float(a @ f + b @ g - eps * mass)


def _newton_loop(a, b, C, eps, f, g, cfg, it, max_steps=50):
    """Damped Newton ascent on the entropic dual (Brauer et al., 2017).

    Returns the iterate with the smallest row violation seen, so a poor
    quadratic model at tiny epsilon can never make things worse.
    """
    n, m = a.size, b.size
    logb = np.log(b)
    best = None
    for step_no in range(max_steps + 1):
        g = eps * (logb - _lse((f[:, None] - C) / eps, axis=0))
        P = np.exp((f[:, None] + g[None, :] - C) / eps)
        r = P.sum(1)
        err = float(np.abs(r - a).max())
        if best is None or err < best[2]:
            best = (f, g, err)
        if err <= cfg.tolerance or step_no == max_steps or it >= cfg.max_iters:
            break
        c = P.sum(0)
        grad = np.concatenate([a - r, b - c])
        H = np.empty((n + m, n + m))
        H[:n, :n] = np.diag(r)
        H[:n, n:] = P
        H[n:, :n] = P.T
        H[n:, n:] = np.diag(c)
        H /= eps
        # drop the last potential to remove the (f + c, g - c) gauge direction
        Hr = H[:-1, :-1] + 1e-12 * np.abs(H).max() * np.eye(n + m - 1)
        try:
            step = np.append(np.linalg.solve(Hr, grad[:-1]), 0.0)
        except np.linalg.LinAlgError:
            break
        d0 = _dual_value(a, b, C, eps, f, g)
        slope = float(grad @ step)
        t = 1.0
        while t > 1e-10:
            fn = f + t * step[:n]
            if _dual_value(a, b, C, eps, fn, g + t * step[n:]) >= d0 + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        f = fn
        it += 1
    return best[0], best[1], it, best[2]


def round_to_feasible(P, a, b) -> np.ndarray:
    """Project a near-feasible plan onto the exact coupling polytope.

    Rows and columns carrying excess mass are scaled down, then the deficit
    is restored with a rank-one correction (Altschuler, Weed and Rigollet, 2017).
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.minimum(a / P.sum(1), 1.0)
    x = np.where(np.isfinite(x), x, 1.0)
    P = P * x[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.minimum(b / P.sum(0), 1.0)
    y = np.where(np.isfinite(y), y, 1.0)
    P = P * y[None, :]
    err_r = np.maximum(a - P.sum(1), 0.0)
    err_c = np.maximum(b - P.sum(0), 0.0)
    total = err_r.sum()
    if total > 0:
        P = P + np.outer(err_r, err_c) / total
    return P


def _scaling_loop(a, b, C, eps, f, g, cfg):
    """Plain kernel scaling; bails out to log-domain on overflow or underflow."""
    thr = cfg.log_domain_threshold
    lo = 1.0 / thr
    with np.errstate(divide="ignore", over="ignore", under="ignore", invalid="ignore"):
        K = np.exp((f[:, None] + g[None, :] - C) / eps)
        if (K.sum(1) == 0).any() or (K.sum(0) == 0).any():
            return f, g, 0, math.inf, True
        u = np.ones_like(a)
        v = b / (K.T @ u)
        if not (np.all(np.isfinite(v)) and v.max() <= thr and v.min() >= lo):
            return f, g, 0, math.inf, True
        err = math.inf
        it = 0
        while it < cfg.max_iters:
            Kv = K @ v
            # columns are exact after each v update; rows of the plan are u * Kv
            err = float(np.abs(u * Kv - a).max())
            if err <= cfg.tolerance:
                break
            u_new = a / Kv
            if not (np.all(np.isfinite(u_new)) and u_new.max() <= thr and u_new.min() >= lo):
                return f + eps * np.log(u), g + eps * np.log(v), it, err, True
            v_new = b / (K.T @ u_new)
            if not (np.all(np.isfinite(v_new)) and v_new.max() <= thr and v_new.min() >= lo):
                return f + eps * np.log(u), g + eps * np.log(v), it, err, True
            u, v = u_new, v_new
            it += 1
    return f + eps * np.log(u), g + eps * np.log(v), it, err, False


def _log_loop(a, b, C, eps, f, g, cfg, it):
    loga = np.log(a)
    logb = np.log(b)
    err = math.inf
    # one column update so the loop invariant (exact columns) holds
    g = eps * (logb - _lse((f[:, None] - C) / eps, axis=0))
    while it < cfg.max_iters:
        f_new = eps * (loga - _lse((g[None, :] - C) / eps, axis=1))
        # row sums of the plan at (f, g) equal a * exp((f - f_new) / eps)
        err = float(np.abs(a * np.expm1((f - f_new) / eps)).max())
        if np.isnan(err):
            raise SinkhornNaNError(f"NaN in log-domain potentials (eps={eps:g})")
        if err <= cfg.tolerance:
            break
        f = f_new
        g = eps * (logb - _lse((f[:, None] - C) / eps, axis=0))
        it += 1
    return f, g, it, err


def wasserstein_sq(mu: DiscreteDistribution, nu: DiscreteDistribution, cfg: SinkhornConfig | None = None,
                   return_coupling: bool = False):
    """Transport cost ``<P, C>`` of the entropic plan under squared Euclidean ground cost.

    The entropy term is not included in the returned value.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    C = squared_euclidean_cost(mu.support, nu.support)
    P = sinkhorn(mu.mass, nu.mass, C, cfg)
    value = max(P.cost(C), 0.0)
    return (value, P) if return_coupling else value


def exact_ot_oracle(a, b, C):
    """Exact optimal plan for tiny instances (``len(a) * len(b) <= 64``).

    Square problems with uniform marginals are solved by enumerating
    permutations; anything else goes through an LP solve.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    C = np.asarray(C, dtype=np.float64)
    n, m = a.size, b.size
    if n * m > 64:
        raise ValueError(f"instance too large for the exact oracle ({n}x{m})")
    if C.shape != (n, m):
        raise ValueError("cost shape does not match marginals")
    if n == m and np.allclose(a, 1.0 / n, rtol=0, atol=1e-15) and np.allclose(b, 1.0 / m, rtol=0, atol=1e-15):
        best, best_perm = math.inf, None
        rows = np.arange(n)
        for perm in itertools.permutations(range(n)):
            c = C[rows, perm].sum()
            if c < best:
                best, best_perm = c, perm
        P = np.zeros((n, m))
        P[rows, best_perm] = 1.0 / n
        return Coupling(P, a, b), float(best) / n
    from scipy.optimize import linprog

    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    P = np.maximum(res.x.reshape(n, m), 0.0)
    return Coupling(P, a, b), float(res.fun)
