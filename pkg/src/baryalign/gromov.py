"""Entropic Gromov-Wasserstein matching of two metric-measure spaces."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ot import Coupling, SinkhornConfig, sinkhorn

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GWConfig:
    epsilon: float = 5e-5
    max_outer_iters: int = 200
    inner: SinkhornConfig = field(default_factory=lambda: SinkhornConfig(relative=False, newton_max_dim=2000))
    tolerance: float = 1e-7

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


@dataclass
class GWResult:
    coupling: Coupling
    n_iter: int
    converged: bool
    losses: list[float]
    energies: list[float]


def _const_term(C1, C2, p, q):
    # square loss split: (a - b)^2 = a^2 + b^2 - 2ab
    return (C1 ** 2) @ p[:, None] + ((C2 ** 2) @ q[:, None]).T


def linearized_cost(C1, C2, p, q, T, const=None) -> np.ndarray:
    """``sum_km (C1_jk - C2_lm)^2 T_km`` for every (j, l), via the three-term split."""
    if const is None:
        const = _const_term(C1, C2, p, q)
    return const - 2.0 * (C1 @ T @ C2.T)


def gw_loss(C1, C2, T, p=None, q=None) -> float:
    """Square-loss GW objective ``sum (C1_jk - C2_lm)^2 T_jl T_km``."""
    if p is None:
        p = T.sum(1)
    if q is None:
        q = T.sum(0)
    return float(np.sum(linearized_cost(C1, C2, p, q, T) * T))


def _negentropy(T):
    nz = T[T > 0]
    return float(np.sum(nz * (np.log(nz) - 1.0)))


def gromov_wasserstein(C1, C2, p, q, cfg: GWConfig | None = None, return_log: bool = False):
    """Entropic GW coupling between spaces with distance matrices ``C1`` and ``C2``.

    Each outer step solves an entropic OT problem whose cost is the square-loss
    GW tensor contracted with the current plan; epsilon is applied to that
    inner problem as given. Starts from the product plan ``p q^T`` and stops
    when no entry moves by more than ``cfg.tolerance``.

    The tracked energy ``loss + 2 * eps * sum T (log T - 1)`` is non-increasing
    when both distance matrices are conditionally negative definite (cosine
    and Euclidean distances are), since the quadratic part is then concave on
    the coupling polytope and each step minimizes a majorizer.
    """
    cfg = cfg or GWConfig()
    C1 = np.asarray(C1, dtype=np.float64)
    C2 = np.asarray(C2, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if C1.shape != (p.size, p.size) or C2.shape != (q.size, q.size):
        raise ValueError("distance matrices must be square and match the marginals")
    inner = cfg.inner.with_(epsilon=cfg.epsilon, relative=False)
    const = _const_term(C1, C2, p, q)
    T = np.outer(p, q)
    losses, energies = [], []
    potentials = None
    P = None
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        tens = linearized_cost(C1, C2, p, q, T, const)
        P = sinkhorn(p, q, tens, inner, init=potentials)
        if not np.all(np.isfinite(P.matrix)):
            raise FloatingPointError("non-finite GW coupling")
        potentials = (P.f, P.g)
        delta = float(np.abs(P.matrix - T).max())
        T = P.matrix
        loss = gw_loss(C1, C2, T, p, q)
        losses.append(loss)
        energies.append(loss + 2.0 * cfg.epsilon * _negentropy(T))
        if delta <= cfg.tolerance:
            converged = True
            break
    if not converged:
        logger.info("gromov_wasserstein: no convergence after %d outer iterations", it)
    coupling = Coupling(T, p, q, P.f, P.g, P.epsilon, it, converged and P.converged,
                        P.marginal_error, P.log_domain)
    if return_log:
        return GWResult(coupling, it, converged, losses, energies)
    return coupling
