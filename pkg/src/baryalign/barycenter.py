"""Free-support Wasserstein barycenter of weighted point clouds.

Alternates entropic transport from every input to the current support,
a barycentric-projection move of the support points, and (optionally) an
exponentiated-gradient step on the support masses driven by the dual
potentials of those transports.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .embed_io import DiscreteDistribution, squared_euclidean_cost
from .ot import Coupling, SinkhornConfig, cost_scale, sinkhorn

logger = logging.getLogger(__name__)

DEAD_MASS = 1e-12


@dataclass(frozen=True)
class BarycenterConfig:
    support_size: int | None = None  # None: twice the average input size
    lam: tuple[float, ...] | None = None  # None: uniform over inputs
    max_iters: int = 10
    location_tolerance: float = 1e-4
    optimize_weights: bool = True
    weight_step: float | None = None  # None: 0.5 / m
    seed: int = 0

    def __post_init__(self):
        if self.support_size is not None and self.support_size < 1:
            raise ValueError("support_size must be >= 1")
        if self.lam is not None:
            lam = np.asarray(self.lam, dtype=float)
            if np.any(lam < 0) or abs(lam.sum() - 1) > 1e-9:
                raise ValueError("lam must be a probability vector")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def resolve_support_size(self, sizes) -> int:
        if self.support_size is not None:
            return self.support_size
        return max(1, int(round(2 * np.mean(sizes))))

    def resolve_lambda(self, m: int) -> np.ndarray:
        if self.lam is None:
            return np.full(m, 1.0 / m)
        lam = np.asarray(self.lam, dtype=float)
        if lam.size != m:
            raise ValueError(f"lam has {lam.size} entries for {m} inputs")
        return lam

    def resolve_step(self, m: int) -> float:
        return self.weight_step if self.weight_step is not None else 0.5 / m


@dataclass
class BarycenterState:
    distribution: DiscreteDistribution
    couplings: list[Coupling]
    objective: float
    iteration: int = 0
    lam: np.ndarray | None = None
    history: list[dict] = field(default_factory=list)
    converged: bool = False
    cost_scale: float = 1.0
    entropic_objective: float | None = None

    @property
    def support(self) -> np.ndarray:
        return self.distribution.support

    @property
    def mass(self) -> np.ndarray:
        return self.distribution.mass


def init_support(d: int, cfg: BarycenterConfig, s: int | None = None) -> DiscreteDistribution:
    """Standard-normal support locations with uniform mass, drawn from ``cfg.seed``."""
    s = s if s is not None else cfg.support_size
    if s is None or s < 1:
        raise ValueError("support size must be a positive integer")
    rng = np.random.default_rng(cfg.seed)
    Y = rng.standard_normal((s, d))
    return DiscreteDistribution(Y, np.full(s, 1.0 / s))


def update_locations(state: BarycenterState, inputs, cfg: BarycenterConfig | None = None) -> np.ndarray:
    """Move each support point to the lambda-weighted mean of the mass sent to it."""
    lam = state.lam if state.lam is not None else np.full(len(inputs), 1.0 / len(inputs))
    Y = state.support
    b = state.mass
    num = np.zeros_like(Y)
    for li, P, mu in zip(lam, state.couplings, inputs):
        num += li * (P.matrix.T @ mu.support)
    alive = b >= DEAD_MASS
    Y_new = Y.copy()
    Y_new[alive] = num[alive] / b[alive, None]
    return Y_new


def update_weights(state: BarycenterState, cfg: BarycenterConfig, scale: float | None = None,
                   step: float | None = None) -> np.ndarray:
    """One exponentiated-gradient step on the barycenter masses.

    The gradient is the lambda-weighted sum of the barycenter-side dual
    potentials, each centred to mean zero, divided by ``scale`` (cost units;
    defaults to the state's cost scale) so the step is dimensionless.
    """
    m = len(state.couplings)
    lam = state.lam if state.lam is not None else np.full(m, 1.0 / m)
    step = cfg.resolve_step(m) if step is None else step
    scale = state.cost_scale if scale is None else scale
    grad = np.zeros(state.mass.shape)
    for li, P in zip(lam, state.couplings):
        if P.g is None:
            raise ValueError("coupling carries no dual potentials")
        grad += li * (P.g - P.g.mean())
    logb = np.log(state.mass) - step * grad / scale
    logb -= logb.max()
    b = np.exp(logb)
    b /= b.sum()
    # keep strictly positive for the next Sinkhorn solve
    b = np.maximum(b, np.finfo(float).tiny)
    return b / b.sum()


def _transport_all(inputs, Y, b, ot_cfg):
    couplings, costs, ent = [], [], []
    for mu in inputs:
        C = squared_euclidean_cost(mu.support, Y)
        P = sinkhorn(mu.mass, b, C, ot_cfg)
        couplings.append(P)
        c = P.cost(C)
        costs.append(c)
        nz = P.matrix[P.matrix > 0]
        ent.append(c + P.epsilon * float(np.sum(nz * (np.log(nz) - 1.0))))
    return couplings, np.array(costs), np.array(ent)


def compute_barycenter(inputs, cfg: BarycenterConfig | None = None, ot_cfg: SinkhornConfig | None = None,
                       init: DiscreteDistribution | None = None, callback=None) -> BarycenterState:
    """Free-support barycenter minimizing ``sum_i lam_i W2^2(inputs[i], nu)``.

    Without ``init`` the support is drawn by :func:`init_support` and shifted
    to the lambda-weighted centroid of the inputs, which keeps the result
    translation equivariant. A relative epsilon in ``ot_cfg`` is resolved once
    against the first round of cost matrices and then held fixed, so every
    round works on the same entropic problem.

    Each round moves the support, re-solves the transports, then tries one
    weight step from the fresh potentials. A step that raises the entropic
    objective is dropped and the step halved; an accepted step lets it grow
    back toward ``cfg.weight_step``. Stops once no support point moves more
    than ``cfg.location_tolerance`` and the masses have settled, or after
    ``cfg.max_iters`` rounds. Couplings in the returned state belong to the
    final support and masses.
    """
    cfg = cfg or BarycenterConfig()
    ot_cfg = ot_cfg or SinkhornConfig()
    inputs = list(inputs)
    if not inputs:
        raise ValueError("need at least one input distribution")
    d = inputs[0].dim
    if any(mu.dim != d for mu in inputs):
        raise ValueError("all inputs must share the same dimension")
    m = len(inputs)
    lam = cfg.resolve_lambda(m)
    if init is None:
        s = cfg.resolve_support_size([mu.size for mu in inputs])
        start = init_support(d, cfg, s)
        centroid = sum(li * (mu.mass @ mu.support) for li, mu in zip(lam, inputs))
        Y = start.support + centroid[None, :]
        b = start.mass
    else:
        Y = init.support.copy()
        b = init.mass.copy()
    if not cfg.optimize_weights:
        b = np.full(Y.shape[0], 1.0 / Y.shape[0])

    scale = float(sum(li * cost_scale(squared_euclidean_cost(mu.support, Y)) for li, mu in zip(lam, inputs)))
    if ot_cfg.relative:
        ot_cfg = ot_cfg.with_(epsilon=ot_cfg.epsilon * scale, relative=False)

    base_step = step = cfg.resolve_step(m)
    history = []
    converged = False
    couplings, costs, ent = _transport_all(inputs, Y, b, ot_cfg)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        state = BarycenterState(DiscreteDistribution(Y, b), couplings, float(lam @ costs), it, lam, history,
                                False, scale)
        Y_new = update_locations(state, inputs, cfg)
        disp = float(np.sqrt(((Y_new - Y) ** 2).sum(1)).max())
        Y = Y_new
        couplings, costs, ent = _transport_all(inputs, Y, b, ot_cfg)
        # weight step from potentials at the moved support, kept only if it lowers the objective
        mass_change = 0.0
        rejected = False
        if cfg.optimize_weights and step >= 1e-6 * base_step:
            moved = BarycenterState(DiscreteDistribution(Y, b), couplings, 0.0, it, lam, history, False, scale)
            b_try = update_weights(moved, cfg, step=step)
            trial = _transport_all(inputs, Y, b_try, ot_cfg)
            if lam @ trial[2] <= lam @ ent + 1e-12 * max(1.0, abs(lam @ ent)):
                mass_change = float(np.abs(b_try - b).max())
                b = b_try
                couplings, costs, ent = trial
                step = min(2.0 * step, base_step)
            else:
                rejected = True
                step *= 0.5
        objective = float(lam @ costs)
        row = {"iteration": it, "objective": objective, "entropic_objective": float(lam @ ent),
               "max_displacement": disp, "max_mass_change": mass_change, "weight_step_rejected": rejected}
        history.append(row)
        if callback is not None:
            callback(row)
        logger.debug("barycenter iteration %d: objective %.6g, displacement %.3g", it, objective, disp)
        if disp <= cfg.location_tolerance and not rejected and mass_change <= cfg.location_tolerance / Y.shape[0]:
            converged = True
            break

    return BarycenterState(DiscreteDistribution(Y, b), couplings, float(lam @ costs), it, lam,
                           history, converged, scale, float(lam @ ent))
