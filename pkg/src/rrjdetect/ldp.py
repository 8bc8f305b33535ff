"""Jamming efficiency, large-deviations exponents and the jammer's design problem.

The jammer family on a topology is affine in ``(p_R, p_J)``: with a shared
uniformization rate ``u`` every transition matrix is

    P1(p) = P_base + p_R * dR / u + p_J * dJ / u,

and only rows of states without the SUT depend on ``p``.  :class:`JammerFamily`
keeps these pieces so that efficiency, rate function and gradient are cheap to
evaluate over grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .chains import (
    ChainModel,
    StateSpace,
    build_compliant,
    build_rrj,
    group_inverse,
    rrj_rate_derivatives,
    stationary_distribution,
    uniformization_rate,
)
from .channel import NetworkTopology
from .detector import StatisticMoments, alpha_threshold
from .errors import ConfigError, InfeasibleError, SingularTestError

__all__ = [
    "JammerDesign",
    "EfficiencyReport",
    "JammerFamily",
    "StationaryExpansion",
    "StrategyResult",
    "jamming_efficiency",
    "rate_function",
    "kl_rate_function",
    "gartner_ellis",
    "fenchel_legendre",
    "taylor_stationary",
    "optimize_strategy",
    "grid_search_strategy",
    "sweep_tau",
    "gaussian_min_mdr",
]

# Tolerances of the constrained solve.
KKT_TOL = 1e-6
FEAS_TOL = 1e-8
_ACTIVE_TOL = 1e-9


@dataclass(frozen=True)
class JammerDesign:
    """One instance of the jammer's strategy problem."""

    tau_eta: float
    expansion_point: tuple[float, float] = (0.5, 0.5)
    order: int = 1
    p_rrj: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if not (np.isfinite(self.tau_eta) and self.tau_eta >= 0):
            raise ConfigError(f"tau_eta must be a non-negative number, got {self.tau_eta}")
        if self.order not in (1, 2):
            raise ConfigError(f"Taylor order must be 1 or 2, got {self.order}")
        a, b = self.expansion_point
        if not (0 < a <= 1 and 0 < b <= 1):
            raise ConfigError(f"expansion point must lie in (0, 1]^2, got {self.expansion_point}")
        r, j = self.p_rrj
        if not (0 <= r <= 1 and 0 <= j <= 1):
            raise ConfigError(f"(p_R, p_J) must lie in [0, 1]^2, got {self.p_rrj}")


@dataclass(frozen=True)
class EfficiencyReport:
    """Collision-time fractions with and without the jammer.

    ``eta`` is NaN (and ``defined`` False) when the compliant network never
    collides with the SUT.
    """

    r0: float
    r1: float
    eta: float
    t_vec: np.ndarray = field(repr=False)
    eta_ts: dict = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return self.r0 > 0

    def as_dict(self) -> dict:
        out = {"r0": self.r0, "r1": self.r1, "eta": self.eta, "defined": self.defined}
        for k, v in sorted(self.eta_ts.items()):
            out[f"eta_ts_{k}"] = v
        return out


def jamming_efficiency(pi0, pi1, space: StateSpace, expansion: "StationaryExpansion | None" = None,
                       target: tuple[float, float] | None = None) -> EfficiencyReport:
    """``eta = r1 / r0`` with ``r_b`` the stationary mass of SUT collision states.

    When an expansion and its target point are given the Taylor estimates of
    ``eta`` (orders 1 and 2) are attached.
    """
    if space.m < 2:
        raise ConfigError("jamming efficiency needs m >= 2 (no collision states otherwise)")
    t = space.collision_indicator
    r0 = float(np.asarray(pi0) @ t)
    r1 = float(np.asarray(pi1) @ t)
    eta = r1 / r0 if r0 > 0 else float("nan")
    eta_ts = {}
    if expansion is not None and target is not None and r0 > 0:
        for k in (1, 2):
            eta_ts[k] = float(expansion.stationary(target, k) @ t) / r0
    return EfficiencyReport(r0, r1, eta, t, eta_ts)


# ---------------------------------------------------------------------------
# Rate function and LDP objects


def _pair(h):
    if isinstance(h, ChainModel):
        return np.asarray(h.P), np.asarray(h.pi)
    P, pi = h
    return np.asarray(P, dtype=float), np.asarray(pi, dtype=float)


def rate_function(h0, h1) -> float:
    """Stein exponent ``I = sum_ij pi0_i p0_ij ln(p0_ij / p1_ij)``.

    ``h0`` is a chain or a ``(P0, pi0)`` pair; ``h1`` a chain or a bare
    ``P1`` matrix.  Returns ``inf`` when H1 forbids a transition that H0
    makes from a state it visits.
    """
    P0, pi0 = _pair(h0)
    P1 = np.asarray(h1.P if isinstance(h1, ChainModel) else h1, dtype=float)
    w = pi0[:, None] * P0
    mask = w > 0
    if np.any(P1[mask] <= 0):
        return math.inf
    val = float(np.sum(w[mask] * (np.log(P0[mask]) - np.log(P1[mask]))))
    return max(val, 0.0)


def kl_rate_function(h0, h1, rows) -> float:
    """Rate function restricted to ``rows``, as a weighted sum of row KL divergences.

    For the jammer family the rows not containing the SUT carry all of ``I``.
    """
    P0, pi0 = _pair(h0)
    P1 = np.asarray(h1.P if isinstance(h1, ChainModel) else h1, dtype=float)
    total = 0.0
    for i in np.flatnonzero(rows):
        p, q = P0[i], P1[i]
        s = p > 0
        if np.any(q[s] <= 0):
            return math.inf
        total += pi0[i] * float(np.sum(p[s] * np.log(p[s] / q[s])))
    return total


def gartner_ellis(P0, P1, t: float) -> float:
    """Log spectral radius of the tilted matrix ``p1^t p0^(1-t)`` (entrywise).

    Raises
    ------
    SingularTestError
        If the two matrices have different supports.
    """
    P0 = np.asarray(P0, dtype=float)
    P1 = np.asarray(P1, dtype=float)
    pos = P0 > 0
    if np.any(pos != (P1 > 0)):
        raise SingularTestError("tilted matrix undefined: hypotheses have different supports")
    M = np.zeros_like(P0)
    M[pos] = np.exp(t * np.log(P1[pos]) + (1 - t) * np.log(P0[pos]))
    rho = float(np.max(np.abs(np.linalg.eigvals(M))))
    return math.log(rho)


def fenchel_legendre(Lambda: Callable[[float], float], xi: float, t_max: float = 1e3,
                     xtol: float = 1e-10) -> tuple[float, float]:
    """``Lambda*(xi) = sup_t (xi t - Lambda(t))`` and the maximizing ``t``.

    The objective is concave, so a bracket is grown outward from ``t = 0``
    until the objective turns down on both sides, then refined by bounded
    Brent search.  Returns ``(inf, +/-inf)`` if no bracket exists below
    ``|t| = t_max``.
    """
    def f(t):
        val = Lambda(t)
        return xi * t - val if np.isfinite(val) else -math.inf

    lo, hi = -1.0, 1.0
    f0 = f(0.0)
    while f(hi) > f0 and hi < t_max:
        hi *= 2.0
    while f(lo) > f0 and -lo < t_max:
        lo *= 2.0
    if hi >= t_max and f(hi) > f(hi / 2):
        return math.inf, math.inf
    if -lo >= t_max and f(lo) > f(lo / 2):
        return math.inf, -math.inf
    res = optimize.minimize_scalar(lambda t: -f(t), bounds=(lo, hi), method="bounded",
                                   options={"xatol": xtol})
    t_star = float(res.x)
    best = max((f(t_star), t_star), (f0, 0.0))
    return max(best[0], 0.0), best[1]


def gaussian_min_mdr(moments: StatisticMoments, alpha: float) -> float:
    """Missed-detection rate at the ``alpha``-level threshold (Gaussian model).

    This is the exact-MDR objective of the strategy problem; it is reported
    but never optimized directly.
    """
    xi = alpha_threshold(moments, alpha)
    s0, s1 = moments.sigmas()
    if s1 == 0:
        return float(moments.mean1 <= xi)
    return float(norm.cdf((xi - moments.mean1) / s1))


# ---------------------------------------------------------------------------
# The jammer family


class JammerFamily:
    """All random-reactive-jammer chains on one topology, sharing a clock.

    Parameters
    ----------
    topo : NetworkTopology
    lam, gamma : float
        Sensing and service rates.
    u : float, optional
        Uniformization rate; defaults to :func:`uniformization_rate`.
    """

    def __init__(self, topo: NetworkTopology, lam: float, gamma: float, u: float | None = None):
        self.topo = topo
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.u = float(u) if u is not None else uniformization_rate(topo, lam, gamma)
        self.compliant = build_compliant(topo, lam, gamma, u=self.u)
        self.space = self.compliant.space
        self.dR, self.dJ = rrj_rate_derivatives(topo, lam)
        # Generator at (p_R, p_J) = (0, 0); affine base of the family.
        self.Q_base = self.compliant.Q - self.dR
        self.t = self.space.collision_indicator
        self.r0 = float(self.compliant.pi @ self.t)

        # Entries of P1 that move with the parameters, for fast grid work.
        vary = (self.dR != 0) | (self.dJ != 0)
        self._rows, self._cols = np.nonzero(vary)
        P0 = self.compliant.P
        self._p0 = P0[self._rows, self._cols]
        self._w = self.compliant.pi[self._rows] * self._p0
        P_base = np.eye(len(self.space)) + self.Q_base / self.u
        self._c = P_base[self._rows, self._cols]
        self._aR = self.dR[self._rows, self._cols] / self.u
        self._aJ = self.dJ[self._rows, self._cols] / self.u

    # chains -------------------------------------------------------------
    def chain(self, p_R: float, p_J: float) -> ChainModel:
        return build_rrj(self.topo, self.lam, self.gamma, p_R, p_J, u=self.u)

    def generator(self, p_R: float, p_J: float) -> np.ndarray:
        return self.Q_base + p_R * self.dR + p_J * self.dJ

    def transition_matrix(self, p_R: float, p_J: float) -> np.ndarray:
        return np.eye(len(self.space)) + self.generator(p_R, p_J) / self.u

    def stationary(self, p_R: float, p_J: float) -> np.ndarray:
        return stationary_distribution(self.generator(p_R, p_J))

    def efficiency(self, p_R: float, p_J: float) -> float:
        """True ``eta`` at ``(p_R, p_J)``; NaN where the chain is not ergodic."""
        if p_R == 0 and p_J == 0:
            return 0.0  # the SUT never transmits
        return float(self.stationary(p_R, p_J) @ self.t) / self.r0

    # rate function ------------------------------------------------------
    def rate(self, p_R, p_J):
        """``I(P0, P1(p))``; accepts scalars or broadcastable arrays."""
        pr = np.asarray(p_R, dtype=float)
        pj = np.asarray(p_J, dtype=float)
        p1 = self._c + pr[..., None] * self._aR + pj[..., None] * self._aJ
        with np.errstate(divide="ignore"):
            terms = self._w * (np.log(self._p0) - np.log(p1))
        out = np.where(np.any((p1 <= 0) & (self._w > 0), axis=-1), np.inf, terms.sum(axis=-1))
        out = np.maximum(out, 0.0)
        return float(out) if out.ndim == 0 else out

    def rate_gradient(self, p_R: float, p_J: float) -> np.ndarray:
        p1 = self._c + p_R * self._aR + p_J * self._aJ
        ratio = self._w / p1
        return -np.array([ratio @ self._aR, ratio @ self._aJ])

    def expansion(self, point: tuple[float, float] = (0.5, 0.5)) -> "StationaryExpansion":
        chain = self.chain(*point)
        return StationaryExpansion(chain, group_inverse(chain.Q, chain.pi), (self.dR, self.dJ))


# ---------------------------------------------------------------------------
# Taylor expansion of the stationary distribution


class StationaryExpansion:
    """Second-order Taylor data of ``pi(p)`` around the point of ``chain``.

    ``d pi / d p_x = -pi D_x G`` and
    ``d2 pi / d p_x d p_y = pi (D_x G D_y G + D_y G D_x G)``, with ``G`` the
    group inverse of the generator and ``D_x`` the constant rate derivatives.
    """

    def __init__(self, chain: ChainModel, G: np.ndarray, derivatives: tuple[np.ndarray, np.ndarray]):
        if chain.jammer is None:
            raise ValueError("expansion chain must carry its jammer parameters")
        self.point = np.asarray(chain.jammer, dtype=float)
        self.pi = np.asarray(chain.pi)
        dR, dJ = derivatives
        A, B = dR @ G, dJ @ G
        pi = self.pi
        self.jacobian = np.vstack([-pi @ A, -pi @ B])  # rows: d/dp_R, d/dp_J
        piA, piB = pi @ A, pi @ B
        self.hessian = {
            "RR": 2.0 * piA @ A,
            "JJ": 2.0 * piB @ B,
            "RJ": piA @ B + piB @ A,
        }

    def stationary(self, target, k: int = 1) -> np.ndarray:
        if k not in (1, 2):
            raise ValueError(f"Taylor order must be 1 or 2, got {k}")
        a, b = np.asarray(target, dtype=float) - self.point
        out = self.pi + a * self.jacobian[0] + b * self.jacobian[1]
        if k == 2:
            H = self.hessian
            out = out + 0.5 * (a * a * H["RR"] + 2.0 * a * b * H["RJ"] + b * b * H["JJ"])
        return out


def taylor_stationary(chain_at_expansion: ChainModel, G: np.ndarray, target,
                      k: int, derivatives: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Order-``k`` Taylor approximation of the jammer chain's ``pi`` at ``target``."""
    return StationaryExpansion(chain_at_expansion, G, derivatives).stationary(target, k)


# ---------------------------------------------------------------------------
# Strategy optimization


@dataclass(frozen=True)
class StrategyResult:
    """Solution of the jammer's design problem for one ``tau_eta``."""

    tau_eta: float
    p_R: float
    p_J: float
    rate: float
    eta_linearized: float
    eta_achieved: float
    status: str  # "compliant", "constrained" or "grid"
    kkt_residual: float = 0.0
    multiplier: float = 0.0
    constraint_violation: float = 0.0

    def as_dict(self) -> dict:
        return {
            "tau_eta": self.tau_eta, "p_R": self.p_R, "p_J": self.p_J, "rate": self.rate,
            "eta_linearized": self.eta_linearized, "eta_achieved": self.eta_achieved,
            "status": self.status, "kkt_residual": self.kkt_residual,
            "multiplier": self.multiplier, "constraint_violation": self.constraint_violation,
        }


class _LinearConstraint:
    """``g . p >= b`` equivalent of ``pi_ts(p, 1) . t >= tau r0``."""

    def __init__(self, family: JammerFamily, expansion: StationaryExpansion, tau: float):
        t = family.t
        self.g = expansion.jacobian @ t
        base = float(expansion.pi @ t) - float(self.g @ expansion.point)
        self.b = tau * family.r0 - base
        self.r0 = family.r0
        self._base = base

    def eta(self, p) -> float:
        return (self._base + float(self.g @ np.asarray(p, dtype=float))) / self.r0

    def max_over_box(self) -> tuple[float, np.ndarray]:
        corner = (self.g > 0).astype(float)
        return float(self.g @ corner), corner

    def segment(self) -> tuple[np.ndarray, np.ndarray]:
        """End points of ``{g . p = b}`` clipped to the unit box."""
        g, b = self.g, self.b
        pts = []
        for axis in (0, 1):
            other = 1 - axis
            if abs(g[other]) < 1e-300:
                continue
            for fixed in (0.0, 1.0):
                val = (b - g[axis] * fixed) / g[other]
                if -1e-12 <= val <= 1 + 1e-12:
                    p = np.empty(2)
                    p[axis], p[other] = fixed, min(1.0, max(0.0, val))
                    pts.append(p)
        if not pts:
            raise ValueError("constraint line misses the unit box")
        direction = np.array([-g[1], g[0]])
        proj = [float(direction @ p) for p in pts]
        return pts[int(np.argmin(proj))], pts[int(np.argmax(proj))]


def _kkt(family: JammerFamily, con: _LinearConstraint, p: np.ndarray) -> tuple[float, float]:
    """Residual of ``grad I = sum mu_k grad c_k`` with ``mu >= 0`` over active constraints."""
    grad = family.rate_gradient(*p)
    normals = [con.g]
    for axis in (0, 1):
        e = np.zeros(2)
        e[axis] = 1.0
        if p[axis] <= _ACTIVE_TOL:
            normals.append(e)
        if p[axis] >= 1 - _ACTIVE_TOL:
            normals.append(-e)
    A = np.column_stack(normals)
    mu, resid = optimize.nnls(A, grad)
    scale = max(1.0, float(np.max(np.abs(grad))))
    return float(resid) / scale, float(mu[0])


def optimize_strategy(design: JammerDesign, family: JammerFamily,
                      expansion: StationaryExpansion | None = None) -> StrategyResult:
    """Minimize ``I(P0, P1(p))`` subject to the Taylor-approximated efficiency constraint.

    With ``order == 1`` the problem is convex: the compliant point is
    returned whenever it is feasible, otherwise the optimum lies on the
    constraint line and is found by a bounded 1-D search along its
    intersection with the box.  ``order == 2`` is solved by SLSQP started
    from the grid-search optimum.

    Raises
    ------
    InfeasibleError
        If no point of the box satisfies the constraint.  The report carries
        the linearized and the true efficiency at ``(1, 1)``.
    """
    if expansion is None:
        expansion = family.expansion(design.expansion_point)
    tau = design.tau_eta
    if tau <= 1.0:
        # The compliant point has eta = 1 exactly.
        return StrategyResult(tau, 1.0, 0.0, 0.0, 1.0, 1.0, "compliant")
    if design.order == 2:
        return _optimize_second_order(design, family, expansion)

    con = _LinearConstraint(family, expansion, tau)
    best_val, corner = con.max_over_box()
    if best_val < con.b:
        raise InfeasibleError(
            f"tau_eta = {tau:g} exceeds the largest linearized efficiency "
            f"{con.eta(corner):.6g} on the unit box",
            report=_infeasibility_report(family, con, tau),
        )
    compliant = np.array([1.0, 0.0])
    if float(con.g @ compliant) >= con.b:
        return StrategyResult(tau, 1.0, 0.0, 0.0, con.eta(compliant), 1.0, "compliant")

    e0, e1 = con.segment()
    step = e1 - e0

    def along(s):
        return float(family.rate(*(e0 + s * step)))

    if np.allclose(e0, e1):
        s_star = 0.0
    else:
        res = optimize.minimize_scalar(along, bounds=(0.0, 1.0), method="bounded",
                                       options={"xatol": 1e-12})
        s_star = float(res.x)
        # Snap to an end point when the minimum sits on the box boundary.
        for end in (0.0, 1.0):
            if abs(s_star - end) < 1e-6 and along(end) <= along(s_star):
                s_star = end
    p = e0 + s_star * step
    p = np.clip(p, 0.0, 1.0)
    resid, mu = _kkt(family, con, p)
    violation = max(0.0, con.b - float(con.g @ p)) / max(con.r0, 1e-300)
    return StrategyResult(
        tau, float(p[0]), float(p[1]), float(family.rate(*p)), con.eta(p),
        family.efficiency(*p), "constrained", resid, mu, violation,
    )


def _infeasibility_report(family, con, tau) -> dict:
    eta_true = family.efficiency(1.0, 1.0)
    return {
        "tau_eta": tau,
        "eta_linearized_max": con.eta(con.max_over_box()[1]),
        "eta_true_at_1_1": eta_true,
        "true_constraint_feasible_at_1_1": bool(eta_true >= tau),
    }


def _constraint_grid(family, expansion, tau, order, pr, pj):
    """Taylor efficiency on a grid, vectorized."""
    t = family.t
    a, b = pr - expansion.point[0], pj - expansion.point[1]
    gR, gJ = expansion.jacobian @ t
    eta = float(expansion.pi @ t) + a * gR + b * gJ
    if order == 2:
        H = {k: float(v @ t) for k, v in expansion.hessian.items()}
        eta = eta + 0.5 * (a * a * H["RR"] + 2 * a * b * H["RJ"] + b * b * H["JJ"])
    return eta / family.r0


def grid_search_strategy(design: JammerDesign, family: JammerFamily,
                         expansion: StationaryExpansion | None = None,
                         step: float = 0.005) -> StrategyResult:
    """Brute-force oracle: best feasible point of a ``step``-spaced grid."""
    if expansion is None:
        expansion = family.expansion(design.expansion_point)
    n = int(round(1.0 / step)) + 1
    axis = np.linspace(0.0, 1.0, n)
    pr, pj = np.meshgrid(axis, axis, indexing="ij")
    eta = _constraint_grid(family, expansion, design.tau_eta, design.order, pr, pj)
    feasible = eta >= design.tau_eta
    feasible |= (pr == 1.0) & (pj == 0.0) & (design.tau_eta <= 1.0)
    if not feasible.any():
        raise InfeasibleError(f"no grid point satisfies tau_eta = {design.tau_eta:g}")
    I = np.where(feasible, family.rate(pr, pj), np.inf)
    idx = np.unravel_index(int(np.argmin(I)), I.shape)
    p = (float(pr[idx]), float(pj[idx]))
    return StrategyResult(design.tau_eta, p[0], p[1], float(I[idx]), float(eta[idx]),
                          family.efficiency(*p), "grid")


def _optimize_second_order(design, family, expansion) -> StrategyResult:
    start = grid_search_strategy(design, family, expansion)
    tau = design.tau_eta

    def con_fun(p):
        return float(_constraint_grid(family, expansion, tau, 2, p[0], p[1])) - tau

    res = optimize.minimize(
        lambda p: float(family.rate(*p)), np.array([start.p_R, start.p_J]),
        jac=lambda p: family.rate_gradient(*p), method="SLSQP",
        bounds=[(1e-9, 1.0), (0.0, 1.0)],
        constraints=[{"type": "ineq", "fun": con_fun}],
        options={"ftol": 1e-14, "maxiter": 200},
    )
    p = np.clip(res.x, 0.0, 1.0)
    # SLSQP often stops with a line-search complaint at ftol this tight even
    # though it has converged; judge the point itself instead of the flag.
    if con_fun(p) < -FEAS_TOL or family.rate(*p) > start.rate:
        return start
    return StrategyResult(tau, float(p[0]), float(p[1]), float(family.rate(*p)),
                          con_fun(p) + tau, family.efficiency(*p), "constrained",
                          constraint_violation=max(0.0, -con_fun(p)))


def sweep_tau(family: JammerFamily, taus, expansion_point=(0.5, 0.5), order: int = 1,
              with_grid: bool = True, grid_step: float = 0.005) -> list[dict]:
    """Solve the design problem for each ``tau_eta``; infeasible values are recorded, not raised."""
    expansion = family.expansion(expansion_point)
    rows = []
    for tau in taus:
        design = JammerDesign(float(tau), tuple(expansion_point), order)
        try:
            res = optimize_strategy(design, family, expansion)
        except InfeasibleError as exc:
            rows.append({"tau_eta": float(tau), "feasible": False, **exc.report})
            continue
        row = {"feasible": True, **res.as_dict()}
        if with_grid:
            g = grid_search_strategy(design, family, expansion, grid_step)
            row["grid_p_R"], row["grid_p_J"] = g.p_R, g.p_J
            row["grid_agrees"] = bool(abs(g.p_R - res.p_R) <= 0.01 and abs(g.p_J - res.p_J) <= 0.01)
        rows.append(row)
    return rows
