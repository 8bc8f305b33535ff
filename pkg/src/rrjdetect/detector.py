"""Likelihood-ratio jamming detectors on DTMC sample paths.

Two tests share the same machinery:

* supervised: coefficients ``l[i, j] = ln(p1[i, j] / p0[i, j])``, large
  statistic favours the jammer hypothesis H1;
* semi-supervised (goodness of fit to H0): ``l[i, j] = ln p0[i, j]``, large
  statistic favours H0.

``orientation`` (+1 / -1) records which way the decision goes so that error
rates are computed the same way for both.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .chains import ChainModel, SpectralData, spectral_decompose
from .errors import SingularTestError, SpectralError

__all__ = [
    "TransitionCounts",
    "TestSpec",
    "StatisticMoments",
    "Decision",
    "count_transitions",
    "supervised_spec",
    "semi_supervised_spec",
    "llr_statistic",
    "llr_decision",
    "normalized_threshold",
    "lag_sums",
    "transition_count_moments",
    "statistic_moments",
    "variance_upper_bounds",
    "error_rates",
    "equal_error_rate",
    "alpha_threshold",
    "roc_curve",
]

log = logging.getLogger(__name__)

SUPERVISED = "supervised"
SEMI_SUPERVISED = "semi_supervised"


@dataclass(frozen=True)
class TransitionCounts:
    """Transition counts ``N[i, j]`` of a path with ``W`` transitions."""

    N: np.ndarray
    W: int
    first_state: int

    @property
    def occupancy(self) -> np.ndarray:
        return self.N.sum(axis=1)


def count_transitions(path: Sequence[int], n_states: int) -> TransitionCounts:
    """Count transitions ``(y_t, y_{t+1})`` along a state sequence."""
    y = np.asarray(path, dtype=np.int64)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("path must be a 1-D sequence of at least two states")
    if y.min() < 0 or y.max() >= n_states:
        raise ValueError(f"state index outside 0..{n_states - 1}")
    flat = y[:-1] * n_states + y[1:]
    N = np.bincount(flat, minlength=n_states * n_states).reshape(n_states, n_states)
    return TransitionCounts(N, int(y.size - 1), int(y[0]))


@dataclass(eq=False)
class TestSpec:
    """A pair of hypothesis chains and the test coefficients.

    ``P1``/``pi1`` may be absent for a semi-supervised test; they are only
    needed to evaluate the statistic under the alternative.
    ``singular`` is set when one hypothesis allows a transition (from a
    state it visits) that the other forbids.
    """

    __test__ = False  # not a pytest class

    P0: np.ndarray
    pi0: np.ndarray
    P1: Optional[np.ndarray]
    pi1: Optional[np.ndarray]
    l: np.ndarray
    mode: str
    singular: bool
    # Initial-state log ratio ln(pi1/pi0) (supervised) or ln pi0 (semi).
    initial: np.ndarray

    @property
    def orientation(self) -> int:
        return 1 if self.mode == SUPERVISED else -1

    @property
    def n_states(self) -> int:
        return self.P0.shape[0]

    def transition_matrix(self, b: int) -> np.ndarray:
        P = self.P0 if b == 0 else self.P1
        if P is None:
            raise ValueError("alternative hypothesis not attached to this test")
        return P

    def stationary(self, b: int) -> np.ndarray:
        pi = self.pi0 if b == 0 else self.pi1
        if pi is None:
            raise ValueError("alternative hypothesis not attached to this test")
        return pi


def _as_pair(h):
    if isinstance(h, ChainModel):
        return np.asarray(h.P), np.asarray(h.pi)
    P, pi = h
    return np.asarray(P, dtype=float), np.asarray(pi, dtype=float)


def supervised_spec(h0, h1) -> TestSpec:
    """LLR test between two chains (``ChainModel`` or ``(P, pi)`` pairs)."""
    P0, pi0 = _as_pair(h0)
    P1, pi1 = _as_pair(h1)
    if P0.shape != P1.shape:
        raise ValueError("hypothesis chains have different state spaces")
    pos0, pos1 = P0 > 0, P1 > 0
    l = np.zeros_like(P0)
    both = pos0 & pos1
    l[both] = np.log(P1[both]) - np.log(P0[both])
    l[pos1 & ~pos0] = np.inf
    l[pos0 & ~pos1] = -np.inf
    only1 = (pos1 & ~pos0) & (pi1[:, None] > 0)
    only0 = (pos0 & ~pos1) & (pi0[:, None] > 0)
    singular = bool(only0.any() or only1.any())
    initial = np.log(pi1) - np.log(pi0)
    return TestSpec(P0, pi0, P1, pi1, l, SUPERVISED, singular, initial)


def semi_supervised_spec(h0, h1=None) -> TestSpec:
    """Goodness-of-fit test of a path against H0 alone.

    ``h1`` is optional and only used for evaluating the statistic under an
    alternative.
    """
    P0, pi0 = _as_pair(h0)
    P1 = pi1 = None
    if h1 is not None:
        P1, pi1 = _as_pair(h1)
    l = np.full_like(P0, -np.inf)
    pos0 = P0 > 0
    l[pos0] = np.log(P0[pos0])
    singular = False
    if P1 is not None:
        singular = bool(((P1 > 0) & ~pos0 & (pi1[:, None] > 0)).any())
    return TestSpec(P0, pi0, P1, pi1, l, SEMI_SUPERVISED, singular, np.log(pi0))


@dataclass(frozen=True)
class Decision:
    statistic: float
    threshold: float
    hypothesis: int
    certain: bool


def _weighted_sum(l: np.ndarray, N: np.ndarray) -> float:
    mask = N > 0
    vals = l[mask]
    if np.isposinf(vals).any() and np.isneginf(vals).any():
        return float("nan")
    return float(np.sum(vals * N[mask]))


def llr_statistic(counts: TransitionCounts, spec: TestSpec) -> float:
    """``Z = sum_ij l[i, j] N[i, j] / W``.

    Observed transitions that one hypothesis forbids give ``Z = +/-inf``.
    Counts on transitions forbidden by both chains are ignored with a warning.
    """
    N = np.asarray(counts.N)
    P1 = spec.P1 if spec.P1 is not None else spec.P0
    unsupported = (spec.P0 <= 0) & (P1 <= 0) & (N > 0)
    if unsupported.any():
        warnings.warn(
            f"{int(N[unsupported].sum())} observed transitions are impossible under both hypotheses",
            RuntimeWarning, stacklevel=2,
        )
        N = np.where(unsupported, 0, N)
    if spec.mode == SUPERVISED:
        l = np.where((spec.P0 <= 0) & (P1 <= 0), 0.0, spec.l)
    else:
        l = spec.l
    return _weighted_sum(l, N) / counts.W


def normalized_threshold(xi0: float, W: int, first_state: int, spec: TestSpec) -> float:
    """Per-step threshold ``xi'`` for the path-level threshold ``xi(W) = xi0 W``.

    The initial-state term shifts the threshold by ``O(1/W)``.
    """
    return (xi0 * W - spec.initial[first_state]) / W


def llr_decision(counts: TransitionCounts, spec: TestSpec, xi0: float) -> Decision:
    """Full test including the initial-state term, threshold ``xi(W) = xi0 W``.

    Returns hypothesis 1 (jammer) or 0 (compliant).  Paths containing a
    transition that one hypothesis forbids are decided with certainty.
    """
    z = llr_statistic(counts, spec)
    thr = normalized_threshold(xi0, counts.W, counts.first_state, spec)
    if np.isnan(z):
        raise ValueError("path contains transitions forbidden under each hypothesis")
    certain = bool(np.isinf(z))
    if spec.mode == SUPERVISED:
        hyp = 1 if z >= thr else 0
    else:
        hyp = 0 if z >= thr else 1
    return Decision(z, thr, hyp, certain)


# ---------------------------------------------------------------------------
# Moments


def lag_sums(P: np.ndarray, pi: np.ndarray, W: int, method: str = "auto",
             spectral: SpectralData | None = None) -> np.ndarray:
    """``S[j, i] = sum_{t=1}^{W-1} (W - t) ([P^(t-1)]_{j,i} - pi_i)``.

    ``method`` is ``"spectral"`` (eigen-decomposition, needs simple
    eigenvalues), ``"matrix"`` (closed form in ``B = P - 1 pi``) or
    ``"auto"`` (spectral when available and well conditioned).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if W < 2:
        return np.zeros((n, n))
    if method in ("auto", "spectral"):
        try:
            sd = spectral if spectral is not None else spectral_decompose(P)
            if method == "spectral" or np.linalg.cond(sd.U) < 1e8:
                lam = sd.eigenvalues[1:]
                f = (lam**W - W * lam + (W - 1)) / (1 - lam) ** 2
                S = (sd.U[:, 1:] * f) @ sd.V[1:, :]
                return S.real
        except SpectralError:
            if method == "spectral":
                raise
    # sum_{s=0}^{k-1} (k - s) B^s = (I - B)^-2 (B^(k+1) - (k+1) B + k I), k = W - 1
    k = W - 1
    Pi = np.outer(np.ones(n), pi)
    B = P - Pi
    eye = np.eye(n)
    rhs = np.linalg.matrix_power(B, k + 1) - (k + 1) * B + k * eye
    IB = eye - B
    S = np.linalg.solve(IB, np.linalg.solve(IB, rhs))
    return S - k * Pi


def transition_count_moments(P: np.ndarray, pi: np.ndarray, W: int, method: str = "auto"):
    """Mean and variance of ``N[i, j] / W`` for a stationary path.

    Returns ``(mean, var)`` matrices.
    """
    P = np.asarray(P, dtype=float)
    S = lag_sums(P, pi, W, method)
    flow = pi[:, None] * P
    mean = flow
    var = flow * ((1 - flow) / W + 2 * P * S.T / W**2)
    return mean, var


@dataclass(frozen=True)
class StatisticMoments:
    """Gaussian summary of the test statistic under both hypotheses."""

    mean0: float
    mean1: float
    var0: float
    var1: float
    W: int
    orientation: int = 1
    var0_ub: Optional[float] = None
    var1_ub: Optional[float] = None
    singular: bool = False
    # Stationary variance including covariances between different rows.
    var0_full: Optional[float] = None
    var1_full: Optional[float] = None

    def sigmas(self, use_bound: bool = False) -> tuple[float, float]:
        if use_bound:
            if self.var0_ub is None or self.var1_ub is None:
                raise SpectralError("variance bounds unavailable for this test")
            return float(np.sqrt(self.var0_ub)), float(np.sqrt(self.var1_ub))
        return float(np.sqrt(max(self.var0, 0.0))), float(np.sqrt(max(self.var1, 0.0)))

    def as_dict(self) -> dict:
        return {
            "W": self.W, "orientation": self.orientation, "singular": self.singular,
            "mean0": self.mean0, "mean1": self.mean1, "var0": self.var0, "var1": self.var1,
            "var0_ub": self.var0_ub, "var1_ub": self.var1_ub,
            "var0_full": self.var0_full, "var1_full": self.var1_full,
        }

    def with_full_covariance(self) -> "StatisticMoments":
        """Copy whose ``var0``/``var1`` keep the cross-row covariance terms."""
        if self.var0_full is None or self.var1_full is None:
            raise ValueError("full-covariance variances were not computed")
        return replace(self, var0=self.var0_full, var1=self.var1_full)


def _mean_and_var(l, P, pi, W, method):
    support = P > 0
    visited = np.broadcast_to(pi[:, None] > 0, P.shape)
    if np.any(np.isinf(l[support]) & visited[support]):
        raise SingularTestError("coefficient is infinite on a supported transition")
    lf = np.where(support, l, 0.0)
    mean = float(np.sum(lf * pi[:, None] * P))
    S = lag_sums(P, pi, W, method)
    St = S.T  # St[i, j] = S[j, i]
    diag = lf**2 * pi[:, None] * P * ((1 - pi[:, None] * P) / W + 2 * P * St / W**2)
    x = lf * P
    X = x.sum(axis=1)
    pair_prod = (X**2 - (x**2).sum(axis=1)) / 2  # sum_{j<j'} x_j x_j'
    pair_lag = np.sum(x * St * (X[:, None] - x), axis=1)  # sum_{j != j'} x_j x_j' S_j
    cross = 2 * pi * (-(pi / W) * pair_prod + pair_lag / W**2)
    # Without dropping cross-row terms: Var = (E g^2 - mean^2) / W + 2 a S h / W^2
    # with a_j = sum_i pi_i p_ij l_ij and h_j = sum_k p_jk l_jk.
    second = float(np.sum(lf**2 * pi[:, None] * P))
    a = pi @ (lf * P)
    h = X
    full = (second - mean**2) / W + 2.0 * float(a @ S @ h) / W**2
    return mean, float(diag.sum() + cross.sum()), full


def variance_upper_bounds(spec: TestSpec, spectral0: SpectralData, spectral1: SpectralData,
                          W: int) -> tuple[float, float]:
    """Spectral upper bounds on ``Var[Z^b]`` for ``b = 0, 1``.

    Each bound uses the constants ``c[j, i]`` and the eigen-gap
    ``|1 - lambda_1|`` of the corresponding transition matrix; cross terms
    enter through ``max(0, l_ij l_ij')``.
    """
    out = []
    for b, sd in ((0, spectral0), (1, spectral1)):
        P = spec.transition_matrix(b)
        pi = spec.stationary(b)
        out.append(_variance_bound(spec.l, P, pi, sd, W))
    return out[0], out[1]


def _variance_bound(l, P, pi, sd: SpectralData, W: int) -> float:
    support = P > 0
    if np.any(np.isinf(l[support])):
        raise SingularTestError("coefficient is infinite on a supported transition")
    g = sd.gap
    K = (2 + W * g) / (W**2 * g**2)
    ct = sd.c.T  # ct[i, j] = c[j, i]
    lf = np.where(support, l, 0.0)
    total = float(np.sum(lf**2 * pi[:, None] * P * ((1 - pi[:, None] * P) / W + 2 * P * ct * K)))
    for i in range(P.shape[0]):
        js = np.flatnonzero(support[i])
        if js.size < 2:
            continue
        li, pij, ci = lf[i, js], P[i, js], ct[i, js]
        coef = np.maximum(0.0, np.outer(li, li))
        term = np.outer(pij, pij) * (-pi[i] / W + (ci[:, None] + ci[None, :]) * K)
        upper = np.triu(np.ones_like(coef, dtype=bool), k=1)
        total += 2 * pi[i] * float(np.sum((coef * term)[upper]))
    return total


def statistic_moments(spec: TestSpec, W: int, method: str = "auto",
                      bounds: bool = True) -> StatisticMoments:
    """Asymptotic mean and variance of ``Z`` under both hypotheses.

    ``var0``/``var1`` neglect covariances between counts leaving different
    states, which is accurate for the supervised test at large ``W``.  The
    complete stationary variances are kept in ``var0_full``/``var1_full``;
    they matter for the semi-supervised test, whose coefficients are not
    centred row by row.  The spectral bounds are attached
    when both transition matrices have simple eigenvalues.  Singular tests
    return a moments object with ``singular=True`` and NaN entries.
    """
    if W < 2:
        raise ValueError("W must be at least 2")
    if spec.singular:
        nan = float("nan")
        return StatisticMoments(nan, nan, nan, nan, W, spec.orientation, singular=True)
    mean0, var0, full0 = _mean_and_var(spec.l, spec.P0, spec.pi0, W, method)
    mean1, var1, full1 = _mean_and_var(spec.l, spec.transition_matrix(1), spec.stationary(1), W, method)
    ub0 = ub1 = None
    if bounds:
        try:
            sd0 = spectral_decompose(spec.P0)
            sd1 = spectral_decompose(spec.transition_matrix(1))
            ub0, ub1 = variance_upper_bounds(spec, sd0, sd1, W)
        except SpectralError as exc:
            log.info("variance bounds unavailable: %s", exc)
    return StatisticMoments(mean0, mean1, var0, var1, W, spec.orientation, ub0, ub1,
                            var0_full=full0, var1_full=full1)


# ---------------------------------------------------------------------------
# Gaussian error rates


def _upper_tail(x, mu, sigma):
    """P(N(mu, sigma^2) > x), with sigma = 0 meaning a point mass."""
    if sigma > 0:
        return float(norm.sf((x - mu) / sigma))
    return 1.0 if mu > x else 0.0


def error_rates(moments: StatisticMoments, xi: float, use_bound: bool = False) -> tuple[float, float]:
    """False-alarm and missed-detection rates at per-step threshold ``xi``."""
    if moments.singular:
        return 0.0, 0.0
    s0, s1 = moments.sigmas(use_bound)
    if moments.orientation > 0:
        far = _upper_tail(xi, moments.mean0, s0)
        mdr = 1.0 - _upper_tail(xi, moments.mean1, s1)
    else:
        far = 1.0 - _upper_tail(xi, moments.mean0, s0)
        mdr = _upper_tail(xi, moments.mean1, s1)
    return far, mdr


def _log_rates(moments, xi, s0, s1):
    o = moments.orientation
    # FAR = P(o Z0 > o xi), MDR = P(o Z1 <= o xi)
    lfar = norm.logsf(o * (xi - moments.mean0) / s0)
    lmdr = norm.logcdf(o * (xi - moments.mean1) / s1)
    return lfar, lmdr


def equal_error_rate(moments: StatisticMoments, use_bound: bool = False) -> tuple[float, float]:
    """Equal error rate and the threshold ``xi*`` where FAR = MDR.

    The crossing is found by bisection on ``log FAR - log MDR``.  When the
    rates cannot cross (degenerate variances) the threshold minimising
    ``|FAR - MDR|`` is used.
    """
    if moments.singular:
        return 0.0, float("nan")
    s0, s1 = moments.sigmas(use_bound)
    if s0 > 0 and s1 > 0:
        lo = min(moments.mean0 - 40 * s0, moments.mean1 - 40 * s1)
        hi = max(moments.mean0 + 40 * s0, moments.mean1 + 40 * s1)

        def h(x):
            a, b = _log_rates(moments, x, s0, s1)
            return a - b

        if np.sign(h(lo)) != np.sign(h(hi)):
            xi = optimize.bisect(h, lo, hi, xtol=1e-15 * max(1.0, abs(hi - lo)), maxiter=400)
            far, mdr = error_rates(moments, xi, use_bound)
            if abs(far - mdr) <= 1e-10:
                return 0.5 * (far + mdr), float(xi)
    cand = {moments.mean0, moments.mean1, 0.5 * (moments.mean0 + moments.mean1)}
    spread = abs(moments.mean1 - moments.mean0) + s0 + s1 + 1e-12
    grid = np.linspace(min(cand) - 10 * spread, max(cand) + 10 * spread, 20001)
    cand.update(grid.tolist())
    best = min(cand, key=lambda x: (abs(np.subtract(*error_rates(moments, x, use_bound))), x))
    far, mdr = error_rates(moments, best, use_bound)
    return 0.5 * (far + mdr), float(best)


def alpha_threshold(moments: StatisticMoments, alpha: float, use_bound: bool = False) -> float:
    """Threshold with false-alarm rate ``alpha`` under the Gaussian model."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    s0, _ = moments.sigmas(use_bound)
    return moments.mean0 + moments.orientation * norm.ppf(1 - alpha) * s0


def roc_curve(moments: StatisticMoments, n_points: int = 201,
              use_bound: bool = False) -> list[tuple[float, float, float]]:
    """Analytic ROC as ``(threshold, FAR, MDR)`` triples sorted by FAR.

    Thresholds sweep ``[mu0 - 6 sigma0, mu1 + 6 sigma1]`` (oriented so that
    the sweep runs from one corner to the other).  A singular test yields
    the perfect corner ``(0, 0)``.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    if moments.singular:
        return [(float("inf"), 0.0, 1.0), (float("nan"), 0.0, 0.0), (float("-inf"), 1.0, 0.0)]
    s0, s1 = moments.sigmas(use_bound)
    o = moments.orientation
    a = moments.mean0 - o * 6 * s0
    b = moments.mean1 + o * 6 * s1
    pts = []
    for xi in np.linspace(a, b, n_points):
        far, mdr = error_rates(moments, float(xi), use_bound)
        pts.append((float(xi), far, mdr))
    pts.sort(key=lambda t: (t[1], -t[2]))
    return pts
