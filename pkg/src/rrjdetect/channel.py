"""Physical-layer sensing probabilities for a static CSMA network.

Stations are labelled ``1..m``; station 1 is the station under test (SUT).
Active sets are passed as any iterable of station labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import mpmath
import numpy as np

from .errors import ConfigError, NumericalBreakdown

__all__ = [
    "NetworkTopology",
    "DistanceGrouping",
    "pathloss",
    "group_distances",
    "idle_probability",
    "anomalous_probability",
    "weighted_exponential_cdf",
]

FADING_MODES = ("rayleigh", "deterministic")

# Relative gap below which two pathloss weights are treated as one group.
MERGE_RTOL = 1e-9
# Allowed excursion of the closed form outside [0, 1] before it is rejected.
CDF_SLACK = 1e-9
# Working precision (decimal digits) of the closed-form evaluation.
_WORKING_DPS = 50


@dataclass(frozen=True)
class NetworkTopology:
    """Station layout and radio parameters (SI units: watts, meters).

    Defaults are the ns-3 values used throughout the experiments
    (``p_t = 0.04 W``, ``N_0 = 4.0124e-13 W``, ``theta = 2.5119e-12 W``,
    ``p_o = 8.5959e-7 W`` at ``d_o = 1 m``).
    """

    positions: tuple[tuple[float, float], ...]
    p_t: float = 0.04
    p_o: float = 8.5959e-7
    d_o: float = 1.0
    alpha: float = 3.0
    N_0: float = 4.0124e-13
    theta: float = 2.5119e-12
    fading: str = "rayleigh"
    _coords: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            pos = tuple((float(x), float(y)) for x, y in self.positions)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"positions must be a list of (x, y) pairs: {exc}") from None
        object.__setattr__(self, "positions", pos)
        if len(pos) < 1:
            raise ConfigError("topology needs at least one station (m >= 1)")
        for name in ("p_t", "p_o", "d_o", "N_0", "theta"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha!r}")
        if self.theta <= self.N_0:
            raise ConfigError(
                f"theta ({self.theta:g} W) must exceed N_0 ({self.N_0:g} W); "
                "otherwise no station ever senses the channel idle"
            )
        if self.fading not in FADING_MODES:
            raise ConfigError(f"fading must be one of {FADING_MODES}, got {self.fading!r}")
        coords = np.array(pos, dtype=float)
        coords.setflags(write=False)
        object.__setattr__(self, "_coords", coords)

    @property
    def m(self) -> int:
        return len(self.positions)

    def distance(self, k: int, k2: int) -> float:
        self._check_station(k)
        self._check_station(k2)
        return float(np.hypot(*(self._coords[k - 1] - self._coords[k2 - 1])))

    def _check_station(self, k: int) -> None:
        if not (1 <= k <= self.m):
            raise ValueError(f"station index {k} outside 1..{self.m}")


@dataclass(frozen=True)
class DistanceGrouping:
    """Interferers grouped by received power.

    ``groups`` holds ``(weight, multiplicity)`` pairs with distinct weights
    (watts), sorted by decreasing weight.
    """

    groups: tuple[tuple[float, int], ...]

    @property
    def size(self) -> int:
        return sum(n for _, n in self.groups)


def pathloss(dist: float, topo: NetworkTopology) -> float:
    """Large-scale received power at distance ``dist`` (meters)."""
    if dist < 0:
        raise ValueError(f"distance must be non-negative, got {dist}")
    if dist < topo.d_o:
        return topo.p_t
    return topo.p_o * dist ** (-topo.alpha)


def _active_set(k: int, T: Iterable[int], topo: NetworkTopology) -> tuple[int, ...]:
    topo._check_station(k)
    members = tuple(sorted(set(int(x) for x in T)))
    for x in members:
        topo._check_station(x)
    if k in members:
        raise ValueError(f"sensing station {k} cannot be in the active set {members}")
    return members


def group_distances(k: int, T: Iterable[int], topo: NetworkTopology) -> DistanceGrouping:
    """Partition the active set ``T`` by the pathloss weight seen at ``k``."""
    members = _active_set(k, T, topo)
    weights = sorted((pathloss(topo.distance(k, x), topo) for x in members), reverse=True)
    groups: list[list] = []
    for w in weights:
        if groups and abs(groups[-1][0] - w) <= MERGE_RTOL * max(groups[-1][0], w):
            groups[-1][1] += 1
        else:
            groups.append([w, 1])
    return DistanceGrouping(tuple((float(w), int(n)) for w, n in groups))


def weighted_exponential_cdf(grouping: DistanceGrouping, level: float) -> float:
    """P(sum_a w_a * Gamma(n_a, 1) <= level) for distinct weights ``w_a``.

    Closed form for a sum of independent exponentials with repeated rates.
    The derivatives of the partial-fraction factors are obtained from the
    log-derivative recursion and evaluated in extended precision, since the
    terms cancel heavily when two weights are close.
    """
    if level <= 0:
        return 0.0
    if not grouping.groups:
        return 1.0
    with mpmath.workdps(_WORKING_DPS):
        lvl = mpmath.mpf(level)
        # Rescale weights by the level so the evaluation point is 1.
        w = [mpmath.mpf(wa) / lvl for wa, _ in grouping.groups]
        n = [na for _, na in grouping.groups]
        c = [1 / wa for wa in w]
        total = mpmath.mpf(0)
        for ell in range(len(w)):
            # Factors of prod_{a != ell} (c_a + x)^(-n_a) times the extra x^(-1).
            poles = [(c[a], n[a]) for a in range(len(w)) if a != ell]
            poles.append((mpmath.mpf(0), 1))
            derivs = _product_derivatives(poles, -c[ell], n[ell] - 1)
            for j in range(1, n[ell] + 1):
                psi = -derivs[j - 1]
                term = mpmath.exp(-c[ell]) * psi
                term /= mpmath.factorial(n[ell] - j) * mpmath.factorial(j - 1)
                total += term
        scale = mpmath.fprod(wa ** (-na) for wa, na in zip(w, n))
        value = float(1 - scale * total)
    if not (-CDF_SLACK <= value <= 1 + CDF_SLACK):
        raise NumericalBreakdown(
            f"closed-form CDF evaluated to {value!r} for grouping {grouping.groups}"
        )
    return min(1.0, max(0.0, value))


def _product_derivatives(poles: Sequence[tuple], x, order: int) -> list:
    """Derivatives 0..order of f(x) = prod (c + x)^(-n) over ``poles``.

    Uses f' = f g with g = sum -n / (c + x), so that
    f^(k+1) = sum_i C(k, i) f^(k-i) g^(i).
    """
    f0 = mpmath.fprod((cp + x) ** (-npow) for cp, npow in poles)
    g = []
    for i in range(order):
        # g^(i)(x) = sum -n (-1)^i i! (c + x)^-(i+1)
        sgn = -1 if i % 2 else 1
        g.append(
            mpmath.fsum(-npow * sgn * mpmath.factorial(i) * (cp + x) ** (-(i + 1)) for cp, npow in poles)
        )
    f = [f0]
    for k in range(order):
        f.append(mpmath.fsum(mpmath.binomial(k, i) * f[k - i] * g[i] for i in range(k + 1)))
    return f


@lru_cache(maxsize=None)
def _idle_probability_cached(k: int, members: tuple[int, ...], topo: NetworkTopology) -> float:
    level = topo.theta - topo.N_0
    if not members:
        return 1.0
    if topo.fading == "deterministic":
        power = math.fsum(pathloss(topo.distance(k, x), topo) for x in members)
        return 1.0 if power + topo.N_0 <= topo.theta else 0.0
    return weighted_exponential_cdf(group_distances(k, members, topo), level)


def idle_probability(k: int, T: Iterable[int], topo: NetworkTopology) -> float:
    """Probability that station ``k`` senses the channel idle while ``T`` is active.

    Under Rayleigh fading this is the CDF of the fading-weighted interference
    at ``theta - N_0``; in deterministic mode it is the indicator of the
    threshold inequality on the mean received power.
    """
    return _idle_probability_cached(k, _active_set(k, T, topo), topo)


def anomalous_probability(p_R: float, p_J: float, p_idle: float) -> float:
    """Transmission probability of a random reactive jammer."""
    for name, v in (("p_R", p_R), ("p_J", p_J), ("p_idle", p_idle)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return p_R * p_idle + p_J * (1.0 - p_idle)
