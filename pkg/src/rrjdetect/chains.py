"""Full-observability CTMCs of the CSMA network and their uniformized DTMCs.

State ``T`` (the set of active stations) has index ``sum(2**(k-1) for k in T)``,
so bit ``k-1`` is set iff station ``k`` is transmitting.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from .channel import NetworkTopology, anomalous_probability, idle_probability
from .errors import ConfigError, NonErgodicError, SpectralError

__all__ = [
    "StateSpace",
    "ChainModel",
    "SpectralData",
    "build_compliant",
    "build_rrj",
    "build_naive_rj",
    "rrj_rate_derivatives",
    "uniformization_rate",
    "stationary_distribution",
    "spectral_decompose",
    "group_inverse",
    "chain_to_dict",
    "chain_from_dict",
    "dump_chain",
    "MAX_STATIONS",
    "UNIFORMIZATION_FACTOR",
]

MAX_STATIONS = 12
UNIFORMIZATION_FACTOR = 1.1
EIGEN_GAP_TOL = 1e-9


class StateSpace:
    """All subsets of ``{1..m}`` in binary-encoding order."""

    def __init__(self, m: int):
        if m < 1:
            raise ConfigError("m must be at least 1")
        if m > MAX_STATIONS:
            raise ConfigError(f"m = {m} exceeds the dense-model cap of {MAX_STATIONS} stations")
        self.m = m
        self.size = 2**m
        self.states = tuple(
            frozenset(k + 1 for k in range(m) if (idx >> k) & 1) for idx in range(self.size)
        )

    @staticmethod
    def index(T) -> int:
        return sum(1 << (k - 1) for k in set(T))

    def label(self, idx: int) -> str:
        T = self.states[idx]
        return "{" + ",".join(str(k) for k in sorted(T)) + "}" if T else "{}"

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([len(T) for T in self.states])

    @cached_property
    def has_sut(self) -> np.ndarray:
        return np.array([1 in T for T in self.states])

    @cached_property
    def collision_indicator(self) -> np.ndarray:
        """Indicator of states where the SUT collides with another station."""
        return (self.has_sut & (self.sizes > 1)).astype(float)

    def __len__(self):
        return self.size

    def __eq__(self, other):
        return isinstance(other, StateSpace) and other.m == self.m

    def __hash__(self):
        return hash(("StateSpace", self.m))

    def __repr__(self):
        return f"StateSpace(m={self.m})"


@dataclass(eq=False)
class ChainModel:
    """A labelled CTMC with its uniformized DTMC ``P = I + Q/u``."""

    kind: str
    space: StateSpace
    Q: np.ndarray
    u: float
    lambda_rate: float
    gamma: float
    jammer: Optional[tuple[float, float]] = None
    pi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        n = len(self.space)
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(n, n)}")
        max_exit = float(np.max(-np.diag(self.Q))) if n else 0.0
        if self.u < max_exit:
            raise ValueError(f"uniformization rate {self.u} below max exit rate {max_exit}")
        self.pi = stationary_distribution(self.Q)
        self.Q.setflags(write=False)
        self.pi.setflags(write=False)

    @cached_property
    def P(self) -> np.ndarray:
        P = np.eye(len(self.space)) + self.Q / self.u
        P[P < 0] = 0.0  # rounding on the diagonal only
        P.setflags(write=False)
        return P

    @property
    def d(self) -> int:
        return len(self.space) - 1


def _check_rates(lam: float, gamma: float) -> None:
    if not (lam > 0 and gamma > 0):
        raise ConfigError(f"rates must be positive (lambda={lam}, gamma={gamma})")


def _generator(topo, lam, gamma, sut_rate) -> np.ndarray:
    """Assemble Q given a callable for the rate at which station 1 joins ``T``."""
    space = StateSpace(topo.m)
    n = space.size
    Q = np.zeros((n, n))
    for i, T in enumerate(space.states):
        for k in range(1, topo.m + 1):
            bit = 1 << (k - 1)
            if k in T:
                Q[i, i ^ bit] = gamma
            elif k == 1:
                Q[i, i | bit] = sut_rate(T)
            else:
                Q[i, i | bit] = lam * idle_probability(k, T, topo)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def uniformization_rate(topo: NetworkTopology, lam: float, gamma: float) -> float:
    """Uniformization rate shared by every chain built on this topology.

    ``1.1`` times the largest exit rate any chain (compliant, naive or random
    reactive jammer with any ``(p_R, p_J)``) can have, obtained by letting the
    SUT join at the full sensing rate ``lam``.  A common rate keeps ``P^0`` and
    ``P^1`` on the same observation clock and makes ``P^1`` affine in the
    jammer parameters.
    """
    envelope = _generator(topo, lam, gamma, lambda T: lam)
    return UNIFORMIZATION_FACTOR * float(np.max(-np.diag(envelope)))


def _finish(kind, topo, Q, lam, gamma, u, jammer=None) -> ChainModel:
    if u is None:
        u = uniformization_rate(topo, lam, gamma)
    return ChainModel(kind, StateSpace(topo.m), Q, float(u), lam, gamma, jammer)


def build_compliant(topo: NetworkTopology, lam: float, gamma: float, u: float | None = None) -> ChainModel:
    """CTMC of a network where every station, the SUT included, obeys carrier sensing."""
    _check_rates(lam, gamma)
    Q = _generator(topo, lam, gamma, lambda T: lam * idle_probability(1, T, topo))
    return _finish("compliant", topo, Q, lam, gamma, u)


def build_rrj(
    topo: NetworkTopology, lam: float, gamma: float, p_R: float, p_J: float, u: float | None = None
) -> ChainModel:
    """CTMC with a random reactive jammer as station 1.

    Station 1 joins ``T`` at rate ``lam * p_A(1, T)``; all other transitions
    are those of the compliant chain.  ``(p_R, p_J) = (1, 0)`` reproduces the
    compliant generator exactly.
    """
    _check_rates(lam, gamma)
    for name, v in (("p_R", p_R), ("p_J", p_J)):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1], got {v}")
    Q = _generator(
        topo, lam, gamma,
        lambda T: lam * anomalous_probability(p_R, p_J, idle_probability(1, T, topo)),
    )
    return _finish("rrj", topo, Q, lam, gamma, u, (float(p_R), float(p_J)))


def build_naive_rj(
    topo: NetworkTopology, lam: float, gamma: float, p_J: float, u: float | None = None
) -> ChainModel:
    """CTMC with a naive reactive jammer as station 1.

    The jammer only reacts to a busy channel, so the ``{} -> {1}`` rate is
    zero.  The result is usually still ergodic (``{1}`` is reached when the
    other stations leave), but its support differs from the compliant chain,
    which makes the detection problem singular.
    """
    _check_rates(lam, gamma)
    if not 0.0 < p_J <= 1.0:
        raise ConfigError(f"p_J must lie in (0, 1], got {p_J}")
    Q = _generator(
        topo, lam, gamma,
        lambda T: lam * p_J * (1.0 - idle_probability(1, T, topo)),
    )
    return _finish("naive_rj", topo, Q, lam, gamma, u, (0.0, float(p_J)))


def rrj_rate_derivatives(topo: NetworkTopology, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant matrices ``dQ/dp_R`` and ``dQ/dp_J`` of the jammer generator."""
    space = StateSpace(topo.m)
    n = space.size
    dR = np.zeros((n, n))
    dJ = np.zeros((n, n))
    for i, T in enumerate(space.states):
        if 1 in T:
            continue
        p_idle = idle_probability(1, T, topo)
        j = i | 1
        dR[i, j], dR[i, i] = lam * p_idle, -lam * p_idle
        dJ[i, j], dJ[i, i] = lam * (1.0 - p_idle), -lam * (1.0 - p_idle)
    return dR, dJ


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Stationary row vector of an ergodic generator.

    Direct solve by Grassmann-Taksar-Heyman elimination, which never
    subtracts and so keeps full relative accuracy on tiny probabilities.

    Raises
    ------
    NonErgodicError
        If some state cannot reach, or cannot be reached from, the others.
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if n == 1:
        return np.ones(1)
    A = Q.copy()
    np.fill_diagonal(A, 0.0)
    if np.any(A < 0):
        raise ValueError("generator has negative off-diagonal rates")
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0.0:
            raise NonErgodicError(f"state {k} cannot reach lower-indexed states; chain is reducible")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    if not np.all(pi > 0):
        raise NonErgodicError("stationary distribution has zero entries (transient states)")
    pi /= pi.sum()
    scale = max(1.0, float(np.max(np.abs(Q))))
    resid = float(np.max(np.abs(pi @ Q)))
    if resid > 1e-12 * scale:
        raise NonErgodicError(f"stationary residual {resid:.3g} too large")
    return pi


@dataclass(eq=False)
class SpectralData:
    """Eigen-structure of an ergodic transition matrix ``P = U diag(w) V``.

    Index 0 holds the unit eigenvalue, with ``U[:, 0]`` all ones and
    ``V[0]`` equal to the stationary distribution.
    """

    eigenvalues: np.ndarray
    U: np.ndarray
    V: np.ndarray
    lambda_1: complex
    c: np.ndarray

    @property
    def gap(self) -> float:
        return abs(1 - self.lambda_1)


def spectral_decompose(P: np.ndarray) -> SpectralData:
    """Eigen-decomposition used by the variance bounds.

    ``c[j, i] = sum_{r >= 1} |U[j, r] V[r, i]|`` and ``lambda_1`` is the
    non-unit eigenvalue closest to 1.

    Raises
    ------
    SpectralError
        If two eigenvalues coincide within ``1e-9`` (the bounds then do not
        apply; exact moments are still available).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    w, U = scipy.linalg.eig(P)
    order = np.argsort(np.abs(1 - w), kind="stable")
    w, U = w[order], U[:, order]
    if n > 1:
        diffs = np.abs(w[:, None] - w[None, :])
        np.fill_diagonal(diffs, np.inf)
        if np.min(diffs) < EIGEN_GAP_TOL:
            raise SpectralError("transition matrix has repeated eigenvalues")
    U[:, 0] = U[:, 0] / U[0, 0]
    V = np.linalg.inv(U)
    c = np.zeros((n, n))
    if n > 1:
        c = np.abs(U[:, 1:]) @ np.abs(V[1:, :])
    lam1 = complex(w[1]) if n > 1 else complex(1.0)
    return SpectralData(w, U, V, lam1, c)


def group_inverse(Q: np.ndarray, pi: np.ndarray | None = None) -> np.ndarray:
    """Group inverse ``Q^#`` of an ergodic generator.

    ``Q^# = 1 pi - (1 pi - Q)^{-1}``.
    """
    Q = np.asarray(Q, dtype=float)
    if pi is None:
        pi = stationary_distribution(Q)
    n = Q.shape[0]
    Pi = np.outer(np.ones(n), pi)
    try:
        inv = np.linalg.inv(Pi - Q)
    except np.linalg.LinAlgError:
        raise NonErgodicError("1 pi - Q is singular; chain is not ergodic") from None
    return Pi - inv


def chain_to_dict(chain: ChainModel, extra: dict | None = None) -> dict:
    """JSON-ready export of a chain (labels, Q, P, pi)."""
    out = {
        "kind": chain.kind,
        "m": chain.space.m,
        "states": [chain.space.label(i) for i in range(len(chain.space))],
        "lambda": chain.lambda_rate,
        "gamma": chain.gamma,
        "u": chain.u,
        "jammer": list(chain.jammer) if chain.jammer is not None else None,
        "Q": chain.Q.tolist(),
        "P": chain.P.tolist(),
        "pi": chain.pi.tolist(),
    }
    if extra:
        out.update(extra)
    return out


def chain_from_dict(doc: dict) -> ChainModel:
    jammer = doc.get("jammer")
    return ChainModel(
        doc["kind"], StateSpace(int(doc["m"])), np.array(doc["Q"], dtype=float), float(doc["u"]),
        float(doc["lambda"]), float(doc["gamma"]), tuple(jammer) if jammer is not None else None,
    )


def dump_chain(chain: ChainModel, path, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(chain_to_dict(chain, extra), fh, indent=1)
        fh.write("\n")
