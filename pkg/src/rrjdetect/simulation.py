"""Monte Carlo harness on the uniformized DTMC.

Every path has its own random stream, derived from ``(seed, hypothesis,
path index)``, so results do not depend on batching or thread scheduling.
"""
from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregation import (
    StatePartition,
    ideal_aggregate,
    intermediate_partition,
    simplified_partition,
)
from .chains import ChainModel, build_compliant, build_naive_rj, build_rrj, uniformization_rate
from .channel import NetworkTopology
from .detector import (
    SEMI_SUPERVISED,
    SUPERVISED,
    TestSpec,
    equal_error_rate,
    semi_supervised_spec,
    statistic_moments,
    supervised_spec,
)
from .errors import ConfigError

__all__ = [
    "ExperimentConfig",
    "EmpiricalROC",
    "ParetoPoint",
    "path_rng",
    "simulate_path",
    "simulate_paths",
    "score_paths",
    "empirical_error_rates",
    "empirical_roc",
    "hypothesis_chains",
    "aggregated_experiment",
    "pareto_frontier",
    "partition_for",
]

MODELS = ("full", "intermediate", "simplified")
DETECTORS = (SUPERVISED, SEMI_SUPERVISED)
ROC_POINTS = 512
BATCH = 256


def path_rng(seed: int, hypothesis: int, index: int) -> np.random.Generator:
    """Independent generator for one path."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(hypothesis, index)))


class _Sampler:
    """Inverse-CDF sampling restricted to each row's support."""

    def __init__(self, P: np.ndarray, pi: np.ndarray):
        P = np.asarray(P, dtype=float)
        n = P.shape[0]
        width = int(max(1, (P > 0).sum(axis=1).max()))
        self.support = np.zeros((n, width), dtype=np.int64)
        self.cum = np.ones((n, width))
        self.rows_py = []
        for i in range(n):
            idx = np.flatnonzero(P[i] > 0)
            c = np.cumsum(P[i, idx])
            c[-1] = 1.0
            self.support[i, : idx.size] = idx
            self.support[i, idx.size:] = idx[-1]
            self.cum[i, : idx.size] = c
            self.rows_py.append((c.tolist(), idx.tolist()))
        c0 = np.cumsum(pi)
        c0[-1] = 1.0
        self.init_cum = c0

    def initial(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.searchsorted(self.init_cum, u, side="right"), len(self.init_cum) - 1)

    def run_batch(self, U: np.ndarray) -> np.ndarray:
        """``U`` has shape ``(B, W + 1)``; column 0 draws the initial state."""
        B, L = U.shape
        Y = np.empty((B, L), dtype=np.int64)
        Y[:, 0] = self.initial(U[:, 0])
        if B < 16:
            for b in range(B):
                Y[b] = self._run_single(int(Y[b, 0]), U[b, 1:])
            return Y
        s = Y[:, 0]
        for t in range(1, L):
            k = (U[:, t, None] >= self.cum[s]).sum(axis=1)
            s = self.support[s, np.minimum(k, self.support.shape[1] - 1)]
            Y[:, t] = s
        return Y

    def _run_single(self, s: int, u: np.ndarray) -> list:
        out = [s]
        rows = self.rows_py
        for x in u.tolist():
            c, idx = rows[s]
            s = idx[min(bisect.bisect_right(c, x), len(idx) - 1)]
            out.append(s)
        return out


def simulate_path(chain, W: int, rng: np.random.Generator) -> np.ndarray:
    """One path of ``W`` transitions; initial state drawn from ``pi``."""
    if W < 1:
        raise ValueError("W must be at least 1")
    sampler = _Sampler(chain.P, chain.pi)
    return sampler.run_batch(rng.random((1, W + 1)))[0]


def simulate_paths(chain, W: int, n: int, seed: int, hypothesis: int = 0,
                   threads: int = 1, start: int = 0) -> np.ndarray:
    """``n`` independent paths as an ``(n, W + 1)`` array.

    Path ``i`` uses the stream ``(seed, hypothesis, start + i)``.
    """
    sampler = _Sampler(chain.P, chain.pi)
    out = np.empty((n, W + 1), dtype=np.int64)

    def work(lo):
        hi = min(n, lo + BATCH)
        U = np.stack([path_rng(seed, hypothesis, start + i).random(W + 1) for i in range(lo, hi)])
        out[lo:hi] = sampler.run_batch(U)

    _run(work, range(0, n, BATCH), threads)
    return out


def _run(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        for it in items:
            fn(it)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(fn, it) for it in items]:
            fut.result()


def _lifted(spec: TestSpec, partition: StatePartition | None) -> np.ndarray:
    """Coefficients indexed by full states (blocks expanded)."""
    l = np.array(spec.l, dtype=float)
    if spec.mode == SUPERVISED and spec.P1 is not None:
        l[(spec.P0 <= 0) & (spec.P1 <= 0)] = 0.0
    if partition is None:
        return l
    blk = partition.block_of
    return l[np.ix_(blk, blk)]


def score_paths(Y: np.ndarray, spec: TestSpec, partition: StatePartition | None = None) -> np.ndarray:
    """Statistic ``Z`` of each path (rows of ``Y``); ``+/-inf`` on forbidden transitions."""
    L = _lifted(spec, partition)
    W = Y.shape[1] - 1
    vals = L[Y[:, :-1], Y[:, 1:]]
    with np.errstate(invalid="ignore"):
        return vals.sum(axis=1) / W


def pooled_counts(Y: np.ndarray, n_states: int) -> np.ndarray:
    flat = Y[:, :-1] * n_states + Y[:, 1:]
    return np.bincount(flat.ravel(), minlength=n_states * n_states).reshape(n_states, n_states)


# ---------------------------------------------------------------------------
# Empirical error rates


@dataclass(frozen=True)
class EmpiricalROC:
    """Empirical error rates; ``thresholds`` are on the raw statistic ``Z``."""

    thresholds: np.ndarray
    far: np.ndarray
    mdr: np.ndarray
    eer: float
    xi_star: float
    n0: int
    n1: int

    @property
    def eer_stderr(self) -> float:
        e = min(max(self.eer, 1.0 / max(self.n0, self.n1)), 0.5)
        return math.sqrt(e * (1 - e) * (1.0 / self.n0 + 1.0 / self.n1) / 2.0)


def _rates(s0, s1, c):
    """Decide H1 iff oriented statistic >= c."""
    far = 1.0 - np.searchsorted(s0, c, side="left") / s0.size
    mdr = np.searchsorted(s1, c, side="left") / s1.size
    return far, mdr


def empirical_error_rates(z0: np.ndarray, z1: np.ndarray, orientation: int = 1,
                          n_points: int = ROC_POINTS) -> EmpiricalROC:
    """Empirical FAR/MDR curve and EER from statistics under H0 and H1.

    The EER is located over every distinct observed value; the returned
    curve uses all distinct values when there are at most ``n_points`` of
    them and ``n_points`` quantile-spaced thresholds otherwise.
    """
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    if np.isnan(z0).any() or np.isnan(z1).any():
        raise ValueError("statistics contain NaN")
    s0 = np.sort(orientation * z0)
    s1 = np.sort(orientation * z1)
    cand = np.unique(np.concatenate([s0, s1, [np.inf]]))
    far, mdr = _rates(s0, s1, cand)
    gap = np.abs(far - mdr)
    k = int(np.argmin(gap))
    eer = float((far[k] + mdr[k]) / 2.0)
    xi_star = float(orientation * cand[k])

    if cand.size > n_points:
        pooled = np.concatenate([s0, s1])
        finite = pooled[np.isfinite(pooled)]
        qs = np.quantile(finite, np.linspace(0.0, 1.0, n_points - 1)) if finite.size else np.array([])
        cand = np.unique(np.concatenate([qs, [np.inf]]))
        if np.isneginf(pooled).any():
            cand = np.concatenate([[-np.inf], cand])
        far, mdr = _rates(s0, s1, cand)
    order = np.lexsort((-mdr, far))
    thr = orientation * cand[order]
    return EmpiricalROC(thr, far[order], mdr[order], eer, xi_star, s0.size, s1.size)


# ---------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class ExperimentConfig:
    """One detection experiment.

    ``jammer`` is ``(p_R, p_J)``; with ``naive=True`` only ``p_J`` is used
    and the alternative is a naive reactive jammer.
    """

    topology: NetworkTopology
    lam: float = 0.5
    gamma: float = 1.0
    jammer: tuple[float, float] = (0.8, 0.2)
    W: int = 1000
    n: int = 10_000
    seed: int = 0
    model: str = "full"
    detector: str = SUPERVISED
    naive: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.W < 2:
            raise ConfigError("W must be at least 2")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.detector not in DETECTORS:
            raise ConfigError(f"detector must be one of {DETECTORS}, got {self.detector!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def hypothesis_chains(cfg: ExperimentConfig) -> tuple[ChainModel, ChainModel]:
    """Compliant and jammer chains on a shared uniformization rate."""
    u = uniformization_rate(cfg.topology, cfg.lam, cfg.gamma)
    c0 = build_compliant(cfg.topology, cfg.lam, cfg.gamma, u=u)
    if cfg.naive:
        c1 = build_naive_rj(cfg.topology, cfg.lam, cfg.gamma, cfg.jammer[1], u=u)
    else:
        c1 = build_rrj(cfg.topology, cfg.lam, cfg.gamma, *cfg.jammer, u=u)
    return c0, c1


def partition_for(model: str, space) -> StatePartition | None:
    if model == "full":
        return None
    if model == "intermediate":
        return intermediate_partition(space)
    if model == "simplified":
        return simplified_partition(space)
    raise ConfigError(f"unknown model {model!r}")


def _spec(h0, h1, detector: str) -> TestSpec:
    if detector == SUPERVISED:
        return supervised_spec(h0, h1)
    return semi_supervised_spec(h0, h1)


def _model_spec(c0, c1, model, detector, clock="full"):
    part = partition_for(model, c0.space)
    if part is None:
        return _spec(c0, c1, detector), None
    u = None
    if clock == "fresh":
        # Rebuild each aggregate on its own 1.1 x max exit rate.
        a0, a1 = ideal_aggregate(c0, part), ideal_aggregate(c1, part)
        a0 = ideal_aggregate(c0, part, u=1.1 * float(np.max(-np.diag(a0.Q_hat))))
        a1 = ideal_aggregate(c1, part, u=1.1 * float(np.max(-np.diag(a1.Q_hat))))
        return _spec((a0.P, a0.pi), (a1.P, a1.pi), detector), part
    a0, a1 = ideal_aggregate(c0, part, u), ideal_aggregate(c1, part, u)
    return _spec((a0.P, a0.pi), (a1.P, a1.pi), detector), part


def _analytic(spec: TestSpec, W: int) -> dict:
    mom = statistic_moments(spec, W)
    if mom.singular:
        return {"singular": True, "eer": 0.0, "xi_star": None, "moments": mom.as_dict()}
    eer, xi = equal_error_rate(mom)
    return {"singular": False, "eer": eer, "xi_star": xi, "moments": mom.as_dict()}


def empirical_roc(cfg: ExperimentConfig, paths: tuple[np.ndarray, np.ndarray] | None = None) -> dict:
    """Monte Carlo ROC and EER of the configured detector, with the analytic cross-check.

    Returns a dict with ``roc`` (:class:`EmpiricalROC`), ``z0``/``z1`` and
    ``analytic`` (Gaussian moments and EER, or the singular flag).
    """
    c0, c1 = hypothesis_chains(cfg)
    spec, part = _model_spec(c0, c1, cfg.model, cfg.detector)
    if paths is None:
        paths = (simulate_paths(c0, cfg.W, cfg.n, cfg.seed, 0, cfg.threads),
                 simulate_paths(c1, cfg.W, cfg.n, cfg.seed, 1, cfg.threads))
    z0 = score_paths(paths[0], spec, part)
    z1 = score_paths(paths[1], spec, part)
    roc = empirical_error_rates(z0, z1, spec.orientation)
    return {"roc": roc, "z0": z0, "z1": z1, "analytic": _analytic(spec, cfg.W),
            "spec": spec, "chains": (c0, c1)}


def aggregated_experiment(cfg: ExperimentConfig, models: Sequence[str] = MODELS,
                          clock: str = "full") -> dict[str, dict]:
    """Run one set of full-model paths through every observation model.

    ``clock`` selects how aggregate chains are uniformized: ``"full"`` (the
    full model's rate, matching how the aggregated path is observed) or
    ``"fresh"`` (each aggregate's own rate).
    """
    if clock not in ("full", "fresh"):
        raise ConfigError(f"clock must be 'full' or 'fresh', got {clock!r}")
    c0, c1 = hypothesis_chains(cfg)
    Y0 = simulate_paths(c0, cfg.W, cfg.n, cfg.seed, 0, cfg.threads)
    Y1 = simulate_paths(c1, cfg.W, cfg.n, cfg.seed, 1, cfg.threads)
    out = {}
    for model in models:
        spec, part = _model_spec(c0, c1, model, cfg.detector, clock)
        z0, z1 = score_paths(Y0, spec, part), score_paths(Y1, spec, part)
        out[model] = {
            "roc": empirical_error_rates(z0, z1, spec.orientation),
            "analytic": _analytic(spec, cfg.W),
            "clock": clock,
        }
    return out


# ---------------------------------------------------------------------------
# Pareto analysis


@dataclass(frozen=True)
class ParetoPoint:
    p_R: float
    p_J: float
    eta: float
    eer: float
    model: str = "full"


def _segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + s * ab)))


def pareto_frontier(points: Sequence[ParetoPoint]) -> tuple[list[bool], list[float]]:
    """Non-dominated flags under (eta up, EER up) and distances to the frontier.

    Distances are measured in min-max normalized ``(eta, EER)`` coordinates
    to the polyline through the frontier points sorted by ``eta``.
    """
    if not points:
        raise ValueError("empty grid")
    X = np.array([[p.eta, p.eer] for p in points], dtype=float)
    n = len(points)
    on = []
    for i in range(n):
        dominated = np.any(np.all(X >= X[i], axis=1) & np.any(X > X[i], axis=1))
        on.append(not bool(dominated))
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Z = (X - lo) / span
    front = Z[np.array(on)]
    front = front[np.lexsort((-front[:, 1], front[:, 0]))]
    dist = []
    for i in range(n):
        if on[i]:
            dist.append(0.0)
        elif len(front) == 1:
            dist.append(float(np.linalg.norm(Z[i] - front[0])))
        else:
            dist.append(min(_segment_distance(Z[i], front[k], front[k + 1]) for k in range(len(front) - 1)))
    return on, dist
