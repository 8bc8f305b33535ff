"""Brute-force cross-checks of the analytic machinery.

Each check compares a closed-form quantity against an independent
computation (sampling, matrix powers, power iteration or grid search) and
records both values, the tolerance and the verdict.
"""
from __future__ import annotations

import math

import numpy as np

from .chains import group_inverse, spectral_decompose
from .channel import group_distances, idle_probability
from .config import Scenario
from .detector import statistic_moments, supervised_spec
from .errors import InfeasibleError
from .ldp import JammerDesign, JammerFamily, grid_search_strategy, optimize_strategy
from .simulation import score_paths, simulate_paths

__all__ = ["mc_oracles", "sample_idle_probability"]

K_STEPS = (1, 5, 50)


def _entry(name, quantity, value, reference, tolerance, passed, **extra):
    out = {
        "name": name, "quantity": quantity, "value": float(value), "reference": float(reference),
        "tolerance": float(tolerance), "passed": bool(passed),
    }
    out.update(extra)
    return out


def sample_idle_probability(k, T, topo, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo estimate of the idle probability and its standard error."""
    grouping = group_distances(k, T, topo)
    w = np.repeat([g for g, _ in grouping.groups], [c for _, c in grouping.groups])
    power = rng.standard_exponential((n, w.size)) @ w
    hits = power <= topo.theta - topo.N_0
    p = float(hits.mean())
    return p, math.sqrt(max(p * (1 - p), 1.0 / n) / n)


def _cdf_checks(sc: Scenario, rng) -> list[dict]:
    topo = sc.topology
    if topo.fading != "rayleigh":
        return []
    m = topo.m
    cases = []
    for k in range(1, m + 1):
        others = [x for x in range(1, m + 1) if x != k]
        for size in (1, 2, 3):
            if size <= len(others):
                cases.append((k, tuple(others[:size])))
    out = []
    for k, T in cases[:8]:
        ref, se = sample_idle_probability(k, T, topo, sc.oracles.cdf_samples, rng)
        val = idle_probability(k, T, topo)
        out.append(_entry("channel_cdf", f"p_I({k},{set(T)})", val, ref, 3 * se, abs(val - ref) <= 3 * se))
    return out


def _chain_checks(family: JammerFamily, p) -> list[dict]:
    out = []
    for label, chain in (("compliant", family.compliant), ("rrj", family.chain(*p))):
        P, pi = chain.P, chain.pi
        # stationary distribution vs power iteration
        x = np.full(len(pi), 1.0 / len(pi))
        Pk = np.linalg.matrix_power(P, 1 << 16)
        x = x @ Pk
        err = float(np.max(np.abs(x - pi)))
        out.append(_entry("stationary", f"{label}: max|pi - power iteration|", err, 0.0, 1e-10, err <= 1e-10))
        sd = spectral_decompose(P)
        for t in K_STEPS:
            spec_t = (sd.U * sd.eigenvalues**t) @ sd.V
            err = float(np.max(np.abs(spec_t.real - np.linalg.matrix_power(P, t))))
            out.append(_entry("k_step", f"{label}: t={t} spectral vs matrix power", err, 0.0, 1e-8, err <= 1e-8))
        G = group_inverse(chain.Q, pi)
        Q = chain.Q
        err = max(float(np.max(np.abs(Q @ G @ Q - Q))), float(np.max(np.abs(G @ Q @ G - G))),
                  float(np.max(np.abs(Q @ G - G @ Q))))
        out.append(_entry("group_inverse", f"{label}: identity residual", err, 0.0, 1e-8, err <= 1e-8))
    return out


def _moment_checks(sc: Scenario, family: JammerFamily, p, threads: int) -> list[dict]:
    c0, c1 = family.compliant, family.chain(*p)
    spec = supervised_spec(c0, c1)
    W, n, seed = sc.oracles.W, sc.oracles.n, sc.experiment.seed
    mom = statistic_moments(spec, W)
    out = []
    for b, chain in ((0, c0), (1, c1)):
        z = score_paths(simulate_paths(chain, W, n, seed, b, threads), spec)
        mean, var = (mom.mean0, mom.var0) if b == 0 else (mom.mean1, mom.var1)
        se = float(z.std(ddof=1)) / math.sqrt(n)
        emp_mean = float(z.mean())
        out.append(_entry("moments", f"H{b}: mean of Z", mean, emp_mean, 3 * se, abs(mean - emp_mean) <= 3 * se))
        emp_var = float(z.var(ddof=1))
        tol = 0.1 * emp_var
        out.append(_entry("moments", f"H{b}: variance of Z", var, emp_var, tol, abs(var - emp_var) <= tol))
    return out


def _optimizer_checks(sc: Scenario, family: JammerFamily) -> list[dict]:
    expansion = family.expansion(sc.optimizer.expansion_point)
    out = []
    for tau in sc.optimizer.tau_eta:
        design = JammerDesign(tau, sc.optimizer.expansion_point, sc.optimizer.order)
        try:
            res = optimize_strategy(design, family, expansion)
        except InfeasibleError:
            continue
        grid = grid_search_strategy(design, family, expansion, sc.optimizer.grid_step)
        err = max(abs(res.p_R - grid.p_R), abs(res.p_J - grid.p_J))
        out.append(_entry("optimizer", f"tau_eta={tau:.6g}: solver vs grid search", err, 0.0, 0.01,
                          err <= 0.01, solver=[res.p_R, res.p_J], grid=[grid.p_R, grid.p_J]))
    return out


def mc_oracles(sc: Scenario, threads: int = 1) -> dict:
    """Run every oracle on the scenario; deterministic given the scenario seed."""
    rng = np.random.default_rng(np.random.SeedSequence(sc.experiment.seed, spawn_key=(7,)))
    family = JammerFamily(sc.topology, sc.lam, sc.gamma)
    p = (sc.jammer.p_R, sc.jammer.p_J)
    checks = []
    checks += _cdf_checks(sc, rng)
    checks += _chain_checks(family, p)
    checks += _moment_checks(sc, family, p, threads)
    checks += _optimizer_checks(sc, family)
    failures = [c for c in checks if not c["passed"]]
    return {
        "scenario": sc.source,
        "seed": sc.experiment.seed,
        "n_checks": len(checks),
        "n_failed": len(failures),
        "passed": not failures,
        "checks": checks,
    }
