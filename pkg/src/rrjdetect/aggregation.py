"""Aggregated observation models: partitions, lumpability and ideal aggregation.

Two partitions of the full state space model what a coarser observer sees:

* intermediate: ``(C, X)`` = (number of active stations, SUT bit);
* simplified: four blocks ``S0 = {{}}``, ``S1 = {{1}}``, ``S2`` (SUT idle,
  some other station active) and ``S3`` (SUT active together with another
  station).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chains import ChainModel, StateSpace, stationary_distribution
from .channel import NetworkTopology, idle_probability
from .errors import ConfigError

__all__ = [
    "StatePartition",
    "LumpabilityResult",
    "AggregatedChain",
    "identity_partition",
    "intermediate_partition",
    "simplified_partition",
    "is_strongly_lumpable",
    "ideal_aggregate",
    "aggregate_counts",
    "jamming_efficiency_aggregated",
    "simplified_rate_table",
    "simplified_rate_matrix",
    "dump_aggregated",
    "aggregated_to_dict",
]

SIMPLIFIED_LABELS = ("S0", "S1", "S2", "S3")
LUMP_TOL = 1e-12


@dataclass(eq=False)
class StatePartition:
    """Disjoint, exhaustive blocks of full-state indices."""

    space: StateSpace
    blocks: tuple[np.ndarray, ...]
    labels: tuple[str, ...]
    kind: str = "custom"
    block_of: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.space)
        if len(self.blocks) != len(self.labels):
            raise ValueError("one label per block required")
        owner = np.full(n, -1, dtype=np.int64)
        for b, members in enumerate(self.blocks):
            members = np.asarray(members, dtype=np.int64)
            if members.size == 0:
                raise ValueError(f"block {self.labels[b]} is empty")
            if np.any(owner[members] >= 0):
                raise ValueError("blocks overlap")
            owner[members] = b
        if np.any(owner < 0):
            raise ValueError("blocks do not cover the state space")
        self.blocks = tuple(np.asarray(b, dtype=np.int64) for b in self.blocks)
        self.block_of = owner

    def __len__(self):
        return len(self.blocks)

    def map_path(self, path) -> np.ndarray:
        """Block index of every state of a full-model path."""
        return self.block_of[np.asarray(path, dtype=np.int64)]

    def block_sums(self, x) -> np.ndarray:
        """Sum a per-state vector over each block."""
        return np.bincount(self.block_of, weights=np.asarray(x, dtype=float), minlength=len(self))

    def indicator_matrix(self) -> np.ndarray:
        """``n_states x n_blocks`` membership matrix."""
        E = np.zeros((len(self.space), len(self)))
        E[np.arange(len(self.space)), self.block_of] = 1.0
        return E


def identity_partition(space: StateSpace) -> StatePartition:
    blocks = tuple(np.array([i]) for i in range(len(space)))
    return StatePartition(space, blocks, tuple(space.label(i) for i in range(len(space))), "full")


def intermediate_partition(space: StateSpace) -> StatePartition:
    """Blocks keyed by ``(C, X)``, ordered by ``C`` then ``X``."""
    if space.m < 2:
        raise ConfigError("aggregated models need m >= 2")
    keys = sorted({(len(T), int(1 in T)) for T in space.states})
    blocks = []
    for key in keys:
        blocks.append(np.array([i for i, T in enumerate(space.states) if (len(T), int(1 in T)) == key]))
    labels = tuple(f"({c},{x})" for c, x in keys)
    return StatePartition(space, tuple(blocks), labels, "intermediate")


def simplified_partition(space: StateSpace) -> StatePartition:
    """The four blocks ``S0..S3``."""
    if space.m < 2:
        raise ConfigError("aggregated models need m >= 2")
    members = [[], [], [], []]
    for i, T in enumerate(space.states):
        if not T:
            members[0].append(i)
        elif T == {1}:
            members[1].append(i)
        elif 1 not in T:
            members[2].append(i)
        else:
            members[3].append(i)
    return StatePartition(space, tuple(np.array(b) for b in members), SIMPLIFIED_LABELS, "simplified")


@dataclass(frozen=True)
class LumpabilityResult:
    lumpable: bool
    witness: Optional[dict] = None

    def __bool__(self):
        return self.lumpable


def is_strongly_lumpable(chain, partition: StatePartition, tol: float = LUMP_TOL) -> LumpabilityResult:
    """Check that every state of a block has the same total rate into each other block.

    Blocks are scanned in order; the first offending ``(source, target)``
    pair is returned as a witness together with the two states and their
    row-block sums.  (Agreement into every other block implies agreement
    into the own block, since generator rows sum to zero.)
    """
    Q = np.asarray(chain.Q if isinstance(chain, ChainModel) else chain, dtype=float)
    R = Q @ partition.indicator_matrix()
    scale = max(1.0, float(np.max(np.abs(Q))))
    for s, members in enumerate(partition.blocks):
        if members.size < 2:
            continue
        ref = members[0]
        for t in range(len(partition)):
            if t == s:
                continue
            diff = np.abs(R[members, t] - R[ref, t])
            bad = np.flatnonzero(diff > tol * scale)
            if bad.size:
                j = int(members[bad[0]])
                return LumpabilityResult(False, {
                    "source": partition.labels[s], "target": partition.labels[t],
                    "i": int(ref), "j": j,
                    "state_i": partition.space.label(int(ref)), "state_j": partition.space.label(j),
                    "sum_i": float(R[ref, t]), "sum_j": float(R[j, t]),
                })
    return LumpabilityResult(True)


@dataclass(eq=False)
class AggregatedChain:
    """Ideal aggregate of a full chain over a partition.

    ``u`` defaults to the full chain's uniformization rate so that the
    aggregated DTMC describes the full-model path observed through the
    partition on the same clock.
    """

    partition: StatePartition
    Q_hat: np.ndarray
    u: float
    source: ChainModel = field(repr=False)
    pi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.Q_hat = np.asarray(self.Q_hat, dtype=float)
        max_exit = float(np.max(-np.diag(self.Q_hat)))
        if self.u < max_exit:
            raise ValueError(f"uniformization rate {self.u} below max exit rate {max_exit}")
        self.pi = stationary_distribution(self.Q_hat)
        self.Q_hat.setflags(write=False)
        self.pi.setflags(write=False)

    @property
    def Q(self) -> np.ndarray:
        return self.Q_hat

    @property
    def P(self) -> np.ndarray:
        P = np.eye(len(self.partition)) + self.Q_hat / self.u
        P[P < 0] = 0.0
        return P

    @property
    def kind(self) -> str:
        return self.source.kind

    @property
    def jammer(self):
        return self.source.jammer


def ideal_aggregate(chain: ChainModel, partition: StatePartition, u: float | None = None) -> AggregatedChain:
    """``q_hat[B, B'] = sum_{T in B} pi_T sum_{T' in B'} q[T, T'] / sum_{T in B} pi_T``."""
    if partition.space != chain.space:
        raise ValueError("partition and chain live on different state spaces")
    E = partition.indicator_matrix()
    pi = np.asarray(chain.pi)
    mass = E.T @ pi
    Q_hat = (E.T @ (pi[:, None] * chain.Q) @ E) / mass[:, None]
    off = ~np.eye(len(partition), dtype=bool)
    Q_hat = np.where(off, np.maximum(Q_hat, 0.0), 0.0)
    np.fill_diagonal(Q_hat, -Q_hat.sum(axis=1))
    return AggregatedChain(partition, Q_hat, float(chain.u if u is None else u), chain)


def aggregate_counts(N: np.ndarray, partition: StatePartition) -> np.ndarray:
    """Block transition counts; moves inside a block count as block self-loops."""
    E = partition.indicator_matrix()
    return np.rint(E.T @ np.asarray(N, dtype=float) @ E).astype(np.int64)


def _collision_blocks(partition: StatePartition) -> np.ndarray:
    t = partition.space.collision_indicator
    t_hat = partition.block_sums(t) / np.bincount(partition.block_of, minlength=len(partition))
    if np.any((t_hat > 0) & (t_hat < 1)):
        raise ValueError("partition mixes collision and non-collision states")
    return t_hat


def jamming_efficiency_aggregated(full: tuple[ChainModel, ChainModel],
                                  agg: tuple[AggregatedChain, AggregatedChain]) -> tuple[float, float]:
    """``eta`` of the full chains and of their ideal aggregates."""
    t = full[0].space.collision_indicator
    eta_full = float(full[1].pi @ t) / float(full[0].pi @ t)
    t_hat = _collision_blocks(agg[0].partition)
    eta_agg = float(agg[1].pi @ t_hat) / float(agg[0].pi @ t_hat)
    return eta_full, eta_agg


def simplified_rate_table(chain: ChainModel, topo: NetworkTopology) -> dict[str, float]:
    """Simplified-model rates from the closed-form convenience parameters.

    Keys are ``"SX,S'X'"`` pairs.  The two departures of a compliant station
    (``10 -> 00`` and ``11 -> 01``) scale with the service rate ``gamma``.
    """
    space = chain.space
    pi = np.asarray(chain.pi)
    lam, gamma = chain.lambda_rate, chain.gamma
    part = simplified_partition(space)
    S2, S3 = part.blocks[2], part.blocks[3]
    sizes = space.sizes
    # Rate at which the SUT joins each state, read off the chain itself so
    # that compliant, naive and jammer chains are all covered.
    join = np.array([chain.Q[i, i | 1] if not (i & 1) else 0.0 for i in range(len(space))])
    beta_01_11 = sum(idle_probability(k, {1}, topo) for k in range(2, space.m + 1))
    beta_10_00 = float(pi[S2] @ (sizes[S2] == 1)) / float(pi[S2].sum())
    beta_10_11 = float(pi[S2] @ (join[S2] / lam)) / float(pi[S2].sum())
    beta_11_01 = float(pi[S3] @ (sizes[S3] == 2)) / float(pi[S3].sum())
    return {
        # (m - 1) lam, since every station senses an empty channel as idle
        "00,10": lam * sum(idle_probability(k, set(), topo) for k in range(2, space.m + 1)),
        "10,00": beta_10_00 * gamma,
        "00,01": join[0],
        "01,00": gamma,
        "01,11": beta_01_11 * lam,
        "11,01": beta_11_01 * gamma,
        "10,11": beta_10_11 * lam,
        "11,10": gamma,
        "_beta": {"01,11": beta_01_11, "10,00": beta_10_00, "10,11": beta_10_11, "11,01": beta_11_01},
    }


_SX_INDEX = {"00": 0, "01": 1, "10": 2, "11": 3}


def simplified_rate_matrix(table: dict) -> np.ndarray:
    """Generator over ``(S0, S1, S2, S3)`` assembled from :func:`simplified_rate_table`."""
    Q = np.zeros((4, 4))
    for key, rate in table.items():
        if key.startswith("_"):
            continue
        a, b = key.split(",")
        Q[_SX_INDEX[a], _SX_INDEX[b]] = rate
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def aggregated_to_dict(agg: AggregatedChain, extra: dict | None = None) -> dict:
    """Same schema as a full-chain export, plus block metadata."""
    part = agg.partition
    out = {
        "kind": agg.kind,
        "model": part.kind,
        "m": part.space.m,
        "states": list(part.labels),
        "blocks": {lab: [part.space.label(int(i)) for i in blk] for lab, blk in zip(part.labels, part.blocks)},
        "lambda": agg.source.lambda_rate,
        "gamma": agg.source.gamma,
        "u": agg.u,
        "jammer": list(agg.jammer) if agg.jammer is not None else None,
        "Q": agg.Q_hat.tolist(),
        "P": agg.P.tolist(),
        "pi": agg.pi.tolist(),
    }
    if extra:
        out.update(extra)
    return out


def dump_aggregated(agg: AggregatedChain, path, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(aggregated_to_dict(agg, extra), fh, indent=1)
        fh.write("\n")
