"""Undirected connected communication graphs and their mixing matrices.

The mixing matrix follows the lazy Metropolis construction: for an edge
(i, j) the weight is 1/(2 max(deg_i, deg_j)), the diagonal absorbs the
remainder. The result is symmetric, doubly stochastic, and positive
semidefinite, so its second-largest eigenvalue sigma2 controls the
consensus contraction rate through the spectral gap 1 - sigma2.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GraphSamplingError, MixingError

STOCHASTICITY_TOL = 1e-12
EIGEN_TOL = 1e-10


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected connected graph on agents 0..n-1.

    ``edges`` holds each undirected edge once as (i, j) with i < j;
    ``neighbor_lists`` is the per-agent sorted adjacency.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    neighbor_lists: tuple[tuple[int, ...], ...]

    @classmethod
    def from_edges(cls, n: int, edges) -> "NetworkTopology":
        """Build and validate a topology from an iterable of agent pairs."""
        if n < 1:
            raise ValueError("agent count must be positive")
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on agent {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
            canon.add((min(i, j), max(i, j)))
        ordered = tuple(sorted(canon))
        neighbors = [[] for _ in range(n)]
        for i, j in ordered:
            neighbors[i].append(j)
            neighbors[j].append(i)
        topo = cls(n, ordered, tuple(tuple(sorted(ns)) for ns in neighbors))
        if not topo.is_connected():
            raise ValueError("graph is not connected")
        return topo

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        seen = [False] * self.n
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in self.neighbor_lists[i]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        return all(seen)

    def degree(self, i: int) -> int:
        return len(self.neighbor_lists[i])

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic averaging weights with cached sigma2."""

    entries: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def validate(self, topology: NetworkTopology | None = None) -> None:
        """Assert the doubly stochastic / symmetry / support invariants."""
        a = self.entries
        if not np.allclose(a, a.T, atol=0, rtol=0):
            raise MixingError("mixing matrix is not symmetric")
        if np.abs(a.sum(axis=0) - 1.0).max() > STOCHASTICITY_TOL:
            raise MixingError("column sums deviate from 1")
        if np.abs(a.sum(axis=1) - 1.0).max() > STOCHASTICITY_TOL:
            raise MixingError("row sums deviate from 1")
        if a.min() < 0.0 or a.max() > 1.0:
            raise MixingError("entries outside [0, 1]")
        if topology is not None:
            allowed = np.eye(self.n, dtype=bool)
            for i, j in topology.edges:
                allowed[i, j] = allowed[j, i] = True
            if np.any(a[~allowed] != 0.0):
                raise MixingError("nonzero weight on a non-edge")
        if self.sigma2 >= 1.0 - STOCHASTICITY_TOL:
            raise MixingError("disconnected or periodic mixing")


def generate_random_connected_graph(
    n: int,
    edge_probability: float,
    seed: int,
    retry_limit: int = 1000,
) -> NetworkTopology:
    """Sample a connected Erdos-Renyi graph, resampling whole graphs until connected.

    Deterministic for fixed (n, edge_probability, seed). Raises
    GraphSamplingError after ``retry_limit`` failed attempts.
    """
    if n < 2:
        raise ValueError("need at least 2 agents")
    if not (0.0 < edge_probability <= 1.0):
        raise ValueError("edge probability must be in (0, 1]")
    rng = np.random.default_rng(seed)
    for _ in range(retry_limit):
        mask = rng.random((n, n)) < edge_probability
        iu = np.triu_indices(n, k=1)
        pairs = [(int(i), int(j)) for i, j in zip(*iu) if mask[i, j]]
        try:
            return NetworkTopology.from_edges(n, pairs)
        except ValueError:
            continue
    raise GraphSamplingError(
        f"could not sample connected graph (n={n}, p={edge_probability}, "
        f"{retry_limit} attempts)"
    )


def lazy_metropolis(topology: NetworkTopology) -> MixingMatrix:
    """Lazy Metropolis weights for a topology, with sigma2 from an eigen-solve."""
    n = topology.n
    a = np.zeros((n, n))
    for i, j in topology.edges:
        w = 1.0 / (2.0 * max(topology.degree(i), topology.degree(j)))
        a[i, j] = w
        a[j, i] = w
    np.fill_diagonal(a, 1.0 - a.sum(axis=1))
    if n == 1:
        return MixingMatrix(a, 0.0)
    evals = np.linalg.eigvalsh(a)[::-1]  # descending
    # diagonal dominance (a_ii >= 1/2) keeps the whole spectrum nonnegative,
    # so the second-largest eigenvalue is also the second-largest magnitude
    if evals[-1] < -EIGEN_TOL:
        raise MixingError(f"unexpected negative eigenvalue {evals[-1]}")
    if abs(evals[0] - 1.0) > EIGEN_TOL:
        raise MixingError(f"leading eigenvalue {evals[0]} deviates from 1")
    return MixingMatrix(a, float(evals[1]))


def spectral_gap(matrix: MixingMatrix) -> float:
    """Return 1 - sigma2, the consensus contraction margin, in (0, 1]."""
    if matrix.sigma2 >= 1.0 - STOCHASTICITY_TOL:
        raise MixingError("disconnected or periodic mixing")
    return 1.0 - matrix.sigma2


def save_edge_list(topology: NetworkTopology, path) -> None:
    """Write the 'n m' header followed by one 'i j' line per edge (0-based)."""
    lines = [f"{topology.n} {topology.edge_count}"]
    lines += [f"{i} {j}" for i, j in topology.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def load_edge_list(path) -> NetworkTopology:
    """Inverse of :func:`save_edge_list`."""
    raw = Path(path).read_text().split()
    if len(raw) < 2:
        raise ValueError(f"malformed edge-list file {path}")
    n, m = int(raw[0]), int(raw[1])
    flat = raw[2:]
    if len(flat) != 2 * m:
        raise ValueError(f"edge-list file {path} promises {m} edges, found {len(flat) // 2}")
    edges = [(int(flat[2 * t]), int(flat[2 * t + 1])) for t in range(m)]
    return NetworkTopology.from_edges(n, edges)


def path_topology(n: int) -> NetworkTopology:
    """Path graph 0-1-...-(n-1); handy small benchmark with a known slow gap."""
    return NetworkTopology.from_edges(n, [(i, i + 1) for i in range(n - 1)])
