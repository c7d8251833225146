"""Graphs, shift operators, permutations, random graphs and relative perturbations.

Conventions used everywhere:
  * edges are ordered (src, dst, weight) triples meaning "src influences dst";
    undirected graphs carry both orientations in the edge set.
  * the shift-operator entry (i, j) is nonzero only when i == j or (j, i) is
    an edge, so row i of S x aggregates over the in-neighborhood of i.
"""

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    AsymmetricError,
    DegenerateSamples,
    DimensionMismatch,
    InvalidProbability,
    IsolatedNode,
)
from .linalg import is_symmetric, operator_norm


class GsoKind(str, Enum):
    ADJACENCY = "adjacency"
    NORMALIZED_ADJACENCY = "normalized_adjacency"
    LAPLACIAN = "laplacian"
    NORMALIZED_LAPLACIAN = "normalized_laplacian"
    RANDOM_WALK = "random_walk"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Graph:
    """Weighted graph on nodes 0..n-1 with no self-loops."""

    n: int
    edges: tuple  # tuple of (i, j, w)
    directed: bool = False

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("graph needs at least one node")
        seen = {}
        for i, j, w in self.edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i},{j}) outside [0,{self.n})")
            seen[(i, j)] = w
        if not self.directed:
            for (i, j), w in seen.items():
                if seen.get((j, i)) != w:
                    raise ValueError(f"undirected edge set not symmetric at ({i},{j})")

    @classmethod
    def from_edges(cls, n, edges, directed=False):
        """Build a graph, mirroring edges automatically when undirected."""
        full = {}
        for i, j, w in edges:
            full[(int(i), int(j))] = float(w)
            if not directed:
                full[(int(j), int(i))] = float(w)
        canon = tuple(sorted((i, j, w) for (i, j), w in full.items()))
        return cls(n=n, edges=canon, directed=directed)

    @classmethod
    def from_adjacency(cls, a, directed=False):
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        edges = [(j, i, a[i, j]) for i in range(n) for j in range(n) if i != j and a[i, j] != 0.0]
        return cls.from_edges(n, edges, directed=directed)

    def adjacency(self):
        """Dense adjacency with A[dst, src] = w (in-neighbor rows)."""
        a = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            a[j, i] = w
        return a

    def degrees(self):
        return self.adjacency().sum(axis=1)

    def neighbors(self, i):
        return sorted(src for (src, dst, _) in self.edges if dst == i)

    def to_json(self):
        return json.dumps(
            {"n": self.n, "directed": self.directed, "edges": [[i, j, w] for i, j, w in self.edges]}
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        edges = tuple(sorted((int(i), int(j), float(w)) for i, j, w in d["edges"]))
        return cls(n=int(d["n"]), edges=edges, directed=bool(d["directed"]))


@dataclass(frozen=True)
class Gso:
    """A graph shift operator: dense matrix plus the variant it was built as."""

    matrix: np.ndarray
    kind: GsoKind = GsoKind.CUSTOM

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"GSO matrix must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self):
        return self.matrix.shape[0]

    def to_csv(self, path):
        np.savetxt(path, self.matrix, delimiter=",")


def as_matrix(s):
    """Accept a Gso or a raw square matrix."""
    if isinstance(s, Gso):
        return s.matrix
    return np.asarray(s, dtype=np.float64)


def build_gso(g: Graph, kind=GsoKind.ADJACENCY) -> Gso:
    """Construct the requested shift-operator variant for a graph.

    Degree-normalized kinds (normalized Laplacian / adjacency, random walk)
    require every node to have nonzero degree.
    """
    kind = GsoKind(kind)
    a = g.adjacency()
    deg = a.sum(axis=1)
    if kind == GsoKind.ADJACENCY:
        m = a
    elif kind == GsoKind.NORMALIZED_ADJACENCY:
        nrm = operator_norm(a)
        if nrm == 0.0:
            m = a
        else:
            m = a / nrm
    elif kind == GsoKind.LAPLACIAN:
        m = np.diag(deg) - a
    elif kind == GsoKind.NORMALIZED_LAPLACIAN:
        _require_no_isolated(deg, kind)
        d_isqrt = 1.0 / np.sqrt(deg)
        m = np.eye(g.n) - (d_isqrt[:, None] * a) * d_isqrt[None, :]
    elif kind == GsoKind.RANDOM_WALK:
        _require_no_isolated(deg, kind)
        m = a / deg[:, None]
    else:
        raise ValueError("build_gso cannot construct a Custom GSO; wrap the matrix in Gso directly")
    return Gso(matrix=m, kind=kind)


def _require_no_isolated(deg, kind):
    zero = np.flatnonzero(deg == 0)
    if zero.size:
        raise IsolatedNode(f"{kind.value} needs degree > 0 everywhere; isolated nodes {zero.tolist()}")


def graph_shift(s, x):
    """One diffusion step S x; x is (n,) or (n, F).

    Row i accumulates s_ij * x_j over ascending j (unoptimized einsum order),
    so the result matches a naive per-node loop bit for bit.
    """
    m = as_matrix(s)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != m.shape[0]:
        raise DimensionMismatch(f"signal has {x.shape[0]} rows, GSO is {m.shape[0]}x{m.shape[0]}")
    if x.ndim == 1:
        # single-column einsum falls back to a pairwise-summing dot kernel;
        # a padded second column keeps the ascending-j accumulation
        col = np.column_stack([x, np.zeros_like(x)])
        return np.einsum("ij,jf->if", m, col, optimize=False)[:, 0]
    return np.einsum("ij,jf->if", m, x, optimize=False)


@dataclass(frozen=True)
class Permutation:
    """A relabeling sending node i to perm[i]."""

    perm: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.intp)
        n = p.shape[0]
        if sorted(p.tolist()) != list(range(n)):
            raise ValueError("perm must be a bijection on [0, n)")
        object.__setattr__(self, "perm", p)

    @property
    def n(self):
        return self.perm.shape[0]

    def inverse(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.n)
        return Permutation(inv)

    def matrix(self):
        """0/1 matrix P with row i one-hot at perm[i]; P 1 = P^T 1 = 1."""
        p = np.zeros((self.n, self.n))
        p[np.arange(self.n), self.perm] = 1.0
        return p

    @classmethod
    def random(cls, n, rng):
        return cls(rng.permutation(n))

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))


def permute_gso(s, p: Permutation):
    """P^T S P, applied by exact index remapping (bit-reproducible).

    Entry (perm[i], perm[j]) of the result equals entry (i, j) of S.
    """
    m = as_matrix(s)
    if p.n != m.shape[0]:
        raise DimensionMismatch("permutation length does not match GSO size")
    inv = p.inverse().perm
    out = m[np.ix_(inv, inv)]
    if isinstance(s, Gso):
        return Gso(matrix=out, kind=s.kind)
    return out


permute_graph = permute_gso  # alias: relabeling a GSO is permuting the graph


def permute_signal(x, p: Permutation):
    """P^T x along the node axis (the second-to-last axis for (..., n, F))."""
    x = np.asarray(x)
    inv = p.inverse().perm
    if x.ndim == 1:
        return x[inv]
    return x[..., inv, :]


def sbm(n, communities, p_intra, p_inter, rng):
    """Stochastic block model with contiguous balanced communities.

    Remainder nodes go to the lowest-index communities.  Undirected,
    unweighted.
    """
    for name, p in (("p_intra", p_intra), ("p_inter", p_inter)):
        if not (0.0 <= p <= 1.0):
            raise InvalidProbability(f"{name}={p} outside [0,1]")
    if communities < 1 or communities > n:
        raise ValueError("need 1 <= communities <= n")
    base = n // communities
    rem = n % communities
    labels = np.repeat(np.arange(communities), base)
    labels = np.concatenate([np.arange(rem), labels]) if rem else labels
    labels = np.sort(labels)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            p = p_intra if labels[i] == labels[j] else p_inter
            if rng.random() < p:
                edges.append((i, j, 1.0))
    return Graph.from_edges(n, edges, directed=False)


def sbm_labels(n, communities):
    """Community assignment used by sbm (contiguous balanced blocks)."""
    base = n // communities
    rem = n % communities
    labels = np.repeat(np.arange(communities), base)
    if rem:
        labels = np.sort(np.concatenate([np.arange(rem), labels]))
    return labels


def knn_covariance_graph(samples, k):
    """Graph whose edges keep each node's k largest-|covariance| partners.

    Covariance is the sample covariance across rows (rows = observations).
    Directed k-NN selections are symmetrized by union; edge weight is the
    covariance magnitude.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise DegenerateSamples("need an m x n sample matrix with m >= 2")
    n = samples.shape[1]
    if not (1 <= k < n):
        raise ValueError("need 1 <= k < n")
    cov = np.cov(samples, rowvar=False)
    off = cov.copy()
    np.fill_diagonal(off, 0.0)
    if np.max(np.abs(off)) == 0.0 and np.max(np.abs(cov)) == 0.0:
        raise DegenerateSamples("sample covariance is identically zero")
    edges = {}
    for i in range(n):
        mags = np.abs(off[i])
        # ties broken by lowest index: stable argsort on (-magnitude, index)
        order = np.lexsort((np.arange(n), -mags))
        picked = [j for j in order if j != i][:k]
        for j in picked:
            if mags[j] == 0.0:
                continue
            key = (min(i, j), max(i, j))
            edges[key] = abs(cov[i, j])
    return Graph.from_edges(n, [(i, j, w) for (i, j), w in edges.items()], directed=False)


def without_isolated_nodes(g: Graph) -> Graph:
    """Drop zero-degree nodes and relabel the rest contiguously."""
    deg = g.degrees()
    keep = np.flatnonzero(deg > 0)
    if keep.size == g.n:
        return g
    remap = {int(old): new for new, old in enumerate(keep)}
    edges = [(remap[i], remap[j], w) for i, j, w in g.edges if i in remap and j in remap]
    return Graph(n=keep.size, edges=tuple(sorted(edges)), directed=g.directed)


@dataclass(frozen=True)
class RelativePerturbation:
    """Symmetric error matrix E with operator norm at most epsilon."""

    error: np.ndarray
    epsilon: float

    def __post_init__(self):
        e = np.asarray(self.error, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise DimensionMismatch("error matrix must be square")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if operator_norm(e) > self.epsilon * (1.0 + 1e-9) + 1e-15:
            raise ValueError("error matrix operator norm exceeds the epsilon budget")
        object.__setattr__(self, "error", e)


def sample_perturbation(n, epsilon, rng) -> RelativePerturbation:
    """Random symmetric matrix rescaled to operator norm exactly epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0.0:
        return RelativePerturbation(error=np.zeros((n, n)), epsilon=0.0)
    g = rng.standard_normal((n, n))
    e = 0.5 * (g + g.T)
    nrm = operator_norm(e)
    if nrm == 0.0:  # astronomically unlikely; resample deterministically
        e = np.eye(n)
        nrm = 1.0
    return RelativePerturbation(error=e * (epsilon / nrm), epsilon=float(epsilon))


def apply_relative_perturbation(s, e: RelativePerturbation):
    """S~ = S + E S + S E^T for a symmetric error matrix E."""
    m = as_matrix(s)
    err = e.error
    if err.shape != m.shape:
        raise DimensionMismatch(f"error matrix {err.shape} vs GSO {m.shape}")
    if not is_symmetric(err, tol=1e-12):
        raise AsymmetricError("relative perturbation error matrix must be symmetric")
    if not err.any():
        out = m.copy()  # E = 0 must return S bit-identical
    else:
        out = m + err @ m + m @ err.T
    if isinstance(s, Gso):
        return Gso(matrix=out, kind=GsoKind.CUSTOM)
    return out
