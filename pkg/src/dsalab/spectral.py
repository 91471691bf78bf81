"""Gossip-matrix certification, stationary vectors, consensus projectors and
spectral utilities for the drift matrix.

All functions are pure; complex arithmetic only appears inside spectrum
computations and every exported matrix is real.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConvergenceFailure,
    NegativeEntry,
    NotPositiveDefinite,
    Periodic,
    Reducible,
    RowSumViolation,
)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
# eigenvector basis is trusted for expm only below this condition number
EXPM_EIG_COND_MAX = 1e4


@dataclass(frozen=True)
class GossipMatrix:
    """Row-stochastic, irreducible, aperiodic m x m consensus matrix.

    Instances should come from :func:`validate_gossip`, which fills in the
    certificates.
    """

    entries: np.ndarray
    strongly_connected: bool = True
    period: int = 1
    positive_diagonal: bool = False

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def doubly_stochastic(self) -> bool:
        return bool(np.all(np.abs(self.entries.sum(axis=0) - 1.0) <= 1e-12))

    def report(self) -> str:
        w = self.entries
        lines = [
            f"gossip matrix: m = {self.m}",
            f"  max |row sum - 1|     : {np.max(np.abs(w.sum(axis=1) - 1.0)):.3e}",
            f"  min entry             : {w.min():.6g}",
            f"  strongly connected    : {'yes' if self.strongly_connected else 'no'}",
            f"  period (gcd of cycles): {self.period}",
            f"  positive diagonal     : {'yes' if self.positive_diagonal else 'no'}",
            f"  doubly stochastic     : {'yes' if self.doubly_stochastic else 'no'}",
            f"  second eigenvalue mod : {gossip_contraction(self):.6g}",
        ]
        return "\n".join(lines)


@dataclass(frozen=True)
class StationaryVector:
    pi: np.ndarray
    residual: float = 0.0

    @property
    def m(self) -> int:
        return self.pi.shape[0]


@dataclass(frozen=True)
class DisagreementProjector:
    q: np.ndarray


@dataclass(frozen=True)
class DriftMatrix:
    """Drift matrix ``A`` with ``yAy' > 0`` for all nonzero row vectors ``y``.

    ``lambda_min`` is the smallest real part over the spectrum of ``A``;
    ``sym_min`` the smallest eigenvalue of the symmetric part.
    """

    a_mat: np.ndarray
    lambda_min: float
    sym_min: float
    eigenvalues: np.ndarray

    @property
    def d(self) -> int:
        return self.a_mat.shape[0]


# --------------------------------------------------------------------------
# graph helpers


def _adjacency(w: np.ndarray) -> list[list[int]]:
    return [list(np.flatnonzero(row > 0.0)) for row in w]


def _reachable(adj: list[list[int]], start: int) -> np.ndarray:
    seen = np.zeros(len(adj), dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def is_strongly_connected(w: np.ndarray) -> bool:
    """True when the directed graph of positive entries is strongly connected."""
    w = np.asarray(w, dtype=float)
    adj = _adjacency(w)
    if not _reachable(adj, 0).all():
        return False
    radj = _adjacency(w.T)
    return bool(_reachable(radj, 0).all())


def graph_period(w: np.ndarray) -> int:
    """Period (gcd of cycle lengths) of a strongly connected nonnegative matrix.

    Uses BFS levels from node 0: the period is the gcd of
    ``level[u] + 1 - level[v]`` over all edges ``u -> v``.
    """
    w = np.asarray(w, dtype=float)
    adj = _adjacency(w)
    level = np.full(len(adj), -1, dtype=np.int64)
    level[0] = 0
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    g = 0
    for u, nbrs in enumerate(adj):
        for v in nbrs:
            g = math.gcd(g, abs(int(level[u] + 1 - level[v])))
    return g


def check_stochastic(entries, tol: float = ROW_SUM_TOL) -> np.ndarray:
    w = np.asarray(entries, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("matrix has non-finite entries")
    if np.any(w < 0.0):
        i, j = np.argwhere(w < 0.0)[0]
        raise NegativeEntry(f"entry ({i}, {j}) = {w[i, j]} is negative")
    dev = np.abs(w.sum(axis=1) - 1.0)
    if np.any(dev > tol):
        i = int(np.argmax(dev))
        raise RowSumViolation(f"row {i} sums to {w[i].sum()!r} (tolerance {tol})")
    return w


def validate_gossip(entries) -> GossipMatrix:
    """Certify ``entries`` as an irreducible aperiodic row-stochastic matrix.

    Raises
    ------
    NegativeEntry, RowSumViolation, Reducible, Periodic
    """
    w = check_stochastic(entries)
    if not is_strongly_connected(w):
        raise Reducible("graph of positive entries is not strongly connected")
    period = graph_period(w)
    if period != 1:
        raise Periodic(f"matrix is periodic with period {period}")
    w = w.copy()
    w.setflags(write=False)
    return GossipMatrix(
        entries=w,
        strongly_connected=True,
        period=period,
        positive_diagonal=bool(np.any(np.diag(w) > 0.0)),
    )


def _as_array(w) -> np.ndarray:
    return w.entries if isinstance(w, GossipMatrix) else np.asarray(w, dtype=float)


def stationary_vector(w: GossipMatrix) -> StationaryVector:
    """Unique left Perron vector ``pi`` with ``pi W = pi`` and ``sum(pi) = 1``.

    Solves the square system obtained by replacing one balance equation of
    ``(W' - I) pi' = 0`` with the normalisation, followed by a few rounds of
    iterative refinement.
    """
    wm = _as_array(w)
    m = wm.shape[0]
    if m == 1:
        return StationaryVector(pi=np.ones(1), residual=0.0)
    system = wm.T - np.eye(m)
    system[-1, :] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    pi = np.linalg.solve(system, rhs)
    for _ in range(3):
        pi = pi + np.linalg.solve(system, rhs - system @ pi)
    residual = float(np.max(np.abs(pi @ wm - pi)))
    if residual > STATIONARY_TOL or not np.all(pi > 0.0):
        raise ConvergenceFailure(
            f"stationary solve failed: residual {residual:.3e}, min entry {pi.min():.3e}"
        )
    pi = pi / pi.sum()
    return StationaryVector(pi=pi, residual=residual)


def stationary_vector_power(w, tol: float = 1e-14, max_iter: int = 100_000) -> np.ndarray:
    """Stationary vector by power iteration on the lazy chain ``(I + W)/2``."""
    wm = _as_array(w)
    m = wm.shape[0]
    lazy = 0.5 * (np.eye(m) + wm)
    pi = np.full(m, 1.0 / m)
    for _ in range(max_iter):
        nxt = pi @ lazy
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    raise ConvergenceFailure(f"power iteration did not converge in {max_iter} steps")


def projector(pi) -> DisagreementProjector:
    """``Q = I - 1' pi``; removes the pi-weighted consensus component."""
    p = pi.pi if isinstance(pi, StationaryVector) else np.asarray(pi, dtype=float)
    m = p.shape[0]
    q = np.eye(m) - np.outer(np.ones(m), p)
    return DisagreementProjector(q=q)


def drift_spectrum(a_mat) -> DriftMatrix:
    """Certify ``yAy' > 0`` through the symmetric part and compute ``lambda_min``."""
    a = np.asarray(a_mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"drift matrix must be square, got shape {a.shape}")
    sym_min = float(np.linalg.eigvalsh(0.5 * (a + a.T)).min())
    if sym_min <= 0.0:
        raise NotPositiveDefinite(
            f"symmetric part has eigenvalue {sym_min:.3e} <= 0"
        )
    eig = np.linalg.eigvals(a)
    return DriftMatrix(
        a_mat=a.copy(), lambda_min=float(eig.real.min()), sym_min=sym_min, eigenvalues=eig
    )


# --------------------------------------------------------------------------
# matrix exponential


def _expm_taylor(a: np.ndarray) -> np.ndarray:
    """exp(a) by scaling, truncated Taylor series and repeated squaring."""
    d = a.shape[0]
    norm = np.linalg.norm(a, 1)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    scaled = a / (2.0**squarings)
    result = np.eye(d)
    term = np.eye(d)
    for k in range(1, 40):
        term = term @ scaled / k
        result = result + term
        if np.max(np.abs(term)) <= 1e-18 * np.max(np.abs(result)):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def _eig_basis(a: np.ndarray):
    vals, vecs = np.linalg.eig(a)
    if np.linalg.cond(vecs) >= EXPM_EIG_COND_MAX:
        return None
    return vals, vecs, np.linalg.inv(vecs)


def matrix_exp_neg(a, t: float) -> np.ndarray:
    """``exp(-t A)`` for ``t >= 0``.

    Eigendecomposition when ``A`` is well-conditioned diagonalisable, scaled
    Taylor series with squaring otherwise.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    am = a.a_mat if isinstance(a, DriftMatrix) else np.asarray(a, dtype=float)
    d = am.shape[0]
    if t == 0:
        return np.eye(d)
    basis = _eig_basis(am)
    if basis is None:
        return _expm_taylor(-t * am)
    vals, vecs, inv = basis
    out = (vecs * np.exp(-t * vals)) @ inv
    return np.ascontiguousarray(out.real)


def matrix_exp_neg_batch(a, ts) -> np.ndarray:
    """Stack of ``exp(-t A)`` for every ``t`` in ``ts``; shape ``(len(ts), d, d)``."""
    am = a.a_mat if isinstance(a, DriftMatrix) else np.asarray(a, dtype=float)
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0):
        raise ValueError("t must be nonnegative")
    basis = _eig_basis(am)
    if basis is None:
        return np.stack([matrix_exp_neg(am, float(t)) for t in ts]) if len(ts) else np.zeros(
            (0,) + am.shape
        )
    vals, vecs, inv = basis
    scaled = vecs[None, :, :] * np.exp(-ts[:, None, None] * vals[None, None, :])
    return np.ascontiguousarray((scaled @ inv).real)


def gossip_contraction(w) -> float:
    """Second-largest eigenvalue modulus of ``W`` (0 when m = 1).

    A mixing-speed diagnostic only; it is not an estimate of any rate constant.
    """
    wm = _as_array(w)
    if wm.shape[0] == 1:
        return 0.0
    eig = np.linalg.eigvals(wm)
    drop = int(np.argmin(np.abs(eig - 1.0)))
    rest = np.delete(eig, drop)
    return float(np.max(np.abs(rest)))


# --------------------------------------------------------------------------
# constructors and file format


def random_gossip(m: int, rng: np.random.Generator, density: float = 0.5,
                  self_weight: bool = True) -> GossipMatrix:
    """Random certified gossip matrix.

    A directed ring guarantees strong connectivity; extra edges are added
    with probability ``density`` and a positive diagonal makes it aperiodic.
    Rows are Dirichlet-like random weights over the in-neighbourhood.
    """
    if m == 1:
        return validate_gossip([[1.0]])
    mask = rng.random((m, m)) < density
    idx = np.arange(m)
    mask[idx, (idx + 1) % m] = True
    if self_weight:
        mask[idx, idx] = True
    weights = rng.exponential(size=(m, m)) * mask
    weights /= weights.sum(axis=1, keepdims=True)
    # absorb normalisation rounding into each row's largest entry
    top = np.argmax(weights, axis=1)
    weights[idx, top] += 1.0 - weights.sum(axis=1)
    return validate_gossip(weights)


def ring_gossip(m: int, self_weight: float = 0.5) -> GossipMatrix:
    """Lazy directed ring: agent i averages itself with agent i+1."""
    w = np.eye(m) * self_weight
    idx = np.arange(m)
    w[idx, (idx + 1) % m] += 1.0 - self_weight
    return validate_gossip(w)


def complete_gossip(m: int) -> GossipMatrix:
    return validate_gossip(np.full((m, m), 1.0 / m))


def broadcast_gossip(m: int, beta: float = 0.5, hub_leak: float = 0.1) -> GossipMatrix:
    """Hub-and-spoke matrix: row stochastic but not doubly stochastic.

    Spokes put weight ``beta`` on the hub; the hub keeps ``1 - hub_leak`` on
    itself and spreads ``hub_leak`` over the spokes, so the stationary vector
    is concentrated on node 0 while staying strictly positive.
    """
    if m < 2:
        raise ValueError("broadcast gossip needs m >= 2")
    w = np.zeros((m, m))
    w[0, 0] = 1.0 - hub_leak
    w[0, 1:] = hub_leak / (m - 1)
    for i in range(1, m):
        w[i, 0] = beta
        w[i, i] = 1.0 - beta
    return validate_gossip(w)


def load_gossip(path) -> np.ndarray:
    """Read a matrix file: first line ``m``, then ``m`` whitespace-separated rows.

    Returns the raw entries; pass them to :func:`validate_gossip` to certify.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    m = int(lines[0].strip())
    rows = [[float(tok) for tok in ln.split()] for ln in lines[1:]]
    if len(rows) != m or any(len(r) != m for r in rows):
        raise ValueError(f"{path}: expected {m} rows of {m} entries")
    return np.array(rows, dtype=float)


def save_gossip(w, path) -> None:
    wm = _as_array(w)
    body = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in wm)
    Path(path).write_text(f"{wm.shape[0]}\n{body}\n")
