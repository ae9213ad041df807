"""Personalized PageRank and the closed-form influence of single edge flips.

Two forms of the directed influence are provided:

``"revised"`` (default)
    ``c' * colsum(M^-1)[u] / (1 + c' * M^-1[u, v])``, the form used for
    candidate selection.
``"exact"``
    ``c' * colsum(M^-1)[u] / (1 - c' * M^-1[v, u])``, the rank-1
    (Sherman-Morrison) form. It equals the summed dense difference of PPR
    matrices when the flip is applied with the pre-flip degree matrix.

Here ``M = I - (1 - alpha) D^-1 A`` and ``c' = b_s (1 - alpha) / d_u`` with
``b_s = +1`` for an addition and ``-1`` for a removal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, DegeneratePerturbation, NumericError, StateError
from .graph import ADD, REMOVE, AttributedGraph

VARIANTS = ("revised", "exact")
DENOM_EPS = 1e-12
EXHAUSTIVE_LIMIT = 2000
SAMPLE_PAIRS = 1_000_000


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown PPR variant {variant!r}; expected one of {VARIANTS}")


def transition_matrix(graph: AttributedGraph) -> sp.csr_matrix:
    """H = D^-1 A, with a unit self-loop on isolated nodes."""
    d = graph.degrees.astype(float)
    iso = d == 0
    inv = np.where(iso, 0.0, 1.0 / np.where(iso, 1.0, d))
    h = sp.diags(inv) @ graph.adjacency
    if iso.any():
        h = h + sp.diags(iso.astype(float))
    return h.tocsr()


@dataclass(frozen=True)
class PprModel:
    alpha: float
    fundamental: np.ndarray  # (I - (1 - alpha) H)^-1
    degrees: np.ndarray
    adjacency: sp.csr_matrix

    @property
    def ppr(self) -> np.ndarray:
        return self.alpha * self.fundamental

    @property
    def n_nodes(self) -> int:
        return len(self.degrees)

    def pieces(self, v: int):
        """(column sums, row v, column v) of the fundamental matrix."""
        m = self.fundamental
        return m.sum(axis=0), m[v, :].copy(), m[:, v].copy()


def build_ppr(graph: AttributedGraph, alpha: float = 0.1) -> PprModel:
    _check_alpha(alpha)
    n = graph.n_nodes
    m1 = np.eye(n) - (1.0 - alpha) * transition_matrix(graph).toarray()
    try:
        fundamental = np.linalg.solve(m1, np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"PPR system is singular: {exc}") from exc
    if not np.isfinite(fundamental).all():
        raise NumericError("PPR fundamental matrix has non-finite entries")
    return PprModel(alpha, fundamental, graph.degrees.copy(), graph.adjacency)


@dataclass(frozen=True)
class LocalPpr:
    """The slices of the fundamental matrix needed to score pairs anchored at v.

    Obtained from a sparse LU factorization instead of the dense inverse.
    """

    alpha: float
    anchor: int
    colsum: np.ndarray
    row: np.ndarray
    col: np.ndarray
    degrees: np.ndarray
    adjacency: sp.csr_matrix

    def pieces(self, v: int):
        if v != self.anchor:
            raise ValueError(f"LocalPpr is anchored at {self.anchor}, not {v}")
        return self.colsum, self.row, self.col


def _krylov(mat, b, rtol):
    x, info = spla.gmres(mat, b, rtol=rtol, atol=0.0, restart=60, maxiter=20)
    return x if info == 0 else None


def local_ppr(graph: AttributedGraph, v: int, alpha: float = 0.1, rtol: float = 1e-13) -> LocalPpr:
    """Column sums, row v and column v of the fundamental matrix.

    Solved with GMRES (the system has condition number at most
    (2 - alpha) / alpha); falls back to a sparse LU factorization when GMRES
    does not reach ``rtol``.
    """
    _check_alpha(alpha)
    n = graph.n_nodes
    m1 = (sp.identity(n, format="csr") - (1.0 - alpha) * transition_matrix(graph)).tocsr()
    m1t = m1.T.tocsr()
    e = np.zeros(n)
    e[v] = 1.0
    sols = [_krylov(m1t, np.ones(n), rtol), _krylov(m1t, e, rtol), _krylov(m1, e, rtol)]
    if any(s is None for s in sols):
        try:
            lu = spla.splu(m1.tocsc())
        except RuntimeError as exc:
            raise NumericError(f"PPR system is singular: {exc}") from exc
        sols = [lu.solve(np.ones(n), trans="T"), lu.solve(e, trans="T"), lu.solve(e)]
    colsum, row, col = sols
    return LocalPpr(alpha, v, colsum, row, col, graph.degrees.copy(), graph.adjacency)


def _edge_sign(model, u, v, action):
    present = bool(model.adjacency[u, v])
    if action is None:
        action = REMOVE if present else ADD
    if present != (action == REMOVE):
        raise StateError(f"cannot {action} ({u},{v}): edge {'present' if present else 'absent'}")
    return 1.0 if action == ADD else -1.0


def delta_ppr_directed(model: PprModel, u: int, v: int, action: Optional[str] = None, variant: str = "revised") -> float:
    """Summed PPR change from flipping the directed edge u -> v."""
    _check_variant(variant)
    if u == v:
        raise StateError("self-pair")
    bs = _edge_sign(model, u, v, action)
    if model.degrees[u] == 0:
        raise DegeneratePerturbation(f"node {u} is isolated")
    m = model.fundamental
    c = bs * (1.0 - model.alpha) / model.degrees[u]
    colsum_u = m[:, u].sum()
    denom = 1.0 + c * m[u, v] if variant == "revised" else 1.0 - c * m[v, u]
    if abs(denom) < DENOM_EPS:
        raise DegeneratePerturbation(f"denominator vanishes for pair ({u},{v})")
    return float(c * colsum_u / denom)


def delta_ppr_matrix(model: PprModel, u: int, v: int, action: Optional[str] = None) -> np.ndarray:
    """Entrywise change of the PPR matrix for the flip u -> v (rank-1 form)."""
    bs = _edge_sign(model, u, v, action)
    m = model.fundamental
    c = bs * (1.0 - model.alpha) / model.degrees[u]
    denom = 1.0 - c * m[v, u]
    if abs(denom) < DENOM_EPS:
        raise DegeneratePerturbation(f"denominator vanishes for pair ({u},{v})")
    return model.alpha * c * np.outer(m[:, u], m[v, :]) / denom


@dataclass(frozen=True)
class InfluenceScore:
    pair: tuple
    delta: float
    direction_parts: tuple


def delta_ppr_symmetric(model: PprModel, u: int, v: int, variant: str = "revised") -> InfluenceScore:
    fwd = delta_ppr_directed(model, u, v, variant=variant)
    bwd = delta_ppr_directed(model, v, u, variant=variant)
    return InfluenceScore((u, v), abs(fwd + bwd), (fwd, bwd))


def _directed(c, colsum, m_uv, m_vu, variant):
    denom = 1.0 + c * m_uv if variant == "revised" else 1.0 - c * m_vu
    bad = np.abs(denom) < DENOM_EPS
    out = c * colsum / np.where(bad, 1.0, denom)
    return np.where(bad, np.nan, out)


def anchored_deltas(model, graph: AttributedGraph, v: int, variant: str = "revised") -> np.ndarray:
    """Symmetric influence of every pair (v, u); NaN where undefined.

    ``model`` may be a :class:`PprModel` or a :class:`LocalPpr` anchored at v.
    """
    _check_variant(variant)
    colsum, row, col = model.pieces(v)
    d = graph.degrees.astype(float)
    n = len(d)
    a_v = np.zeros(n)
    a_v[graph.neighbors(v)] = 1.0
    bs = 1.0 - 2.0 * a_v
    scale = 1.0 - model.alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        # u -> v: c' uses d_u, M[u, v] = col[u], M[v, u] = row[u]
        fwd = _directed(bs * scale / d, colsum, col, row, variant)
        # v -> u: c' uses d_v, M[v, u] = row[u], M[u, v] = col[u]
        bwd = _directed(bs * scale / d[v], colsum[v], row, col, variant)
        out = np.abs(fwd + bwd)
    out[(d == 0) | (d[v] == 0)] = np.nan
    out[v] = np.nan
    return out


def all_pair_deltas(model: PprModel, variant: str = "revised") -> np.ndarray:
    """Dense symmetric matrix of pair influences; NaN on the diagonal and isolated nodes."""
    _check_variant(variant)
    m = model.fundamental
    d = model.degrees.astype(float)
    a = model.adjacency.toarray()
    bs = 1.0 - 2.0 * a
    with np.errstate(divide="ignore", invalid="ignore"):
        c = bs * (1.0 - model.alpha) / d[:, None]
        directed = _directed(c, m.sum(axis=0)[:, None], m, m.T, variant)
        out = np.abs(directed + directed.T)
    iso = d == 0
    out[iso, :] = np.nan
    out[:, iso] = np.nan
    np.fill_diagonal(out, np.nan)
    return out


def valid_pair_mask(graph: AttributedGraph, v: int) -> np.ndarray:
    """Pairs (v, u) eligible for perturbation.

    Isolated endpoints are never eligible; removals additionally require both
    endpoints to keep at least one edge.
    """
    d = graph.degrees
    n = graph.n_nodes
    ok = d >= 1
    if d[v] == 0:
        return np.zeros(n, dtype=bool)
    nbr = np.zeros(n, dtype=bool)
    nbr[graph.neighbors(v)] = True
    removal_ok = (d >= 2) & (d[v] >= 2)
    ok &= ~nbr | removal_ok
    ok[v] = False
    return ok


def candidate_set(model, graph: AttributedGraph, anchor: Optional[int], tau: float, variant: str = "revised") -> set:
    """Pairs whose influence falls strictly below ``tau``.

    With an anchor the pairs are ``(anchor, u)``; otherwise all ``(u, v)`` with
    ``u < v``.
    """
    if anchor is not None:
        deltas = anchored_deltas(model, graph, anchor, variant)
        ok = valid_pair_mask(graph, anchor) & (np.nan_to_num(deltas, nan=np.inf) < tau)
        return {(anchor, int(u)) for u in np.flatnonzero(ok)}
    deltas = all_pair_deltas(model, variant)
    out = set()
    for v in range(graph.n_nodes):
        ok = valid_pair_mask(graph, v) & (np.nan_to_num(deltas[v], nan=np.inf) < tau)
        ok[: v + 1] = False
        out.update((v, int(u)) for u in np.flatnonzero(ok))
    return out


def pair_deltas(model: PprModel, variant: str = "revised", max_pairs: int = SAMPLE_PAIRS, seed: int = 0):
    """Influence values over all pairs u < v (or a uniform sample for large graphs)."""
    n = model.n_nodes
    if n <= EXHAUSTIVE_LIMIT:
        full = all_pair_deltas(model, variant)
        vals = full[np.triu_indices(n, k=1)]
    else:
        rng = np.random.default_rng(seed)
        u = rng.integers(0, n, size=max_pairs)
        v = rng.integers(0, n, size=max_pairs)
        keep = u != v
        u, v = u[keep], v[keep]
        m = model.fundamental
        d = model.degrees.astype(float)
        bs = 1.0 - 2.0 * np.asarray(model.adjacency[u, v]).ravel()
        colsum = m.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            fwd = _directed(bs * (1 - model.alpha) / d[u], colsum[u], m[u, v], m[v, u], variant)
            bwd = _directed(bs * (1 - model.alpha) / d[v], colsum[v], m[v, u], m[u, v], variant)
            vals = np.abs(fwd + bwd)
        vals[(d[u] == 0) | (d[v] == 0)] = np.nan
    return vals[np.isfinite(vals)]


def quantile_threshold(model: PprModel, graph: AttributedGraph = None, q: float = 0.9, variant: str = "revised", seed: int = 0) -> float:
    """Empirical q-quantile of the pair influences, used as the threshold tau."""
    if not 0.0 < q < 1.0:
        raise ConfigError(f"quantile must lie in (0, 1), got {q}")
    vals = pair_deltas(model, variant, seed=seed)
    if len(vals) == 0:
        return 0.0
    return float(np.quantile(vals, q))
