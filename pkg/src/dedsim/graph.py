"""Directed communication graphs and their Laplacian spectra.

Vertices are numbered 1..n in the public interface (matching unit numbering);
internally everything is 0-based numpy. An arc (i, j, w) means unit i listens
to unit j with weight w, so the out-degree Laplacian L = D_out - A drives the
consensus terms of the flow.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

# eigenvalues at or below this fraction of the largest one count as zero
_SPECTRAL_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class Digraph:
    """A weighted digraph on n vertices with dense adjacency (row = out-arcs)."""

    n: int
    adjacency: np.ndarray


@dataclass(frozen=True, eq=False)
class LaplacianData:
    """Out-degree Laplacian together with the two spectral constants the
    gain condition needs: the second-smallest eigenvalue of L + L^T and the
    largest eigenvalue of L^T L."""

    L: np.ndarray
    lambda2_sym: float
    lambda_max_LtL: float


def build_digraph(n: int, edges) -> Digraph:
    """Assemble a digraph from 1-based (tail, head, weight) triples.

    Parameters
    ----------
    n : int
        Number of vertices, at least 1.
    edges : iterable of (int, int, float)
        Directed arcs with positive weights. Self-loops, duplicate arcs,
        out-of-range endpoints and nonpositive weights are rejected.
    """
    if n < 1:
        raise ValueError(f"need at least one vertex, got n={n}")
    A = np.zeros((n, n))
    seen = set()
    for tail, head, weight in edges:
        if not (1 <= tail <= n) or not (1 <= head <= n):
            raise ValueError(f"edge ({tail}, {head}) out of range for n={n}")
        if tail == head:
            raise ValueError(f"self-loop at vertex {tail}")
        if weight <= 0:
            raise ValueError(f"nonpositive weight {weight} on edge ({tail}, {head})")
        if (tail, head) in seen:
            raise ValueError(f"duplicate edge ({tail}, {head})")
        seen.add((tail, head))
        A[tail - 1, head - 1] = float(weight)
    return Digraph(n=n, adjacency=A)


def laplacian(g: Digraph) -> LaplacianData:
    """Out-degree Laplacian and its spectral constants.

    ``lambda2_sym`` is the second-smallest eigenvalue of L + L^T (0.0 for a
    single vertex), with values inside the spectral floor snapped to exact
    zero so disconnected graphs read as 0.0 rather than rounding noise.
    ``lambda_max_LtL`` is the squared spectral norm of L.
    """
    A = g.adjacency
    L = np.diag(A.sum(axis=1)) - A
    sym_eigs = np.linalg.eigvalsh(L + L.T)
    lam_max = float(sym_eigs[-1])
    floor = _SPECTRAL_FLOOR * max(lam_max, 0.0)
    lambda2 = float(sym_eigs[1]) if g.n >= 2 else 0.0
    if abs(lambda2) <= floor:
        lambda2 = 0.0
    lambda_max_ltl = float(np.linalg.eigvalsh(L.T @ L)[-1])
    return LaplacianData(L=L, lambda2_sym=lambda2, lambda_max_LtL=lambda_max_ltl)


def _reachable_all(A: np.ndarray, transpose: bool) -> bool:
    n = A.shape[0]
    M = A.T if transpose else A
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.nonzero(M[i])[0]:
            if not seen[j]:
                seen[j] = True
                queue.append(int(j))
    return bool(seen.all())


def is_strongly_connected(g: Digraph) -> bool:
    """True when every vertex reaches every other along directed arcs.

    One forward and one reverse search from vertex 1; a single vertex is
    trivially strongly connected.
    """
    if g.n == 1:
        return True
    return _reachable_all(g.adjacency, False) and _reachable_all(g.adjacency, True)


def is_weight_balanced(g: Digraph) -> bool:
    """True when in-weight equals out-weight at every vertex.

    Equivalently the column sums of L vanish; checked against a tolerance
    scaled by the largest arc weight.
    """
    A = g.adjacency
    col_sums = A.sum(axis=1) - A.sum(axis=0)
    tol = 1e-12 * max(1.0, float(A.max()) if A.size else 1.0)
    return bool(np.abs(col_sums).max() <= tol) if g.n else True


def csr_arrays(g: Digraph):
    """Adjacency in CSR form (row_ptr, col_idx, weights), neighbors ascending.

    This is the exact neighbor ordering the kernels accumulate in; deriving it
    once here keeps the monolithic and agent paths byte-identical.
    """
    A = g.adjacency
    row_ptr = np.zeros(g.n + 1, dtype=np.int64)
    cols = []
    wts = []
    for i in range(g.n):
        nz = np.nonzero(A[i])[0]
        row_ptr[i + 1] = row_ptr[i] + nz.size
        cols.append(nz.astype(np.int64))
        wts.append(A[i, nz])
    col_idx = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    weights = np.concatenate(wts) if wts else np.zeros(0)
    return row_ptr, col_idx, weights
