"""Generalized symmetric eigensolvers for the assembled pencils.

``solve_smallest`` handles K x = lambda M x for the scalar problems:
dense reduction below a size cutoff, shift-invert Lanczos (ARPACK)
above it, with a fixed-seed start vector so runs are reproducible.

``solve_oneform`` computes the 1-form Hodge-Laplacian spectrum through
its orthogonal decomposition.  A 1-form eigenfield is either

* exact, ``omega = d psi`` with psi a scalar Neumann eigenfunction,
  contributing the positive Neumann eigenvalues;
* co-exact, ``omega = *d phi`` with phi a scalar Dirichlet
  eigenfunction, contributing the Dirichlet eigenvalues; or
* harmonic with natural boundary conditions (curl-free and weakly
  divergence-free), contributing one zero eigenvalue per independent
  cycle of the domain.

The two scalar blocks reuse the Whitney stiffness identity
``K = d0^T M1 d0``, so the reported union is the spectrum of the same
discrete complex that the assembly module builds, and the block
structure keeps exact L2 orthogonality between the three parts.
Eigenvectors are stored blockwise (Neumann coefficients, interior
Dirichlet coefficients, edge coefficients) and are orthonormal under
the block mass returned with the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.linalg import ArpackNoConvergence

__all__ = [
    "EigenError",
    "SolverOptions",
    "SpectralResult",
    "solve_smallest",
    "solve_oneform",
    "cluster_multiplicities",
]

ZERO_MODE_FACTOR = 1e-10  # eta below this times max(eta) counts as harmonic


class EigenError(ValueError):
    """Invalid solve request or factorization breakdown."""


@dataclass
class SolverOptions:
    dense_cutoff: int = 2000
    seed: int = 42
    sigma_scale: float = 1e-3  # shift = scale * mean diagonal ratio
    maxiter: Optional[int] = None
    ncv: Optional[int] = None
    tol: float = 1e-9  # residual acceptance used by the check drivers
    quad_rule: str = "midpoint"  # assembly rule used by the check drivers


@dataclass
class SpectralResult:
    """Smallest eigenpairs of a symmetric pencil.

    ``vectors`` columns are orthonormal in the ``mass`` inner product;
    ``residuals`` hold ||K x - lambda M x|| / (1 + |lambda|) with x
    mass-normalized.
    """

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    bc: str
    mass: sp.spmatrix
    method: str
    shift: Optional[float] = None
    iterations: Optional[int] = None
    converged: bool = True
    meta: dict = field(default_factory=dict)

    def multiplicities(self, rel_gap: float = 1e-6) -> List[Tuple[float, int]]:
        return cluster_multiplicities(self.values, rel_gap)


def _orthonormalize(vectors: np.ndarray, mass) -> np.ndarray:
    gram = vectors.T @ (mass @ vectors)
    chol = np.linalg.cholesky(0.5 * (gram + gram.T))
    inv = la.solve_triangular(chol, np.eye(len(chol)), lower=True)
    return vectors @ inv.T


def _residuals(K, M, values, vectors) -> np.ndarray:
    resid = K @ vectors - (M @ vectors) * values[None, :]
    return np.linalg.norm(resid, axis=0) / (1.0 + np.abs(values))


def solve_smallest(
    K,
    M,
    k: int,
    tol: float = 1e-9,
    bc: str = "generic",
    options: Optional[SolverOptions] = None,
) -> SpectralResult:
    """k smallest eigenpairs of K x = lambda M x.

    Dense reduction when the dimension is at most
    ``options.dense_cutoff`` (default 2000) or when k reaches the
    dimension; otherwise shift-invert Lanczos on (K + sigma M) with a
    seeded start vector.  Non-convergence returns the partial result
    with ``converged=False``; a factorization breakdown raises
    :class:`EigenError` naming the shift.
    """
    options = options or SolverOptions()
    K = sp.csr_matrix(K)
    M = sp.csr_matrix(M)
    dim = K.shape[0]
    if K.shape != M.shape or K.shape[0] != K.shape[1]:
        raise EigenError("pencil matrices must be square and matched")
    if not 1 <= k <= dim:
        raise EigenError(f"requested {k} eigenpairs from dimension {dim}")

    iterations = None
    shift = None
    converged = True
    if dim <= options.dense_cutoff or k >= dim:
        method = "dense"
        values, vectors = la.eigh(
            K.toarray(), M.toarray(), subset_by_index=(0, k - 1)
        )
    else:
        method = "shift-invert-lanczos"
        diag_ratio = K.diagonal() / M.diagonal()
        shift = float(options.sigma_scale * np.mean(diag_ratio))
        rng = np.random.default_rng(options.seed)
        v0 = rng.standard_normal(dim)
        try:
            values, vectors = spla.eigsh(
                K,
                k=k,
                M=M,
                sigma=-shift,
                which="LM",
                v0=v0,
                maxiter=options.maxiter,
                ncv=options.ncv,
            )
        except ArpackNoConvergence as exc:
            values, vectors = exc.eigenvalues, exc.eigenvectors
            converged = False
            if values.size == 0:
                raise EigenError(
                    f"no eigenpairs converged (shift {-shift!r})"
                ) from exc
        except RuntimeError as exc:
            raise EigenError(
                f"factorization of (K + {shift!r} M) failed: {exc}"
            ) from exc

    order = np.argsort(values)
    values = np.asarray(values, dtype=float)[order]
    vectors = np.asarray(vectors, dtype=float)[:, order]
    vectors = _orthonormalize(vectors, M)
    residuals = _residuals(K, M, values, vectors)
    if converged and np.any(residuals > tol):
        converged = False
    return SpectralResult(
        values,
        vectors,
        residuals,
        bc,
        M,
        method,
        shift=shift,
        iterations=iterations,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# 1-form spectrum through the Hodge decomposition


def _natural_harmonics(ops, beta1: int, options: SolverOptions) -> np.ndarray:
    """M1-orthonormal basis of curl-free, weakly div-free edge fields."""
    if beta1 == 0:
        return np.zeros((ops.mass1.shape[0], 0))
    E = ops.mass1.shape[0]
    constraints = sp.vstack([ops.d1, (ops.mass1 @ ops.d0).T])
    if E <= 2 * options.dense_cutoff:
        basis = la.null_space(constraints.toarray())
    else:
        gram = (constraints.T @ constraints).tocsr()
        scale = float(np.mean(gram.diagonal()))
        vals, basis = spla.eigsh(gram, k=beta1, sigma=-1e-8 * scale, which="LM")
        if np.max(np.abs(vals)) > 1e-10 * scale:
            raise EigenError("harmonic space not resolved by sparse null solve")
    if basis.shape[1] != beta1:
        raise EigenError(
            f"harmonic dimension {basis.shape[1]} != first Betti number {beta1}"
        )
    return _orthonormalize(basis, ops.mass1)


def solve_oneform(
    ops, k: int, tol: float = 1e-9, options: Optional[SolverOptions] = None
) -> SpectralResult:
    """k smallest 1-form Hodge-Laplacian eigenvalues, zeros included.

    Assembles nothing new: the Neumann block solves
    ``(d0^T M1 d0) psi = eta M0 psi`` on all vertices, the Dirichlet
    block solves the same pencil restricted to interior vertices, and
    harmonics come from the null space of ``(d1, d0^T M1)``.  Values
    are the merged ascending union.  Vector layout and block sizes are
    recorded in ``meta``; the block mass (Neumann stiffness, interior
    stiffness, edge mass) makes the columns orthonormal.
    """
    options = options or SolverOptions()
    mesh = ops.mesh
    V = ops.mass0.shape[0]
    E = ops.mass1.shape[0]
    interior = np.nonzero(~mesh.boundary_vertex_mask)[0]
    n_int = len(interior)
    beta1 = mesh.betti1
    total = (V - 1) + n_int + beta1
    if not 1 <= k <= total:
        raise EigenError(f"requested {k} eigenvalues of {total} available")

    stiff = ops.d0.T @ (ops.mass1 @ ops.d0)
    stiff = (0.5 * (stiff + stiff.T)).tocsr()
    stiff_int = stiff[interior][:, interior].tocsr()
    mass_int = ops.mass0[interior][:, interior].tocsr()

    neu = solve_smallest(
        stiff, ops.mass0, min(k + 1, V), tol, bc="neumann", options=options
    )
    coex = None
    if n_int > 0:
        coex = solve_smallest(
            stiff_int, mass_int, min(k, n_int), tol,
            bc="dirichlet", options=options,
        )
    harmonics = _natural_harmonics(ops, beta1, options)

    # harmonic Rayleigh quotients: tiny but honest, not hard zeros
    h_values = []
    for j in range(harmonics.shape[1]):
        eta = harmonics[:, j]
        curl = ops.d1 @ eta
        div_rhs = ops.d0.T @ (ops.mass1 @ eta)
        sigma = spla.spsolve(ops.mass0.tocsc(), div_rhs)
        num = float(curl @ (ops.mass2 @ curl) + sigma @ (ops.mass0 @ sigma))
        h_values.append(num / float(eta @ (ops.mass1 @ eta)))

    top = max(
        [v for v in neu.values] + ([] if coex is None else list(coex.values)),
        default=1.0,
    )
    zero_cut = ZERO_MODE_FACTOR * max(top, 1e-300)

    candidates = []  # (value, block, local index, residual)
    for j, v in enumerate(h_values):
        candidates.append((v, "harmonic", j, v))
    for i, v in enumerate(neu.values):
        if v > zero_cut:  # drop the constant mode, d psi = 0
            candidates.append((float(v), "exact", i, float(neu.residuals[i])))
    if coex is not None:
        for i, v in enumerate(coex.values):
            candidates.append((float(v), "coexact", i, float(coex.residuals[i])))
    candidates.sort(key=lambda c: c[0])
    if len(candidates) < k:
        raise EigenError(
            f"only {len(candidates)} candidate modes for k={k}; "
            "increase the block solve depth"
        )
    chosen = candidates[:k]

    vectors = np.zeros((V + n_int + E, k))
    values = np.empty(k)
    residuals = np.empty(k)
    for col, (value, block, i, res) in enumerate(chosen):
        values[col] = value
        residuals[col] = res
        if block == "exact":
            vectors[:V, col] = neu.vectors[:, i] / np.sqrt(value)
        elif block == "coexact":
            vectors[V : V + n_int, col] = coex.vectors[:, i] / np.sqrt(value)
        else:
            vectors[V + n_int :, col] = harmonics[:, i]

    mass = sp.block_diag([stiff, stiff_int, ops.mass1]).tocsr()
    converged = neu.converged and (coex is None or coex.converged)
    return SpectralResult(
        values,
        vectors,
        residuals,
        "oneform",
        mass,
        method=f"hodge-split/{neu.method}",
        converged=converged,
        meta={
            "zero_modes": int(beta1),
            "block_sizes": {"exact": V, "coexact": n_int, "harmonic": E},
            "block_of": [c[1] for c in chosen],
        },
    )


# ---------------------------------------------------------------------------
# multiplicity clustering


def cluster_multiplicities(
    values, rel_gap: float = 1e-6
) -> List[Tuple[float, int]]:
    """Greedy clustering of an ascending sequence.

    Consecutive values merge when their gap is at most ``rel_gap``
    times the larger magnitude; each cluster reports its mean and
    count.
    """
    vals = [float(v) for v in values]
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise EigenError("multiplicity clustering expects ascending input")
    clusters: List[List[float]] = []
    for v in vals:
        if clusters and v - clusters[-1][-1] <= rel_gap * max(
            abs(clusters[-1][-1]), abs(v)
        ):
            clusters[-1].append(v)
        else:
            clusters.append([v])
    return [(sum(c) / len(c), len(c)) for c in clusters]
