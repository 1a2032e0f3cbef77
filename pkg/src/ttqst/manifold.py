"""Geometry of the fixed-TT-rank manifold: tangent spaces, projection, retraction.

The tangent space at a left-orthogonal TT tensor ``T = [T_1, ..., T_n]`` is
parametrized by gauge-fixed variation cores ``X_k`` (``L(X_k)^T L(T_k) = 0``
for k < n); the represented ambient tensor is the sum over k of the chains
``[T_1, ..., X_k, ..., T_n]``.  Projection of a sparse ambient tensor costs
``O(n d^2 r^2)`` per entry plus one cached r-by-r solve per cut.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import tt
from .tt import TtTensor, TtError, fold_left, left_unfold

# Rank-deficiency rejection threshold: smallest/largest right-part singular
# value below this ratio means the foot point is off-manifold.
DEGENERATE_TOL = 1e-12


class ManifoldError(ValueError):
    """Raised for invalid tangent-space inputs (degenerate bases, shapes)."""


class SparseTensor:
    """Sparse n-mode tensor as (multi-index, value) pairs.

    Duplicate indices are summed on construction.
    """

    __slots__ = ("mode_dims", "indices", "values")

    def __init__(self, mode_dims, entries=None, indices=None, values=None):
        self.mode_dims = tuple(int(m) for m in mode_dims)
        if entries is not None:
            indices = np.asarray([e[0] for e in entries], dtype=np.int64)
            values = np.asarray([e[1] for e in entries], dtype=np.float64)
        else:
            indices = np.asarray(indices, dtype=np.int64)
            values = np.asarray(values, dtype=np.float64)
        if indices.ndim != 2 or indices.shape[1] != len(self.mode_dims):
            raise ManifoldError(f"index array must be (N, {len(self.mode_dims)})")
        if indices.shape[0] != values.shape[0]:
            raise ManifoldError("index/value count mismatch")
        for k, m in enumerate(self.mode_dims):
            col = indices[:, k]
            if col.size and (col.min() < 0 or col.max() >= m):
                raise ManifoldError(f"index out of range in mode {k}")
        # Sum duplicates to keep the representation canonical.
        if indices.shape[0] > 1:
            order = np.lexsort(indices.T[::-1])
            indices = indices[order]
            values = values[order]
            keep = np.ones(indices.shape[0], dtype=bool)
            keep[1:] = np.any(indices[1:] != indices[:-1], axis=1)
            group = np.cumsum(keep) - 1
            summed = np.zeros(int(group[-1]) + 1)
            np.add.at(summed, group, values)
            indices = indices[keep]
            values = summed
        self.indices = indices
        self.values = values

    @property
    def nnz(self) -> int:
        return self.indices.shape[0]

    def to_dense(self) -> np.ndarray:
        if int(np.prod(self.mode_dims)) > tt.DENSE_CAP:
            raise ManifoldError("sparse tensor too large to densify")
        x = np.zeros(self.mode_dims)
        np.add.at(x, tuple(self.indices.T), self.values)
        return x


class TangentVector:
    """First-order variation of a TT tensor at a left-orthogonal foot point."""

    __slots__ = ("base", "variation_cores")

    def __init__(self, base: TtTensor, variation_cores):
        if len(variation_cores) != base.n:
            raise ManifoldError("need one variation core per site")
        vcs = []
        for c, bc in zip(variation_cores, base.cores):
            c = np.asarray(c, dtype=np.float64)
            if c.shape != bc.shape:
                raise ManifoldError(f"variation core shape {c.shape} != base {bc.shape}")
            vcs.append(c)
        self.base = base
        self.variation_cores = vcs

    def gauge_residual(self) -> float:
        """Max violation of ``L(X_k)^T L(T_k) = 0`` over k < n."""
        worst = 0.0
        for k in range(self.base.n - 1):
            g = left_unfold(self.variation_cores[k]).T @ left_unfold(self.base.cores[k])
            worst = max(worst, float(np.max(np.abs(g))) if g.size else 0.0)
        return worst

    def norm(self) -> float:
        return tt.tt_norm(tangent_to_tt(self))

    def scaled(self, alpha: float) -> "TangentVector":
        return TangentVector(self.base, [alpha * c for c in self.variation_cores])


def manifold_dim(mode_dims, ranks) -> int:
    """Dimension of the fixed-rank manifold: sum m_k r_{k-1} r_k - sum r_k^2."""
    dims = tuple(int(m) for m in mode_dims)
    rk = (1,) + tuple(int(r) for r in ranks) + (1,)
    if not tt.ranks_feasible(dims, ranks):
        raise ManifoldError("infeasible ranks")
    total = sum(dims[k] * rk[k] * rk[k + 1] for k in range(len(dims)))
    return total - sum(r * r for r in ranks)


def _require_left_orthogonal(base: TtTensor):
    for k in range(base.n - 1):
        if base.ortho[k] == tt.LEFT:
            continue
        if not tt.is_left_orthogonal(base.cores[k], tol=1e-10):
            raise ManifoldError(
                "projection foot point must have left-orthogonal cores 1..n-1 "
                "(run left_orthogonalize first)"
            )


class TangentGeometry:
    """Per-foot-point caches for tangent projection.

    Precomputes the right-part Gram matrices ``H_k = T^{>=k} T^{>=k,T}`` and
    their Cholesky factors once; they are reused across all entries of a
    minibatch (the caches are foot-point-constant and immutable).
    """

    def __init__(self, base: TtTensor):
        _require_left_orthogonal(base)
        self.base = base
        n = base.n
        # right_grams[k] = T^{>=k} T^{>=k,T} for sites k = 1..n+1 (1-based).
        grams = [None] * (n + 2)
        grams[n + 1] = np.ones((1, 1))
        for k in range(n, 0, -1):
            c = base.cores[k - 1]
            grams[k] = np.einsum("amb,bc,dmc->ad", c, grams[k + 1], c, optimize=True)
        self.right_grams = grams
        self.chol = [None] * (n + 2)
        for k in range(2, n + 1):
            h = grams[k]
            w = np.linalg.eigvalsh(h)
            if w[0] <= 0.0 or np.sqrt(max(w[0], 0.0) / w[-1]) < DEGENERATE_TOL:
                raise ManifoldError(
                    "rank-deficient foot point: right-part Gram at cut "
                    f"{k - 1} is singular"
                )
            self.chol[k] = cho_factor(h)
        # Projectors are applied as X -= L(T_k) (L(T_k)^T X).
        self.left_unfolds = [left_unfold(c) for c in base.cores]

    def project_batch(self, idx: np.ndarray, values: np.ndarray) -> TangentVector:
        """Project ``sum_b values[b] * e_{idx[b]}`` onto the tangent space."""
        base = self.base
        n = base.n
        idx = np.asarray(idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        bsz = idx.shape[0]

        # Left chain vectors v_k(b) = row (idx_1..idx_k) of T^{<=k}.
        lefts = [np.ones((bsz, 1))]
        for k in range(n - 1):
            sl = base.cores[k][:, idx[:, k], :]
            lefts.append(np.einsum("bi,ibj->bj", lefts[k], sl, optimize=True))
        # Right chain vectors w_k(b) = column (idx_k..idx_n) of T^{>=k}.
        rights = [None] * (n + 2)
        rights[n + 1] = np.ones((bsz, 1))
        for k in range(n, 0, -1):
            sl = base.cores[k - 1][:, idx[:, k - 1], :]
            rights[k] = np.einsum("ibj,bj->bi", sl, rights[k + 1], optimize=True)

        vcores = []
        for k in range(n):
            m = base.mode_dims[k]
            r0, _, r1 = base.cores[k].shape
            if k < n - 1:
                # Solve against the right Gram, then scatter the rank-one
                # contributions over the physical index.
                s = cho_solve(self.chol[k + 2], rights[k + 2].T).T  # (B, r1)
                contrib = values[:, None, None] * lefts[k][:, :, None] * s[:, None, :]
            else:
                contrib = values[:, None, None] * lefts[k][:, :, None] * np.ones((bsz, 1, 1))
            raw = np.zeros((m, r0, r1))
            np.add.at(raw, idx[:, k], contrib)
            xk = np.ascontiguousarray(np.moveaxis(raw, 0, 1))  # (r0, m, r1)
            if k < n - 1:
                lu = left_unfold(xk)
                lt = self.left_unfolds[k]
                lu = lu - lt @ (lt.T @ lu)
                xk = fold_left(lu, r0, m)
            vcores.append(xk)
        return TangentVector(base, vcores)

    def project_sparse(self, g: SparseTensor) -> TangentVector:
        if g.mode_dims != self.base.mode_dims:
            raise ManifoldError("sparse tensor shape mismatch")
        return self.project_batch(g.indices, g.values)

    def project_dense(self, x: np.ndarray) -> TangentVector:
        base = self.base
        n = base.n
        x = np.asarray(x, dtype=np.float64)
        if x.shape != base.mode_dims:
            raise ManifoldError(f"dense shape {x.shape} != {base.mode_dims}")
        if x.size > tt.DENSE_CAP:
            raise ManifoldError("dense input above size cap")
        lefts = [np.ones((1, 1))]
        for k in range(1, n):
            lefts.append(tt.left_part(base, k))
        rights = [None] * (n + 2)
        rights[n + 1] = np.ones((1, 1))
        for k in range(n, 1, -1):
            rights[k] = tt.right_part(base, k - 1)

        vcores = []
        flat = x.reshape(-1, order="F")
        for k in range(n):
            m = base.mode_dims[k]
            r0, _, r1 = base.cores[k].shape
            dl = int(np.prod(base.mode_dims[:k], dtype=int))
            sep = flat.reshape(dl, -1, order="F")  # rows (s_1..s_k-1 ... ) below
            # Contract the left environment, regroup rows as (r_{k-1}, m).
            m1 = lefts[k].T @ sep if k > 0 else sep
            m1 = m1.reshape(r0 * m, -1, order="F")
            if k < n - 1:
                m2 = m1 @ rights[k + 2].T
                m2 = cho_solve(self.chol[k + 2], m2.T).T
                lt = self.left_unfolds[k]
                m2 = m2 - lt @ (lt.T @ m2)
            else:
                m2 = m1
            vcores.append(fold_left(m2, r0, m))
        return TangentVector(base, vcores)


def project_tangent_sparse(base: TtTensor, g: SparseTensor) -> TangentVector:
    return TangentGeometry(base).project_sparse(g)


def project_tangent_dense(base: TtTensor, x: np.ndarray) -> TangentVector:
    return TangentGeometry(base).project_dense(x)


def tangent_to_tt(v: TangentVector) -> TtTensor:
    """Exact TT form of the ambient tangent tensor (ranks at most 2r).

    Stacked-core construction: interior cores hold ``[[T_k, X_k], [0, T_k]]``
    blocks; the boundary cores are trimmed to a row/column of blocks.
    """
    base = v.base
    n = base.n
    if n == 0:
        raise ManifoldError("empty base")
    cores = []
    for k in range(n):
        tk = base.cores[k]
        xk = v.variation_cores[k]
        r0, m, r1 = tk.shape
        if k == 0:
            c = np.concatenate([tk, xk], axis=2)
        elif k == n - 1:
            c = np.concatenate([xk, tk], axis=0)
        else:
            c = np.zeros((2 * r0, m, 2 * r1))
            c[:r0, :, :r1] = tk
            c[:r0, :, r1:] = xk
            c[r0:, :, r1:] = tk
        cores.append(c)
    return TtTensor(cores)


def tangent_step(base: TtTensor, v: TangentVector, eta: float) -> TtTensor:
    """TT representation of ``base - eta * ambient(v)``, ranks at most 2r."""
    if v.base.mode_dims != base.mode_dims or v.base.ranks != base.ranks:
        raise ManifoldError("tangent vector base mismatch")
    n = base.n
    cores = []
    for k in range(n):
        tk = base.cores[k]
        xk = -eta * v.variation_cores[k]
        r0, m, r1 = tk.shape
        if k == 0:
            c = np.concatenate([tk, xk], axis=2)
        elif k == n - 1:
            c = np.concatenate([xk + tk, tk], axis=0)
        else:
            c = np.zeros((2 * r0, m, 2 * r1))
            c[:r0, :, :r1] = tk
            c[:r0, :, r1:] = xk
            c[r0:, :, r1:] = tk
        cores.append(c)
    return TtTensor(cores)


def trim(t: TtTensor, xi: float) -> TtTensor:
    """Entrywise clip to ``[-xi, xi]`` preserving sign.

    Dense below the size cap; above the cap trimming is skipped with a
    warning (in practice the online solver behaves identically without it).
    """
    if xi < 0:
        raise ManifoldError("trim threshold must be nonnegative")
    if t.size > tt.DENSE_CAP:
        warnings.warn(
            f"trim skipped: {t.size} entries above dense cap {tt.DENSE_CAP}",
            RuntimeWarning,
            stacklevel=2,
        )
        return t
    x = np.clip(tt.tt_dense(t), -xi, xi)
    return tt.tt_from_dense(x)


def retract(t_plus: TtTensor, ranks, trim_xi: float | None = None) -> TtTensor:
    """Retraction onto the rank-``ranks`` manifold: optional trim, then TTSVD."""
    ranks = tuple(int(r) for r in ranks)
    if any(rp < r for rp, r in zip(t_plus.ranks, ranks)):
        raise ManifoldError(f"input ranks {t_plus.ranks} below target {ranks}")
    if trim_xi is not None:
        if t_plus.size <= tt.DENSE_CAP:
            x = np.clip(tt.tt_dense(t_plus), -trim_xi, trim_xi)
            return tt.ttsvd(x, ranks)
        warnings.warn(
            f"trim skipped in retraction: {t_plus.size} entries above cap",
            RuntimeWarning,
            stacklevel=2,
        )
    return tt.ttsvd(t_plus, ranks)
