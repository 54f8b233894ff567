"""Structured linear algebra for stripe matrices.

A stripe matrix is a block matrix whose blocks are all diagonal. Only the
block diagonals are stored, as a (block_rows, block_cols, block_len) complex
array, so every operation reduces to elementwise work along the last axis.
Equivalently, a stripe matrix is a stack of block_len independent small
matrices (one per diagonal slot), which is what makes the block Cholesky-style
factorization below both exact and cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DecompositionFailure(Exception):
    """A factorization hit a nonpositive or non-finite pivot.

    Callers that evaluate densities are expected to catch this and treat the
    offending input as having zero likelihood.
    """


# Pivots at or below this are treated as nonpositive: downstream consumers
# work in the log domain and cannot survive log(x) for smaller x anyway.
PIVOT_FLOOR = 1e-300


@dataclass(frozen=True)
class StripeMatrix:
    """Block matrix of diagonal blocks, stored as stacked diagonals.

    ``data[i, j, :]`` holds the diagonal of block (i, j). The dense matrix it
    represents has shape (block_rows * block_len, block_cols * block_len).
    """

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("stripe storage must have shape (rows, cols, len)")

    @property
    def block_rows(self) -> int:
        return self.data.shape[0]

    @property
    def block_cols(self) -> int:
        return self.data.shape[1]

    @property
    def block_len(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of the dense matrix this stripe represents."""
        r, c, n = self.data.shape
        return (r * n, c * n)

    @classmethod
    def zeros(cls, block_rows: int, block_cols: int, block_len: int) -> "StripeMatrix":
        return cls(np.zeros((block_rows, block_cols, block_len), dtype=complex))

    @classmethod
    def identity(cls, n_blocks: int, block_len: int) -> "StripeMatrix":
        data = np.zeros((n_blocks, n_blocks, block_len), dtype=complex)
        idx = np.arange(n_blocks)
        data[idx, idx, :] = 1.0
        return cls(data)

    @classmethod
    def block_diagonal(cls, diagonals: np.ndarray) -> "StripeMatrix":
        """Square stripe with the rows of ``diagonals`` on the block diagonal."""
        diagonals = np.asarray(diagonals)
        k, n = diagonals.shape
        data = np.zeros((k, k, n), dtype=complex)
        idx = np.arange(k)
        data[idx, idx, :] = diagonals
        return cls(data)


@dataclass(frozen=True)
class LdlFactors:
    """Unit-lower stripe factor and the (scalar) diagonal of R = L D L^H.

    ``diag`` is stored as a real (block_rows, block_len) array; the diagonal
    blocks of D are themselves diagonal, so keeping block structure for them
    would be redundant.
    """

    unit_lower: StripeMatrix
    diag: np.ndarray


def stripe_adjoint(a: StripeMatrix) -> StripeMatrix:
    """Hermitian transpose: swap block indices and conjugate the diagonals."""
    return StripeMatrix(a.data.conj().transpose(1, 0, 2))


def stripe_add(a: StripeMatrix, b: StripeMatrix) -> StripeMatrix:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return StripeMatrix(a.data + b.data)


def stripe_mul(a: StripeMatrix, b: StripeMatrix) -> StripeMatrix:
    """Block matrix product; diagonal blocks multiply elementwise."""
    if a.block_cols != b.block_rows or a.block_len != b.block_len:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return StripeMatrix(np.einsum("ijn,jkn->ikn", a.data, b.data))


def stripe_matvec(a: StripeMatrix, v: np.ndarray) -> np.ndarray:
    """Apply a stripe matrix to a block vector.

    ``v`` may be flat (length block_cols * block_len) or already shaped
    (block_cols, block_len); the result matches the layout of the input.
    """
    v = np.asarray(v)
    flat = v.ndim == 1
    vb = _as_blocks(v, a.block_cols, a.block_len)
    out = np.einsum("ijn,jn->in", a.data, vb)
    return out.reshape(-1) if flat else out


def gram(a: StripeMatrix) -> StripeMatrix:
    """A^H A without forming the adjoint explicitly."""
    return StripeMatrix(np.einsum("ijn,ikn->jkn", a.data.conj(), a.data))


def block_ldl(r: StripeMatrix) -> LdlFactors:
    """Factor a Hermitian positive-definite stripe matrix as L D L^H.

    L is unit-lower with the same stripe structure as the strictly lower part
    of ``r``; D is diagonal and returned as a real (k, block_len) array. On a
    nonpositive or non-finite pivot this raises :class:`DecompositionFailure`.
    """
    if r.block_rows != r.block_cols:
        raise ValueError("block_ldl requires a square stripe matrix")
    k, _, n = r.data.shape
    lower = np.zeros((k, k, n), dtype=complex)
    diag = np.empty((k, n), dtype=float)
    for j in range(k):
        acc = r.data[j, j].copy()
        if j:
            acc -= ((lower[j, :j].real ** 2 + lower[j, :j].imag ** 2) * diag[:j]).sum(axis=0)
        d = acc.real
        if not np.all(np.isfinite(d)) or np.any(d <= PIVOT_FLOOR):
            raise DecompositionFailure(f"nonpositive pivot in diagonal block {j}")
        diag[j] = d
        lower[j, j] = 1.0
        if j + 1 < k:
            cross = r.data[j + 1 :, j].copy()
            if j:
                cross -= np.einsum(
                    "isn,sn->in", lower[j + 1 :, :j], diag[:j] * lower[j, :j].conj()
                )
            lower[j + 1 :, j] = cross / d
    return LdlFactors(StripeMatrix(lower), diag)


def forward_substitute(lower: StripeMatrix, z: np.ndarray) -> np.ndarray:
    """Solve L x = z for a unit-lower stripe L.

    Accepts ``z`` flat or as (blocks, block_len); returns the same layout.
    """
    z = np.asarray(z, dtype=complex)
    flat = z.ndim == 1
    x = _as_blocks(z, lower.block_rows, lower.block_len).copy()
    for j in range(1, lower.block_rows):
        x[j] -= np.einsum("sn,sn->n", lower.data[j, :j], x[:j])
    return x.reshape(-1) if flat else x


def backward_substitute_adjoint(lower: StripeMatrix, u: np.ndarray) -> np.ndarray:
    """Solve L^H x = u for a unit-lower stripe L."""
    u = np.asarray(u, dtype=complex)
    flat = u.ndim == 1
    x = _as_blocks(u, lower.block_rows, lower.block_len).copy()
    for j in range(lower.block_rows - 2, -1, -1):
        x[j] -= np.einsum("in,in->n", lower.data[j + 1 :, j].conj(), x[j + 1 :])
    return x.reshape(-1) if flat else x


def ldl_solve(factors: LdlFactors, z: np.ndarray) -> np.ndarray:
    """Solve R x = z given R = L D L^H."""
    z = np.asarray(z, dtype=complex)
    flat = z.ndim == 1
    lower = factors.unit_lower
    w = forward_substitute(lower, _as_blocks(z, lower.block_rows, lower.block_len))
    x = backward_substitute_adjoint(lower, w / factors.diag)
    return x.reshape(-1) if flat else x


def stripe_logdet(factors: LdlFactors) -> float:
    """log det(R) = sum of log pivots; L contributes nothing (unit diagonal)."""
    d = factors.diag
    if not np.all(np.isfinite(d)) or np.any(d <= PIVOT_FLOOR):
        raise DecompositionFailure("nonpositive entry in factor diagonal")
    return float(np.log(d).sum())


def quadratic_form(factors: LdlFactors, z: np.ndarray) -> float:
    """z^H R^{-1} z = || L^{-1} z ||^2 weighted by 1/D; real and >= 0 for PD R."""
    lower = factors.unit_lower
    w = forward_substitute(lower, _as_blocks(np.asarray(z, dtype=complex), lower.block_rows, lower.block_len))
    return float(((w.real ** 2 + w.imag ** 2) / factors.diag).sum())


def densify(a: StripeMatrix) -> np.ndarray:
    """Expand to the dense matrix this stripe represents (test oracle)."""
    r, c, n = a.data.shape
    out = np.zeros((r * n, c * n), dtype=complex)
    idx = np.arange(n)
    for i in range(r):
        for j in range(c):
            out[i * n + idx, j * n + idx] = a.data[i, j]
    return out


def dump_dense(a: StripeMatrix, path) -> None:
    """Write the densified matrix to a text file for inspection."""
    dense = densify(a)
    with open(path, "w") as fh:
        for row in dense:
            fh.write(" ".join(f"{v.real:+.12e}{v.imag:+.12e}j" for v in row))
            fh.write("\n")


def _as_blocks(v: np.ndarray, blocks: int, block_len: int) -> np.ndarray:
    if v.ndim == 1:
        if v.shape[0] != blocks * block_len:
            raise ValueError(f"vector length {v.shape[0]} != {blocks}*{block_len}")
        return v.reshape(blocks, block_len)
    if v.shape != (blocks, block_len):
        raise ValueError(f"block vector shape {v.shape} != ({blocks}, {block_len})")
    return v
