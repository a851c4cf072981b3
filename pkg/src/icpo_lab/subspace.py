"""Orthonormal bases for the zero-sum subspace and restricted eigenvalues.

The basis of choice is the Helmert construction: it is fixed and fully
deterministic, so every restricted eigenvalue reported anywhere in the
package is reproducible bit for bit.
"""

from __future__ import annotations

import numpy as np


def helmert_basis(k: int) -> np.ndarray:
    """K x (K-1) matrix whose orthonormal columns span the zero-sum subspace.

    Column j (1-based) is (1, ..., 1, -j, 0, ..., 0) / sqrt(j (j+1)) with j
    leading ones.
    """
    if k < 2:
        raise ValueError(f"need K >= 2, got {k}")
    q = np.zeros((k, k - 1))
    for j in range(1, k):
        q[:j, j - 1] = 1.0
        q[j, j - 1] = -float(j)
        q[:, j - 1] /= np.sqrt(j * (j + 1))
    return q


def paired_helmert_basis(k: int) -> np.ndarray:
    """2K x 2(K-1) block-diagonal basis for the per-channel zero-sum subspace."""
    q = helmert_basis(k)
    out = np.zeros((2 * k, 2 * (k - 1)))
    out[:k, : k - 1] = q
    out[k:, k - 1 :] = q
    return out


def restricted_eigenvalues(m: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Eigenvalues of the symmetric matrix m restricted to span(basis)."""
    m = np.asarray(m, dtype=float)
    return np.linalg.eigvalsh(basis.T @ m @ basis)
