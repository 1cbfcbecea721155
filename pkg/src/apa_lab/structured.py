"""Shift matrices, masked identities and the row/column-zero matrix classes.

Conventions (indices 1-based in the prose, 0-based in code):

* ``imonio(K, m)`` has ones where ``column - row == m``; left-multiplying by
  it moves rows up (``m > 0``) or down (``m < 0``) with zero padding.
* ``masked_identity(K, m)`` is the identity with its first ``m`` diagonal
  entries zeroed.
* ``F_m``: last ``K - m`` rows are zero. ``C_m``: first ``m`` columns are zero.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np

__all__ = [
    "MAX_K",
    "MAX_J",
    "ConsistencyError",
    "imonio",
    "masked_identity",
    "membership_tol",
    "in_F",
    "in_C",
    "decompose_shifted",
    "enumerate_index_lists",
    "is_valid_index_list",
    "scalar_expansion_identity",
]

MAX_K = 16
MAX_J = 20


class ConsistencyError(ValueError):
    """Inputs do not come from a common stationary process."""


def _check_K(K):
    if not 1 <= K <= MAX_K:
        raise ValueError(f"K must be in [1, {MAX_K}], got {K}")


def imonio(K, m):
    """K x K shift matrix with ``[I]_{q,p} = 1`` iff ``p - q == m``."""
    _check_K(K)
    return np.eye(K, k=m) if abs(m) < K else np.zeros((K, K))


def masked_identity(K, m):
    """Diagonal 0/1 matrix whose first ``m`` diagonal entries are zero."""
    _check_K(K)
    if not 0 <= m <= K:
        raise ValueError("need 0 <= m <= K")
    d = np.ones(K)
    d[:m] = 0.0
    return np.diag(d)


def membership_tol(A):
    """``1e-12 * max(max|A|, 1)``."""
    return 1e-12 * max(float(np.max(np.abs(A))) if np.size(A) else 0.0, 1.0)


def _square(A):
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    _check_K(A.shape[0])
    return A


def in_F(A, m, tol=None):
    """True iff every entry below row ``m`` has magnitude at most ``tol``."""
    A = _square(A)
    if not 0 <= m <= A.shape[0]:
        raise ValueError("need 0 <= m <= K")
    tol = membership_tol(A) if tol is None else tol
    return bool(np.all(np.abs(A[m:, :]) <= tol))


def in_C(A, m, tol=None):
    """True iff every entry in the first ``m`` columns has magnitude at most ``tol``."""
    A = _square(A)
    if not 0 <= m <= A.shape[0]:
        raise ValueError("need 0 <= m <= K")
    tol = membership_tol(A) if tol is None else tol
    return bool(np.all(np.abs(A[:, :m]) <= tol))


def decompose_shifted(R_x, R_shift, m):
    """Residual ``M_m = R_{x,-m} - I_{K,-m} R_x`` of the shifted-correlation split.

    For a genuine stationary process the residual lives in ``F_m`` (only its
    first ``m`` rows are nonzero); anything else raises ``ConsistencyError``.
    """
    R_x = _square(R_x)
    R_shift = _square(R_shift)
    K = R_x.shape[0]
    if R_shift.shape != R_x.shape:
        raise ValueError("R_x and R_shift differ in shape")
    if not 0 < m < K:
        raise ValueError(f"need 0 < m < K, got m={m}, K={K}")
    M_m = R_shift - imonio(K, -m) @ R_x
    tol = 1e-12 * max(float(np.max(np.abs(R_x))), float(np.max(np.abs(R_shift))), 1.0)
    if not in_F(M_m, m, tol):
        raise ConsistencyError(
            f"residual has nonzero rows below row {m}: inputs are not "
            "shifted correlations of a common process"
        )
    return M_m


def enumerate_index_lists(i, j):
    """Every nonempty decreasing sublist of ``[i-1, ..., i-j+1]``.

    These index the terms of ``prod_{k=1}^{j-1} (I - G_{i-k})`` once it is
    expanded into a sum; there are ``2**(j-1) - 1`` of them.
    """
    if j < 2:
        raise ValueError("need j >= 2")
    if j > MAX_J:
        raise ValueError(f"j > {MAX_J} would enumerate too many lists")
    pool = list(range(i - 1, i - j, -1))
    return [list(c) for size in range(1, j) for c in combinations(pool, size)]


def is_valid_index_list(lst, i, j):
    """Naturals, fewer than ``j`` of them, strictly decreasing inside ``(i-j, i)``."""
    if not lst or len(lst) >= j:
        return False
    if any(int(s) != s or s < 0 for s in lst):
        return False
    return all(a > b for a, b in zip([i] + list(lst), list(lst) + [i - j]))


def scalar_expansion_identity(mu, i, j):
    """Both sides of ``1 + sum_p (-1)^{#I_p} prod_{s in I_p} mu_s = prod_{k=1}^{j-1} (1 - mu_{i-k})``.

    ``mu`` is indexable by absolute time (sequence, array or mapping). The
    sign uses the list length; it is the parity of the number of factors
    picked from the product.
    """
    lhs = 1.0
    for lst in enumerate_index_lists(i, j):
        lhs += (-1) ** len(lst) * float(np.prod([mu[s] for s in lst]))
    rhs = float(np.prod([1.0 - mu[i - k] for k in range(1, j)]))
    return lhs, rhs
