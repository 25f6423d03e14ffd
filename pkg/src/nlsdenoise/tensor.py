"""Dense tensor algebra: unfolding, folding, n-mode products, SVD.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Modes are
1-based, so ``unfold(t, 1)`` matricizes along the first axis.

Storage mapping of the mode-n unfolding: tensor element with 1-based index
``(i_1, ..., i_N)`` lands on matrix element ``(i_n, j)`` with

    j = 1 + sum_{k != n} (i_k - 1) * J_k,    J_k = prod_{m < k, m != n} I_m

i.e. the remaining indices are linearized with the lowest mode varying
fastest (column-major over the remaining modes). Storage of the tensors
themselves is numpy's default C order; only the unfolding is normative.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Return ``x`` as a float64 array, checking order, extents and finiteness."""
    t = np.asarray(x, dtype=np.float64)
    if t.ndim < 1:
        raise ValueError(f"{name} must have order >= 1, got a scalar")
    if any(n < 1 for n in t.shape):
        raise ValueError(f"{name} has an empty extent: shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{name} contains NaN or Inf")
    return t


def _check_mode(mode: int, order: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 1 <= mode <= order:
        raise ValueError(f"mode must be in 1..{order}, got {mode!r}")
    return int(mode) - 1


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization of ``t``; shape ``I_n x prod(I_k, k != n)``."""
    t = np.asarray(t, dtype=np.float64)
    axis = _check_mode(mode, t.ndim)
    return np.moveaxis(t, axis, 0).reshape(t.shape[axis], -1, order="F")


def fold(m: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor of ``shape`` from ``m``."""
    m = np.asarray(m, dtype=np.float64)
    shape = tuple(int(s) for s in shape)
    axis = _check_mode(mode, len(shape))
    rest = int(np.prod([s for i, s in enumerate(shape) if i != axis]))
    if m.ndim != 2 or m.shape != (shape[axis], rest):
        raise ValueError(
            f"matrix of shape {m.shape} cannot be folded along mode {mode} into {shape}"
        )
    moved = (shape[axis],) + tuple(s for i, s in enumerate(shape) if i != axis)
    return np.moveaxis(m.reshape(moved, order="F"), 0, axis)


def mode_n_product(t: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """``t x_n u``: replaces extent ``I_n`` by ``rows(u)``.

    Equivalent to ``fold(u @ unfold(t, mode), mode, new_shape)``.
    """
    t = np.asarray(t, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    axis = _check_mode(mode, t.ndim)
    if u.ndim != 2 or u.shape[1] != t.shape[axis]:
        raise ValueError(
            f"matrix of shape {u.shape} does not match extent {t.shape[axis]} of mode {mode}"
        )
    return np.moveaxis(np.tensordot(u, t, axes=(1, axis)), 0, axis)


def frobenius_norm(t: np.ndarray) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def sign_fix(u: np.ndarray, v: np.ndarray | None = None):
    """Flip singular-vector pairs so each column of ``u`` has a nonnegative
    largest-magnitude entry (first such row wins ties). ``v`` holds the
    matching right vectors as columns and is flipped alongside."""
    rows = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[rows, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs, (None if v is None else v * signs)


def svd(m: np.ndarray, full_matrices: bool = False):
    """Singular value decomposition ``m = U @ diag(s) @ V.T``.

    Returns ``(U, s, V)`` with ``V`` holding right singular vectors as
    columns and ``s`` nonincreasing. Signs are fixed deterministically via
    :func:`sign_fix`. With ``full_matrices`` the left factor is square and
    its trailing columns (spanning the left null space) are also sign-fixed.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"svd expects a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd input contains NaN or Inf")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=full_matrices)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"SVD did not converge for {m.shape[0]}x{m.shape[1]} matrix "
            f"(frobenius norm {frobenius_norm(m):.6g}, max |entry| {np.abs(m).max():.6g})"
        ) from exc
    v = vt.T
    r = s.size
    u_head, v = sign_fix(u[:, :r], v[:, :r])
    if u.shape[1] > r:
        u_tail, _ = sign_fix(u[:, r:])
        u = np.concatenate([u_head, u_tail], axis=1)
    else:
        u = u_head
    return u, s, v
