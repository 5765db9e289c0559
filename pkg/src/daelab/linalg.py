"""Symmetric eigendecomposition by cyclic Jacobi rotations.

Rotations are applied in round-robin (tournament) order: each round pairs
every index with exactly one other, so all rotations of a round commute and
go in as a single orthogonal matrix product.
"""

from __future__ import annotations

import numpy as np


def _tournament(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        top = players[: m // 2]
        bot = players[m // 2:][::-1]
        rounds.append((np.array(top), np.array(bot)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigenvalues (ascending) and orthonormal eigenvectors of symmetric ``a``."""
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    a = 0.5 * (a + a.T)
    m = n + (n % 2)
    if m != n:
        a = np.pad(a, ((0, 1), (0, 1)))
    v = np.eye(m)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0:
        w = np.diag(a)[:n].copy()
        return w, np.eye(n)
    rounds = _tournament(m)
    eye = np.eye(m)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            nz = np.abs(apq) > 1e-300
            zeta = np.where(nz, (aqq - app) / (2.0 * np.where(nz, apq, 1.0)), 0.0)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = np.where(nz, sgn / (np.abs(zeta) + np.hypot(1.0, zeta)), 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            j = eye.copy()
            j[p, p] = c
            j[q, q] = c
            j[p, q] = s
            j[q, p] = -s
            a = j.T @ a @ j
            v = v @ j
        a = 0.5 * (a + a.T)
    w = np.diag(a).copy()
    if m != n:
        # the padding index has zero coupling, so its rotations are all identity
        w, v = w[:n], v[:n, :n]
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def singular_values(a: np.ndarray) -> np.ndarray:
    """Descending singular values through Jacobi on ``a^T a``."""
    a = np.asarray(a, dtype=np.float64)
    g = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    w, _ = jacobi_eigh(g)
    return np.sqrt(np.clip(w, 0.0, None))[::-1]
