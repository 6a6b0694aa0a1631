"""Pointwise algebra of a graph differential.

Everything here acts on a single m x n slope matrix (or a stack of them):
singular values, the induced metric and volume element, and the closed-form
spectral quantities that drive the area-decreasing inequality checks.  No
grids, no time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Pair sums of S-eigenvalues at or below this are treated as "outside the
# area-decreasing set": the log potential is reported as undefined rather
# than as a huge float.
PAIR_SUM_FLOOR = 1e-15

_JACOBI_MAX_SWEEPS = 60
_JACOBI_OFF_TOL = 1e-14


def jacobi_eigh(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of small symmetric matrices by cyclic Jacobi sweeps.

    ``mats`` is a stack shaped ``(..., n, n)``; returns ``(evals, evecs)`` with
    eigenvalues sorted descending and ``evecs[..., :, k]`` the matching unit
    eigenvectors.  Sweeps run until every matrix in the stack has off-diagonal
    Frobenius norm <= 1e-14 times its full norm (n <= 4 in practice, so this
    converges in a handful of sweeps).
    """
    a = np.array(mats, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError("expected a (..., n, n) stack of symmetric matrices")
    n = a.shape[-1]
    v = np.zeros_like(a)
    v[..., range(n), range(n)] = 1.0
    if n == 1:
        return a[..., 0, 0][..., None].copy(), v

    tol = _JACOBI_OFF_TOL * np.linalg.norm(a, axis=(-2, -1))
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.maximum(
            (a * a).sum(axis=(-2, -1))
            - (np.diagonal(a, axis1=-2, axis2=-1) ** 2).sum(axis=-1), 0.0))
        if np.all(off <= tol):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                nz = apq != 0.0
                with np.errstate(divide="ignore", invalid="ignore"):
                    tau = (a[..., q, q] - a[..., p, p]) / (2.0 * apq)
                    t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                    t = np.where(tau == 0.0, 1.0, t)  # tau=0 -> 45 degrees
                t = np.where(nz, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cc, ss = c[..., None], s[..., None]
                rp, rq = a[..., p, :].copy(), a[..., q, :].copy()
                a[..., p, :] = cc * rp - ss * rq
                a[..., q, :] = ss * rp + cc * rq
                cp, cq = a[..., :, p].copy(), a[..., :, q].copy()
                a[..., :, p] = cc * cp - ss * cq
                a[..., :, q] = ss * cp + cc * cq
                vp, vq = v[..., :, p].copy(), v[..., :, q].copy()
                v[..., :, p] = cc * vp - ss * vq
                v[..., :, q] = ss * vp + cc * vq

    evals = np.diagonal(a, axis1=-2, axis2=-1).copy()
    order = np.argsort(-evals, axis=-1, kind="stable")
    evals = np.take_along_axis(evals, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return evals, v


def _as_jacobian(jac) -> np.ndarray:
    j = np.asarray(jac, dtype=float)
    if j.ndim != 2:
        raise ValueError("a Jacobian is a 2-D (m, n) array")
    if j.shape[0] < 1 or j.shape[1] < 1:
        raise ValueError("need m >= 1 rows and n >= 1 columns")
    if not np.all(np.isfinite(j)):
        raise ValueError("Jacobian entries must be finite")
    return j


def singular_spectrum(jac) -> np.ndarray:
    """Singular values of an m x n slope matrix, sorted descending."""
    j = _as_jacobian(jac)
    evals, _ = jacobi_eigh(j.T @ j)
    return np.sqrt(np.clip(evals, 0.0, None))


def singular_spectrum_stack(jac_stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched singular values for a ``(..., m, n)`` stack.

    Returns ``(lambdas, qvecs)`` where ``lambdas`` is ``(..., n)`` descending
    and ``qvecs[..., :, i]`` is the right singular direction paired with
    ``lambdas[..., i]``.
    """
    j = np.asarray(jac_stack, dtype=float)
    gram = np.einsum("...ai,...aj->...ij", j, j)
    evals, vecs = jacobi_eigh(gram)
    return np.sqrt(np.clip(evals, 0.0, None)), vecs


@dataclass(frozen=True)
class PointGeometry:
    """Induced metric data of a graph at one point."""

    g: np.ndarray       # n x n, I + (du)^T du
    g_inv: np.ndarray
    v: float            # volume element sqrt(det g) >= 1
    w: float            # v^(1/n) >= 1
    du_norm: float      # Frobenius norm of du


def point_geometry(jac, n: int) -> PointGeometry:
    """Metric, volume element and gradient norm of the graph of du."""
    j = _as_jacobian(jac)
    if n != j.shape[1]:
        raise ValueError(f"n={n} does not match the Jacobian's {j.shape[1]} columns")
    g = np.eye(n) + j.T @ j
    v = float(np.sqrt(np.linalg.det(g)))
    return PointGeometry(
        g=g,
        g_inv=np.linalg.inv(g),
        v=v,
        w=v ** (1.0 / n),
        du_norm=float(np.linalg.norm(j)),
    )


@dataclass(frozen=True)
class AreaDecreasingReport:
    """Spectral summary of how far a point is inside the area-decreasing set.

    ``phi`` is the log potential 1 + (n(n-1)/2) log 2 - sum_{i<j} log(S_ii+S_jj),
    reported as None when some pair sum is at or below the floor (the point is
    on or past the boundary of the area-decreasing set).  ``margin`` is the
    smallest 1 - lambda_i lambda_j over pairs (inf when n = 1).
    """

    s_eigs: np.ndarray
    s2_eigs: np.ndarray
    phi: float | None
    margin: float


def _validate_spectrum(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float).ravel()
    if lam.size < 1:
        raise ValueError("empty spectrum")
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise ValueError("singular values must be finite and nonnegative")
    if np.any(np.diff(lam) > 1e-12 * (1.0 + lam[0])):
        raise ValueError("singular values must be sorted descending")
    return lam


def area_decreasing_report(lambdas) -> AreaDecreasingReport:
    """Closed-form S eigenvalues, pair sums and the log potential phi."""
    lam = _validate_spectrum(lambdas)
    n = lam.size
    s = (1.0 - lam**2) / (1.0 + lam**2)
    iu, ju = np.triu_indices(n, k=1)
    s2 = s[iu] + s[ju]
    if n == 1:
        # empty pair set: the potential degenerates to its floor value
        return AreaDecreasingReport(s_eigs=s, s2_eigs=s2, phi=1.0, margin=math.inf)
    margin = float(np.min(1.0 - lam[iu] * lam[ju]))
    if np.min(s2) <= PAIR_SUM_FLOOR:
        phi = None
    else:
        phi = float(1.0 + s2.size * math.log(2.0) - np.sum(np.log(s2)))
    return AreaDecreasingReport(s_eigs=s, s2_eigs=s2, phi=phi, margin=margin)


def phi_bound_to_pair_bound(c0: float) -> float:
    """Largest lambda_i^2 lambda_j^2 compatible with the potential bound c0.

    If phi <= c0 everywhere then every pair product lambda_i^2 lambda_j^2 is
    at most 1 - e^(1-c0).
    """
    if not (c0 >= 1.0):
        raise ValueError("the potential is always >= 1, so c0 must be >= 1")
    return 1.0 - math.exp(1.0 - c0)


def turning_profile(s: float, kappa: float, m: int) -> tuple[float, float]:
    """Rational eigenvalue profile (m k s^2 - 4 s - k) / (1 + s^2).

    Returns ``(value, s_star)`` where ``s_star`` is the unique positive
    stationary point: the profile is non-increasing on [0, s_star] and
    non-decreasing on [s_star, inf).
    """
    if not (0.0 < kappa <= 1.0):
        raise ValueError("kappa must lie in (0, 1]")
    if m < 1:
        raise ValueError("m must be a positive integer")
    if s < 0:
        raise ValueError("s must be nonnegative")
    value = (m * kappa * s * s - 4.0 * s - kappa) / (1.0 + s * s)
    s_star = (math.sqrt(kappa * kappa * (m + 1) ** 2 + 16.0) - kappa * (m + 1)) / 4.0
    return value, s_star


def offset_square_profile(s: float, c: float) -> float:
    """(s - c)^2 / (1 + s^2); non-decreasing on [c, inf) for c >= 0."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    if s < 0:
        raise ValueError("s must be nonnegative")
    return (s - c) ** 2 / (1.0 + s * s)
