"""Rectified-ellipsoid geometry: extreme points, polar gauge, stationary
directions and figure sampling.

The rectified ellipsoid of X is {(Xu)_+ : ||u|| <= 1}; its extreme point along
a dual direction lam restricted to one arrangement cone is the cone program

    max / min   lam^T D_j X u   s.t.  ||u|| <= 1,  (2 D_j - I) X u >= 0.

The polar gauge of lam is the max of |value| over masks and both senses;
lam is dual feasible iff the gauge over the full arrangement set is <= 1.
The "linear" objective variant replaces lam^T D_j X u with lam^T X u on the
same cone (the convention used by the reference experiments' dual-recovery
step); the two differ in general and both are exposed.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .arrangements import ActivationMask, mask_of
from .solver import NONNEG, SOC, Cone, ConeProgram, solve

THREADS_ENV = "RELU_LAB_THREADS"

FIXED_POINT_TOL = 1e-10
CONE_SOLVE_TOL = 1e-8
GAUGE_SOLVE_TOL = 1e-6


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExtremePointResult:
    u: np.ndarray
    value: float          # lam^T D_j X u at the optimum (signed)
    mask: ActivationMask
    active: tuple[int, ...]   # cone rows tight at the optimum
    sense: str


@dataclass(frozen=True)
class PolarGaugeReport:
    gauge: float
    per_mask: tuple[tuple[ActivationMask, float, float], ...]  # (mask, max, min)
    argmax_mask: ActivationMask
    objective: str


def _cone_objective(X: np.ndarray, mask: ActivationMask, lam: np.ndarray,
                    objective: str) -> np.ndarray:
    if objective == "masked":
        return X.T @ (mask.diag_vector() * lam)
    if objective == "linear":
        return X.T @ lam
    raise ValueError(f"unknown objective {objective!r}")


def _planar_extreme(v: np.ndarray, M: np.ndarray, sense: str) -> np.ndarray:
    """Exact d=2 optimizer of v^T u over the unit disk cut by {M u >= 0}.

    A linear function on a planar cone-disk intersection peaks at the
    unconstrained direction when feasible, on an extreme ray of the cone
    otherwise, or at the origin when the cone is trivial; enumerating those
    candidates is exact and immune to sliver cones."""
    target = v if sense == "max" else -v
    row_norms = np.linalg.norm(M, axis=1)

    def feasible(u: np.ndarray) -> bool:
        return bool(np.all(M @ u >= -1e-11 * np.maximum(row_norms, 1.0)))

    candidates = [np.zeros(2)]
    nt = np.linalg.norm(target)
    if nt > 0 and feasible(target / nt):
        candidates.append(target / nt)
    for i in range(M.shape[0]):
        if row_norms[i] == 0.0:
            continue
        ray = np.array([-M[i, 1], M[i, 0]]) / row_norms[i]
        for s in (1.0, -1.0):
            if feasible(s * ray):
                candidates.append(s * ray)
    values = [float(target @ u) for u in candidates]
    return candidates[int(np.argmax(values))]


def extreme_point(X: np.ndarray, mask: ActivationMask, lam: np.ndarray,
                  sense: str = "max", objective: str = "masked",
                  tol: float = CONE_SOLVE_TOL) -> ExtremePointResult:
    """Optimize the gauge objective over the unit ball intersected with the
    mask's cone.  sense is "max" or "min"; value is reported in the original
    (un-negated) orientation.

    d = 2 uses the exact planar enumeration (near-antipodal samples make
    sliver cones that defeat fixed-step first-order iterations); d >= 3 goes
    through the cone solver with the objective vector normalized (the
    maximizer is scale-invariant, and near-zero objectives otherwise crawl).
    """
    X = np.asarray(X, dtype=float)
    lam = np.asarray(lam, dtype=float)
    N, d = X.shape
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    v = _cone_objective(X, mask, lam, objective)
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return ExtremePointResult(u=np.zeros(d), value=0.0, mask=mask,
                                  active=tuple(range(N)), sense=sense)
    M = (2.0 * np.diag(mask.diag_vector()) - np.eye(N)) @ X
    if d == 2:
        x = _planar_extreme(v, M, sense)
    else:
        sign = -1.0 if sense == "max" else 1.0
        # rows: SOC block (1; u), then cone rows M u >= 0
        A = np.zeros((1 + d + N, d))
        A[1:1 + d] = np.eye(d)
        A[1 + d:] = M
        b = np.zeros(1 + d + N)
        b[0] = 1.0
        prog = ConeProgram(c=(sign / nv) * v, A=A, b=b,
                           cones=(Cone(SOC, d + 1), Cone(NONNEG, N)))
        x, _, report = solve(prog, tol=tol)
        if report.status != "optimal":
            raise RuntimeError(
                f"extreme-point solve did not converge: {report.status}, "
                f"residuals ({report.primal_residual:.2e}, "
                f"{report.dual_residual:.2e}, gap {report.gap:.2e})")
    slack = M @ x
    active = tuple(int(i) for i in np.where(
        np.abs(slack) <= 1e-9 * (1 + np.abs(slack).max(initial=0.0)))[0])
    return ExtremePointResult(u=x, value=float(v @ x), mask=mask,
                              active=active, sense=sense)


def polar_gauge(X: np.ndarray, masks: list[ActivationMask], lam: np.ndarray,
                objective: str = "masked",
                tol: float = GAUGE_SOLVE_TOL) -> PolarGaugeReport:
    """Max over masks and both senses of |constrained optimum|.

    lam is feasible for the dual norm constraint iff gauge <= 1 (masked
    objective over the full arrangement set).  The default tolerance is
    certificate-grade (1e-6): corner-degenerate subproblems whose optimum
    sits at the cone apex converge only sublinearly below that.
    """
    if not masks:
        raise ValueError("mask list must be nonempty")
    lam = np.asarray(lam, dtype=float)

    def one(mask: ActivationMask) -> tuple[ActivationMask, float, float]:
        hi = extreme_point(X, mask, lam, "max", objective, tol).value
        lo = extreme_point(X, mask, lam, "min", objective, tol).value
        return mask, hi, lo

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_mask = tuple(pool.map(one, masks))
    else:
        per_mask = tuple(one(m) for m in masks)
    values = [max(abs(hi), abs(lo)) for _, hi, lo in per_mask]
    best = int(np.argmax(values))
    return PolarGaugeReport(gauge=float(values[best]), per_mask=per_mask,
                            argmax_mask=per_mask[best][0], objective=objective)


def stationary_direction(X: np.ndarray, lam: np.ndarray, u0: np.ndarray,
                         max_iters: int = 1000,
                         tol: float = FIXED_POINT_TOL) -> tuple[np.ndarray, float, int]:
    """Fixed-point iteration u <- X^T D(u) lam / ||X^T D(u) lam||.

    Keeps the previous activation pattern when the update vector vanishes
    transiently; declares failure when the pattern cycles without converging.
    Returns (u, residual, iterations).
    """
    X = np.asarray(X, dtype=float)
    lam = np.asarray(lam, dtype=float)
    u = np.asarray(u0, dtype=float).copy()
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValueError("u0 must be a unit vector")

    def update(vec: np.ndarray, fallback_mask=None):
        mask = mask_of(X, vec)
        g = X.T @ (mask.diag_vector() * lam)
        if np.linalg.norm(g) == 0.0:
            if fallback_mask is None:
                raise RuntimeError("zero update vector for the initial mask")
            g = X.T @ (fallback_mask.diag_vector() * lam)
            if np.linalg.norm(g) == 0.0:
                raise RuntimeError("zero update vector; iteration stuck")
            mask = fallback_mask
        return g / np.linalg.norm(g), mask

    seen: dict[tuple[int, ...], np.ndarray] = {}
    mask = None
    for it in range(1, max_iters + 1):
        u_next, mask = update(u, mask)
        if np.linalg.norm(u_next - u) <= tol:
            res_vec, _ = update(u_next, mask)
            return u_next, float(np.linalg.norm(u_next - res_vec)), it
        key = mask.bits
        if key in seen and np.linalg.norm(seen[key] - u_next) > tol:
            raise RuntimeError("activation-pattern cycle without convergence")
        seen[key] = u_next
        u = u_next
    raise RuntimeError(f"no fixed point within {max_iters} iterations")


def rectified_ellipsoid_samples(X: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """M boundary samples (X [cos t, sin t]^T)_+ at uniformly spaced angles.

    Returns (thetas, points) with points of shape (M, N); d must be 2.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[1] != 2:
        raise ValueError("uniform angle sweep requires d = 2")
    if M < 3:
        raise ValueError("need at least 3 samples")
    thetas = 2.0 * np.pi * np.arange(M) / M
    U = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    return thetas, np.maximum(U @ X.T, 0.0)
