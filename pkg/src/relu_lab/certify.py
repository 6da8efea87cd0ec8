"""Certificates linking nonconvex stationary points to the convex program.

extract_kkt reads the per-neuron stationarity data off a trained network: the
activation pattern with free boundary bits, the direction residual
||w1_i / w2_i - X^T D_i lam|| and the norm residual | ||X^T D_i lam|| - 1 |.
dual_feasible evaluates the polar-gauge membership; ortho_coverage and
spike_free check the two sufficient conditions; convex_kkt_residuals
evaluates the five optimality families of the convex program.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .arrangements import ActivationMask, matrix_rank, RANK_RTOL
from .convex import ConvexProblem, ConvexSolution, ACTIVE_RTOL
from .flow import g_vector
from .geometry import polar_gauge
from .solver import NONNEG, SOC, Cone, ConeProgram, solve

BOUNDARY_RTOL = 1e-7
BOUNDARY_ENUM_LIMIT = 12


@dataclass
class NeuronKKT:
    index: int
    sign: int                       # sign(w2_i)
    mask: ActivationMask            # chosen completion D_i
    strict_bits: tuple[int, ...]    # pattern off the boundary
    boundary: tuple[int, ...]       # samples with x_n^T w1_i ~ 0
    direction_residual: float
    norm_residual: float


@dataclass
class KKTExtraction:
    neurons: list[NeuronKKT]
    comp_slack: np.ndarray          # per-sample |lam_n (y_n f_n - 1)|

    def max_direction_residual(self) -> float:
        return max(n.direction_residual for n in self.neurons)

    def max_norm_residual(self) -> float:
        return max(n.norm_residual for n in self.neurons)


@dataclass
class Certificate:
    kind: str
    verdict: bool
    slacks: dict[str, float] = field(default_factory=dict)
    tolerance: float = 0.0
    approximate: bool = False
    detail: str = ""

    def to_json(self) -> dict:
        return {"kind": self.kind, "verdict": bool(self.verdict),
                "slacks": {k: float(v) for k, v in self.slacks.items()},
                "tolerance": float(self.tolerance),
                "approximate": bool(self.approximate),
                "detail": self.detail}


def _completion_residual(X: np.ndarray, lam: np.ndarray, target: np.ndarray,
                         bits: np.ndarray) -> float:
    return float(np.linalg.norm(target - X.T @ (bits * lam)))


def extract_kkt(X: np.ndarray, y: np.ndarray, W1: np.ndarray, w2: np.ndarray,
                lam: np.ndarray, tol_boundary: float = BOUNDARY_RTOL
                ) -> KKTExtraction:
    """Per-neuron KKT data.  Boundary bits are completed by enumerating all
    2^|B| choices when |B| <= 12 (residual-minimizing, lexicographic ties),
    greedily per index otherwise.  Residuals are reported, never thresholded.
    Neurons with w2_i = 0 are skipped per the stationarity hypothesis.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    W1 = np.asarray(W1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    lam = np.asarray(lam, dtype=float)
    row_norms = np.linalg.norm(X, axis=1)
    neurons = []
    for i in range(w2.shape[0]):
        if w2[i] == 0.0:
            continue
        w1 = W1[:, i]
        t = X @ w1
        band = tol_boundary * row_norms * np.linalg.norm(w1)
        boundary = np.where(np.abs(t) <= band)[0]
        strict = (t > 0) & (np.abs(t) > band)
        target = w1 / w2[i]
        base = strict.astype(float)
        if len(boundary) <= BOUNDARY_ENUM_LIMIT:
            best_bits, best_res = None, np.inf
            for combo in itertools.product((0.0, 1.0), repeat=len(boundary)):
                bits = base.copy()
                bits[boundary] = combo
                res = _completion_residual(X, lam, target, bits)
                if res < best_res - 1e-15:
                    best_bits, best_res = bits, res
        else:
            best_bits = base.copy()
            best_res = _completion_residual(X, lam, target, best_bits)
            for n in boundary:
                trial = best_bits.copy()
                trial[n] = 1.0
                res = _completion_residual(X, lam, target, trial)
                if res < best_res:
                    best_bits, best_res = trial, res
        norm_res = abs(float(np.linalg.norm(X.T @ (best_bits * lam))) - 1.0)
        neurons.append(NeuronKKT(
            index=i, sign=int(np.sign(w2[i])),
            mask=ActivationMask(bits=tuple(int(b) for b in best_bits)),
            strict_bits=tuple(int(b) for b in strict),
            boundary=tuple(int(n) for n in boundary),
            direction_residual=best_res, norm_residual=norm_res))
    if not neurons:
        raise ValueError("every neuron has w2_i = 0; nothing to extract")
    f = np.maximum(X @ W1, 0.0) @ w2
    comp = np.abs(lam * (y * f - 1.0))
    return KKTExtraction(neurons=neurons, comp_slack=comp)


def dual_feasible(X: np.ndarray, masks: list[ActivationMask], lam: np.ndarray,
                  tol: float = 1e-6) -> Certificate:
    """Polar-gauge membership: max over the full arrangement list of the
    masked-objective optimum magnitudes must not exceed 1."""
    report = polar_gauge(X, masks, lam, objective="masked")
    slacks = {m.as_string(): max(abs(hi), abs(lo))
              for m, hi, lo in report.per_mask}
    return Certificate(kind="dual-feasible", verdict=report.gauge <= 1.0 + tol,
                       slacks=slacks, tolerance=tol,
                       detail=f"gauge={report.gauge:.9f} "
                              f"argmax={report.argmax_mask.as_string()}")


def dual_feasible_multiclass(X: np.ndarray, masks: list[ActivationMask],
                             Lambda: np.ndarray, y_encoded: np.ndarray,
                             tol: float = 1e-6) -> list[Certificate]:
    """Per-class dual feasibility: the binary certifier applied to each
    column of the stacked dual matrix, plus the per-class sign condition
    diag(y_k) lam_k >= 0."""
    Lambda = np.asarray(Lambda, dtype=float)
    y_encoded = np.asarray(y_encoded, dtype=float)
    if Lambda.shape != y_encoded.shape:
        raise ValueError("dual matrix and encoded labels must align")
    certs = []
    for k in range(Lambda.shape[1]):
        cert = dual_feasible(X, masks, Lambda[:, k], tol=tol)
        sign_viol = max(0.0, float((-(y_encoded[:, k] * Lambda[:, k])).max()))
        cert.slacks["sign_violation"] = sign_viol
        cert.verdict = cert.verdict and sign_viol <= tol
        cert.detail += f" class={k}"
        certs.append(cert)
    return certs


def ortho_coverage(extraction: KKTExtraction, y: np.ndarray,
                   tol: float = 0.0) -> Certificate:
    """Label coverage of the extracted activation patterns: some positive
    neuron's pattern must dominate I(y = 1) and some negative neuron's
    I(y = -1).  Boundary samples count toward domination (the completion is
    free there).  A side with an all-zero indicator holds vacuously."""
    if not extraction.neurons:
        raise ValueError("empty extraction")
    y = np.asarray(y, dtype=float)

    def covers(neuron: NeuronKKT, indicator: np.ndarray) -> bool:
        bits = np.array(neuron.strict_bits, dtype=float)
        bits[list(neuron.boundary)] = 1.0
        return bool(np.all(bits >= indicator))

    pos_ind = (y == 1).astype(float)
    neg_ind = (y == -1).astype(float)
    pos_ok = (not pos_ind.any()) or any(
        covers(n, pos_ind) for n in extraction.neurons if n.sign > 0)
    neg_ok = (not neg_ind.any()) or any(
        covers(n, neg_ind) for n in extraction.neurons if n.sign < 0)
    return Certificate(kind="ortho-coverage", verdict=pos_ok and neg_ok,
                       slacks={"positive": float(pos_ok),
                               "negative": float(neg_ok)},
                       tolerance=tol)


def _pinv(X: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    keep = s > RANK_RTOL * (s[0] if s.size else 1.0)
    s_inv = np.where(keep, 1.0 / np.where(s == 0, 1.0, s), 0.0)
    return (Vt.T * s_inv[None, :]) @ U.T


def spike_free(X: np.ndarray, grid: int = 4096, tol: float = 1e-6) -> Certificate:
    """Sampling check of the spike-free property: every rectified image
    (Xu)_+ with ||u|| <= 1 must equal Xz for some ||z|| <= 1.  Sweeps unit
    directions (uniform angles for d = 2, seeded random unit vectors
    otherwise), takes z = pinv(X) (Xu)_+, skips directions failing the range
    condition, and compares max ||z|| with 1.  Approximate by construction.
    """
    X = np.asarray(X, dtype=float)
    N, d = X.shape
    if d == 2:
        thetas = 2.0 * np.pi * np.arange(grid) / grid
        U = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    else:
        rng = np.random.default_rng(0)
        U = rng.standard_normal((grid, d))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
    P = _pinv(X)
    V = np.maximum(U @ X.T, 0.0)            # rows (Xu)_+
    Z = V @ P.T                              # rows z = pinv(X) v
    range_err = np.linalg.norm(Z @ X.T - V, axis=1)
    in_range = range_err <= tol * np.maximum(np.linalg.norm(V, axis=1), 1e-300)
    z_norms = np.linalg.norm(Z, axis=1)
    worst = float(z_norms[in_range].max()) if in_range.any() else 0.0
    return Certificate(kind="spike-free", verdict=worst <= 1.0 + tol,
                       slacks={"max_z_norm": worst,
                               "excluded_directions": float(np.sum(~in_range))},
                       tolerance=tol, approximate=True,
                       detail=f"grid={grid}")


def local_extremum(X: np.ndarray, y: np.ndarray, u: np.ndarray,
                   tol: float = 1e-9) -> Certificate:
    """Classify a unit direction as a local max/min of y^T (Xu)_+ on the unit
    ball via the alignment criterion cos angle(u, g(u, y)) = +/-1 (valid on
    orthogonal-separable data).  For a local max the consequence
    <u, x_n> > 0 on every positive-label sample is also checked."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    g = g_vector(X, u, y)
    ng = np.linalg.norm(g)
    if ng == 0.0:
        raise ValueError("g(u, y) vanished; classification undefined")
    a = float(u @ g / (np.linalg.norm(u) * ng))
    if a >= 1.0 - tol:
        kind = "local-max"
    elif a <= -(1.0 - tol):
        kind = "local-min"
    else:
        kind = "neither"
    slacks = {"alignment": a}
    if kind == "local-max":
        pos = y == 1
        slacks["min_pos_inner"] = float((X[pos] @ u).min()) if pos.any() else np.inf
    return Certificate(kind=kind, verdict=kind != "neither", slacks=slacks,
                       tolerance=tol)


@dataclass
class ConvexKKTReport:
    stationarity_neg: float      # family (i), u_j inclusions
    stationarity_pos: float      # family (ii), u'_j inclusions
    margin_comp_slack: float     # family (iii)
    cone_comp_slack_neg: float   # family (iv)
    cone_comp_slack_pos: float   # family (v)
    primal_margin_violation: float
    primal_cone_violation: float
    dual_sign_violation: float
    z_negativity: float

    def families(self) -> dict[str, float]:
        return {"stationarity_neg": self.stationarity_neg,
                "stationarity_pos": self.stationarity_pos,
                "margin_comp_slack": self.margin_comp_slack,
                "cone_comp_slack_neg": self.cone_comp_slack_neg,
                "cone_comp_slack_pos": self.cone_comp_slack_pos}

    def max_family_residual(self) -> float:
        return max(self.families().values())


def convex_kkt_residuals(problem: ConvexProblem, sol: ConvexSolution,
                         lam: np.ndarray, z: np.ndarray,
                         z_prime: np.ndarray) -> ConvexKKTReport:
    """Evaluate the five optimality families of the convex program at the
    supplied primal/dual point.  Zero groups use the norm-ball inclusion,
    nonzero groups the exact subgradient equality.  Feasibility violations
    are reported separately (pure evaluation; nothing is thresholded)."""
    X, y, masks = problem.X, problem.y, problem.masks
    lam = np.asarray(lam, dtype=float)
    z = np.asarray(z, dtype=float)
    z_prime = np.asarray(z_prime, dtype=float)
    threshold = ACTIVE_RTOL * (1.0 + sol.objective)
    st_neg = st_pos = 0.0
    cs_neg = cs_pos = 0.0
    cone_viol = 0.0
    outputs = np.zeros(problem.N)
    for j, mask in enumerate(masks):
        dm = mask.diag_vector()
        M = (2.0 * dm - 1.0)[:, None] * X
        v_neg = -X.T @ (dm * lam) + M.T @ z[j]
        v_pos = X.T @ (dm * lam) + M.T @ z_prime[j]
        for v, vec, acc in ((v_neg, sol.u[j], "neg"), (v_pos, sol.u_prime[j], "pos")):
            nrm = np.linalg.norm(vec)
            if nrm > threshold:
                res = float(np.linalg.norm(v - vec / nrm))
            else:
                res = max(0.0, float(np.linalg.norm(v)) - 1.0)
            if acc == "neg":
                st_neg = max(st_neg, res)
            else:
                st_pos = max(st_pos, res)
        cs_neg = max(cs_neg, float(np.abs(z[j] * (M @ sol.u[j])).max()))
        cs_pos = max(cs_pos, float(np.abs(z_prime[j] * (M @ sol.u_prime[j])).max()))
        cone_viol = max(cone_viol, float(-np.minimum(M @ sol.u[j], 0.0).min()),
                        float(-np.minimum(M @ sol.u_prime[j], 0.0).min()))
        outputs += dm * (X @ (sol.u_prime[j] - sol.u[j]))
    margin_cs = float(np.abs(lam * (outputs - y)).max())
    return ConvexKKTReport(
        stationarity_neg=st_neg, stationarity_pos=st_pos,
        margin_comp_slack=margin_cs,
        cone_comp_slack_neg=cs_neg, cone_comp_slack_pos=cs_pos,
        primal_margin_violation=max(0.0, float((1.0 - y * outputs).max())),
        primal_cone_violation=cone_viol,
        dual_sign_violation=max(0.0, float((-(y * lam)).max())),
        z_negativity=max(0.0, float(-min(z.min(), z_prime.min()))))


def certifying_multipliers(X: np.ndarray, extraction: KKTExtraction,
                           lam: np.ndarray, masks: list[ActivationMask],
                           tol: float = 1e-7) -> tuple[np.ndarray, np.ndarray]:
    """Cone multipliers certifying the convex KKT point built from a
    nonconvex stationary point: z = 0 on masks matched by some neuron, and on
    unmatched masks the minimizer of || +/- X^T D_j lam + X^T (2 D_j - I) z ||
    over z >= 0 (one small cone solve per side)."""
    X = np.asarray(X, dtype=float)
    lam = np.asarray(lam, dtype=float)
    N, d = X.shape
    matched = {n.mask.bits for n in extraction.neurons}
    z = np.zeros((len(masks), N))
    zp = np.zeros((len(masks), N))
    for j, mask in enumerate(masks):
        if mask.bits in matched:
            continue
        dm = mask.diag_vector()
        M = (2.0 * dm - 1.0)[:, None] * X
        v = X.T @ (dm * lam)
        if np.linalg.norm(v) > 1.0:   # z = 0 already certifies the inclusion otherwise
            zp[j] = _min_norm_shift(M, v, tol)
            z[j] = _min_norm_shift(M, -v, tol)
    return z, zp


def _min_norm_shift(M: np.ndarray, v: np.ndarray, tol: float) -> np.ndarray:
    """argmin_{z >= 0} || v + M^T z ||_2 via the cone solver."""
    N, d = M.shape
    n = N + 1                    # variables (z, t)
    A = np.zeros((1 + d + N, n))
    b = np.zeros(1 + d + N)
    A[0, N] = 1.0                # SOC head t
    A[1:1 + d, :N] = M.T
    b[1:1 + d] = v
    A[1 + d:, :N] = np.eye(N)
    c = np.zeros(n)
    c[N] = 1.0
    prog = ConeProgram(c=c, A=A, b=b,
                       cones=(Cone(SOC, 1 + d), Cone(NONNEG, N)))
    x, _, report = solve(prog, tol=tol)
    if report.status != "optimal":
        raise RuntimeError(f"multiplier solve failed: {report.status}")
    return np.maximum(x[:N], 0.0)
