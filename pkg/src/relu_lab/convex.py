"""Convex max-margin program, its dual SOCP, and network conversions.

The primal over an arrangement list D_1..D_p is the group-norm program

    min  sum_j ||u_j|| + ||u'_j||
    s.t. diag(y) sum_j D_j X (u'_j - u_j) >= 1,
         (2 D_j - I) X u_j >= 0,  (2 D_j - I) X u'_j >= 0.

Variable layout: per mask j, group 2j is u_j (negative side, w2 < 0) and
group 2j+1 is u'_j (positive side).  The dual SOCP maximizes y^T lam subject
to the per-mask norm constraints with slack variables z_{j,+/-} >= 0 and the
sign condition diag(y) lam >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrangements import ActivationMask, mask_of
from .datasets import Dataset, encode_labels
from .solver import NONNEG, SOC, Cone, ConeProgram, SolveReport, solve

DEFAULT_TOL = 1e-8

#: groups with norm below ACTIVE_RTOL * (1 + objective) are reported inactive
ACTIVE_RTOL = 1e-6


@dataclass(frozen=True)
class ConvexProblem:
    X: np.ndarray
    y: np.ndarray
    masks: tuple[ActivationMask, ...]
    prog: ConeProgram

    @property
    def p(self) -> int:
        return len(self.masks)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def N(self) -> int:
        return self.X.shape[0]

    def group_slice(self, j: int, side: str) -> slice:
        """Variable slice of u_j (side="-") or u'_j (side="+")."""
        k = 2 * j + (1 if side == "+" else 0)
        return slice(k * self.d, (k + 1) * self.d)

    def split(self, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """(u list, u' list) from a flat variable vector."""
        u = [x[self.group_slice(j, "-")].copy() for j in range(self.p)]
        up = [x[self.group_slice(j, "+")].copy() for j in range(self.p)]
        return u, up


@dataclass
class ConvexSolution:
    u: list[np.ndarray]            # negative-side groups, one per mask
    u_prime: list[np.ndarray]      # positive-side groups
    objective: float
    margin_slack: float            # min_n margin_n - 1 (>= -tol when feasible)
    cone_slack: float              # min over all cone rows

    def active_groups(self, threshold: float | None = None
                      ) -> list[tuple[int, str, np.ndarray]]:
        """(mask index, side, vector) for groups above the activity threshold."""
        if threshold is None:
            threshold = ACTIVE_RTOL * (1.0 + self.objective)
        out = []
        for j, vec in enumerate(self.u):
            if np.linalg.norm(vec) > threshold:
                out.append((j, "-", vec))
        for j, vec in enumerate(self.u_prime):
            if np.linalg.norm(vec) > threshold:
                out.append((j, "+", vec))
        return out


@dataclass
class DualVariable:
    lam: np.ndarray
    z: np.ndarray | None = None        # (p, N) cone multipliers, negative side
    z_prime: np.ndarray | None = None  # (p, N), positive side


@dataclass(frozen=True)
class NetworkParams:
    """Two-layer ReLU network f(x) = sum_i w2_i (x^T W1[:, i])_+."""

    W1: np.ndarray   # (d, m)
    w2: np.ndarray   # (m,)

    def __post_init__(self):
        W1 = np.asarray(self.W1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float)
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "w2", w2)
        if W1.ndim != 2 or w2.ndim != 1 or W1.shape[1] != w2.shape[0]:
            raise ValueError("W1 must be d x m and w2 length m")
        if W1.shape[1] < 1:
            raise ValueError("need at least one neuron")
        if not (np.isfinite(W1).all() and np.isfinite(w2).all()):
            raise ValueError("non-finite parameters")

    @property
    def m(self) -> int:
        return self.w2.shape[0]

    def forward(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(np.asarray(X) @ self.W1, 0.0) @ self.w2

    def squared_norm_half(self) -> float:
        return 0.5 * (float(np.sum(self.W1 ** 2)) + float(np.sum(self.w2 ** 2)))


def build_primal(X: np.ndarray, y: np.ndarray,
                 masks: list[ActivationMask]) -> ConvexProblem:
    """Assemble the group-norm cone program (N margin rows, 2pN cone rows)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not masks:
        raise ValueError("mask list must be nonempty")
    N, d = X.shape
    p = len(masks)
    n = 2 * p * d
    YX = np.diag(y) @ X
    A_margin = np.zeros((N, n))
    rows = [A_margin]
    b_parts = [-np.ones(N)]
    cones = [Cone(NONNEG, N)]
    for j, mask in enumerate(masks):
        dm = mask.diag_vector()
        DYX = dm[:, None] * YX
        A_margin[:, (2 * j) * d:(2 * j + 1) * d] = -DYX
        A_margin[:, (2 * j + 1) * d:(2 * j + 2) * d] = DYX
        M = (2.0 * dm - 1.0)[:, None] * X
        for k in (2 * j, 2 * j + 1):
            blk = np.zeros((N, n))
            blk[:, k * d:(k + 1) * d] = M
            rows.append(blk)
            b_parts.append(np.zeros(N))
            cones.append(Cone(NONNEG, N))
    groups = tuple(np.arange(k * d, (k + 1) * d) for k in range(2 * p))
    prog = ConeProgram(c=np.zeros(n), A=np.vstack(rows),
                       b=np.concatenate(b_parts), cones=tuple(cones),
                       groups=groups)
    return ConvexProblem(X=X, y=y, masks=tuple(masks), prog=prog)


def solve_primal(problem: ConvexProblem, tol: float = DEFAULT_TOL,
                 max_iters: int = 200_000, trace_every: int = 0
                 ) -> tuple[ConvexSolution, DualVariable, SolveReport]:
    """Solve the primal; multipliers give lam = diag(y) mu_margin and the
    per-mask cone multipliers z, z'."""
    x, mu, report = solve(problem.prog, tol=tol, max_iters=max_iters,
                          trace_every=trace_every)
    N, p, d = problem.N, problem.p, problem.d
    u, up = problem.split(x)
    margins = np.diag(problem.y) @ sum(
        m.diag_vector()[:, None] * (problem.X @ (up[j] - u[j]))[:, None]
        for j, m in enumerate(problem.masks)).ravel()
    cone_slack = np.inf
    for j, mask in enumerate(problem.masks):
        M = (2.0 * mask.diag_vector() - 1.0)[:, None] * problem.X
        cone_slack = min(cone_slack, float((M @ u[j]).min()),
                         float((M @ up[j]).min()))
    sol = ConvexSolution(u=u, u_prime=up, objective=report.objective,
                         margin_slack=float(margins.min() - 1.0),
                         cone_slack=cone_slack)
    lam = problem.y * mu[:N]
    z = np.empty((p, N))
    zp = np.empty((p, N))
    for j in range(p):
        z[j] = mu[N + 2 * j * N: N + (2 * j + 1) * N]
        zp[j] = mu[N + (2 * j + 1) * N: N + (2 * j + 2) * N]
    return sol, DualVariable(lam=lam, z=z, z_prime=zp), report


def build_dual_socp(X: np.ndarray, y: np.ndarray,
                    masks: list[ActivationMask]) -> ConeProgram:
    """SOCP
        max y^T lam
        s.t. || X^T D_j lam - X^T (2 D_j - I) z_{j,+}|| <= 1,
             ||-X^T D_j lam - X^T (2 D_j - I) z_{j,-}|| <= 1,
             z >= 0,  diag(y) lam >= 0.
    Variables: lam (N), then per mask z_{j,+} (N) and z_{j,-} (N).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not masks:
        raise ValueError("mask list must be nonempty")
    N, d = X.shape
    p = len(masks)
    n = N * (1 + 2 * p)
    rows = []
    b_parts = []
    cones = []
    sign_rows = np.zeros((N, n))
    sign_rows[:, :N] = np.diag(y)
    rows.append(sign_rows)
    b_parts.append(np.zeros(N))
    cones.append(Cone(NONNEG, N))
    nonneg_z = np.zeros((2 * p * N, n))
    nonneg_z[:, N:] = np.eye(2 * p * N)
    rows.append(nonneg_z)
    b_parts.append(np.zeros(2 * p * N))
    cones.append(Cone(NONNEG, 2 * p * N))
    for j, mask in enumerate(masks):
        dm = mask.diag_vector()
        XD = X.T * dm[None, :]                     # X^T D_j, shape (d, N)
        XM = X.T * (2.0 * dm - 1.0)[None, :]       # X^T (2 D_j - I)
        for sgn, z_off in ((1.0, N + (2 * j) * N), (-1.0, N + (2 * j + 1) * N)):
            blk = np.zeros((1 + d, n))
            blk[1:, :N] = sgn * XD
            blk[1:, z_off:z_off + N] = -XM
            rows.append(blk)
            bb = np.zeros(1 + d)
            bb[0] = 1.0
            b_parts.append(bb)
            cones.append(Cone(SOC, 1 + d))
    c = np.zeros(n)
    c[:N] = -y      # maximize y^T lam
    return ConeProgram(c=c, A=np.vstack(rows), b=np.concatenate(b_parts),
                       cones=tuple(cones), groups=())


def solve_dual(X: np.ndarray, y: np.ndarray, masks: list[ActivationMask],
               tol: float = DEFAULT_TOL, max_iters: int = 200_000
               ) -> tuple[DualVariable, float, SolveReport]:
    """Solve the dual SOCP; returns (dual variable with z stacks, y^T lam,
    report)."""
    prog = build_dual_socp(X, y, masks)
    x, _, report = solve(prog, tol=tol, max_iters=max_iters)
    N = X.shape[0]
    p = len(masks)
    lam = x[:N]
    zp = np.empty((p, N))
    zm = np.empty((p, N))
    for j in range(p):
        zp[j] = x[N + (2 * j) * N: N + (2 * j + 1) * N]
        zm[j] = x[N + (2 * j + 1) * N: N + (2 * j + 2) * N]
    # z_{j,+} certifies the positive-side constraint, z_{j,-} the negative
    return DualVariable(lam=lam, z=zm, z_prime=zp), float(y @ lam), report


def network_from_convex(sol: ConvexSolution, masks: list[ActivationMask],
                        threshold: float | None = None) -> NetworkParams:
    """Balanced splitting of active groups into neurons: u'_j gives
    (u'/sqrt||u'||, +sqrt||u'||), u_j gives (u/sqrt||u||, -sqrt||u||)."""
    active = sol.active_groups(threshold)
    if not active:
        raise ValueError("solution has no active groups; empty network")
    cols = []
    outs = []
    for _, side, vec in active:
        nrm = np.linalg.norm(vec)
        cols.append(vec / np.sqrt(nrm))
        outs.append(np.sqrt(nrm) if side == "+" else -np.sqrt(nrm))
    return NetworkParams(W1=np.stack(cols, axis=1), w2=np.array(outs))


def _completion_choices(X: np.ndarray, w: np.ndarray,
                        boundary_rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """(strict bits, boundary indicator) of X w with a relative boundary band."""
    t = X @ w
    scale = np.linalg.norm(X, axis=1) * np.linalg.norm(w)
    boundary = np.abs(t) <= boundary_rtol * np.maximum(scale, 1e-300)
    strict = (t > 0) & ~boundary
    return strict, boundary


def convex_from_network(X: np.ndarray, W1: np.ndarray, w2: np.ndarray,
                        masks: list[ActivationMask],
                        y: np.ndarray | None = None,
                        boundary_rtol: float = 1e-9) -> ConvexSolution:
    """Map neurons onto convex groups: neurons with equal masks merge by
    summation; a neuron matches a mask agreeing with its strict activation
    pattern off the boundary set (ties to the lexicographically smallest)."""
    X = np.asarray(X, dtype=float)
    W1 = np.asarray(W1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    p = len(masks)
    N, d = X.shape
    u = [np.zeros(d) for _ in range(p)]
    up = [np.zeros(d) for _ in range(p)]
    ordered = sorted(range(p), key=lambda j: masks[j].bits)
    for i in range(w2.shape[0]):
        if w2[i] == 0.0 or not np.any(W1[:, i]):
            continue
        strict, boundary = _completion_choices(X, W1[:, i], boundary_rtol)
        match = None
        for j in ordered:
            bits = np.array(masks[j].bits, dtype=bool)
            if np.all(bits[~boundary] == strict[~boundary]):
                match = j
                break
        if match is None:
            raise ValueError(f"neuron {i} has no realizable mask in the list")
        if w2[i] > 0:
            up[match] += W1[:, i] * w2[i]
        else:
            u[match] += W1[:, i] * (-w2[i])
    objective = sum(np.linalg.norm(v) for v in u) + sum(np.linalg.norm(v) for v in up)
    outputs = np.zeros(N)
    cone_slack = np.inf
    for j, mask in enumerate(masks):
        dm = mask.diag_vector()
        outputs += dm * (X @ (up[j] - u[j]))
        M = (2.0 * dm - 1.0)[:, None] * X
        cone_slack = min(cone_slack, float((M @ u[j]).min()),
                         float((M @ up[j]).min()))
    margin_slack = float((y * outputs).min() - 1.0) if y is not None else float("nan")
    return ConvexSolution(u=u, u_prime=up, objective=float(objective),
                          margin_slack=margin_slack, cone_slack=cone_slack)


def margin_objective(X: np.ndarray, y: np.ndarray, W1: np.ndarray,
                     w2: np.ndarray) -> tuple[NetworkParams, float] | None:
    """Normalized margin of a separating network.

    Rescales the first layer so min_n y_n f(x_n) = 1, balances each neuron,
    and returns (balanced params, sum w2_i^2).  The value equals the group-l1
    objective of the matching convex solution and 0.5(||W1||_F^2 + ||w2||^2)
    of the balanced net.  Returns None when the network does not separate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    W1 = np.asarray(W1, dtype=float).copy()
    w2 = np.asarray(w2, dtype=float).copy()
    keep = (w2 != 0.0) & np.any(W1 != 0.0, axis=0)
    if not keep.any():
        return None
    W1, w2 = W1[:, keep], w2[keep]
    c = float(np.min(y * (np.maximum(X @ W1, 0.0) @ w2)))
    if c <= 0.0:
        return None
    W1 = W1 / c
    scale = np.sqrt(np.linalg.norm(W1, axis=0) / np.abs(w2))
    W1 = W1 / scale[None, :]
    w2 = w2 * scale
    return NetworkParams(W1=W1, w2=w2), float(np.sum(w2 ** 2))


@dataclass
class ClassSolve:
    k: int                        # 0-based class index
    solution: ConvexSolution
    dual: DualVariable
    report: SolveReport


def solve_class(ds: Dataset, k: int, masks: list[ActivationMask],
                tol: float = DEFAULT_TOL) -> ClassSolve:
    """Solve the one-vs-all subproblem of class k (0-based) of a multiclass
    dataset."""
    if ds.is_binary:
        raise ValueError("dataset is binary; solve it directly")
    enc = encode_labels(ds.labels, ds.K)
    problem = build_primal(ds.X, enc.column(k), masks)
    sol, dual, report = solve_primal(problem, tol=tol)
    return ClassSolve(k=k, solution=sol, dual=dual, report=report)


def solve_multiclass(ds: Dataset, masks: list[ActivationMask],
                     tol: float = DEFAULT_TOL) -> tuple[list[ClassSolve], float]:
    """All K subproblems; total objective is the sum over classes."""
    solves = [solve_class(ds, k, masks, tol=tol) for k in range(ds.K)]
    return solves, float(sum(s.solution.objective for s in solves))
