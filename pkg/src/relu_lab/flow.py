"""Discrete-time subgradient descent on the unregularized logistic loss.

Plain forward-Euler steps of

    w1_i <- w1_i + eta * w2_i * g(w1_i, lt),    g(u, lt) = sum_{x_n^T u > 0} lt_n x_n
    w2_i <- w2_i + eta * lt^T (X w1_i)_+,       lt_n = y_n / (1 + exp(q_n))

with q_n = y_n f(x_n), the zero subgradient at the ReLU kink, and balanced
initialization ||w1_i|| = |w2_i| = eps.  Balance is conserved by the
continuous flow; the simulator tracks the discrete drift, the second-layer
signs, every activation sign-pattern change, and per-checkpoint polar
coordinates, margins and alignments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .arrangements import ActivationMask, SignPattern, mask_of
from .datasets import Dataset, encode_labels
from .geometry import polar_gauge
from .convex import NetworkParams, margin_objective

SIGN_EVENT_CAP = 100_000


@dataclass(frozen=True)
class FlowConfig:
    m: int = 8
    init_scale: float = 1e-4
    step: float = 1.0
    iters: int = 10_000
    checkpoints: tuple[int, ...] = (10, 100, 1000, 10_000)
    seed: int = 0
    per_class: bool = True   # multiclass datasets run K independent flows

    def __post_init__(self):
        if self.m < 1 or self.init_scale <= 0 or self.step <= 0 or self.iters < 0:
            raise ValueError("bad flow configuration")
        if any(c < 1 or c > max(self.iters, 1) for c in self.checkpoints):
            raise ValueError("checkpoints must lie in [1, iters]")


@dataclass
class NeuronRecord:
    r: float                  # log ||w1_i||
    u: np.ndarray             # unit direction
    s: int                    # sign(w2_i)
    mask: ActivationMask      # strict activation pattern of u
    alignment: float | None   # cos angle(u, s X^T D(u) y), None if undefined
    sign_condition: bool      # sign(y^T (X w1_i)_+) == sign(w2_i), both nonzero


@dataclass
class FlowRecord:
    iteration: int
    loss: float
    lambda_tilde: np.ndarray
    neurons: list[NeuronRecord]
    margin: float | None
    W1: np.ndarray
    w2: np.ndarray


@dataclass
class SignChangeEvent:
    iteration: int
    neuron: int
    old: tuple[int, ...]
    new: tuple[int, ...]


@dataclass
class FlowTrace:
    config: FlowConfig
    records: list[FlowRecord] = field(default_factory=list)
    sign_events: list[SignChangeEvent] = field(default_factory=list)
    max_balance_drift: float = 0.0     # max_t max_i | ||w1_i||^2 - w2_i^2 |
    w2_sign_flips: int = 0
    sign_events_truncated: bool = False
    aborted_at: int | None = None      # iteration of numerical failure, if any

    def final(self) -> FlowRecord:
        return self.records[-1]


def init_balanced(cfg: FlowConfig, d: int) -> NetworkParams:
    """w1_i = eps * g_i/||g_i|| with standard-normal g_i, w2_i = +/-eps with
    independent fair signs; exactly balanced."""
    rng = np.random.default_rng(cfg.seed)
    G = rng.standard_normal((d, cfg.m))
    G /= np.linalg.norm(G, axis=0, keepdims=True)
    signs = rng.integers(0, 2, size=cfg.m) * 2 - 1
    return NetworkParams(W1=cfg.init_scale * G,
                         w2=cfg.init_scale * signs.astype(float))


def lambda_tilde(X: np.ndarray, y: np.ndarray, params: NetworkParams) -> np.ndarray:
    """lt_n = y_n / (1 + exp(q_n)), q_n = y_n f(x_n); sign(lt_n) = y_n."""
    q = np.asarray(y, dtype=float) * params.forward(X)
    return np.asarray(y, dtype=float) * expit(-q)


def logistic_loss(X: np.ndarray, y: np.ndarray, params: NetworkParams) -> float:
    q = np.asarray(y, dtype=float) * params.forward(X)
    return float(np.sum(np.logaddexp(0.0, -q)))


def g_vector(X: np.ndarray, sigma, lam: np.ndarray) -> np.ndarray:
    """g(sigma, lam) = sum over strictly-positive entries of lam_n x_n.

    sigma may be a SignPattern, a raw sign sequence, or a direction vector u
    (then sigma = sign(Xu))."""
    X = np.asarray(X, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if isinstance(sigma, SignPattern):
        signs = np.array(sigma.signs)
    else:
        arr = np.asarray(sigma)
        if arr.shape == (X.shape[1],) and arr.shape != (X.shape[0],):
            signs = np.sign(X @ arr)
        elif arr.shape == (X.shape[0],) and np.all(np.isin(arr, (-1, 0, 1))):
            signs = arr
        else:
            signs = np.sign(X @ arr)
    pos = signs > 0
    return X.T @ (lam * pos)


def g_min_max(X: np.ndarray, y: np.ndarray,
              patterns: list[SignPattern]) -> tuple[float, float,
                                                    list[SignPattern],
                                                    list[SignPattern]]:
    """(g_min, g_max, minimizers, maximizers) of ||g(sigma, y/4)|| over the
    realizable sign patterns, the minimum restricted to nonvanishing g."""
    lam = np.asarray(y, dtype=float) / 4.0
    norms = [float(np.linalg.norm(g_vector(X, p, lam))) for p in patterns]
    nonzero = [(v, p) for v, p in zip(norms, patterns) if v > 0.0]
    if not nonzero:
        raise ValueError("g vanishes on every realizable sign pattern")
    gmin = min(v for v, _ in nonzero)
    gmax = max(norms)
    minimizers = [p for v, p in nonzero if abs(v - gmin) <= 1e-12 * (1 + gmin)]
    maximizers = [p for v, p in zip(norms, patterns)
                  if abs(v - gmax) <= 1e-12 * (1 + gmax)]
    return gmin, gmax, minimizers, maximizers


def step(X: np.ndarray, y: np.ndarray, params: NetworkParams, eta: float,
         lam: np.ndarray | None = None) -> NetworkParams:
    """One forward-Euler subgradient step (old parameters on the right-hand
    side, strict activations I(x^T w > 0)).  lam overrides lambda_tilde for
    unit tests."""
    if eta <= 0:
        raise ValueError("step size must be positive")
    X = np.asarray(X, dtype=float)
    Z = X @ params.W1
    lt = lambda_tilde(X, y, params) if lam is None else np.asarray(lam, dtype=float)
    G = X.T @ (lt[:, None] * (Z > 0.0))
    W1 = params.W1 + eta * G * params.w2[None, :]
    w2 = params.w2 + eta * (np.maximum(Z, 0.0).T @ lt)
    return NetworkParams(W1=W1, w2=w2)


def alignment(X: np.ndarray, u: np.ndarray, lam: np.ndarray) -> float | None:
    """cos angle(u, X^T D(u) lam) with the strict activation pattern; None
    when the reference vector vanishes."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    g = X.T @ (np.asarray(lam, dtype=float) * (X @ u > 0.0))
    ng = np.linalg.norm(g)
    nu = np.linalg.norm(u)
    if ng == 0.0 or nu == 0.0:
        return None
    return float(u @ g / (nu * ng))


def _sign_condition(X: np.ndarray, y: np.ndarray, w1: np.ndarray,
                    w2: float) -> bool:
    """sign(y^T (X w1)_+) == sign(w2), both nonzero."""
    v = float(np.asarray(y) @ np.maximum(np.asarray(X) @ w1, 0.0))
    return v != 0.0 and w2 != 0.0 and np.sign(v) == np.sign(w2)


def _record(X, y, params, it) -> FlowRecord:
    lt = lambda_tilde(X, y, params)
    neurons = []
    for i in range(params.m):
        w1 = params.W1[:, i]
        nrm = np.linalg.norm(w1)
        s = int(np.sign(params.w2[i]))
        u = w1 / nrm if nrm > 0 else np.zeros_like(w1)
        a = alignment(X, u, y) if nrm > 0 else None
        neurons.append(NeuronRecord(
            r=float(np.log(nrm)) if nrm > 0 else -np.inf,
            u=u, s=s, mask=mask_of(X, u),
            alignment=None if a is None else s * a,
            sign_condition=_sign_condition(X, y, w1, params.w2[i])))
    mo = margin_objective(X, y, params.W1, params.w2)
    return FlowRecord(iteration=it, loss=logistic_loss(X, y, params),
                      lambda_tilde=lt, neurons=neurons,
                      margin=None if mo is None else mo[1],
                      W1=params.W1.copy(), w2=params.w2.copy())


def run_flow(ds: Dataset, cfg: FlowConfig):
    """Simulate the flow; returns a FlowTrace (binary labels) or a list of
    per-class FlowTraces (multiclass datasets run K independent flows)."""
    if not ds.is_binary:
        enc = encode_labels(ds.labels, ds.K)
        return [_run_binary(ds.X, enc.column(k), cfg) for k in range(ds.K)]
    return _run_binary(ds.X, ds.y, cfg)


def _run_binary(X: np.ndarray, y: np.ndarray, cfg: FlowConfig) -> FlowTrace:
    params = init_balanced(cfg, X.shape[1])
    trace = FlowTrace(config=cfg)
    checkpoints = set(cfg.checkpoints)
    init_signs = np.sign(params.w2)
    prev_sigma = np.sign(X @ params.W1).astype(int)
    trace.records.append(_record(X, y, params, 0))
    for it in range(1, cfg.iters + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                params = step(X, y, params, cfg.step)
        except ValueError:
            trace.aborted_at = it   # non-finite parameters
            break
        if not (np.isfinite(params.W1).all() and np.isfinite(params.w2).all()):
            trace.aborted_at = it
            break
        sigma = np.sign(X @ params.W1).astype(int)
        changed = np.nonzero(np.any(sigma != prev_sigma, axis=0))[0]
        for i in changed:
            if len(trace.sign_events) >= SIGN_EVENT_CAP:
                trace.sign_events_truncated = True
                break
            trace.sign_events.append(SignChangeEvent(
                iteration=it, neuron=int(i),
                old=tuple(int(v) for v in prev_sigma[:, i]),
                new=tuple(int(v) for v in sigma[:, i])))
        prev_sigma = sigma
        with np.errstate(over="ignore", invalid="ignore"):
            drift = np.abs(np.sum(params.W1 ** 2, axis=0) - params.w2 ** 2)
        if np.isfinite(drift).all():
            trace.max_balance_drift = max(trace.max_balance_drift,
                                          float(drift.max()))
        trace.w2_sign_flips += int(np.sum(np.sign(params.w2) * init_signs < 0))
        init_signs = np.where(params.w2 == 0.0, init_signs, np.sign(params.w2))
        if it in checkpoints:
            trace.records.append(_record(X, y, params, it))
    return trace


@dataclass(frozen=True)
class TimeBounds:
    """Alignment-time formula evaluators; all inputs dimensionless."""

    delta: float
    g0: float
    vu0: float     # v(0)^T u(0)

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.g0 <= 0.0:
            raise ValueError("g0 must be positive")
        if abs(self.vu0) >= self._root():
            raise ValueError("v0^T u0 out of the admissible interval")

    def _root(self) -> float:
        return float(np.sqrt(1.0 - self.delta / 8.0))

    def _log_ratio(self, c: float) -> float:
        s = self._root()
        if s - c <= 0.0 or s + c <= 0.0:
            raise ValueError("log argument not positive")
        return float(np.log((s + c) / (s - c)))

    def t_star(self) -> float:
        return self.t_shift(1.0 - self.delta)

    def t_shift(self, c: float) -> float:
        if not (0.0 < c <= 1.0 - self.delta):
            raise ValueError("c must lie in (0, 1 - delta]")
        s = self._root()
        return (self._log_ratio(c) - self._log_ratio(self.vu0)) / (2.0 * self.g0 * s)


def time_bounds(delta: float, g0: float, vu0: float) -> TimeBounds:
    return TimeBounds(delta=delta, g0=g0, vu0=vu0)


def recover_dual(X: np.ndarray, y: np.ndarray, params: NetworkParams,
                 masks_all: list[ActivationMask],
                 masks_network: list[ActivationMask] | None = None,
                 tol: float = 1e-6) -> tuple[np.ndarray, float, float]:
    """Dual candidate from a trained network: normalize lambda_tilde, then
    divide by the linear-objective gauge over the masks realized by the
    network's neurons (the convention of the reference experiments).  Returns
    (lam, gauge_network, gauge_all) where gauge_all is the masked-objective
    gauge of the scaled lam over the full arrangement list (dual feasible iff
    gauge_all <= 1 + tol)."""
    lt = lambda_tilde(X, y, params)
    nrm = np.linalg.norm(lt)
    if nrm == 0.0:
        raise ValueError("lambda_tilde vanished (non-finite outputs?)")
    lam = lt / nrm
    if masks_network is None:
        masks_network = network_masks(X, params)
    rep_net = polar_gauge(X, masks_network, lam, objective="linear", tol=tol)
    if rep_net.gauge <= 1e-12:
        raise ValueError("degenerate normalizing gauge")
    lam = lam / rep_net.gauge
    rep_all = polar_gauge(X, masks_all, lam, objective="masked", tol=tol)
    return lam, float(rep_net.gauge), float(rep_all.gauge)


def network_masks(X: np.ndarray, params: NetworkParams) -> list[ActivationMask]:
    """Deduplicated strict activation patterns of the network's neurons."""
    seen = {}
    for i in range(params.m):
        mask = mask_of(X, params.W1[:, i])
        seen.setdefault(mask.bits, mask)
    return [seen[k] for k in sorted(seen)]
