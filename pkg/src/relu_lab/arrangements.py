"""Hyperplane arrangements of a data matrix: activation masks and sign patterns.

An activation mask is a realizable pattern I(Xw >= 0); a sign pattern is a
realizable sign(Xw) in {-1,0,+1}^N.  Realizability of a candidate is an LP
feasibility question; strict inequalities are encoded with a unit margin
(a^T w <= -1), lossless by homogeneity.  For d = 2 an angular-sweep oracle
enumerates the same sets independently of the LP route.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .solver import EQ0, GE0, LE_NEG1, lp_feasible

EXHAUSTIVE_MAX_N = 22
SIGN_PATTERN_MAX_N = 13

#: relative threshold used everywhere a singular value decides rank
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ActivationMask:
    """Realizable I(Xw >= 0) pattern, with a certifying w when available."""

    bits: tuple[int, ...]
    witness: tuple[float, ...] | None = None

    def __post_init__(self):
        if not all(b in (0, 1) for b in self.bits):
            raise ValueError("mask bits must be 0/1")

    def as_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def diag_vector(self) -> np.ndarray:
        return np.array(self.bits, dtype=float)

    def dominates(self, indicator: np.ndarray) -> bool:
        """Componentwise bits >= indicator."""
        return bool(np.all(self.diag_vector() >= np.asarray(indicator, dtype=float)))

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class SignPattern:
    """Realizable sign(Xw) pattern over the samples."""

    signs: tuple[int, ...]
    witness: tuple[float, ...] | None = None

    def __post_init__(self):
        if not all(s in (-1, 0, 1) for s in self.signs):
            raise ValueError("sign entries must be -1/0/+1")

    def positive_support(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.signs) if s > 0)


def mask_from_string(s: str) -> ActivationMask:
    return ActivationMask(bits=tuple(int(ch) for ch in s))


def mask_of(X: np.ndarray, u: np.ndarray) -> ActivationMask:
    """Strict activation pattern I(Xu > 0) (boundary samples get bit 0)."""
    u = np.asarray(u, dtype=float)
    if not np.isfinite(u).all():
        raise ValueError("non-finite direction")
    return ActivationMask(bits=tuple(int(v) for v in (np.asarray(X) @ u > 0)))


def matrix_rank(X: np.ndarray) -> int:
    """Rank via singular values with relative threshold RANK_RTOL * sigma_max."""
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def cover_bound(N: int, r: int) -> float:
    """Counting bound 2r (e (N-1) / r)^r on the number of arrangements."""
    if N < 2 or r < 1:
        raise ValueError("need N >= 2 and r >= 1")
    return 2.0 * r * (np.e * (N - 1) / r) ** r


def _mask_rows(X: np.ndarray, bits: tuple[int, ...]):
    return [(X[n], GE0 if b else LE_NEG1) for n, b in enumerate(bits)]


def _mask_key(bits) -> tuple[int, ...]:
    return tuple(int(b) for b in bits)


def _enumerate_masks_lp(X: np.ndarray) -> list[ActivationMask]:
    """Depth-first enumeration with prefix pruning: an infeasible prefix stays
    infeasible for every completion, so whole subtrees are skipped."""
    N = X.shape[0]
    found: list[ActivationMask] = []

    def recurse(prefix: list[int]):
        rows = _mask_rows(X, tuple(prefix))
        w = lp_feasible(rows)
        if w is None:
            return
        if len(prefix) == N:
            found.append(ActivationMask(bits=tuple(prefix),
                                        witness=tuple(float(v) for v in w)))
            return
        for b in (0, 1):
            recurse(prefix + [b])

    recurse([])
    return sorted(found, key=lambda m: m.bits)


def _angle_candidates(X: np.ndarray) -> list[np.ndarray]:
    """Directions where some sample's activation flips, their bisectors, and
    the origin.  Perpendiculars are built coordinate-exactly so x_n^T w is a
    floating-point zero at its own boundary direction."""
    cands = [np.zeros(X.shape[1])]
    perps = []
    for xn in X:
        if np.linalg.norm(xn) == 0.0:
            continue
        perp = np.array([-xn[1], xn[0]]) / np.linalg.norm(xn)
        perps.append(perp)
        perps.append(-perp)
    if not perps:
        return cands
    angles = sorted(float(np.arctan2(v[1], v[0])) for v in perps)
    cands.extend(perps)
    ext = angles + [angles[0] + 2.0 * np.pi]
    for a0, a1 in zip(ext[:-1], ext[1:]):
        mid = 0.5 * (a0 + a1)
        cands.append(np.array([np.cos(mid), np.sin(mid)]))
    return cands


def _enumerate_masks_sweep2d(X: np.ndarray) -> list[ActivationMask]:
    if X.shape[1] != 2:
        raise ValueError("sweep2d requires d = 2")
    seen: dict[tuple[int, ...], ActivationMask] = {}
    scale = np.linalg.norm(X, axis=1)
    for w in _angle_candidates(X):
        t = X @ w
        # boundary-tolerant ">= 0": exact zeros arise by construction
        bits = _mask_key(t >= -1e-12 * np.maximum(scale, 1.0))
        seen.setdefault(bits, ActivationMask(
            bits=bits, witness=tuple(float(v) for v in w)))
    return sorted(seen.values(), key=lambda m: m.bits)


def enumerate_masks(X: np.ndarray, method: str = "exhaustive") -> list[ActivationMask]:
    """All realizable activation masks of X, deduplicated, lexicographic.

    method="exhaustive" probes candidates by LP (N <= 22);
    method="sweep2d" is the independent angular-sweep oracle (d = 2 only).
    """
    X = np.asarray(X, dtype=float)
    if method == "exhaustive":
        if X.shape[0] > EXHAUSTIVE_MAX_N:
            raise ValueError(f"exhaustive enumeration limited to "
                             f"N <= {EXHAUSTIVE_MAX_N}")
        return _enumerate_masks_lp(X)
    if method == "sweep2d":
        return _enumerate_masks_sweep2d(X)
    raise ValueError(f"unknown method {method!r}")


def verify_mask_witness(X: np.ndarray, mask: ActivationMask) -> bool:
    """Re-check the stored witness: I(Xw >= 0) equals the bits after the unit
    margin relaxation on the strict side."""
    if mask.witness is None:
        return False
    t = np.asarray(X) @ np.array(mask.witness)
    for v, b in zip(t, mask.bits):
        if b == 1 and v < -1e-9:
            return False
        if b == 0 and v > -1.0 + 1e-9:
            return False
    return True


def _pattern_rows(X: np.ndarray, signs: tuple[int, ...]):
    rows = []
    for n, s in enumerate(signs):
        if s == 0:
            rows.append((X[n], EQ0))
        elif s > 0:
            rows.append((-X[n], LE_NEG1))   # x^T w >= 1
        else:
            rows.append((X[n], LE_NEG1))
    return rows


def enumerate_sign_patterns(X: np.ndarray) -> list[SignPattern]:
    """All realizable sign(Xw) patterns (3^N candidates, prefix-pruned LPs).

    Always contains the all-zero pattern (w = 0).
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    if N > SIGN_PATTERN_MAX_N:
        raise ValueError(f"sign-pattern enumeration limited to "
                         f"N <= {SIGN_PATTERN_MAX_N}")
    found: list[SignPattern] = []

    def recurse(prefix: list[int]):
        w = lp_feasible(_pattern_rows(X, tuple(prefix)))
        if w is None:
            return
        if len(prefix) == N:
            found.append(SignPattern(signs=tuple(prefix),
                                     witness=tuple(float(v) for v in w)))
            return
        for s in (-1, 0, 1):
            recurse(prefix + [s])

    recurse([])
    return sorted(found, key=lambda p: p.signs)


def sign_patterns_sweep2d(X: np.ndarray) -> list[SignPattern]:
    """d=2 sweep oracle for sign patterns (boundary directions give zeros)."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != 2:
        raise ValueError("sweep oracle requires d = 2")
    seen: dict[tuple[int, ...], SignPattern] = {}
    scale = np.maximum(np.linalg.norm(X, axis=1), 1.0)
    for w in _angle_candidates(X):
        t = X @ w
        signs = tuple(0 if abs(v) <= 1e-12 * s else (1 if v > 0 else -1)
                      for v, s in zip(t, scale))
        seen.setdefault(signs, SignPattern(
            signs=signs, witness=tuple(float(v) for v in w)))
    return sorted(seen.values(), key=lambda p: p.signs)


def all_candidate_masks(N: int) -> list[tuple[int, ...]]:
    """2^N candidate bit patterns in lexicographic order (test helper)."""
    return [tuple(bits) for bits in itertools.product((0, 1), repeat=N)]
