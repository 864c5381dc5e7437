"""Matrix functionals used by the screening pipeline.

Everything here is a pure function of dense numpy arrays: norms, stable
rank, condition numbers, principal angles, and the diagonal factorization
used to prune heavy columns from a candidate batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHONORMALITY_TOL = 1e-8
SINGULARITY_RATIO = 1e-12
EXACT_ENUM_LIMIT = 20


class ZeroMatrixError(ValueError):
    """Raised when an operation is undefined for the zero matrix."""


class FactorizationError(RuntimeError):
    """Raised when the diagonal factorization solver fails to certify a level."""


@dataclass
class NormBracket:
    """Two-sided estimate of the infinity-to-one norm.

    ``lower`` is the best sign-vector value found, ``upper`` a certified
    upper bound.  When ``exact`` is True both coincide with the true norm.
    """

    lower: float
    upper: float
    exact: bool

    @property
    def value(self) -> float:
        """Certified value to compare against acceptance thresholds."""
        return self.lower if self.exact else self.upper


@dataclass
class FactorizationResult:
    """Diagonal factorization H = diag(d) @ core @ diag(d).

    ``diag`` has unit sum of squares; ``core`` reproduces H on the support
    of ``diag`` and its spectral norm is bounded by ``certified_norm_bound``.
    """

    diag: np.ndarray
    core: np.ndarray
    certified_norm_bound: float


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def spectral_norm(a) -> float:
    """Largest singular value of ``a``."""
    a = _as_2d(a)
    return float(np.linalg.norm(a, 2))


def stable_rank(a) -> float:
    """Squared Frobenius norm over squared spectral norm.

    A perturbation-robust effective rank: 1.0 when all columns are
    identical, equal to the dimension for any orthonormal square matrix,
    and never larger than the algebraic rank.
    """
    a = _as_2d(a)
    fro2 = float(np.sum(a * a))
    if fro2 == 0.0:
        raise ZeroMatrixError("stable rank is undefined for the zero matrix")
    return fro2 / spectral_norm(a) ** 2


def column_norm(h) -> float:
    """Sum of Euclidean column norms."""
    h = _as_2d(h)
    return float(np.linalg.norm(h, axis=0).sum())


def _sign_matrix(s: int) -> np.ndarray:
    # all sign vectors with first coordinate fixed to +1 (x and -x give the
    # same l1 image, so half the cube suffices)
    n = 1 << (s - 1)
    cols = ((np.arange(n)[:, None] >> np.arange(s - 1)) & 1) * 2 - 1
    return np.hstack([np.ones((n, 1)), cols]).T


def _inf1_value(h: np.ndarray, x: np.ndarray) -> float:
    return float(np.abs(h @ x).sum())


def _inf1_local_search(h: np.ndarray, rng: np.random.Generator, restarts: int = 8) -> float:
    """Best sign vector found by greedy single-flips from random starts."""
    s = h.shape[0]
    best = _inf1_value(h, np.ones(s))
    for _ in range(restarts):
        x = rng.choice([-1.0, 1.0], size=s)
        val = _inf1_value(h, x)
        improved = True
        while improved:
            improved = False
            hx = h @ x
            for j in range(s):
                cand = np.abs(hx - 2.0 * x[j] * h[:, j]).sum()
                if cand > val + 1e-12:
                    val = cand
                    x[j] = -x[j]
                    hx = h @ x
                    improved = True
        best = max(best, val)
    return best


def inf_to_one_norm(h, mode: str = "exact", exact_threshold: int = EXACT_ENUM_LIMIT,
                    rng: np.random.Generator | None = None) -> NormBracket:
    """Infinity-to-one norm max_{x in {-1,1}^s} ||H x||_1 of a square matrix.

    Parameters
    ----------
    h : array_like
        Square matrix.
    mode : {"exact", "bracket"}
        "exact" enumerates sign vectors (requires s <= exact_threshold);
        "bracket" returns a local-search lower bound and the certified upper
        bound min(s * ||H||_2, sum of row l1 norms).
    """
    h = _as_2d(h)
    s = h.shape[0]
    if h.shape[0] != h.shape[1]:
        raise ValueError("infinity-to-one norm requires a square matrix")
    if mode == "exact":
        if s > exact_threshold:
            raise ValueError(
                f"matrix of size {s} is too large for enumeration "
                f"(threshold {exact_threshold}); use mode='bracket'")
        if s == 1:
            v = abs(float(h[0, 0]))
            return NormBracket(v, v, True)
        # chunk the sign matrix to bound memory at large s
        n = 1 << (s - 1)
        best = 0.0
        chunk = 1 << 16
        signs = _sign_matrix(s)
        for start in range(0, n, chunk):
            block = signs[:, start:start + chunk]
            best = max(best, float(np.abs(h @ block).sum(axis=0).max()))
        return NormBracket(best, best, True)
    if mode == "bracket":
        if rng is None:
            rng = np.random.default_rng(0)
        lower = _inf1_local_search(h, rng)
        upper = min(s * spectral_norm(h), float(np.abs(h).sum()))
        return NormBracket(lower, max(lower, upper), False)
    raise ValueError(f"unknown mode {mode!r}")


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.nonzero(u * np.arange(1, v.size + 1) > (css - 1.0))[0][-1]
    theta = (css[idx] - 1.0) / (idx + 1.0)
    return np.maximum(v - theta, 0.0)


def _feasibility_probe(h: np.ndarray, level: float, tol: float, max_steps: int,
                       w0: np.ndarray | None = None):
    """Search for simplex weights w with level*diag(w) +/- H both PSD.

    Minimizes max(lmax(H - level*diag(w)), lmax(-H - level*diag(w))) by
    projected subgradient steps along the top eigenvector, step 1/sqrt(t).
    Returns (feasible, w, best_value); feasibility is certified by an
    iterate reaching a nonpositive objective.
    """
    s = h.shape[0]
    w = np.full(s, 1.0 / s) if w0 is None else w0.copy()
    best_f = math.inf
    best_w = w.copy()
    stall = 0
    for t in range(1, max_steps + 1):
        lp, vp = np.linalg.eigh(h - level * np.diag(w))
        lm, vm = np.linalg.eigh(-h - level * np.diag(w))
        f = max(lp[-1], lm[-1])
        if f <= 0.0:
            return True, w, f
        if f < best_f - tol:
            best_f, best_w = f, w.copy()
            stall = 0
        else:
            stall += 1
            if stall > 300:
                break
        top = vp[:, -1] if lp[-1] >= lm[-1] else vm[:, -1]
        w = _project_simplex(w + (level / math.sqrt(t)) * top ** 2)
    return False, best_w, best_f


def grothendieck_factorize(h, tol: float = 1e-6, max_probe_steps: int = 5000,
                           max_bisect_rounds: int = 20) -> FactorizationResult:
    """Factor a symmetric H as diag(d) @ T @ diag(d) with small ||T||.

    The diagonal satisfies sum(d^2) = 1 and T reproduces H on the support
    of d.  The core norm is minimized by bisection over candidate levels c
    in [||H||_inf1, 2 ||H||_inf1]; level c is feasible when simplex weights
    w exist with c*diag(w) - H and c*diag(w) + H both PSD (then d = sqrt(w)
    and T is H rescaled by the support pseudo-inverse of diag(d)).

    Raises FactorizationError if no level up to 2*||H||_inf1*(1+tol) can be
    certified, which indicates a solver problem: a valid factorization at
    that level always exists.
    """
    h = _as_2d(h)
    s = h.shape[0]
    if h.shape[0] != h.shape[1] or not np.allclose(h, h.T, atol=1e-10):
        raise ValueError("factorization requires a symmetric matrix")
    h = (h + h.T) / 2.0

    if s <= EXACT_ENUM_LIMIT:
        base = inf_to_one_norm(h, mode="exact").value
    else:
        base = inf_to_one_norm(h, mode="bracket").upper
    if base == 0.0:
        d = np.full(s, 1.0 / math.sqrt(s))
        return FactorizationResult(d, np.zeros((s, s)), 0.0)

    lo, hi = base, 2.0 * base
    feasible, w_best, _ = _feasibility_probe(h, hi * (1.0 + tol), tol, max_probe_steps)
    if not feasible:
        raise FactorizationError(
            f"no certified level found up to {hi * (1 + tol):.6g}; "
            "the guaranteed factorization level was not reached")
    c_best = hi * (1.0 + tol)
    for _ in range(max_bisect_rounds):
        if hi - lo <= max(tol, 1e-4) * base:
            break
        mid = (lo + hi) / 2.0
        feasible, w, _ = _feasibility_probe(h, mid, tol, min(max_probe_steps, 1500), w0=w_best)
        if feasible:
            hi, w_best, c_best = mid, w, mid
        else:
            lo = mid

    d = np.sqrt(w_best)
    support = d > 1e-10
    core = np.zeros((s, s))
    if support.any():
        ds = d[support]
        core[np.ix_(support, support)] = h[np.ix_(support, support)] / np.outer(ds, ds)
    return FactorizationResult(d, core, float(c_best))


def gram_condition_number(a_s) -> float:
    """Condition number of A_S @ A_S.T; inf when numerically singular."""
    a_s = _as_2d(a_s)
    if a_s.shape[1] == 0:
        raise ValueError("empty column set")
    gram = a_s @ a_s.T
    eigs = np.linalg.eigvalsh(gram)
    lam_max = float(eigs[-1])
    lam_min = float(eigs[0])
    if lam_max <= 0.0 or lam_min <= SINGULARITY_RATIO * lam_max:
        return math.inf
    return lam_max / lam_min


def _check_orthonormal(b: np.ndarray, name: str) -> None:
    gram = b.T @ b
    dev = float(np.linalg.norm(gram - np.eye(b.shape[1]), 2))
    if dev > ORTHONORMALITY_TOL:
        raise ValueError(f"{name} does not have orthonormal columns (deviation {dev:.2e})")


def principal_angle_distance(b1, b2) -> float:
    """Spectral norm of the difference of the two column-span projectors.

    Both inputs must be d x k with orthonormal columns; the result lies in
    [0, 1] and is invariant to any orthogonal change of basis within either
    span.
    """
    b1 = _as_2d(b1)
    b2 = _as_2d(b2)
    if b1.shape != b2.shape:
        raise ValueError(f"shape mismatch: {b1.shape} vs {b2.shape}")
    _check_orthonormal(b1, "first basis")
    _check_orthonormal(b2, "second basis")
    diff = b1 @ b1.T - b2 @ b2.T
    return float(min(1.0, np.linalg.norm(diff, 2)))


def min_nonzero_eigenvalue(sym, rank_tol: float = 1e-10) -> float:
    """Smallest eigenvalue of a symmetric PSD matrix above rank_tol * lmax."""
    sym = _as_2d(sym)
    if sym.shape[0] != sym.shape[1] or not np.allclose(sym, sym.T, atol=1e-8):
        raise ValueError("expected a symmetric matrix")
    eigs = np.linalg.eigvalsh((sym + sym.T) / 2.0)
    lam_max = float(eigs[-1])
    if lam_max <= 0.0:
        raise ZeroMatrixError("all eigenvalues are below tolerance")
    above = eigs[eigs > rank_tol * lam_max]
    if above.size == 0:
        raise ZeroMatrixError("all eigenvalues are below tolerance")
    return float(above[0])
