"""Incremental weighted ridge regression and confidence radii.

The estimator minimises

    lam * ||mu||^2 + sum_i (<mu, x_i> - y_i)^2 / sigma_bar_i^2

and is kept as sufficient statistics (Gram matrix, response vector).  All
radius formulas use the natural logarithm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

REFACTOR_EVERY = 64


class RegressionError(ValueError):
    pass


@dataclass
class ConfidenceSpec:
    """Tunables needed to evaluate a confidence radius.

    ``noise_bound`` (R), ``variance_bound`` (sigma) and ``param_bound`` (B) may
    be zero; everything else must be strictly positive.
    """

    dim: int
    noise_bound: float = 1.0
    variance_bound: float = 1.0
    context_bound: float = 1.0
    lam: float = 1.0
    delta: float = 0.05
    param_bound: float = 1.0
    sigma_bar_min: float = 1.0

    def __post_init__(self):
        problems = []
        if int(self.dim) != self.dim or self.dim < 1:
            problems.append(f"dim must be a positive integer, got {self.dim}")
        for name in ("noise_bound", "variance_bound", "param_bound"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                problems.append(f"{name} must be finite and >= 0, got {v}")
        for name in ("context_bound", "lam", "sigma_bar_min"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                problems.append(f"{name} must be finite and > 0, got {v}")
        if not 0.0 < self.delta < 1.0:
            problems.append(f"delta must lie in (0, 1), got {self.delta}")
        if problems:
            raise RegressionError("; ".join(problems))


@dataclass
class WlsState:
    """Sufficient statistics of a weighted ridge regression.

    ``sigma_mat`` is lam*I + sum x x^T / sigma_bar^2 and ``b_vec`` is
    sum y x / sigma_bar^2.  An inverse is carried along with rank-one
    (Sherman-Morrison) updates and rebuilt from ``sigma_mat`` every
    ``REFACTOR_EVERY`` updates.  ``logdet`` accumulates through the matrix
    determinant lemma, so it never decreases.
    """

    dim: int
    lam: float
    sigma_mat: np.ndarray = field(init=False, repr=False)
    b_vec: np.ndarray = field(init=False, repr=False)
    count: int = field(init=False, default=0)
    inverse: np.ndarray = field(init=False, repr=False)
    logdet: float = field(init=False)
    # elliptical-potential bookkeeping on the scaled contexts x / sigma_bar
    potential: float = field(init=False, default=0.0)
    max_sq_norm: float = field(init=False, default=0.0)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise RegressionError(f"dim must be a positive integer, got {self.dim}")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise RegressionError(f"lam must be finite and > 0, got {self.lam}")
        self.dim = int(self.dim)
        self.sigma_mat = self.lam * np.eye(self.dim)
        self.b_vec = np.zeros(self.dim)
        self.inverse = np.eye(self.dim) / self.lam
        self.logdet = self.dim * math.log(self.lam)
        self._chol = None
        self._chol_count = -1

    def update(self, x, y, sigma_bar=1.0):
        """Absorb one observation (x, y) with weight 1/sigma_bar^2, in place."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise RegressionError(f"context has shape {x.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(x)):
            raise RegressionError(f"non-finite context {x!r}")
        if not math.isfinite(y):
            raise RegressionError(f"non-finite response {y!r}")
        if not (math.isfinite(sigma_bar) and sigma_bar > 0):
            raise RegressionError(f"sigma_bar must be finite and > 0, got {sigma_bar}")

        z = x / sigma_bar
        Az = self.inverse @ z
        q = float(z @ Az)
        self.potential += min(1.0, q)
        self.max_sq_norm = max(self.max_sq_norm, float(z @ z))
        self.logdet += math.log1p(q)

        self.sigma_mat += np.outer(z, z)
        self.b_vec += (y / sigma_bar) * z
        self.count += 1
        if self.count % REFACTOR_EVERY == 0:
            inv = np.linalg.inv(self.sigma_mat)
            self.inverse = 0.5 * (inv + inv.T)
        else:
            self.inverse -= np.outer(Az, Az) / (1.0 + q)
        return self

    def update_batch(self, X, y, sigma_bar=1.0, block=64):
        """Absorb rows of X in order; same end state as repeated ``update``.

        Works block by block: the Cholesky pivots of I + Z A Z^T (A the
        current inverse) are exactly the sequential 1 + q_t, so potential and
        logdet match the one-at-a-time path.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        y = np.broadcast_to(np.asarray(y, dtype=float), (n,))
        sb = np.broadcast_to(np.asarray(sigma_bar, dtype=float), (n,))
        if X.shape[1:] != (self.dim,):
            raise RegressionError(f"contexts have shape {X.shape}, expected (n, {self.dim})")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise RegressionError("non-finite context or response")
        if not (np.all(np.isfinite(sb)) and np.all(sb > 0)):
            raise RegressionError("sigma_bar must be finite and > 0")
        Z = X / sb[:, None]
        for lo in range(0, n, block):
            Zb = Z[lo:lo + block]
            W = Zb @ self.inverse
            L = np.linalg.cholesky(np.eye(len(Zb)) + W @ Zb.T)
            piv = np.diag(L) ** 2
            q = piv - 1.0
            self.potential += float(np.minimum(1.0, q).sum())
            self.logdet += float(np.log(piv).sum())
            V = solve_triangular(L, W, lower=True)
            self.inverse -= V.T @ V
        self.max_sq_norm = max(self.max_sq_norm, float(np.einsum("ij,ij->i", Z, Z).max(initial=0.0)))
        self.sigma_mat += Z.T @ Z
        self.b_vec += Z.T @ (y / sb)
        self.count += n
        inv = np.linalg.inv(self.sigma_mat)
        self.inverse = 0.5 * (inv + inv.T)
        return self

    def _factor(self):
        if self._chol_count != self.count:
            self._chol = cho_factor(self.sigma_mat, lower=True)[0]
            self._chol_count = self.count
        return self._chol

    def estimate(self):
        """Weighted ridge estimate: the solution of sigma_mat @ mu = b_vec."""
        L = self._factor()
        w = solve_triangular(L, self.b_vec, lower=True)
        return solve_triangular(L, w, lower=True, trans="T")

    def bonus(self, x):
        """||x||_{sigma_mat^{-1}} for one vector, or row-wise for a stack (..., d)."""
        x = np.asarray(x, dtype=float)
        L = self._factor()
        flat = x.reshape(-1, self.dim)
        w = solve_triangular(L, flat.T, lower=True)
        out = np.sqrt(np.einsum("ij,ij->j", w, w))
        return float(out[0]) if x.ndim == 1 else out.reshape(x.shape[:-1])

    def norm(self, v):
        """||v||_{sigma_mat} = sqrt(v^T sigma_mat v)."""
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(0.0, float(v @ self.sigma_mat @ v)))

    def potential_bound(self):
        """Right-hand side of the elliptical potential lemma for this stream."""
        return elliptical_potential_bound(self.dim, self.lam, self.count, self.max_sq_norm)


def elliptical_potential_bound(dim, lam, n, max_sq_norm):
    """2 d log((d lam + n L^2) / (d lam)) with L^2 the largest squared context norm."""
    return 2.0 * dim * math.log((dim * lam + n * max_sq_norm) / (dim * lam))


def _log_count(t, delta):
    return math.log(4.0 * t * t / delta)


def bernstein_radius(spec, t):
    """Variance-aware radius for ||sum x_i eta_i||_{Z_t^{-1}}."""
    if t < 1:
        return 0.0
    d, L, lam = spec.dim, spec.context_bound, spec.lam
    lc = _log_count(t, spec.delta)
    lead = 8.0 * spec.variance_bound * math.sqrt(d * math.log1p(t * L * L / (d * lam)) * lc)
    return lead + 4.0 * spec.noise_bound * lc


def hoeffding_radius(spec, t, logdet_ratio=None):
    """Magnitude-based (sub-Gaussian) radius including the sqrt(lam) B bias.

    With ``logdet_ratio`` = log det Z_t - d log lam the data-dependent form
    R sqrt(logdet_ratio + 2 log(1/delta)) is used instead of the closed form.
    At t = 0 nothing has been observed and only the bias term remains.
    """
    bias = math.sqrt(spec.lam) * spec.param_bound
    if t < 1:
        return bias
    if logdet_ratio is None:
        inner = spec.dim * math.log((1.0 + t * spec.context_bound**2 / spec.lam) / spec.delta)
    else:
        inner = max(0.0, logdet_ratio) + 2.0 * math.log(1.0 / spec.delta)
    return spec.noise_bound * math.sqrt(inner) + bias


def weighted_oful_radius(spec, t):
    """Radius of the weighted estimator, in units of the weighted Gram norm."""
    if t < 1:
        return 0.0
    d, A, lam, smin = spec.dim, spec.context_bound, spec.lam, spec.sigma_bar_min
    lc = _log_count(t, spec.delta)
    lead = 8.0 * math.sqrt(d * math.log1p(t * A * A / (smin * smin * d * lam)) * lc)
    return lead + 4.0 * spec.noise_bound / smin * lc


def faury_radius(spec, t):
    """Bound on ||mu_t - mu*||_{Z_t} from the Faury et al. inequality, rescaled
    to noise magnitude R and context bound L (comparison only)."""
    d, R, L, lam, s = spec.dim, spec.noise_bound, spec.context_bound, spec.lam, spec.variance_bound
    bias = math.sqrt(lam) * spec.param_bound
    RL = R * L
    if t < 1 or RL == 0.0:
        return bias
    sq = math.sqrt(lam)
    return (
        s * s * sq / (2.0 * RL)
        + d * RL / sq * math.log1p(t * RL * RL / lam)
        + (2.0 * d * math.log(2.0) + 2.0 * math.log(1.0 / spec.delta)) * RL / sq
        + bias
    )
