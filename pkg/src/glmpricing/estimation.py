"""Regularized quasi-maximum-likelihood estimation for generalized linear demand.

The objective maximized over the ball ``||theta|| <= theta_bar`` is

    F(theta) = -lam * g_lower * ||theta||^2 + sum_t l_t(theta),
    l_t(theta) = -int_{D_t}^{g(z_t' theta)} (u - D_t) / h(u) du,

which is ``2 lam g_lower``-strongly concave. Every solve returns a certified
upper bound on ``max F - F(theta_hat)`` derived from a projected gradient step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize
from scipy.special import xlogy

from .demand import LinkFunction


class DesignMatrix:
    """Regularized Gram matrix ``lam I + sum z z'`` with its inverse and log-determinant.

    The inverse is maintained by Sherman-Morrison updates and refactorized
    from scratch every ``refresh_every`` updates.
    """

    def __init__(self, dim: int, lam: float, refresh_every: int = 512):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.dim = dim
        self.lam = float(lam)
        self.refresh_every = refresh_every
        self.M = lam * np.eye(dim)
        self.M_inv = np.eye(dim) / lam
        self.log_det = dim * math.log(lam)
        self.n_updates = 0

    def copy(self) -> "DesignMatrix":
        new = DesignMatrix.__new__(DesignMatrix)
        new.__dict__.update(self.__dict__)
        new.M = self.M.copy()
        new.M_inv = self.M_inv.copy()
        return new

    def update(self, z) -> None:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {z.shape}")
        Mz = self.M_inv @ z
        q = float(z @ Mz)
        if q == 0.0:
            return
        self.M += np.outer(z, z)
        self.M_inv -= np.outer(Mz, Mz) / (1.0 + q)
        self.log_det += math.log1p(q)
        self.n_updates += 1
        if self.n_updates % self.refresh_every == 0:
            self.refactor()

    def refactor(self) -> None:
        L = np.linalg.cholesky(self.M)
        L_inv = np.linalg.inv(L)
        self.M_inv = L_inv.T @ L_inv
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(L))))

    def norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ self.M @ v), 0.0))

    def inv_norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ self.M_inv @ v), 0.0))

    def inv_sqrt(self) -> np.ndarray:
        w, V = np.linalg.eigh(self.M)
        return (V / np.sqrt(w)) @ V.T

    @property
    def log_det_ratio(self) -> float:
        """``log(det M / lam^dim)``, zero for a fresh design."""
        return max(self.log_det - self.dim * math.log(self.lam), 0.0)


def design_update(design: DesignMatrix, z) -> DesignMatrix:
    new = design.copy()
    new.update(z)
    return new


# -- quasi-likelihood --------------------------------------------------------

def _log_expit(s):
    return -np.logaddexp(0.0, -s)


def loglik_terms(link: LinkFunction, s, D) -> np.ndarray:
    """Per-observation l_t evaluated at link arguments ``s = z' theta``."""
    s = np.asarray(s, dtype=float)
    D = np.asarray(D, dtype=float)
    if link.kind == "identity":
        return -0.5 * (s - D) ** 2
    if link.kind == "logistic":
        if np.any((D < 0) | (D > 1)):
            raise ValueError("logistic quasi-likelihood is undefined for demand outside [0, 1]")
        # antiderivative of (u - D)/(u(1-u)) is D log u + (1-D) log(1-u), up to sign
        const = xlogy(D, D) + xlogy(1.0 - D, 1.0 - D)
        return D * _log_expit(s) + (1.0 - D) * _log_expit(-s) - const
    # substituting u = g(v) turns the integral into -int_{g^{-1}(D)}^{s} (g(v) - D) dv
    out = np.empty(s.shape)
    for i, (si, Di) in enumerate(zip(s.ravel(), np.broadcast_to(D, s.shape).ravel())):
        v0 = float(link.inverse(Di))
        val, _ = integrate.quad(lambda v: float(link.g(v)) - Di, v0, si, epsabs=1e-10, epsrel=1e-12)
        out.flat[i] = -val
    return out


def quasi_loglik(link: LinkFunction, theta, Z, D, offset=None) -> float:
    """Cumulative quasi log-likelihood ``sum_t l_t(theta)`` over a history."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        raise ValueError("history is empty")
    s = Z @ np.asarray(theta, dtype=float)
    if offset is not None:
        s = s + offset
    return float(np.sum(loglik_terms(link, s, D)))


class QuasiObjective:
    """Value, gradient and Hessian of the regularized quasi-likelihood."""

    def __init__(self, link: LinkFunction, Z, D, lam: float, offset=None):
        self.link = link
        self.Z = np.asarray(Z, dtype=float).reshape(-1, np.shape(Z)[-1])
        self.D = np.asarray(D, dtype=float)
        self.offset = np.zeros(len(self.D)) if offset is None else np.asarray(offset, dtype=float)
        self.lam = lam
        self.penalty = lam * link.g_lower
        self.dim = self.Z.shape[1]

    def _s(self, theta):
        return self.Z @ theta + self.offset

    def value(self, theta) -> float:
        reg = -self.penalty * float(theta @ theta)
        if len(self.D) == 0:
            return reg
        return reg + float(np.sum(loglik_terms(self.link, self._s(theta), self.D)))

    def grad(self, theta) -> np.ndarray:
        resid = self.D - self.link.g(self._s(theta))
        return self.Z.T @ resid - 2.0 * self.penalty * theta

    def hess(self, theta) -> np.ndarray:
        w = self.link.g_prime(self._s(theta))
        return -(self.Z.T * w) @ self.Z - 2.0 * self.penalty * np.eye(self.dim)

    def lipschitz(self) -> float:
        # trace bound on the largest eigenvalue of Z'Z
        return self.link.g_upper * float(np.sum(self.Z**2)) + 2.0 * self.penalty


def project_ball(theta, radius: float) -> np.ndarray:
    n = float(np.linalg.norm(theta))
    if n <= radius:
        return theta
    return theta * (radius / n)


def suboptimality_gap(mapping_norm: float, lam: float, g_lower: float) -> float:
    """Strong-concavity bound ``||G||^2 / (4 lam g_lower)`` on the optimality gap."""
    return mapping_norm**2 / (4.0 * lam * g_lower)


def gap_certificate(obj: QuasiObjective, theta, theta_bar: float, step: Optional[float] = None):
    """One backtracking projected gradient step from ``theta``.

    Returns ``(theta_plus, gap)`` where ``gap`` upper-bounds the suboptimality
    of ``theta_plus``. For an interior point the mapping is the gradient and
    the same bound also covers ``theta`` itself.
    """
    theta = np.asarray(theta, dtype=float)
    f0 = obj.value(theta)
    g = obj.grad(theta)
    s = 1.0 / obj.lipschitz() if step is None else step
    for _ in range(60):
        theta_plus = project_ball(theta + s * g, theta_bar)
        delta = theta_plus - theta
        f1 = obj.value(theta_plus)
        if f1 >= f0 + g @ delta - (delta @ delta) / (2.0 * s) - 1e-12 * (1.0 + abs(f0)):
            break
        s *= 0.5
    G = delta / s
    return theta_plus, suboptimality_gap(float(np.linalg.norm(G)), obj.lam, obj.link.g_lower)


def _newton(obj: QuasiObjective, theta, nu: float = 0.0, max_iter: int = 100):
    """Unconstrained Newton ascent on ``F(theta) - nu ||theta||^2``."""
    theta = np.array(theta, dtype=float)
    eye = np.eye(obj.dim)

    def fval(th):
        return obj.value(th) - nu * float(th @ th)

    f0 = fval(theta)
    for _ in range(max_iter):
        g = obj.grad(theta) - 2.0 * nu * theta
        H = obj.hess(theta) - 2.0 * nu * eye
        try:
            L = np.linalg.cholesky(-H)
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            step = g / obj.lipschitz()
        dec = float(g @ step)
        if dec <= 1e-24 * (1.0 + abs(f0)):
            break
        t = 1.0
        while True:
            cand = theta + t * step
            f1 = fval(cand)
            if f1 >= f0 + 1e-4 * t * dec or t < 1e-12:
                break
            t *= 0.5
        theta, f0 = cand, f1
        if dec <= 1e-18 * (1.0 + abs(f0)):
            break
    return theta


def _constrained_newton(obj: QuasiObjective, theta0, theta_bar: float):
    """Maximize over the ball via the multiplier on ``||theta||^2 <= theta_bar^2``."""
    theta = _newton(obj, theta0)
    if np.linalg.norm(theta) <= theta_bar:
        return theta
    state = {"theta": theta}

    def excess(nu):
        state["theta"] = _newton(obj, state["theta"], nu)
        return float(np.linalg.norm(state["theta"])) - theta_bar

    hi = max(obj.penalty, 1e-6)
    while excess(hi) > 0:
        hi *= 4.0
    nu = optimize.brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-14)
    return project_ball(_newton(obj, state["theta"], nu), theta_bar)


def _maximize(obj: QuasiObjective, theta_bar: float, tol: float, theta0=None, max_iter: int = 10_000):
    theta = np.zeros(obj.dim) if theta0 is None else project_ball(np.asarray(theta0, dtype=float), theta_bar)
    best, best_gap = gap_certificate(obj, theta, theta_bar)
    if best_gap <= tol:
        return best, best_gap
    theta = project_ball(_constrained_newton(obj, theta, theta_bar), theta_bar)
    cand, gap = gap_certificate(obj, theta, theta_bar)
    if gap < best_gap:
        best, best_gap = cand, gap
    # projected gradient ascent fallback; each step carries its own certificate
    theta = best
    for _ in range(max_iter):
        if best_gap <= tol:
            break
        theta, gap = gap_certificate(obj, theta, theta_bar)
        if gap < best_gap:
            best, best_gap = theta, gap
    return best, best_gap


def qmle_fit(link: LinkFunction, Z, D, lam: float, theta_bar: float, tol: float = 1e-8,
             theta0=None, max_iter: int = 10_000):
    """Regularized quasi-MLE over ``||theta|| <= theta_bar``.

    Returns ``(theta_hat, gap)``; ``gap <= tol`` unless the iteration cap was
    hit, in which case the best certified iterate is returned.
    """
    if lam <= 0 or tol <= 0:
        raise ValueError("lam and tol must be positive")
    obj = QuasiObjective(link, Z, D, lam)
    return _maximize(obj, theta_bar, tol, theta0, max_iter)


def known_gamma_radius(gamma, theta_bar: float) -> float:
    """Radius of ``{beta : ||(beta, gamma)|| <= theta_bar}``."""
    rest = theta_bar**2 - float(np.dot(gamma, gamma))
    if rest < 0:
        raise ValueError("known gamma already exceeds theta_bar")
    return math.sqrt(rest)


def qmle_fit_known_gamma(link: LinkFunction, X, prices, D, gamma, lam: float, theta_bar: float,
                         tol: float = 1e-8, beta0=None, max_iter: int = 10_000):
    """Quasi-MLE of beta alone with ``x' gamma p`` folded into the link argument."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    offset = (X @ np.asarray(gamma, dtype=float)) * np.asarray(prices, dtype=float)
    obj = QuasiObjective(link, X, D, lam, offset=offset)
    return _maximize(obj, known_gamma_radius(gamma, theta_bar), tol, beta0, max_iter)


# -- confidence sets ---------------------------------------------------------

def confidence_radius(design: DesignMatrix, T: int, lam: float, theta_bar: float,
                      sigma_bar: float, g_lower: float) -> float:
    """``2 sqrt(lam) theta_bar + (2 sigma_bar / g_lower) sqrt(2 log T + log(det M / lam^dim))``."""
    return 2.0 * math.sqrt(lam) * theta_bar + (2.0 * sigma_bar / g_lower) * math.sqrt(
        2.0 * math.log(T) + design.log_det_ratio
    )


def alpha_bar(dim: int, T: int, lam: float, theta_bar: float, sigma_bar: float, g_lower: float) -> float:
    """Uniform-in-t upper bound on the radius when every ``||z_t|| <= 1``."""
    return 2.0 * math.sqrt(lam) * theta_bar + (2.0 * sigma_bar / g_lower) * math.sqrt(
        2.0 * math.log(T) + dim * math.log((dim * lam + T) / (dim * lam))
    )


@dataclass
class ConfidenceEllipsoid:
    center: np.ndarray
    design: DesignMatrix
    radius: float
    theta_bar: float

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return (self.design.norm(theta - self.center) <= self.radius
                and float(np.linalg.norm(theta)) <= self.theta_bar)


def elliptical_potential_audit(Z, lam: float):
    """``(lhs, bound, ok)`` for ``sum_t ||z_t||^2_{M_{t-1}^{-1}} <= 2 dim log((lam dim + T)/(lam dim))``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if lam < 1:
        raise ValueError(f"potential bound needs lambda >= 1, got {lam}")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms > 1.0 + 1e-12):
        t = int(np.argmax(norms > 1.0 + 1e-12)) + 1
        raise ValueError(f"potential bound needs ||z_t|| <= 1; violated at t = {t} (norm {norms[t - 1]:.6g})")
    T, dim = Z.shape
    design = DesignMatrix(dim, lam)
    lhs = 0.0
    for z in Z:
        lhs += float(z @ design.M_inv @ z)
        design.update(z)
    bound = 2.0 * dim * math.log((lam * dim + T) / (lam * dim))
    return lhs, bound, lhs <= bound


# -- online estimator --------------------------------------------------------

class QuasiMLE:
    """Online estimator state: history buffers, design matrix, warm-started fits.

    With ``known_gamma`` set, only beta is estimated and the design uses the
    raw covariates (dimension d) instead of the features (x, p x).
    """

    def __init__(self, link: LinkFunction, d: int, lam: float, theta_bar: float,
                 tol: float = 1e-8, known_gamma=None, capacity: int = 1024):
        self.link = link
        self.d = d
        self.lam = lam
        self.theta_bar = theta_bar
        self.tol = tol
        self.known_gamma = None if known_gamma is None else np.asarray(known_gamma, dtype=float)
        self.dim = d if self.known_gamma is not None else 2 * d
        self.design = DesignMatrix(self.dim, lam)
        self._Z = np.empty((capacity, self.dim))
        self._D = np.empty(capacity)
        self._offset = np.empty(capacity)
        self.n = 0
        self.estimate = np.zeros(self.dim)
        self.gap = 0.0

    @property
    def history_len(self) -> int:
        return self.n

    def _grow(self):
        cap = 2 * self._Z.shape[0]
        for name in ("_Z", "_D", "_offset"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:])
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    def observe(self, x, p: float, demand: float) -> None:
        x = np.asarray(x, dtype=float)
        if self.n == self._Z.shape[0]:
            self._grow()
        if self.known_gamma is None:
            z = np.concatenate([x, p * x])
            off = 0.0
        else:
            z = x
            off = float(x @ self.known_gamma) * p
        self._Z[self.n] = z
        self._D[self.n] = demand
        self._offset[self.n] = off
        self.n += 1
        self.design.update(z)

    def objective(self) -> QuasiObjective:
        n = self.n
        return QuasiObjective(self.link, self._Z[:n], self._D[:n], self.lam, offset=self._offset[:n])

    def fit(self, tol: Optional[float] = None):
        tol = self.tol if tol is None else tol
        radius = self.theta_bar if self.known_gamma is None else known_gamma_radius(self.known_gamma, self.theta_bar)
        self.estimate, self.gap = _maximize(self.objective(), radius, tol, self.estimate)
        return self.estimate, self.gap

    @property
    def theta_hat(self) -> np.ndarray:
        """Full parameter (beta; gamma), re-attaching gamma in known-gamma mode."""
        if self.known_gamma is None:
            return self.estimate
        return np.concatenate([self.estimate, self.known_gamma])

    def radius(self, T: int, sigma_bar: float) -> float:
        return confidence_radius(self.design, T, self.lam, self.theta_bar, sigma_bar, self.link.g_lower)

    def ellipsoid(self, radius: float) -> ConfidenceEllipsoid:
        return ConfidenceEllipsoid(self.estimate.copy(), self.design, radius, self.theta_bar)
