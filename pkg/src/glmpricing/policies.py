"""Pricing policies sharing a choose-price / observe-demand interface.

Each policy instance belongs to one trial and owns its random generator.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .demand import LinkFunction, PriceRange, identity_link, optimal_price, optimal_price_ab
from .estimation import DesignMatrix, QuasiMLE, project_ball

RADIUS_MODES = ("corollary1", "fixed")


def sample_ellipsoid_uniform(center, design: DesignMatrix, radius: float, theta_bar: float,
                             rng: np.random.Generator, size: Optional[int] = None,
                             max_attempts: int = 100, inv_sqrt=None):
    """Uniform draws from ``{theta : ||theta - center||_M <= radius}``.

    Draws outside the ``theta_bar`` ball are redrawn up to ``max_attempts``
    times, then pulled radially onto the ball.
    """
    center = np.asarray(center, dtype=float)
    dim = center.size
    n = 1 if size is None else size
    if radius <= 0 or n == 0:
        out = np.tile(center, (n, 1))
        return out[0] if size is None else out
    R = design.inv_sqrt() if inv_sqrt is None else inv_sqrt

    def draw(k):
        u = rng.standard_normal((k, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        u *= rng.random((k, 1)) ** (1.0 / dim)
        return center + radius * (u @ R)

    out = draw(n)
    bad = np.linalg.norm(out, axis=1) > theta_bar
    for _ in range(max_attempts - 1):
        if not bad.any():
            break
        out[bad] = draw(int(bad.sum()))
        bad = np.linalg.norm(out, axis=1) > theta_bar
    for i in np.flatnonzero(bad):
        out[i] = project_ball(out[i], theta_bar)
    return out[0] if size is None else out


class Policy:
    """Base interface: ``choose_price(x)`` then ``observe(x, p, demand)``."""

    name = "policy"
    estimator: Optional[QuasiMLE] = None

    def choose_price(self, x) -> float:
        raise NotImplementedError

    def observe(self, x, p: float, demand: float) -> None:
        pass


class OraclePolicy(Policy):
    name = "oracle"

    def __init__(self, link: LinkFunction, theta_star, prices: PriceRange):
        self.link = link
        self.theta_star = np.asarray(theta_star, dtype=float)
        self.prices = prices

    def choose_price(self, x) -> float:
        return optimal_price(self.link, self.theta_star, x, self.prices)[0]


class _QuasiMLEPolicy(Policy):
    def __init__(self, link: LinkFunction, prices: PriceRange, d: int, T: int, lam: float = 1.0,
                 theta_bar: float = 3.0, sigma_bar: float = 0.25, tol: float = 1e-8,
                 refit_every: int = 1, rng: Optional[np.random.Generator] = None, known_gamma=None):
        if refit_every < 1:
            raise ValueError("refit_every must be >= 1")
        self.link = link
        self.prices = prices
        self.d = d
        self.T = T
        self.sigma_bar = sigma_bar
        self.refit_every = refit_every
        self.rng = rng if rng is not None else np.random.default_rng()
        self.estimator = QuasiMLE(link, d, lam, theta_bar, tol=tol, known_gamma=known_gamma,
                                  capacity=max(T, 16))

    def observe(self, x, p, demand):
        self.estimator.observe(x, p, demand)
        if self.estimator.n % self.refit_every == 0:
            self.estimator.fit()

    def gap_inflation(self) -> float:
        return math.sqrt(2.0 * self.estimator.gap / self.link.g_lower)

    def theory_radius(self) -> float:
        return self.estimator.radius(self.T, self.sigma_bar)


class UCBPolicy(_QuasiMLEPolicy):
    """Optimistic pricing over a Monte-Carlo sample of the confidence ellipsoid.

    ``radius_mode="fixed"`` reads ``radius_value`` as a bound on the squared
    M-norm, so the ellipsoid radius is ``sqrt(radius_value)``. With
    ``approx=True`` the radius grows by ``sqrt(2 gap / g_lower)``.
    """

    def __init__(self, link, prices, d, T, K: int = 100, radius_mode: str = "corollary1",
                 radius_value: Optional[float] = None, approx: bool = False, **kw):
        super().__init__(link, prices, d, T, **kw)
        if K < 1:
            raise ValueError("K must be >= 1")
        if radius_mode not in RADIUS_MODES:
            raise ValueError(f"radius_mode must be one of {RADIUS_MODES}")
        if radius_mode == "fixed" and not (radius_value and radius_value > 0):
            raise ValueError("fixed radius needs radius_value > 0")
        self.K = K
        self.radius_mode = radius_mode
        self.radius_value = radius_value
        self.approx = approx
        self.name = "ucb_approx" if approx else "ucb"
        self.last_candidate = None

    def radius(self) -> float:
        base = self.theory_radius() if self.radius_mode == "corollary1" else math.sqrt(self.radius_value)
        return base + self.gap_inflation() if self.approx else base

    def candidates(self) -> np.ndarray:
        est = self.estimator
        center = est.estimate
        samples = sample_ellipsoid_uniform(center, est.design, self.radius(), est.theta_bar,
                                           self.rng, size=self.K - 1)
        return np.vstack([center[None, :], samples])

    def choose_price(self, x) -> float:
        thetas = self.candidates()
        x = np.asarray(x, dtype=float)
        d = self.d
        p, r = optimal_price_ab(self.link, thetas[:, :d] @ x, thetas[:, d:] @ x, self.prices)
        k = int(np.argmax(r))  # first index wins ties, so the center is kept on ties
        self.last_candidate = thetas[k]
        return float(p[k])


class ThompsonPolicy(_QuasiMLEPolicy):
    """Gaussian perturbation ``theta_hat + scale M^{-1/2} eta`` then plug-in pricing.

    ``scale_mode="corollary1"`` uses the confidence radius as scale,
    ``"fixed"`` uses ``scale_value``. ``approx=True`` adds ``sqrt(2 gap / g_lower)``.
    """

    def __init__(self, link, prices, d, T, scale_mode: str = "corollary1",
                 scale_value: Optional[float] = None, approx: bool = False, **kw):
        super().__init__(link, prices, d, T, **kw)
        if scale_mode not in RADIUS_MODES:
            raise ValueError(f"scale_mode must be one of {RADIUS_MODES}")
        if scale_mode == "fixed" and not (scale_value and scale_value > 0):
            raise ValueError("fixed scale needs scale_value > 0")
        self.scale_mode = scale_mode
        self.scale_value = scale_value
        self.approx = approx
        self.name = "ts_approx" if approx else "ts"

    def scale(self) -> float:
        base = self.theory_radius() if self.scale_mode == "corollary1" else self.scale_value
        return base + self.gap_inflation() if self.approx else base

    def perturbed_parameter(self, eta=None) -> np.ndarray:
        """One draw, or one row per row of a 2-D ``eta``."""
        est = self.estimator
        if eta is None:
            eta = self.rng.standard_normal(est.dim)
        # M^{-1/2} is symmetric, so eta @ R applies it row-wise
        return est.estimate + self.scale() * (np.asarray(eta, dtype=float) @ est.design.inv_sqrt())

    def choose_price(self, x, eta=None) -> float:
        theta = self.perturbed_parameter(eta)
        return optimal_price(self.link, theta, x, self.prices)[0]


class CertaintyEquivalentPolicy(_QuasiMLEPolicy):
    """Plug-in pricing with a known price-sensitivity vector gamma."""

    name = "ce"

    def __init__(self, link, prices, d, T, gamma, **kw):
        super().__init__(link, prices, d, T, known_gamma=gamma, **kw)
        self.gamma = np.asarray(gamma, dtype=float)

    def choose_price(self, x) -> float:
        return optimal_price(self.link, self.estimator.theta_hat, x, self.prices)[0]


class CILSPolicy(Policy):
    """Covariate version of constrained iterated least squares.

    Prices at the least-squares plug-in optimum unless it sits within
    ``kappa t^{-1/4}`` of the running average price, in which case the price
    is pushed that far away from the average.
    """

    name = "cils"

    def __init__(self, prices: PriceRange, d: int, kappa: float, lam: float = 1.0):
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        self.prices = prices
        self.d = d
        self.kappa = kappa
        self.link = identity_link()
        self.design = DesignMatrix(2 * d, lam)
        self.score = np.zeros(2 * d)
        self.price_sum = 0.0
        self.t = 0

    @property
    def theta_hat(self) -> np.ndarray:
        return self.design.M_inv @ self.score

    @property
    def mean_price(self) -> float:
        if self.t == 0:
            return 0.5 * (self.prices.p_min + self.prices.p_max)
        return self.price_sum / self.t

    def choose_price(self, x) -> float:
        t = self.t + 1
        p_ls = optimal_price(self.link, self.theta_hat, x, self.prices)[0]
        p_bar = self.mean_price
        delta = p_ls - p_bar
        width = self.kappa * t ** -0.25
        if abs(delta) < width:
            sign = 1.0 if delta >= 0 else -1.0
            return float(self.prices.clip(p_bar + sign * width))
        return float(p_ls)

    def observe(self, x, p, demand):
        x = np.asarray(x, dtype=float)
        z = np.concatenate([x, p * x])
        self.design.update(z)
        self.score += demand * z
        self.price_sum += p
        self.t += 1
