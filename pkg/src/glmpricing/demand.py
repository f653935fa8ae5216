"""Generalized linear demand: links, parameters, revenue and price optimization.

Mean demand is ``g(x'beta + x'gamma * p)`` for a monotone link ``g``. Since the
revenue ``p * g(a + b p)`` only depends on the two scalars ``a = x'beta`` and
``b = x'gamma``, the price optimizers below work on (a, b) arrays so a whole
batch of candidate parameters can be priced at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logit

GRID_POINTS = 256
GOLDEN_WIDTH = 1e-8
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _identity(z):
    return np.asarray(z, dtype=float)


def _one(z):
    return np.ones_like(np.asarray(z, dtype=float))


def _logistic_prime(z):
    s = expit(z)
    return s * (1.0 - s)


@dataclass(frozen=True)
class LinkFunction:
    """Monotone link ``g`` with derivative bounds ``g_lower <= g' <= g_upper``.

    ``g_inv`` is only required for custom links, where the quasi-likelihood is
    evaluated by quadrature.
    """

    kind: str
    g: Callable
    g_prime: Callable
    g_lower: float
    g_upper: float
    g_inv: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("identity", "logistic", "custom"):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if not self.g_lower > 0:
            raise ValueError("g_lower must be positive")
        if self.g_upper < self.g_lower:
            raise ValueError("g_upper must be >= g_lower")

    def h(self, u):
        """Weight ``u -> g'(g^{-1}(u))`` used by the quasi-likelihood."""
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return np.ones_like(u)
        if self.kind == "logistic":
            return u * (1.0 - u)
        if self.g_inv is None:
            raise ValueError("custom link needs g_inv to evaluate h")
        return self.g_prime(self.g_inv(u))

    def inverse(self, u):
        if self.kind == "identity":
            return np.asarray(u, dtype=float)
        if self.kind == "logistic":
            return logit(u)
        if self.g_inv is None:
            raise ValueError("custom link has no inverse")
        return self.g_inv(u)

    def check_bounds(self, theta_bar: float, n: int = 2001) -> bool:
        """Grid check of monotonicity and derivative bounds on ``|z| <= theta_bar``.

        With ``||(x, px)|| <= 1`` and ``||theta|| <= theta_bar`` every link
        argument lies in that interval.
        """
        z = np.linspace(-theta_bar, theta_bar, n)
        gz = self.g(z)
        gp = self.g_prime(z)
        tol = 1e-12
        return bool(
            np.all(np.diff(gz) > 0)
            and np.all(gp >= self.g_lower - tol)
            and np.all(gp <= self.g_upper + tol)
        )


def identity_link() -> LinkFunction:
    return LinkFunction("identity", _identity, _one, 1.0, 1.0, _identity)


def logistic_link(theta_bar: float = 3.0) -> LinkFunction:
    # g' is symmetric and decreasing in |z|, so the bound sits at |z| = theta_bar
    return LinkFunction(
        "logistic", expit, _logistic_prime, float(_logistic_prime(theta_bar)), 0.25, logit
    )


def make_link(kind: str, theta_bar: float = 3.0) -> LinkFunction:
    if kind == "identity":
        return identity_link()
    if kind == "logistic":
        return logistic_link(theta_bar)
    raise ValueError(f"link {kind!r} cannot be built by name; construct LinkFunction directly")


@dataclass(frozen=True)
class ParamVector:
    """Concatenated parameter ``theta = (beta; gamma)``."""

    beta: np.ndarray
    gamma: np.ndarray
    theta_bar: Optional[float] = None

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if beta.ndim != 1 or beta.shape != gamma.shape or beta.size < 1:
            raise ValueError("beta and gamma must be 1-d vectors of equal length >= 1")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)
        if self.theta_bar is not None and np.linalg.norm(self.theta) > self.theta_bar + 1e-12:
            raise ValueError(
                f"||theta|| = {np.linalg.norm(self.theta):.6g} exceeds theta_bar = {self.theta_bar}"
            )

    @property
    def d(self) -> int:
        return self.beta.size

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma])

    @classmethod
    def from_theta(cls, theta, theta_bar=None) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or theta.size % 2:
            raise ValueError("theta must be a 1-d vector of even length")
        d = theta.size // 2
        return cls(theta[:d], theta[d:], theta_bar)


@dataclass(frozen=True)
class PriceRange:
    p_min: float
    p_max: float

    def __post_init__(self):
        if not 0 < self.p_min < self.p_max:
            raise ValueError(f"need 0 < p_min < p_max, got [{self.p_min}, {self.p_max}]")

    def clip(self, p):
        return np.clip(p, self.p_min, self.p_max)


@dataclass(frozen=True)
class ShockSpec:
    """Demand shock: ``bernoulli``, ``gaussian`` (std sigma) or ``uniform`` on [-sigma, sigma]."""

    kind: str = "gaussian"
    sigma: float = 0.25

    def __post_init__(self):
        if self.kind not in ("bernoulli", "gaussian", "uniform"):
            raise ValueError(f"unknown shock kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def sub_gaussian(self) -> float:
        # bounded in an interval of width w => proxy w/2
        return 0.5 if self.kind == "bernoulli" else self.sigma


@dataclass(frozen=True)
class DemandModel:
    link: LinkFunction
    theta_star: ParamVector
    shock: ShockSpec = field(default_factory=ShockSpec)
    sigma_bar: Optional[float] = None

    def __post_init__(self):
        if self.sigma_bar is None:
            object.__setattr__(self, "sigma_bar", self.shock.sub_gaussian)
        if self.sigma_bar <= 0 and self.shock.sigma > 0:
            raise ValueError("sigma_bar must be positive")


def _split(theta, x):
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    if theta.shape[-1] != 2 * d:
        raise ValueError(f"dimension mismatch: theta has {theta.shape[-1]} entries, x has {d}")
    return theta[..., :d] @ x, theta[..., d:] @ x


def mean_demand(link: LinkFunction, theta, x, p):
    a, b = _split(theta, x)
    return link.g(a + b * p)


def expected_revenue(link: LinkFunction, theta, x, p):
    return p * mean_demand(link, theta, x, p)


def _revenue_ab(link, a, b, p):
    return p * link.g(a + b * p)


def optimal_price_ab(link: LinkFunction, a, b, prices: PriceRange):
    """Optimal constrained price for arrays of ``a = x'beta`` and ``b = x'gamma``.

    Returns ``(p_star, r_star)`` with the same shape as the broadcast inputs.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    lo, hi = prices.p_min, prices.p_max
    if link.kind == "identity":
        return _optimal_price_identity(a, b, lo, hi)
    return _optimal_price_search(link, a, b, lo, hi)


def _optimal_price_identity(a, b, lo, hi):
    # a tiny negative b can overflow to +-inf, which the clip handles
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        interior = np.where(b < 0, -a / (2.0 * b), hi)
    p = np.clip(interior, lo, hi)
    # b >= 0 makes revenue convex in p: the optimum is an endpoint, p_max on ties
    r_lo = lo * (a + b * lo)
    r_hi = hi * (a + b * hi)
    p = np.where(b < 0, p, np.where(r_hi >= r_lo, hi, lo))
    return p, p * (a + b * p)


def _optimal_price_search(link, a, b, lo, hi):
    shape = a.shape
    a = a.reshape(-1, 1)
    b = b.reshape(-1, 1)
    grid = np.linspace(lo, hi, GRID_POINTS)
    rev = _revenue_ab(link, a, b, grid[None, :])
    i = np.argmax(rev, axis=1)  # first maximizer == lowest price among ties
    left = grid[np.maximum(i - 1, 0)]
    right = grid[np.minimum(i + 1, GRID_POINTS - 1)]
    a1, b1 = a[:, 0], b[:, 0]
    c = right - _INVPHI * (right - left)
    e = left + _INVPHI * (right - left)
    fc = _revenue_ab(link, a1, b1, c)
    fe = _revenue_ab(link, a1, b1, e)
    while np.max(right - left) > GOLDEN_WIDTH:
        move_right = fc < fe
        left = np.where(move_right, c, left)
        right = np.where(move_right, right, e)
        c_new = np.where(move_right, e, right - _INVPHI * (right - left))
        e_new = np.where(move_right, left + _INVPHI * (right - left), c)
        fc_new = np.where(move_right, fe, np.nan)
        fe_new = np.where(move_right, np.nan, fc)
        need_c = ~move_right
        need_e = move_right
        if need_c.any():
            fc_new[need_c] = _revenue_ab(link, a1[need_c], b1[need_c], c_new[need_c])
        if need_e.any():
            fe_new[need_e] = _revenue_ab(link, a1[need_e], b1[need_e], e_new[need_e])
        c, e, fc, fe = c_new, e_new, fc_new, fe_new
    # golden section can only approach an endpoint; compare against the grid winner too
    cands = np.stack([grid[i], 0.5 * (left + right), np.full_like(left, lo), np.full_like(left, hi)], axis=1)
    cand_rev = _revenue_ab(link, a, b, cands)
    best = np.argmax(cand_rev, axis=1)
    rows = np.arange(cands.shape[0])
    p = cands[rows, best]
    r = cand_rev[rows, best]
    return p.reshape(shape), r.reshape(shape)


def optimal_price(link: LinkFunction, theta, x, prices: PriceRange):
    """``(p_star, r_star)`` maximizing ``p g(x'beta + x'gamma p)`` over the price range."""
    a, b = _split(theta, x)
    p, r = optimal_price_ab(link, a, b, prices)
    if np.ndim(p) == 0:
        return float(p), float(r)
    return p, r


def sample_demand(model: DemandModel, x, p, rng: np.random.Generator) -> float:
    mean = float(mean_demand(model.link, model.theta_star.theta, x, p))
    shock = model.shock
    if shock.kind == "bernoulli":
        if not 0.0 <= mean <= 1.0:
            raise ValueError(f"bernoulli demand needs a mean in [0, 1], got {mean:.6g}")
        return float(rng.random() < mean)
    if shock.kind == "gaussian":
        return mean + shock.sigma * rng.standard_normal()
    return mean + rng.uniform(-shock.sigma, shock.sigma)
