"""Known-parameter LQ benchmark: Riccati equations and benchmark policies.

With the parameter observed, the wind-tunnel value is ``f1(t) a^2 + f2(t)``
where, going backward from ``f1(T) = C`` and ``f2(T) = 0``,

    f1' = lam^2 f1^2 / rho - c,        f2' = -sigma0^2 f1,

and the optimal feedback is ``u = -lam f1(t) a / rho``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import InvalidArgument, NumericOverflow
from .filtering import Prior, posterior_mean
from .policies import Policy

__all__ = [
    "LQParams",
    "RiccatiSolution",
    "RiccatiCache",
    "solve_riccati",
    "lq_feedback",
    "LQPolicy",
    "CEPolicy",
    "naive_policy",
    "ce_policy",
]

_BLOWUP = 1e12


@dataclass(frozen=True)
class LQParams:
    sigma0: float = 1.0
    T: float = 1.0
    rho: float = 2.0
    c: float = 2.0
    C: float = 5.0

    def __post_init__(self):
        for name in ("sigma0", "T", "rho"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be strictly positive")
        for name in ("c", "C"):
            if not getattr(self, name) >= 0:
                raise InvalidArgument(f"{name} must be non-negative")


def _rhs(lam, p: LQParams, denom):
    def f(f1):
        return lam**2 * f1**2 / denom - p.c, -(p.sigma0**2) * f1

    return f


class RiccatiSolution:
    """Dense RK4 samples of ``f1`` and ``f2`` with Hermite interpolation."""

    def __init__(self, lam, params: LQParams, times, f1, f2, denominator="rho"):
        self.lam = float(lam)
        self.params = params
        self.times = times
        self.f1_samples = f1
        self.f2_samples = f2
        self.denominator = denominator
        denom = params.rho if denominator == "rho" else params.rho**2
        d1, d2 = _rhs(self.lam, params, denom)(f1)
        self._f1 = CubicHermiteSpline(times, f1, d1)
        self._f2 = CubicHermiteSpline(times, f2, d2)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def _eval(self, spline, end, t):
        t = np.clip(t, 0.0, self.params.T)
        # the spline's last piece rounds at the knot; the terminal value is exact
        return np.where(t >= self.params.T, end, spline(t))

    def f1(self, t):
        return self._eval(self._f1, self.f1_samples[-1], t)

    def f2(self, t):
        return self._eval(self._f2, self.f2_samples[-1], t)

    def value(self, t, a):
        """Known-parameter value ``f1(t) a^2 + f2(t)``."""
        return self.f1(t) * np.square(a) + self.f2(t)

    def gain(self, t):
        return self.lam * self.f1(t) / self.params.rho


def solve_riccati(lam: float, params: LQParams, n_ode_steps: int = 1024, denominator: str = "rho") -> RiccatiSolution:
    """Integrate the Riccati pair backward from ``T`` with classical RK4.

    ``denominator`` selects ``rho`` (consistent with the feedback map) or
    ``rho_squared`` for the quadratic term of the ``f1`` equation.
    """
    if n_ode_steps < 16:
        raise InvalidArgument("use at least 16 ODE steps")
    if denominator not in ("rho", "rho_squared"):
        raise InvalidArgument("denominator must be 'rho' or 'rho_squared'")
    denom = params.rho if denominator == "rho" else params.rho**2
    # march in reversed time s = T - t, where d/ds = -d/dt
    h = params.T / n_ode_steps
    f1 = np.empty(n_ode_steps + 1)
    f2 = np.empty(n_ode_steps + 1)
    f1[-1], f2[-1] = params.C, 0.0
    rhs = _rhs(lam, params, denom)

    def back(y1):
        d1, d2 = rhs(y1)
        return -d1, -d2

    y1, y2 = params.C, 0.0
    for i in range(n_ode_steps - 1, -1, -1):
        k1 = back(y1)
        k2 = back(y1 + 0.5 * h * k1[0])
        k3 = back(y1 + 0.5 * h * k2[0])
        k4 = back(y1 + h * k3[0])
        y1, y2 = (
            y1 + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            y2 + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        )
        if not (abs(y1) < _BLOWUP and abs(y2) < _BLOWUP):
            raise NumericOverflow(f"Riccati solution blew up at t={i * h:.6g}")
        f1[i], f2[i] = y1, y2
    times = np.linspace(0.0, params.T, n_ode_steps + 1)
    return RiccatiSolution(lam, params, times, f1, f2, denominator)


def lq_feedback(sol: RiccatiSolution, t, a, controls=None):
    """``-lam f1(t) a / rho``, clipped to ``controls`` when given."""
    u = -sol.gain(t) * np.asarray(a, dtype=float)
    return u if controls is None else controls.clip(u)


class LQPolicy(Policy):
    """Known-parameter feedback for a fixed ``lam``; ignores the information states."""

    def __init__(self, sol: RiccatiSolution, name=None):
        self.sol = sol
        self.name = name or f"lq({sol.lam:g})"

    def __call__(self, t, a, upsilon, gamma):
        return -self.sol.gain(t) * np.asarray(a, dtype=float)


class RiccatiCache:
    """``f1`` tabulated on a grid of parameter values and ODE times."""

    def __init__(self, params: LQParams, lam_lo, lam_hi, n_lambda=101, n_ode_steps=1024, denominator="rho"):
        self.params = params
        self.lams = np.linspace(lam_lo, lam_hi, n_lambda) if n_lambda > 1 else np.array([lam_lo])
        sols = [solve_riccati(l, params, n_ode_steps, denominator) for l in self.lams]
        self.times = sols[0].times
        self.f1_table = np.stack([s.f1_samples for s in sols])
        self.f1_table.setflags(write=False)

    @classmethod
    def for_prior(cls, params, prior: Prior, **kw):
        lo, hi = prior.support
        return cls(params, float(lo[0]), float(hi[0]), **kw)

    def f1(self, t, lam):
        """``f1^lam(t)`` by linear interpolation in time, then in ``lam``.

        Returns ``(values, clamped)`` where ``clamped`` marks parameter values
        outside the cached range.
        """
        lam = np.asarray(lam, dtype=float)
        tt = float(np.clip(t, 0.0, self.params.T))
        j = min(int(tt / (self.times[1] - self.times[0])), len(self.times) - 2)
        w = (tt - self.times[j]) / (self.times[j + 1] - self.times[j])
        col = (1 - w) * self.f1_table[:, j] + w * self.f1_table[:, j + 1]
        clamped = (lam < self.lams[0]) | (lam > self.lams[-1])
        if len(self.lams) == 1:
            return np.full(lam.shape, col[0]), clamped
        return np.interp(lam, self.lams, col), clamped


class CEPolicy(Policy):
    """Certainty equivalence: the LQ feedback at the current posterior mean."""

    name = "ce"

    def __init__(self, params: LQParams, prior: Prior, cache: RiccatiCache):
        if prior.dim != 1:
            raise InvalidArgument("the CE benchmark is defined for m = 1")
        self.params = params
        self.prior = prior
        self.cache = cache

    def gain(self, t, upsilon, gamma):
        lam = np.asarray(posterior_mean(self.prior, upsilon, gamma))
        f1, _ = self.cache.f1(t, lam)
        return lam * f1 / self.params.rho

    def __call__(self, t, a, upsilon, gamma):
        return -self.gain(t, upsilon, gamma) * np.asarray(a, dtype=float)


def naive_policy(params: LQParams, prior: Prior, n_ode_steps=1024, denominator="rho") -> LQPolicy:
    """LQ feedback with the parameter frozen at the prior mean."""
    if prior.dim != 1:
        raise InvalidArgument("the naive benchmark is defined for m = 1")
    sol = solve_riccati(float(prior.mean[0]), params, n_ode_steps, denominator)
    return LQPolicy(sol, name="naive")


def ce_policy(params: LQParams, prior: Prior, riccati_cache: RiccatiCache | None = None, **cache_kw) -> CEPolicy:
    cache = riccati_cache or RiccatiCache.for_prior(params, prior, **cache_kw)
    return CEPolicy(params, prior, cache)
