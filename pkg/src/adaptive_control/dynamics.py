"""Model coefficients, the extended state and the Hamiltonian.

A :class:`Model` bundles the observed state's drift direction ``b``, its
volatility ``sigma`` and the costs ``k`` and ``g``. All callables are
vectorized: ``b(t, y, u)`` returns shape ``y.shape + (m,)``, ``sigma``
returns ``y.shape``, ``k(t, y, u, ell)`` and ``g(y, ell)`` broadcast over
their arguments where ``ell`` carries the parameter in its last axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .filtering import InfoState, Prior, posterior_mean, sym_size, transformed_costs, vectorize

__all__ = [
    "ControlSet",
    "Model",
    "ExtendedState",
    "wind_tunnel",
    "polynomial_model",
    "model_from_config",
    "MODEL_REGISTRY",
    "check_assumptions",
    "extended_drift",
    "extended_diffusion",
    "hamiltonian",
    "hjb_residual_scan",
]


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Uniform discretization of a compact control interval."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.hi >= self.lo or self.n < 1:
            raise InvalidArgument("control set needs lo <= hi and at least one point")
        if self.n == 1 and self.hi != self.lo:
            raise InvalidArgument("a single control point needs lo == hi")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n) if self.n > 1 else np.array([self.lo])

    @property
    def order(self) -> np.ndarray:
        """Indices sorted by (|u|, u); the tie-breaking preference order."""
        v = self.values
        return np.lexsort((v, np.abs(v)))

    @property
    def spacing(self) -> float:
        return 0.0 if self.n == 1 else (self.hi - self.lo) / (self.n - 1)

    def refined(self) -> "ControlSet":
        """Same interval with every gap halved (a superset of the points)."""
        return ControlSet(self.lo, self.hi, 2 * self.n - 1)

    def clip(self, u):
        return np.clip(u, self.lo, self.hi)

    def snap_index(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.n == 1:
            return np.zeros(u.shape, dtype=np.int64)
        idx = np.rint((self.clip(u) - self.lo) / self.spacing)
        return idx.astype(np.int64)

    def snap(self, u):
        return self.values[self.snap_index(u)]


@dataclass(frozen=True, eq=False)
class Model:
    """Coefficients and costs of the partially observed control problem."""

    m: int
    b: Callable
    sigma: Callable
    k: Callable
    g: Callable
    T: float
    controls: ControlSet
    bounds: dict = field(default_factory=dict)
    cost_depends_on_lambda: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def ext_dim(self) -> int:
        """Dimension ``1 + m + m(m+1)/2`` of the extended state."""
        return 1 + self.m + sym_size(self.m)

    @property
    def lq_params(self):
        """Riccati benchmark parameters, for models that have them."""
        from .lq import LQParams

        try:
            return LQParams(**{k: self.params[k] for k in ("sigma0", "T", "rho", "c", "C")})
        except KeyError:
            raise InvalidArgument(f"model {self.name!r} has no LQ benchmark") from None


def wind_tunnel(sigma0=1.0, T=1.0, rho=2.0, c=2.0, C=5.0, u_max=4.0, n_controls=41) -> Model:
    """The robot-in-a-wind-tunnel model: ``b = u``, ``sigma = sigma0``.

    Running cost ``c y^2 + rho u^2``, terminal cost ``C y^2``.
    """

    def b(t, y, u):
        y, u = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(u, dtype=float))
        return u[..., None] + 0.0 * y[..., None]

    def sigma(t, y, u):
        return np.full(np.broadcast(np.asarray(y), np.asarray(u)).shape, float(sigma0))

    def k(t, y, u, ell):
        return c * np.square(y) + rho * np.square(u)

    def g(y, ell):
        return C * np.square(y)

    return Model(
        m=1,
        b=b,
        sigma=sigma,
        k=k,
        g=g,
        T=float(T),
        controls=ControlSet(-float(u_max), float(u_max), int(n_controls)),
        bounds={"M": float(u_max) + float(sigma0) + 1.0 / float(sigma0), "L": 0.0, "C_growth": max(c, C, rho * u_max**2), "p": 2.0},
        cost_depends_on_lambda=False,
        name="wind-tunnel",
        params={"sigma0": float(sigma0), "T": float(T), "rho": float(rho), "c": float(c), "C": float(C)},
    )


def _poly(terms, *args):
    out = 0.0
    for term in terms:
        coef, powers = term[0], term[1:]
        val = coef
        for x, p in zip(args, powers):
            val = val * np.power(x, p)
        out = out + val
    return out


def polynomial_model(b, k, g, sigma=1.0, T=1.0, u_min=-4.0, u_max=4.0, n_controls=41, bounds=None) -> Model:
    """Model assembled from polynomial terms (``m == 1``).

    ``b`` holds terms ``[coef, i, j]`` meaning ``coef * y**i * u**j``; ``k``
    holds ``[coef, i, j, l]`` for ``coef * y**i * u**j * ell**l`` and ``g``
    holds ``[coef, i, l]``. ``sigma`` is a positive constant.
    """
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    depends = any(len(t) > 3 and t[3] != 0 for t in k) or any(len(t) > 2 and t[2] != 0 for t in g)

    def b_fn(t, y, u):
        y, u = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(u, dtype=float))
        return (_poly(b, y, u) + 0.0 * y)[..., None]

    def sigma_fn(t, y, u):
        return np.full(np.broadcast(np.asarray(y), np.asarray(u)).shape, float(sigma))

    def k_fn(t, y, u, ell):
        return _poly(k, y, u, np.asarray(ell)[..., 0])

    def g_fn(y, ell):
        return _poly(g, y, np.asarray(ell)[..., 0])

    return Model(
        m=1, b=b_fn, sigma=sigma_fn, k=k_fn, g=g_fn, T=float(T),
        controls=ControlSet(float(u_min), float(u_max), int(n_controls)),
        bounds=dict(bounds or {}), cost_depends_on_lambda=depends, name="polynomial",
    )


MODEL_REGISTRY: dict[str, Callable[..., Model]] = {
    "wind-tunnel": wind_tunnel,
    "polynomial": polynomial_model,
}


def model_from_config(cfg: dict) -> Model:
    """Build a model from its config section, e.g. ``{"model": "wind-tunnel", "rho": 2.0}``."""
    cfg = dict(cfg)
    name = cfg.pop("model", "wind-tunnel")
    cfg.pop("riccati_denominator", None)
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise InvalidArgument(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}") from None
    return factory(**cfg)


def check_assumptions(model: Model, rng: np.random.Generator, n: int = 10_000, y_scale: float = 5.0, ell=None):
    """Check the coefficient and cost bounds on random sample points.

    Returns a dict of the observed extremes; raises :class:`InvalidArgument`
    when a declared bound is violated.
    """
    t = rng.uniform(0.0, model.T, n)
    y = rng.normal(0.0, y_scale, n)
    u = rng.uniform(model.controls.lo, model.controls.hi, n)
    ell = np.zeros((n, model.m)) if ell is None else ell
    bb = model.b(t, y, u)
    sig = model.sigma(t, y, u)
    kk = np.broadcast_to(model.k(t, y, u, ell), y.shape)
    gg = np.broadcast_to(model.g(y, ell), y.shape)
    stats = {
        "max_b": float(np.max(np.linalg.norm(bb, axis=-1))),
        "min_sigma": float(sig.min()),
        "max_sigma": float(sig.max()),
        "min_cost": float(min(kk.min(), gg.min())),
    }
    M = model.bounds.get("M")
    if M is not None and (stats["max_b"] > M or stats["max_sigma"] > M or stats["min_sigma"] < 1.0 / M):
        raise InvalidArgument(f"coefficient bound M={M} violated: {stats}")
    if stats["min_cost"] < 0:
        raise InvalidArgument("costs must be nonnegative")
    C, p = model.bounds.get("C_growth"), model.bounds.get("p")
    if C is not None and p is not None:
        growth = C * (1 + np.abs(y) ** p)
        if np.any(kk > growth) or np.any(gg > growth):
            raise InvalidArgument("cost growth bound violated")
    return stats


@dataclass(frozen=True, eq=False)
class ExtendedState:
    """A point ``(t, a, upsilon, gamma)`` of the extended state space."""

    t: float
    a: float
    info: InfoState

    @classmethod
    def from_vector(cls, t, x, m=1):
        x = np.asarray(x, dtype=float)
        return cls(float(t), float(x[0]), InfoState(x[1 : 1 + m], x[1 + m :]))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([[self.a], self.info.upsilon, self.info.gamma])


def _coefficients(model, prior, t, a, info: InfoState, u):
    """Drift and diffusion vectors of the extended state for controls ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a_arr = np.full(u.shape, float(a))
    b = model.b(t, a_arr, u)  # (n, m)
    s = model.sigma(t, a_arr, u)  # (n,)
    G = np.atleast_1d(posterior_mean(prior, *info.args(prior)))
    gb = b @ G
    outer = b[:, :, None] * b[:, None, :] / (s**2)[:, None, None]
    gam_drift = np.stack([vectorize(o) for o in outer])
    f = np.concatenate([gb[:, None], b / (s**2)[:, None] * gb[:, None], gam_drift], axis=1)
    sig = np.concatenate([s[:, None], b / s[:, None], np.zeros((u.shape[0], sym_size(model.m)))], axis=1)
    return f, sig


def extended_drift(model: Model, prior: Prior, x: ExtendedState, u) -> np.ndarray:
    """Drift ``f(t, x, u)`` of the extended state, shape ``(ext_dim,)``."""
    return _coefficients(model, prior, x.t, x.a, x.info, u)[0][0]


def extended_diffusion(model: Model, x: ExtendedState, u) -> np.ndarray:
    """Diffusion ``Sigma(t, x, u)``; its gamma block is identically zero."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a_arr = np.full(u.shape, float(x.a))
    b = model.b(x.t, a_arr, u)[0]
    s = float(model.sigma(x.t, a_arr, u)[0])
    return np.concatenate([[s], b / s, np.zeros(sym_size(model.m))])


def hamiltonian(model: Model, prior: Prior, x: ExtendedState, p_t, q, Q, controls=None, return_control=False):
    """The HJB residual function ``-p_t - min_u {f.q + tr(Sigma Sigma^T Q)/2 + k~}``.

    The minimum runs over the discretized control set; among minimizers the
    one with the smallest ``|u|`` (then the smallest ``u``) is reported when
    ``return_control`` is set.
    """
    cs = model.controls if controls is None else controls
    u = cs.values[cs.order]
    if u.size == 0:
        raise InvalidArgument("empty control set")
    q = np.asarray(q, dtype=float)
    Q = np.asarray(Q, dtype=float)
    f, sig = _coefficients(model, prior, x.t, x.a, x.info, u)
    kt, _ = transformed_costs(model, prior, x.t, np.full(u.shape, x.a), *x.info.args(prior), u)
    vals = f @ q + 0.5 * np.einsum("ni,ij,nj->n", sig, Q, sig) + np.broadcast_to(kt, u.shape)
    i = int(np.argmin(vals))
    r = -float(p_t) - float(vals[i])
    return (r, float(u[i])) if return_control else r


def hjb_residual_scan(value, model: Model, prior: Prior, sample_points, controls=None):
    """Evaluate the HJB residual of a value table by finite differences.

    ``value`` must provide ``query(t, a, upsilon, gamma)`` and a ``grid``
    with axes; derivatives use central differences with the grid spacings
    (and the dyadic step in time). Points whose stencil leaves the grid are
    skipped and counted.
    """
    if model.m != 1:
        raise InvalidArgument("residual scan supports m = 1 tables only")
    grid = value.grid
    dt = grid.step(value.T)
    ha, hv, hg = grid.a_axis.step, grid.upsilon_axis.step, grid.gamma_axis.step
    res = []
    skipped = 0
    for t, a, v, g in np.atleast_2d(np.asarray(sample_points, dtype=float)):
        inside = (
            dt <= t <= value.T - dt
            and grid.a_axis.lo + ha <= a <= grid.a_axis.hi - ha
            and grid.upsilon_axis.lo + hv <= v <= grid.upsilon_axis.hi - hv
            and grid.gamma_axis.lo + hg <= g <= grid.gamma_axis.hi - hg
        )
        if not inside:
            skipped += 1
            continue

        def V(tt=t, aa=a, vv=v, gg=g):
            return float(value.query(tt, aa, vv, gg))

        c = V()
        p_t = (V(tt=t + dt) - V(tt=t - dt)) / (2 * dt)
        q = np.array([
            (V(aa=a + ha) - V(aa=a - ha)) / (2 * ha),
            (V(vv=v + hv) - V(vv=v - hv)) / (2 * hv),
            (V(gg=g + hg) - V(gg=g - hg)) / (2 * hg),
        ])
        Q = np.zeros((3, 3))
        Q[0, 0] = (V(aa=a + ha) - 2 * c + V(aa=a - ha)) / ha**2
        Q[1, 1] = (V(vv=v + hv) - 2 * c + V(vv=v - hv)) / hv**2
        Q[0, 1] = Q[1, 0] = (
            V(aa=a + ha, vv=v + hv) - V(aa=a + ha, vv=v - hv) - V(aa=a - ha, vv=v + hv) + V(aa=a - ha, vv=v - hv)
        ) / (4 * ha * hv)
        x = ExtendedState(t, a, InfoState([v], [g]))
        res.append(hamiltonian(model, prior, x, p_t, q, Q, controls))
    res = np.abs(np.asarray(res))
    return {
        "max": float(res.max()) if res.size else float("nan"),
        "mean": float(res.mean()) if res.size else float("nan"),
        "n_used": int(res.size),
        "n_skipped": skipped,
    }
