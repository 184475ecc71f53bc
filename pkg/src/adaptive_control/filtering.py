"""Posterior quantities of the hidden drift parameter.

The law of the parameter is a finitely supported prior (continuous priors are
discretized by Gauss-Legendre quadrature). Given the two information states
``upsilon`` (shape ``m``) and ``gamma`` (shape ``m(m+1)/2``) every posterior
quantity is a ratio of exponential sums over the atoms, which are evaluated
in log space.

Shape convention: for a one-dimensional parameter (``m == 1``) states are
passed *without* a trailing axis, so ``upsilon`` and ``gamma`` of shape
``(n,)`` denote ``n`` states. For ``m > 1`` the trailing axes are ``m`` and
``m(m+1)/2`` respectively.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument, NumericOverflow, UnsupportedDimension

__all__ = [
    "Prior",
    "InfoState",
    "sym_size",
    "vectorize",
    "unvectorize",
    "quad_form",
    "log_widder_F",
    "widder_F",
    "widder_transform",
    "widder_derivative",
    "posterior_weights",
    "posterior_mean",
    "posterior_moment",
    "posterior_central_moment",
    "posterior_variance",
    "transformed_costs",
    "heat_residual",
]


def sym_size(m: int) -> int:
    """Length of the vectorized form of a symmetric ``m x m`` matrix."""
    return m * (m + 1) // 2


def _dim_from_sym(p: int) -> int:
    m = int(round((np.sqrt(8 * p + 1) - 1) / 2))
    if sym_size(m) != p:
        raise InvalidArgument(f"{p} is not a triangular number")
    return m


def _tril_pairs(m):
    # row-major lower triangle: (1,1), (2,1), (2,2), (3,1), ...
    return [(i, j) for i in range(m) for j in range(i + 1)]


def vectorize(A) -> np.ndarray:
    """Stack the lower triangle of a symmetric matrix row by row.

    >>> vectorize([[1.0, 2.0], [2.0, 3.0]])
    array([1., 2., 3.])
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument(f"expected a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12):
        raise InvalidArgument("matrix is not symmetric")
    return np.array([A[i, j] for i, j in _tril_pairs(A.shape[0])])


def unvectorize(v, m: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize`; off-diagonal entries fill both halves."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if m is None:
        m = _dim_from_sym(v.shape[-1])
    elif v.shape[-1] != sym_size(m):
        raise InvalidArgument(f"expected {sym_size(m)} entries for m={m}, got {v.shape[-1]}")
    A = np.zeros(v.shape[:-1] + (m, m))
    for idx, (i, j) in enumerate(_tril_pairs(m)):
        A[..., i, j] = v[..., idx]
        A[..., j, i] = v[..., idx]
    return A


def _quad_coefficients(ell: np.ndarray) -> np.ndarray:
    """Rows ``c`` with ``c @ gamma == quad_form(gamma, ell)`` for each atom."""
    m = ell.shape[-1]
    cols = []
    for i, j in _tril_pairs(m):
        cols.append(ell[..., i] * ell[..., j] * (1.0 if i == j else 2.0))
    return np.stack(cols, axis=-1)


def quad_form(gamma, ell) -> float:
    """``ell^T A ell`` where ``A`` is the symmetric matrix stored in ``gamma``."""
    ell = np.atleast_1d(np.asarray(ell, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if gamma.shape[-1] != sym_size(ell.shape[-1]):
        raise InvalidArgument(
            f"gamma has {gamma.shape[-1]} entries, expected {sym_size(ell.shape[-1])}"
        )
    return float(_quad_coefficients(ell) @ gamma)


@dataclass(frozen=True, eq=False)
class Prior:
    """Finitely supported law of the hidden drift parameter.

    Parameters
    ----------
    atoms : array of shape (n, m)
        Support points.
    weights : array of shape (n,)
        Strictly positive probabilities summing to one.
    bound : float, optional
        Bound ``K`` on the Euclidean norm of the atoms. Defaults to the
        largest atom norm.
    """

    atoms: np.ndarray
    weights: np.ndarray
    bound: float | None = None
    label: str = "discrete"
    _coef: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise InvalidArgument("a prior needs at least one atom")
        if weights.shape[0] != atoms.shape[0]:
            raise InvalidArgument("atoms and weights differ in length")
        if np.any(weights <= 0) or np.any(weights > 1):
            raise InvalidArgument("weights must lie in (0, 1]")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgument(f"weights sum to {weights.sum():.17g}, expected 1")
        norms = np.linalg.norm(atoms, axis=1)
        bound = float(norms.max()) if self.bound is None else float(self.bound)
        if bound < 0 or np.any(norms > bound * (1 + 1e-12) + 1e-300):
            raise InvalidArgument("atoms exceed the declared bound K")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bound", bound)
        coef = _quad_coefficients(atoms)
        coef.setflags(write=False)
        object.__setattr__(self, "_coef", coef)

    # constructors -----------------------------------------------------
    @classmethod
    def discrete(cls, atoms, weights=None, bound=None):
        atoms = np.asarray(atoms, dtype=float)
        n = atoms.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n)
        return cls(atoms, weights, bound)

    @classmethod
    def point_mass(cls, location):
        return cls(np.atleast_2d(np.asarray(location, dtype=float)), np.ones(1), label="point_mass")

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0, nodes=64):
        """Uniform law on ``[lo, hi]`` discretized by Gauss-Legendre nodes."""
        if not hi > lo:
            raise InvalidArgument("uniform prior needs lo < hi")
        x, w = np.polynomial.legendre.leggauss(int(nodes))
        atoms = lo + (hi - lo) * (x + 1.0) / 2.0
        w = w / w.sum()
        return cls(atoms[:, None], w, bound=max(abs(lo), abs(hi)), label="uniform")

    @classmethod
    def from_config(cls, cfg: dict) -> "Prior":
        kind = cfg.get("type")
        if kind == "discrete":
            pairs = cfg["atoms"]
            locs = [p[0] for p in pairs]
            weights = np.array([p[1] for p in pairs], dtype=float)
            atoms = np.array([np.atleast_1d(v) for v in locs], dtype=float)
            return cls(atoms, weights, cfg.get("K"))
        if kind == "uniform":
            return cls.uniform(cfg.get("lo", 0.0), cfg.get("hi", 1.0), cfg.get("nodes", 64))
        if kind == "point_mass":
            return cls.point_mass(cfg["location"])
        raise InvalidArgument(f"unknown prior type {kind!r}")

    # properties -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    @property
    def variance(self) -> float:
        if self.dim != 1:
            raise UnsupportedDimension("variance is defined for m = 1 only")
        x = self.atoms[:, 0]
        return float(self.weights @ (x - self.weights @ x) ** 2)

    @property
    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise bounding box of the atoms."""
        return self.atoms.min(axis=0), self.atoms.max(axis=0)

    @property
    def quad_coefficients(self) -> np.ndarray:
        return self._coef

    def sample(self, rng: np.random.Generator, size: int, weights=None) -> np.ndarray:
        """Draw ``size`` atoms by inverse CDF from one uniform per draw."""
        w = self.weights if weights is None else weights
        cdf = np.cumsum(w)
        idx = np.searchsorted(cdf / cdf[-1], rng.random(size), side="right")
        return self.atoms[np.minimum(idx, self.n_atoms - 1)]


@dataclass(frozen=True, eq=False)
class InfoState:
    """The pair of information states (upsilon, gamma)."""

    upsilon: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        ups = np.atleast_1d(np.asarray(self.upsilon, dtype=float))
        gam = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if gam.shape[-1] != sym_size(ups.shape[-1]):
            raise InvalidArgument("gamma length does not match upsilon dimension")
        object.__setattr__(self, "upsilon", ups)
        object.__setattr__(self, "gamma", gam)

    @classmethod
    def origin(cls, m=1):
        return cls(np.zeros(m), np.zeros(sym_size(m)))

    @property
    def dim(self):
        return self.upsilon.shape[-1]

    def args(self, prior: Prior):
        """State arrays in the shape convention of this module."""
        if prior.dim != self.dim:
            raise InvalidArgument("state and prior dimensions differ")
        if self.dim == 1:
            return self.upsilon[0], self.gamma[0]
        return self.upsilon, self.gamma


def _exponents(prior: Prior, upsilon, gamma) -> np.ndarray:
    """Log of the unnormalized posterior weight of every atom, shape (..., n)."""
    ups = np.asarray(upsilon, dtype=float)
    gam = np.asarray(gamma, dtype=float)
    if prior.dim == 1:
        ups = ups[..., None]
        gam = gam[..., None]
    elif ups.shape[-1] != prior.dim or gam.shape[-1] != sym_size(prior.dim):
        raise InvalidArgument(
            f"state shapes {ups.shape}, {gam.shape} do not match m={prior.dim}"
        )
    return prior.log_weights + ups @ prior.atoms.T - 0.5 * (gam @ prior.quad_coefficients.T)


def log_widder_F(prior: Prior, upsilon, gamma) -> np.ndarray:
    """Logarithm of the Widder transform of the prior."""
    return logsumexp(_exponents(prior, upsilon, gamma), axis=-1)


def widder_F(prior: Prior, upsilon, gamma):
    """Widder transform ``F(upsilon, gamma)`` of the prior.

    Raises
    ------
    NumericOverflow
        If the stabilized value still exceeds the float range.
    """
    with np.errstate(over="ignore"):
        val = np.exp(log_widder_F(prior, upsilon, gamma))
    if not np.all(np.isfinite(val)):
        raise NumericOverflow("Widder transform overflows; use log_widder_F")
    return val[()] if np.ndim(val) == 0 else val


def posterior_weights(prior: Prior, upsilon, gamma) -> np.ndarray:
    """Posterior probabilities of the atoms, shape (..., n_atoms)."""
    e = _exponents(prior, upsilon, gamma)
    e = e - e.max(axis=-1, keepdims=True)
    p = np.exp(e)
    return p / p.sum(axis=-1, keepdims=True)


def widder_transform(prior: Prior, phi: Callable, upsilon, gamma):
    """``F[phi]``: the Widder transform of ``phi`` times the prior.

    ``phi`` is applied to the atom array of shape (n, m) and must return one
    value per atom.
    """
    vals = np.asarray(phi(prior.atoms), dtype=float).reshape(prior.n_atoms)
    if not np.all(np.isfinite(vals)):
        raise InvalidArgument("phi is not finite on the support")
    e = _exponents(prior, upsilon, gamma)
    shift = e.max(axis=-1, keepdims=True)
    s = np.exp(e - shift) @ vals
    with np.errstate(over="ignore"):
        out = s * np.exp(shift[..., 0])
    if not np.all(np.isfinite(out)):
        raise NumericOverflow("Widder transform overflows")
    return out[()] if np.ndim(out) == 0 else out


def widder_derivative(prior: Prior, n_upsilon: int, n_gamma: int, upsilon, gamma):
    """Analytic mixed derivative ``d^i_upsilon d^j_gamma F`` for ``m == 1``.

    Each atom contributes ``ell^i (-ell^2/2)^j`` times its exponential
    weight, so no differencing is involved.
    """
    if prior.dim != 1:
        raise UnsupportedDimension("derivatives are provided for m = 1 only")
    ell = prior.atoms[:, 0]
    return widder_transform(
        prior, lambda a: ell**n_upsilon * (-0.5 * ell**2) ** n_gamma, upsilon, gamma
    )


def posterior_mean(prior: Prior, upsilon, gamma):
    """Posterior mean ``G = F_upsilon / F``; bounded by ``K`` in norm."""
    p = posterior_weights(prior, upsilon, gamma)
    g = p @ prior.atoms
    if prior.dim == 1:
        g = g[..., 0]
    return g[()] if np.ndim(g) == 0 else g


def posterior_moment(prior: Prior, k: int, upsilon, gamma):
    """Raw posterior moment ``E[lambda^k | state]`` (``m == 1``)."""
    if prior.dim != 1:
        raise UnsupportedDimension("posterior moments are provided for m = 1 only")
    if int(k) != k or k < 1:
        raise InvalidArgument("moment order must be a positive integer")
    p = posterior_weights(prior, upsilon, gamma)
    out = p @ prior.atoms[:, 0] ** int(k)
    return out[()] if np.ndim(out) == 0 else out


def posterior_central_moment(prior: Prior, k: int, upsilon, gamma):
    """Central posterior moment of order ``k`` (``m == 1``).

    The second central moment is the posterior variance and the third one
    equals ``G_upsilon_upsilon``.
    """
    if prior.dim != 1:
        raise UnsupportedDimension("posterior moments are provided for m = 1 only")
    p = posterior_weights(prior, upsilon, gamma)
    x = prior.atoms[:, 0]
    mean = p @ x
    out = np.sum(p * (x - np.asarray(mean)[..., None]) ** int(k), axis=-1)
    return out[()] if np.ndim(out) == 0 else out


def posterior_variance(prior: Prior, upsilon, gamma):
    """Posterior variance ``G_2 - G^2``, clamped at zero.

    Computed from centred atoms, which avoids most of the cancellation of
    the raw-moment difference.
    """
    if prior.dim != 1:
        raise UnsupportedDimension("posterior variance is provided for m = 1 only")
    var = posterior_central_moment(prior, 2, upsilon, gamma)
    return np.maximum(var, 0.0)[()] if np.ndim(var) == 0 else np.maximum(var, 0.0)


def transformed_costs(model, prior: Prior, t, y, upsilon, gamma, u):
    """Posterior expectations of the running and terminal cost.

    Returns ``(k_tilde, g_tilde)``. Costs that do not depend on the hidden
    parameter are returned unchanged without touching the posterior.
    """
    if not getattr(model, "cost_depends_on_lambda", True):
        ell = prior.atoms[0]
        return model.k(t, y, u, ell), model.g(y, ell)
    p = posterior_weights(prior, upsilon, gamma)
    y = np.asarray(y, dtype=float)[..., None]
    u = np.asarray(u, dtype=float)[..., None]
    k = np.broadcast_to(model.k(t, y, u, prior.atoms), np.broadcast(y, u, p).shape)
    g = np.broadcast_to(model.g(y, prior.atoms), np.broadcast(y, p).shape)
    kt = np.sum(p * k, axis=-1)
    gt = np.sum(p * g, axis=-1)
    return (kt[()] if kt.ndim == 0 else kt), (gt[()] if gt.ndim == 0 else gt)


def heat_residual(prior: Prior, upsilon, gamma, h: float = 1e-4, relative: bool = False):
    """Central-difference estimate of ``F_gamma + F_upsilon_upsilon / 2``.

    The Widder transform solves this backward heat equation identically, so
    the return value only carries discretization and rounding error. All
    evaluations are scaled by ``F(upsilon, gamma)`` to stay finite for large
    states; pass ``relative=True`` to get the residual divided by ``F``.
    """
    if prior.dim != 1:
        raise UnsupportedDimension("heat residual is provided for m = 1 only")
    if not h > 0:
        raise InvalidArgument("step must be positive")
    ups = np.asarray(upsilon, dtype=float)
    gam = np.asarray(gamma, dtype=float)
    w = posterior_weights(prior, ups, gam)
    ell = prior.atoms[:, 0]

    def ratio_m1(du, dg):
        # F(upsilon + du, gamma + dg) / F(upsilon, gamma) - 1 as a posterior mean,
        # which avoids cancelling large log values
        return np.sum(w * np.expm1(ell * du - 0.5 * ell**2 * dg), axis=-1)

    f_g = (ratio_m1(0.0, h) - ratio_m1(0.0, -h)) / (2 * h)
    f_uu = (ratio_m1(h, 0.0) + ratio_m1(-h, 0.0)) / h**2
    res = f_g + 0.5 * f_uu
    if not relative:
        res = res * np.exp(log_widder_F(prior, ups, gam))
    return res[()] if np.ndim(res) == 0 else res
