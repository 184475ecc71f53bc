"""Euler-Maruyama simulation of controlled paths (``m == 1``).

Two equivalent descriptions of the same controlled process are available:

* ``physical``: draw the parameter from the posterior at the initial
  information state, drive the observed state with its own Brownian motion
  and accumulate the information states along the observed path;
* ``innovations``: drive the extended state ``(a, upsilon, gamma)``
  directly with the innovations Brownian motion, using the posterior mean
  in place of the unknown parameter.

Randomness comes from counter-based Philox streams keyed by
``(seed, point, chunk)``. Paths are generated in chunks of a fixed size, so
results do not depend on how many workers process the chunks, and two
policies simulated with the same key see the same noise.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .dynamics import ExtendedState, Model
from .errors import InvalidArgument, UnsupportedDimension
from .filtering import (
    InfoState,
    Prior,
    posterior_central_moment,
    posterior_mean,
    posterior_variance,
    posterior_weights,
    transformed_costs,
)

__all__ = [
    "SimConfig",
    "PathRecord",
    "chunk_rng",
    "simulate_physical",
    "simulate_innovations",
    "simulate",
    "path_costs",
    "variance_sde_residual",
]

log = logging.getLogger(__name__)

MODES = ("physical", "innovations")


@dataclass(frozen=True)
class SimConfig:
    """Time grid, seed and mode of a simulation.

    The grid is ``linspace(t0, t1, n_steps + 1)``; ``t1 = None`` means the
    model horizon. ``chunk_size`` fixes how paths are grouped into RNG
    streams and must stay fixed for results to be reproducible.
    """

    n_steps: int = 256
    t0: float = 0.0
    t1: float | None = None
    seed: int = 0
    mode: str = "physical"
    chunk_size: int = 4096

    def __post_init__(self):
        if self.n_steps < 1:
            raise InvalidArgument("n_steps must be at least 1")
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}")
        if self.t1 is not None and not self.t0 < self.t1:
            raise InvalidArgument("need t0 < t1")
        if self.chunk_size < 1:
            raise InvalidArgument("chunk_size must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgument("seed must be an unsigned 64-bit integer")

    def times(self, T: float) -> np.ndarray:
        t1 = T if self.t1 is None else self.t1
        if t1 > T + 1e-12 or self.t0 < 0:
            raise InvalidArgument(f"simulation window [{self.t0}, {t1}] leaves [0, {T}]")
        return np.linspace(self.t0, t1, self.n_steps + 1)

    @classmethod
    def from_config(cls, cfg: dict, **overrides):
        keys = {"n_steps", "t0", "t1", "seed", "mode", "chunk_size"}
        kw = {k: v for k, v in dict(cfg).items() if k in keys}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


@dataclass
class PathRecord:
    """A batch of simulated paths.

    Per-path arrays have shape ``(n_paths, n_steps + 1)``. ``controls[:, k]``
    is the control applied on ``[t_k, t_{k+1})`` (the last column is the
    feedback at the final state, which is never applied).
    ``innovations[:, k]`` is the innovations increment over
    ``[t_{k-1}, t_k]`` with a leading zero, and ``cum_cost[:, k]`` is the
    running cost accrued up to ``t_k``. ``realized_cost`` adds the terminal
    cost when the window ends at the horizon.
    """

    times: np.ndarray
    a: np.ndarray
    upsilon: np.ndarray
    gamma: np.ndarray
    controls: np.ndarray
    innovations: np.ndarray | None
    cum_cost: np.ndarray
    realized_cost: np.ndarray
    clipped: np.ndarray
    mode: str
    lambda_true: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.a.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def posterior_mean(self, prior: Prior) -> np.ndarray:
        return _post_mean(prior, self.upsilon, self.gamma)

    def posterior_variance(self, prior: Prior) -> np.ndarray:
        # row blocks bound the (rows, steps, atoms) temporary to ~64 MB
        out = np.empty(self.upsilon.shape)
        rows = max(1, (1 << 23) // max(1, self.upsilon.shape[1] * prior.atoms.shape[0]))
        for i in range(0, out.shape[0], rows):
            out[i : i + rows] = posterior_variance(prior, self.upsilon[i : i + rows], self.gamma[i : i + rows])
        return out

    def path(self, i: int) -> "PathRecord":
        """The ``i``-th path as a batch of one."""
        sl = slice(i, i + 1)
        return PathRecord(
            self.times, self.a[sl], self.upsilon[sl], self.gamma[sl], self.controls[sl],
            None if self.innovations is None else self.innovations[sl],
            self.cum_cost[sl], self.realized_cost[sl], self.clipped[sl], self.mode,
            None if self.lambda_true is None else self.lambda_true[sl],
        )

    def subsample(self, factor: int, model: Model, prior: Prior) -> "PathRecord":
        """Every ``factor``-th time point, with innovations recomputed.

        The coarse innovations are rebuilt from the state increments and the
        left-endpoint posterior mean, which is what a simulation on the
        coarse grid with the same Brownian path would have recorded. This is
        exact when the control is constant on each coarse interval.
        """
        if factor < 1 or self.n_steps % factor:
            raise InvalidArgument("factor must divide n_steps")
        idx = np.arange(0, self.n_steps + 1, factor)
        t, a, u = self.times[idx], self.a[:, idx], self.controls[:, idx]
        v, g = self.upsilon[:, idx], self.gamma[:, idx]
        dt = np.diff(t)
        b = model.b(t[None, :-1], a[:, :-1], u[:, :-1])[..., 0]
        s = model.sigma(t[None, :-1], a[:, :-1], u[:, :-1])
        G = _post_mean(prior, v[:, :-1], g[:, :-1])
        dv = np.zeros_like(a)
        dv[:, 1:] = (np.diff(a, axis=1) - G * b * dt) / s
        return PathRecord(
            t, a, v, g, u, dv, self.cum_cost[:, idx], self.realized_cost, self.clipped, self.mode, self.lambda_true
        )


def chunk_rng(seed: int, point: int, chunk: int) -> np.random.Generator:
    """Independent Philox stream for one chunk of paths at one sweep point."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(point), int(chunk)))
    return np.random.Generator(np.random.Philox(ss))


def _post_mean(prior: Prior, upsilon, gamma):
    v = np.asarray(upsilon, dtype=float)
    g = np.asarray(gamma, dtype=float)
    if prior.dim == 1 and v.ndim >= 1 and v.size > 64:
        v, g = np.broadcast_arrays(v, g)
        flat = _kernels.posterior_mean_1d(
            np.ascontiguousarray(prior.atoms[:, 0]), np.ascontiguousarray(prior.log_weights),
            np.ascontiguousarray(v.ravel()), np.ascontiguousarray(g.ravel()),
        )
        return flat.reshape(v.shape)
    return posterior_mean(prior, v, g)


def _check(model: Model, prior: Prior):
    if model.m != 1 or prior.dim != 1:
        raise UnsupportedDimension("path simulation is implemented for a scalar parameter")


def _initial(x0, n):
    if x0 is None:
        x0 = ExtendedState(0.0, 0.0, InfoState.origin())
    a = np.full(n, float(x0.a))
    v = np.full(n, float(x0.info.upsilon[0]))
    g = np.full(n, float(x0.info.gamma[0]))
    return x0, a, v, g


def _run(model, prior, policy, cfg: SimConfig, x0, n, rng, record: bool):
    """Simulate ``n`` paths with one generator; returns a dict of arrays."""
    times = cfg.times(model.T)
    _, a, v, g = _initial(x0, n)
    physical = cfg.mode == "physical"
    lam = None
    if physical:
        w = posterior_weights(prior, v[:1], g[:1])[0]
        lam = prior.sample(rng, n, weights=w)[:, 0]
    noise = rng.standard_normal((cfg.n_steps, n))
    hold = getattr(policy, "decision_step", None)
    cost = np.zeros(n)
    clipped = np.zeros(n, dtype=bool)
    cs = model.controls
    if record:
        keep = {k: np.empty((n, cfg.n_steps + 1)) for k in ("a", "upsilon", "gamma", "controls", "innovations", "cum_cost")}
        keep["innovations"][:, 0] = 0.0
    u = None
    last_block = None
    for k in range(cfg.n_steps + 1):
        t = times[k]
        block = None if not hold else int(np.floor(t / hold + 1e-9))
        if u is None or hold is None or block != last_block:
            raw = np.asarray(policy(t, a, v, g), dtype=float)
            u = cs.clip(raw)
            if k < cfg.n_steps:
                clipped |= u != raw
            last_block = block
        if record:
            keep["a"][:, k], keep["upsilon"][:, k], keep["gamma"][:, k] = a, v, g
            keep["controls"][:, k], keep["cum_cost"][:, k] = u, cost
        if k == cfg.n_steps:
            break
        dt = times[k + 1] - t
        dW = np.sqrt(dt) * noise[k]
        b = model.b(t, a, u)[..., 0]
        s = model.sigma(t, a, u)
        G = _post_mean(prior, v, g)
        if physical:
            cost += np.broadcast_to(model.k(t, a, u, lam[:, None]), a.shape) * dt
            dy = lam * b * dt + s * dW
            dV = (dy - G * b * dt) / s
        else:
            cost += np.broadcast_to(transformed_costs(model, prior, t, a, v, g, u)[0], a.shape) * dt
            dV = dW
            dy = G * b * dt + s * dV
        a = a + dy
        v = v + b / s**2 * dy
        g = g + (b / s) ** 2 * dt
        if record:
            keep["innovations"][:, k + 1] = dV
    final = cost.copy()
    if abs(times[-1] - model.T) < 1e-12:
        if physical:
            final += np.broadcast_to(model.g(a, lam[:, None]), a.shape)
        else:
            final += np.broadcast_to(transformed_costs(model, prior, model.T, a, v, g, np.zeros_like(a))[1], a.shape)
    out = {"realized_cost": final, "clipped": clipped, "lambda_true": lam}
    if record:
        out.update(keep)
    return out


def _chunks(n_paths, chunk_size):
    starts = range(0, n_paths, chunk_size)
    return [(i, min(chunk_size, n_paths - s)) for i, s in enumerate(starts)]


def _map_chunks(fn, chunks, threads):
    if threads is None or threads <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        return list(ex.map(fn, chunks))


def simulate(model, prior, policy, cfg: SimConfig, x0: ExtendedState | None = None, n_paths: int = 1,
             point: int = 0, threads: int = 1) -> PathRecord:
    """Simulate ``n_paths`` full paths in the mode given by ``cfg``."""
    _check(model, prior)
    if n_paths < 1:
        raise InvalidArgument("n_paths must be positive")
    if x0 is not None and abs(x0.t - cfg.t0) > 1e-12:
        cfg = replace(cfg, t0=float(x0.t))

    def one(c):
        idx, n = c
        return _run(model, prior, policy, cfg, x0, n, chunk_rng(cfg.seed, point, idx), record=True)

    parts = _map_chunks(one, _chunks(n_paths, cfg.chunk_size), threads)

    def cat(key):
        if parts[0][key] is None:
            return None
        return np.concatenate([p[key] for p in parts], axis=0)

    return PathRecord(
        times=cfg.times(model.T),
        a=cat("a"),
        upsilon=cat("upsilon"),
        gamma=cat("gamma"),
        controls=cat("controls"),
        innovations=cat("innovations"),
        cum_cost=cat("cum_cost"),
        realized_cost=cat("realized_cost"),
        clipped=cat("clipped"),
        mode=cfg.mode,
        lambda_true=cat("lambda_true"),
    )


def simulate_physical(model, prior, policy, cfg: SimConfig, x0=None, n_paths=1, point=0, threads=1) -> PathRecord:
    """Paths under the physical measure with the parameter drawn at random.

    The parameter is drawn from the posterior at the initial information
    state (the prior when it is the origin).
    """
    return simulate(model, prior, policy, replace(cfg, mode="physical"), x0, n_paths, point, threads)


def simulate_innovations(model, prior, policy, x0: ExtendedState, cfg: SimConfig, n_paths=1, point=0, threads=1) -> PathRecord:
    """Paths of the extended state driven by the innovations process."""
    return simulate(model, prior, policy, replace(cfg, mode="innovations"), x0, n_paths, point, threads)


def path_costs(model, prior, policy, cfg: SimConfig, x0=None, n_paths=1, point=0, threads=1):
    """Realized costs only, without storing paths.

    Returns ``(costs, clipped)``, each of shape ``(n_paths,)``.
    """
    _check(model, prior)
    if x0 is not None and abs(x0.t - cfg.t0) > 1e-12:
        cfg = replace(cfg, t0=float(x0.t))

    def one(c):
        idx, n = c
        r = _run(model, prior, policy, cfg, x0, n, chunk_rng(cfg.seed, point, idx), record=False)
        return r["realized_cost"], r["clipped"]

    parts = _map_chunks(one, _chunks(n_paths, cfg.chunk_size), threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def variance_sde_residual(model, prior: Prior, path: PathRecord, form: str = "martingale"):
    """Max gap between the Euler-integrated variance SDE and the filter.

    Starting from the posterior variance at the first time point, the
    conditional variance is stepped with the recorded innovations as

        d var = -drift dt + mu3 (b / sigma) dV,

    where ``mu3`` is the third central posterior moment (the
    ``upsilon``-derivative of the variance). ``form="martingale"`` uses
    ``drift = var**2 b**2 / sigma**2``, which follows from the posterior
    mean and second moment being martingales; ``form="moment_product"`` uses
    ``G**2 (G_2 + G**2) b**2 / sigma**2`` for comparison. The result is
    compared with ``posterior_variance`` evaluated on the recorded
    information states. Returns the maximum absolute discrepancy over all
    paths and times.
    """
    if path.innovations is None:
        raise InvalidArgument("path carries no innovations increments")
    if prior.dim != 1:
        raise UnsupportedDimension("the variance SDE is stated for a scalar parameter")
    if form not in ("martingale", "moment_product"):
        raise InvalidArgument("form must be 'martingale' or 'moment_product'")
    t, a, u = path.times, path.a, path.controls
    v, g = path.upsilon, path.gamma
    dt = np.diff(t)
    b = model.b(t[None, :-1], a[:, :-1], u[:, :-1])[..., 0]
    s = model.sigma(t[None, :-1], a[:, :-1], u[:, :-1])
    direct = posterior_variance(prior, v, g)
    mu3 = posterior_central_moment(prior, 3, v[:, :-1], g[:, :-1])
    est = np.empty_like(direct)
    est[:, 0] = direct[:, 0]
    if form == "moment_product":
        G = posterior_mean(prior, v[:, :-1], g[:, :-1])
        G2 = direct[:, :-1] + G**2
    for k in range(dt.size):
        r = b[:, k] / s[:, k]
        if form == "martingale":
            drift = est[:, k] ** 2 * r**2
        else:
            drift = G[:, k] ** 2 * (G2[:, k] + G[:, k] ** 2) * r**2
        est[:, k + 1] = est[:, k] - drift * dt[k] + mu3[:, k] * r * path.innovations[:, k + 1]
    return float(np.max(np.abs(est - direct)))
