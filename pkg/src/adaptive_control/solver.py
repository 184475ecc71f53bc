"""Backward induction over piecewise constant controls (``m == 1``).

On the dyadic time grid ``k T / 2**n`` the value of the piecewise constant
problem satisfies the one-step recursion

    V(t, x) = min_u E[ int_t^{t+delta} k~ ds + V(t + delta, X^u_{t+delta}) ],

which is solved on a tensor grid in ``(a, upsilon, gamma)``. The expectation
uses one Euler step for the drift and Gauss-Hermite quadrature for the single
Gaussian increment; the continuation value is interpolated multilinearly
with the post-step point projected onto the grid box.

The ``a`` axis may be interpolated linearly in ``a * |a|`` instead of ``a``
(``a_scale="signed_square"``). The weights stay nonnegative, so the scheme
remains monotone, and value functions that are quadratic in ``a`` are
reproduced exactly.
"""
from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .dynamics import Model
from .errors import InvalidArgument, SolverError
from .filtering import Prior, posterior_mean, transformed_costs
from .policies import Policy

__all__ = [
    "Axis",
    "GridSpec",
    "ValueTable",
    "FeedbackTable",
    "TablePolicy",
    "bellman_step",
    "solve",
    "policy_from_table",
    "value_query",
    "interp3",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 2 or not self.hi > self.lo:
            raise InvalidArgument(f"axis needs count >= 2 and hi > lo, got {self}")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)

    def packed(self):
        return np.array([self.lo, self.step, float(self.count)])


@dataclass(frozen=True)
class GridSpec:
    """Space-time grid and quadrature settings of the solver.

    ``cost_rule`` is ``"trapezoid"`` (average of the running cost at both
    ends of each step) or ``"left"`` (left endpoint only).

    With ``fine_dyadic = N > n_dyadic`` the expectation over each control
    interval is computed by ``2**(N - n)`` quadrature-and-interpolation
    steps of length ``T / 2**N`` with the control held fixed. Solves of
    different ``n`` then share one step operator, so the value tables are
    ordered exactly like the control classes they approximate.
    """

    n_dyadic: int = 7
    a_axis: Axis = field(default_factory=lambda: Axis(-4.0, 4.0, 97))
    upsilon_axis: Axis = field(default_factory=lambda: Axis(-8.0, 8.0, 33))
    gamma_axis: Axis = field(default_factory=lambda: Axis(0.0, 16.0, 17))
    quad_nodes: int = 9
    substeps: int = 1
    a_scale: str = "signed_square"
    cost_rule: str = "trapezoid"
    fine_dyadic: int | None = None

    def __post_init__(self):
        if self.n_dyadic < 0:
            raise InvalidArgument("n_dyadic must be nonnegative")
        if self.gamma_axis.lo < 0:
            raise InvalidArgument("gamma axis must start at a nonnegative value")
        if self.a_scale not in ("linear", "signed_square"):
            raise InvalidArgument("a_scale must be 'linear' or 'signed_square'")
        if self.cost_rule not in ("trapezoid", "left"):
            raise InvalidArgument("cost_rule must be 'trapezoid' or 'left'")
        if self.quad_nodes < 1 or self.substeps < 1:
            raise InvalidArgument("quad_nodes and substeps must be positive")
        if self.fine_dyadic is not None and self.fine_dyadic < self.n_dyadic:
            raise InvalidArgument("fine_dyadic must be at least n_dyadic")

    @classmethod
    def for_model(cls, model: Model, **kw):
        """Default grid whose gamma axis covers every reachable value."""
        if "gamma_axis" not in kw:
            cs = model.controls
            u = cs.values
            t = np.zeros_like(u)
            r2 = np.sum(model.b(t, np.zeros_like(u), u) ** 2, axis=-1) / model.sigma(t, np.zeros_like(u), u) ** 2
            kw["gamma_axis"] = Axis(0.0, max(float(r2.max()) * model.T, 1e-6), 17)
        return cls(**kw)

    @classmethod
    def from_config(cls, cfg: dict):
        cfg = dict(cfg)
        for name in ("a_axis", "upsilon_axis", "gamma_axis"):
            if name in cfg:
                v = cfg[name]
                cfg[name] = Axis(v["min"], v["max"], v["count"]) if isinstance(v, dict) else Axis(*v)
        return cls(**cfg)

    def to_dict(self):
        d = asdict(self)
        for name in ("a_axis", "upsilon_axis", "gamma_axis"):
            ax = d[name]
            d[name] = {"min": ax["lo"], "max": ax["hi"], "count": ax["count"]}
        return d

    @property
    def n_steps(self) -> int:
        return 2**self.n_dyadic

    def step(self, T: float) -> float:
        return T / self.n_steps

    @property
    def shape(self):
        return (self.a_axis.count, self.upsilon_axis.count, self.gamma_axis.count)

    def mesh(self):
        return np.meshgrid(self.a_axis.nodes, self.upsilon_axis.nodes, self.gamma_axis.nodes, indexing="ij")


# --------------------------------------------------------------------------
# interpolation


def _axis_weights(ax: Axis, x, signed_square=False):
    x = np.clip(np.asarray(x, dtype=float), ax.lo, ax.hi)
    i = np.clip(np.floor((x - ax.lo) / ax.step).astype(np.int64), 0, ax.count - 2)
    x0 = ax.lo + ax.step * i
    x1 = x0 + ax.step
    if signed_square:
        w = (x * np.abs(x) - x0 * np.abs(x0)) / (x1 * np.abs(x1) - x0 * np.abs(x0))
    else:
        w = (x - x0) / ax.step
    return i, w


def interp3(grid: GridSpec, table, a, upsilon, gamma, a_scale=None):
    """Clamped multilinear interpolation of a table on ``grid``."""
    scale = grid.a_scale if a_scale is None else a_scale
    ia, wa = _axis_weights(grid.a_axis, a, scale == "signed_square")
    iv, wv = _axis_weights(grid.upsilon_axis, upsilon)
    ig, wg = _axis_weights(grid.gamma_axis, gamma)
    out = 0.0
    for da, fa in ((0, 1 - wa), (1, wa)):
        for dv, fv in ((0, 1 - wv), (1, wv)):
            for dg, fg in ((0, 1 - wg), (1, wg)):
                out = out + fa * fv * fg * table[ia + da, iv + dv, ig + dg]
    return out


# --------------------------------------------------------------------------
# tables


@dataclass
class ValueTable:
    grid: GridSpec
    T: float
    values: np.ndarray  # (n_steps + 1, na, nv, ng)

    def query(self, t, a, upsilon, gamma):
        return value_query(self, t, a, upsilon, gamma)


@dataclass
class FeedbackTable:
    grid: GridSpec
    T: float
    control_values: np.ndarray  # the discretized control set
    indices: np.ndarray  # (n_steps, na, nv, ng) indices into control_values

    @property
    def controls(self) -> np.ndarray:
        return self.control_values[self.indices]


def _slice_index(grid: GridSpec, T, t):
    k = np.floor(np.asarray(t, dtype=float) / grid.step(T) + 1e-9).astype(np.int64)
    return np.clip(k, 0, grid.n_steps - 1)


def value_query(vt: ValueTable, t, a, upsilon, gamma):
    """Value at ``(t, a, upsilon, gamma)``, linear in time between dyadic slices."""
    g = vt.grid
    dt = g.step(vt.T)
    tt = float(np.clip(t, 0.0, vt.T))
    k = min(int(np.floor(tt / dt + 1e-9)), g.n_steps - 1)
    w = min(max((tt - k * dt) / dt, 0.0), 1.0)
    lo = interp3(g, vt.values[k], a, upsilon, gamma)
    if w == 0.0:
        return lo
    hi = interp3(g, vt.values[k + 1], a, upsilon, gamma)
    return (1 - w) * lo + w * hi


class TablePolicy(Policy):
    """Feedback read off a :class:`FeedbackTable`.

    Time is floored to the dyadic grid. With ``hold`` the simulators also
    freeze the control between dyadic times, which makes the rollout a
    piecewise constant control in the strict sense. In space the stored controls are interpolated multilinearly
    (linear in ``a``), clamped to the grid box, and snapped to the nearest
    element of the control set.
    """

    name = "adaptive"

    def __init__(self, ft: FeedbackTable, hold: bool = False):
        self.ft = ft
        # simulators re-evaluate the feedback only at multiples of this step
        self.decision_step = ft.grid.step(ft.T) if hold else None
        self._controls = ft.controls
        vals = ft.control_values
        self._lo = float(vals.min())
        self._n = vals.size
        self._h = float((vals.max() - vals.min()) / (vals.size - 1)) if vals.size > 1 else 1.0

    def __call__(self, t, a, upsilon, gamma):
        k = int(_slice_index(self.ft.grid, self.ft.T, t))
        u = interp3(self.ft.grid, self._controls[k], a, upsilon, gamma, a_scale="linear")
        return self.snap(u)

    def snap(self, u):
        vals = np.sort(self.ft.control_values)
        if self._n == 1:
            return np.full(np.shape(u), vals[0])
        idx = np.clip(np.rint((np.asarray(u) - self._lo) / self._h), 0, self._n - 1).astype(np.int64)
        return vals[idx]


def policy_from_table(ft: FeedbackTable, hold: bool = False) -> TablePolicy:
    """Grid feedback as a policy; ``hold`` keeps it constant between dyadic times."""
    return TablePolicy(ft, hold)


# --------------------------------------------------------------------------
# backward induction


def _running_cost_table(model, prior, grid, t, u):
    """``k~(t, a, upsilon, gamma, u)`` on the grid, shape ``(nu, na, nv, ng)``."""
    A, Vv, Gg = grid.mesh()
    shape = (u.size,) + grid.shape
    if not model.cost_depends_on_lambda:
        kk = model.k(t, grid.a_axis.nodes[None, :], u[:, None], prior.atoms[0])
        return np.ascontiguousarray(np.broadcast_to(kk[:, :, None, None], shape))
    out = np.empty(shape)
    for j, uj in enumerate(u):
        out[j] = transformed_costs(model, prior, t, A, Vv, Gg, np.full(A.shape, uj))[0]
    return out


def _terminal_table(model, prior, grid):
    A, Vv, Gg = grid.mesh()
    return np.asarray(transformed_costs(model, prior, model.T, A, Vv, Gg, np.zeros(A.shape))[1], dtype=float) * np.ones(A.shape)


def _quadrature(n):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / w.sum()


def _check_model(model, prior):
    if model.m != 1 or prior.dim != 1:
        raise InvalidArgument("the grid solver handles a scalar parameter only")


def solve(model: Model, prior: Prior, grid: GridSpec, controls=None, progress=None):
    """Backward induction; returns ``(ValueTable, FeedbackTable)``.

    Raises
    ------
    SolverError
        If a slice contains a non-finite value.
    """
    _check_model(model, prior)
    cs = model.controls if controls is None else controls
    u = cs.values
    order = cs.order.astype(np.int64)
    T, dt = model.T, grid.step(model.T)
    na, nv, ng = grid.shape
    values = np.empty((grid.n_steps + 1,) + grid.shape)
    indices = np.empty((grid.n_steps,) + grid.shape, dtype=np.int32)
    values[-1] = _terminal_table(model, prior, grid)
    if not np.all(np.isfinite(values[-1])):
        raise SolverError("terminal cost is not finite", slice_index=grid.n_steps)

    _, Vv, Gg = grid.mesh()
    G_nodes = np.ascontiguousarray(posterior_mean(prior, Vv[0], Gg[0]), dtype=float)
    atoms = np.ascontiguousarray(prior.atoms[:, 0])
    logw = np.ascontiguousarray(prior.log_weights)
    xi, omega = _quadrature(grid.quad_nodes)
    axes = [ax.packed() for ax in (grid.a_axis, grid.upsilon_axis, grid.gamma_axis)]
    a_nodes = grid.a_axis.nodes
    trapezoid = grid.cost_rule == "trapezoid"
    k_next = _running_cost_table(model, prior, grid, T, u) if trapezoid else None
    out_v = np.empty(grid.shape)
    out_i = np.empty(grid.shape, dtype=np.int64)

    signed = grid.a_scale == "signed_square"
    k_weight = 0.5 if trapezoid else 1.0

    def coefficients(t):
        B = np.ascontiguousarray(model.b(t, a_nodes[:, None], u[None, :])[..., 0], dtype=float)
        S = np.ascontiguousarray(np.broadcast_to(model.sigma(t, a_nodes[:, None], u[None, :]), B.shape), dtype=float)
        return B, S

    def sweep(W, per_control, k_now, t, h, sel):
        B, S = coefficients(t)
        _kernels.bellman_slice(
            axes[0], axes[1], axes[2], signed, np.ascontiguousarray(W), per_control,
            k_now, k_weight, B, S, G_nodes, atoms, logw, sel, xi, omega, h, grid.substeps, out_v, out_i,
        )

    if grid.fine_dyadic is not None and grid.fine_dyadic > grid.n_dyadic:
        r = 2 ** (grid.fine_dyadic - grid.n_dyadic)
        h = dt / r
        cont = np.empty((u.size,) + grid.shape)
    for k in range(grid.n_steps - 1, -1, -1):
        t = k * dt
        if grid.fine_dyadic is None or grid.fine_dyadic == grid.n_dyadic:
            k_now = _running_cost_table(model, prior, grid, t, u)
            W = values[k + 1][None] + 0.5 * dt * k_next if trapezoid else values[k + 1][None]
            sweep(W, trapezoid, k_now, t, dt, order)
        else:
            # control frozen over the block: one continuation table per control
            cont[:] = values[k + 1][None]
            for s in range(r - 1, -1, -1):
                ts = t + s * h
                k_now = _running_cost_table(model, prior, grid, ts, u)
                W = cont + 0.5 * h * k_next if trapezoid else cont
                for j in range(u.size):
                    sweep(W, True, k_now, ts, h, np.array([j], dtype=np.int64))
                    cont[j] = out_v
                k_next = k_now
            out_v[:] = cont[order[0]]
            out_i[:] = order[0]
            for j in order[1:]:
                better = cont[j] < out_v
                out_v[better] = cont[j][better]
                out_i[better] = j
        if not np.all(np.isfinite(out_v)) or np.any(out_i < 0):
            bad = np.argwhere(~np.isfinite(out_v) | (out_i < 0))[0]
            raise SolverError(
                f"non-finite value in slice {k} at grid index {tuple(bad)}", slice_index=k, point=tuple(int(i) for i in bad)
            )
        values[k] = out_v
        indices[k] = out_i
        k_next = k_now
        if progress is not None:
            progress(k)
    return ValueTable(grid, T, values), FeedbackTable(grid, T, u.copy(), indices)


def bellman_step(model: Model, prior: Prior, w_next, t, x, u, grid: GridSpec):
    """One-step expectation for a single state and control.

    ``w_next`` is either an array on the spatial grid (then it is
    interpolated, and so is the end-of-step running cost, exactly as in
    :func:`solve`) or a vectorized callable ``w(a, upsilon, gamma)``
    evaluated without projection.
    """
    _check_model(model, prior)
    dt = grid.step(model.T)
    a, v, g = float(x.a), float(x.info.upsilon[0]), float(x.info.gamma[0])
    uu = np.array([float(u)])
    b = float(model.b(t, np.array([a]), uu)[0, 0])
    s = float(model.sigma(t, np.array([a]), uu)[0])
    r2 = b * b / (s * s)
    a1, v1, g1 = a, v, g
    for _ in range(grid.substeps):
        G = float(posterior_mean(prior, v1, g1))
        a1 += G * b * dt / grid.substeps
        v1 += r2 * G * dt / grid.substeps
        g1 += r2 * dt / grid.substeps
    xi, omega = _quadrature(grid.quad_nodes)
    aq = a1 + s * np.sqrt(dt) * xi
    vq = v1 + (b / s) * np.sqrt(dt) * xi
    gq = np.full(xi.shape, g1)
    k_now = float(transformed_costs(model, prior, t, a, v, g, float(u))[0])
    if callable(w_next):
        cont = np.asarray(w_next(aq, vq, gq), dtype=float)
        k_end = np.asarray(transformed_costs(model, prior, t + dt, aq, vq, gq, np.full(xi.shape, float(u)))[0]) * np.ones(xi.shape)
    else:
        cont = interp3(grid, np.asarray(w_next), aq, vq, gq)
        kt = _running_cost_table(model, prior, grid, t + dt, uu)[0]
        k_end = interp3(grid, kt, aq, vq, gq)
    if grid.cost_rule == "trapezoid":
        return float(omega @ cont + 0.5 * dt * (k_now + omega @ k_end))
    return float(omega @ cont + dt * k_now)


# --------------------------------------------------------------------------
# persistence


def _write_npz(path, arrays: dict):
    # fixed member timestamps so identical tables give identical bytes
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def save_tables(path, vt: ValueTable, ft: FeedbackTable, header: dict):
    """Write both tables to ``path`` (``.npz``) plus ``path.json`` header.

    The archive is byte-for-byte reproducible for equal tables.
    """
    _write_npz(path, {"values": vt.values, "indices": ft.indices, "control_values": ft.control_values})
    meta = dict(header)
    meta.update({"grid": vt.grid.to_dict(), "T": vt.T})
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tables(path):
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    grid = GridSpec.from_config(meta["grid"])
    with np.load(path) as z:
        vt = ValueTable(grid, meta["T"], z["values"])
        ft = FeedbackTable(grid, meta["T"], z["control_values"], z["indices"])
    return vt, ft, meta
