"""Monte Carlo cost estimates and controller comparisons.

All controllers in a comparison are rolled out with the same random
numbers (the policy never enters the RNG key), so cost differences are
estimated far more precisely than the costs themselves.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .dynamics import ExtendedState, Model
from .errors import InfeasibleTarget, InvalidArgument
from .filtering import InfoState, Prior, posterior_mean, posterior_variance
from .simulate import SimConfig, path_costs

__all__ = [
    "CostEstimate",
    "ComparisonRow",
    "ComparisonReport",
    "estimate_cost",
    "find_state_for_moments",
    "compare",
    "emit_report",
    "read_report",
]

log = logging.getLogger(__name__)

SWEEP_VARIABLES = ("state_y", "cond_variance", "cond_mean")
POLICY_COLUMNS = ("naive", "ce", "adaptive")


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    n_paths: int
    mode: str
    n_excluded: int = 0
    clipped_fraction: float = 0.0

    @classmethod
    def from_samples(cls, costs, mode, clipped=None):
        costs = np.asarray(costs, dtype=float)
        ok = np.isfinite(costs)
        n_bad = int((~ok).sum())
        good = costs[ok]
        n = good.size
        se = float(good.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        frac = float(np.mean(clipped)) if clipped is not None and len(clipped) else 0.0
        return cls(float(good.mean()) if n else float("nan"), se, n, mode, n_bad, frac)


def _check_exclusions(costs, limit=0.01):
    bad = int(np.sum(~np.isfinite(costs)))
    if bad:
        log.warning("%d of %d paths produced a non-finite cost and were excluded", bad, costs.size)
    if bad > limit * costs.size:
        raise ArithmeticError(f"{bad} of {costs.size} paths have non-finite cost (more than {limit:.0%})")


def estimate_cost(model: Model, prior: Prior, policy, t0: float, x0: ExtendedState | None, n_paths: int,
                  cfg: SimConfig, point: int = 0, threads: int = 1, return_samples: bool = False):
    """Mean realized cost and its standard error over seeded paths.

    ``x0`` is the initial extended state (``None`` for the origin); its
    time is overridden by ``t0``. Paths with a non-finite cost are dropped
    and counted; more than 1% of them raises ``ArithmeticError``.
    """
    if n_paths < 2:
        raise InvalidArgument("need at least two paths for a standard error")
    x = x0 if x0 is not None else ExtendedState(t0, 0.0, InfoState.origin())
    x = ExtendedState(float(t0), x.a, x.info)
    costs, clipped = path_costs(model, prior, policy, replace(cfg, t0=float(t0)), x, n_paths, point, threads)
    _check_exclusions(costs)
    est = CostEstimate.from_samples(costs, cfg.mode, clipped)
    return (est, costs) if return_samples else est


def find_state_for_moments(prior: Prior, target_mean: float, target_var: float, tol: float = 1e-4):
    """Information state whose posterior has the requested mean and variance.

    Solves ``G(upsilon, gamma) = target_mean`` and
    ``var(upsilon, gamma) = target_var`` over ``gamma >= 0`` by bounded
    least squares from several starting points.

    Raises
    ------
    InfeasibleTarget
        When no state reaches both targets within ``tol``.
    """
    if prior.dim != 1:
        raise InvalidArgument("moment targeting is implemented for m = 1")
    lo, hi = (float(v[0]) for v in prior.support)
    m0, v0 = float(prior.mean[0]), prior.variance
    achievable = {"mean": (lo, hi), "variance": (0.0, v0)}
    if not lo < target_mean < hi or not 0 < target_var:
        raise InfeasibleTarget("mean must lie inside the support and the variance be positive", achievable=achievable)
    if abs(target_mean - m0) < tol and abs(target_var - v0) < tol:
        return InfoState([0.0], [0.0])

    def resid(p):
        return [posterior_mean(prior, p[0], p[1]) - target_mean, (posterior_variance(prior, p[0], p[1]) - target_var) * 10]

    # one-atom scale of gamma needed for the target variance
    g_guess = max(1.0 / target_var - 1.0 / v0, 0.0)
    best = None
    for gs in (g_guess, 0.5 * g_guess, 2.0 * g_guess, 0.0):
        x0 = [target_mean * gs + (target_mean - m0) / v0, gs]
        r = least_squares(resid, x0, bounds=([-np.inf, 0.0], [np.inf, np.inf]), xtol=1e-14, ftol=1e-14, gtol=1e-14)
        err = max(abs(r.fun[0]), abs(r.fun[1]) / 10)
        if best is None or err < best[0]:
            best = (err, r.x)
        if err < tol:
            break
    err, x = best
    if err >= tol:
        achievable["variance"] = (0.0, _max_variance_at_mean(prior, target_mean))
        raise InfeasibleTarget(
            f"no state found with mean {target_mean} and variance {target_var} (closest miss {err:.2e})",
            achievable=achievable,
        )
    return InfoState([float(x[0])], [float(x[1])])


def _max_variance_at_mean(prior, target_mean):
    """Variance of the exponentially tilted prior (``gamma = 0``) with this mean.

    Raising ``gamma`` above zero only concentrates the posterior in the
    cases tested, so this is reported as the largest reachable variance; it
    is not a proven bound.
    """
    from scipy.optimize import brentq

    span = 1.0 / max(prior.variance, 1e-300)
    lo, hi = -span, span
    while posterior_mean(prior, lo, 0.0) > target_mean:
        lo *= 2
    while posterior_mean(prior, hi, 0.0) < target_mean:
        hi *= 2
    v = brentq(lambda u: posterior_mean(prior, u, 0.0) - target_mean, lo, hi, xtol=1e-12)
    return float(posterior_variance(prior, v, 0.0))


@dataclass
class ComparisonRow:
    abscissa: float
    estimates: dict  # policy name -> CostEstimate
    diffs: dict = field(default_factory=dict)  # "a-b" -> (mean, paired stderr)
    state: dict = field(default_factory=dict)


@dataclass
class ComparisonReport:
    sweep_variable: str
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise InvalidArgument(f"sweep variable must be one of {SWEEP_VARIABLES}")
        xs = [r.abscissa for r in self.rows]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise InvalidArgument("abscissas must be strictly increasing")

    def to_dict(self):
        return {
            "sweep_variable": self.sweep_variable,
            "metadata": self.metadata,
            "rows": [
                {
                    "abscissa": r.abscissa,
                    "estimates": {k: asdict(v) for k, v in r.estimates.items()},
                    "diffs": {k: list(v) for k, v in r.diffs.items()},
                    "state": r.state,
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, d):
        rows = [
            ComparisonRow(
                r["abscissa"],
                {k: CostEstimate(**v) for k, v in r["estimates"].items()},
                {k: tuple(v) for k, v in r.get("diffs", {}).items()},
                r.get("state", {}),
            )
            for r in d["rows"]
        ]
        return cls(d["sweep_variable"], rows, d.get("metadata", {}))


def _sweep_states(prior, sweep):
    """Yield ``(abscissa, t, a, InfoState)`` for each point of a sweep spec."""
    var = sweep.get("variable", "state_y")
    if var not in SWEEP_VARIABLES:
        raise InvalidArgument(f"sweep variable must be one of {SWEEP_VARIABLES}")
    t = float(sweep.get("t", 0.0))
    values = [float(v) for v in sweep["values"]]
    for x in values:
        if var == "state_y":
            info = InfoState([sweep.get("upsilon", 0.0)], [sweep.get("gamma", 0.0)])
            yield x, t, x, info
        elif var == "cond_variance":
            yield x, t, float(sweep.get("y", 1.0)), find_state_for_moments(prior, float(sweep["mean"]), x)
        else:
            yield x, t, float(sweep.get("y", 1.0)), find_state_for_moments(prior, x, float(sweep["variance"]))


def compare(model: Model, prior: Prior, policies: dict, sweep: dict, n_paths: int, cfg: SimConfig,
            threads: int = 1, metadata: dict | None = None) -> ComparisonReport:
    """Cost of every policy at every sweep point, with common random numbers.

    ``policies`` maps names to policies. ``sweep`` holds ``variable`` (one
    of ``state_y``, ``cond_variance``, ``cond_mean``), ``values`` and the
    fixed coordinates (``t`` and, depending on the variable, ``y``,
    ``mean``, ``variance``, ``upsilon``, ``gamma``). The simulation window
    starts at the sweep's ``t``; ``cfg.n_steps`` steps cover it.
    """
    if not policies:
        raise InvalidArgument("no policies to compare")
    rows = []
    for i, (x, t, a, info) in enumerate(_sweep_states(prior, sweep)):
        x0 = ExtendedState(t, a, info)
        ests, samples = {}, {}
        for name, pol in policies.items():
            est, c = estimate_cost(model, prior, pol, t, x0, n_paths, cfg, point=i, threads=threads, return_samples=True)
            ests[name], samples[name] = est, c
        names = list(policies)
        diffs = {}
        for p, q in zip(names, names[1:]):
            d = samples[q] - samples[p]
            d = d[np.isfinite(d)]
            diffs[f"{q}-{p}"] = (float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size)))
        state = {
            "t": t, "a": a, "upsilon": float(info.upsilon[0]), "gamma": float(info.gamma[0]),
            "G": float(posterior_mean(prior, info.upsilon[0], info.gamma[0])),
            "var": float(posterior_variance(prior, info.upsilon[0], info.gamma[0])),
        }
        rows.append(ComparisonRow(x, ests, diffs, state))
        log.info("sweep point %d (%s=%g): %s", i, sweep.get("variable"), x, {k: round(v.mean, 4) for k, v in ests.items()})
    meta = {"n_paths": n_paths, "seed": cfg.seed, "mode": cfg.mode, "n_steps": cfg.n_steps}
    meta.update(metadata or {})
    return ComparisonReport(sweep.get("variable", "state_y"), rows, meta)


def _csv_text(report: ComparisonReport):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["abscissa"]
    for name in POLICY_COLUMNS:
        header += [name, f"{name}_se"]
    w.writerow(header)
    for r in report.rows:
        line = [repr(float(r.abscissa))]
        for name in POLICY_COLUMNS:
            e = r.estimates.get(name)
            line += ["", ""] if e is None else [repr(e.mean), repr(e.stderr)]
        w.writerow(line)
    return buf.getvalue()


def emit_report(report: ComparisonReport, fmt: str, path):
    """Write a report as CSV (fixed columns) or JSON (full content)."""
    if fmt == "csv":
        text = _csv_text(report)
    elif fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        raise InvalidArgument("format must be 'csv' or 'json'")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_report(path) -> ComparisonReport:
    with open(path) as fh:
        return ComparisonReport.from_dict(json.load(fh))
