"""Command line interface.

Subcommands: ``solve``, ``riccati``, ``simulate``, ``evaluate``,
``compare`` and ``query``. Outputs go to ``--out`` and never depend on
``--threads``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys

import numpy as np

from . import __version__
from .config import config_hash, load_config
from .dynamics import ExtendedState, model_from_config
from .errors import InfeasibleTarget, InvalidArgument
from .filtering import InfoState, Prior
from .harness import compare, emit_report, estimate_cost
from .lq import ce_policy, naive_policy, solve_riccati
from .policies import ConstantPolicy
from .simulate import SimConfig, simulate
from .solver import GridSpec, load_tables, policy_from_table, save_tables, solve, value_query

log = logging.getLogger("adaptive_control")

POLICIES = ("zero", "constant", "naive", "ce", "adaptive")


def _code_version():
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Context:
    """Resolved configuration plus the objects built from it."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config, args.seed)
        self.hash = config_hash(self.cfg)
        self.seed = int(self.cfg["seed"])
        self.threads = max(1, int(args.threads))
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)
        self.prior = Prior.from_config(self.cfg["prior"])
        self.model = model_from_config(self.cfg["model"])
        self.denominator = self.cfg["model"].get("riccati_denominator", "rho")

    def header(self, **extra):
        h = {"config_hash": self.hash, "seed": self.seed, "code_version": _code_version()}
        h.update(extra)
        return h

    def path(self, name):
        return os.path.join(self.out, name)

    def grid(self):
        return GridSpec.from_config(self.cfg["grid"])

    def tables(self):
        """Feedback tables from ``--tables`` or, failing that, a fresh solve."""
        src = getattr(self.args, "tables", None)
        if src:
            vt, ft, _ = load_tables(src)
            return vt, ft
        log.info("no --tables given; solving on the configured grid")
        return solve(self.model, self.prior, self.grid())

    def policy(self, name, value=0.0):
        if name == "zero":
            return ConstantPolicy(0.0, name="zero")
        if name == "constant":
            return ConstantPolicy(value)
        lq = self.model.lq_params
        if name == "naive":
            return naive_policy(lq, self.prior, denominator=self.denominator)
        if name == "ce":
            return ce_policy(lq, self.prior, denominator=self.denominator)
        if name == "adaptive":
            return policy_from_table(self.tables()[1])
        raise InvalidArgument(f"unknown policy {name!r}")

    def sim_config(self, **over):
        sc = dict(self.cfg["simulate"])
        sc.pop("n_paths", None)
        sc["seed"] = self.seed
        return SimConfig.from_config(sc, **over)


def _set_threads(n):
    try:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):
        pass


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(ctx: Context):
    grid = ctx.grid()
    if ctx.args.n_dyadic is not None:
        grid = GridSpec.from_config(dict(grid.to_dict(), n_dyadic=ctx.args.n_dyadic))
    vt, ft = solve(ctx.model, ctx.prior, grid, progress=lambda k: log.debug("slice %d done", k))
    path = ctx.path("tables.npz")
    save_tables(path, vt, ft, ctx.header(model=ctx.model.name, prior=ctx.cfg["prior"]))
    print(path)
    return 0


def cmd_riccati(ctx: Context):
    lam = float(ctx.prior.mean[0]) if ctx.args.lam is None else ctx.args.lam
    sol = solve_riccati(lam, ctx.model.lq_params, ctx.args.n_ode_steps, ctx.denominator)
    idx = np.arange(0, sol.times.size, max(1, ctx.args.every))
    if idx[-1] != sol.times.size - 1:
        idx = np.append(idx, sol.times.size - 1)
    lines = ["t,f1,f2"] + [f"{float(sol.times[i])!r},{float(sol.f1_samples[i])!r},{float(sol.f2_samples[i])!r}" for i in idx]
    text = "\n".join(lines) + "\n"
    with open(ctx.path("riccati.csv"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def _path_rows(rec, prior, i):
    G = rec.posterior_mean(prior)[i]
    var = rec.posterior_variance(prior)[i]
    for k, t in enumerate(rec.times):
        yield [repr(float(t)), repr(float(rec.a[i, k])), repr(float(rec.upsilon[i, k])), repr(float(rec.gamma[i, k])),
               repr(float(rec.controls[i, k])), repr(float(G[k])), repr(float(var[k])), repr(float(rec.cum_cost[i, k]))]


COLUMNS = ["t", "a", "upsilon", "gamma", "u", "G", "var", "cum_cost"]


def _x0(args):
    return ExtendedState(args.t, args.a, InfoState([args.upsilon], [args.gamma]))


def cmd_simulate(ctx: Context):
    a = ctx.args
    pol = ctx.policy(a.policy, a.value)
    cfg = ctx.sim_config(mode=a.mode, n_steps=a.n_steps, t0=a.t)
    rec = simulate(ctx.model, ctx.prior, pol, cfg, _x0(a), a.n_paths, threads=ctx.threads)
    if a.per_path:
        for i in range(rec.n_paths):
            with open(ctx.path(f"path_{i:05d}.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(COLUMNS)
                w.writerows(_path_rows(rec, ctx.prior, i))
    else:
        G = rec.posterior_mean(ctx.prior)
        var = rec.posterior_variance(ctx.prior)
        cols = [rec.a, rec.upsilon, rec.gamma, rec.controls, G, var, rec.cum_cost]
        with open(ctx.path("simulate_summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for k, t in enumerate(rec.times):
                w.writerow([repr(float(t))] + [repr(float(c[:, k].mean())) for c in cols])
    _write_json(ctx.path("simulate.json"), ctx.header(
        policy=a.policy, mode=cfg.mode, n_paths=a.n_paths, mean_cost=float(rec.realized_cost.mean()),
        clipped_fraction=float(rec.clipped.mean()),
    ))
    print(f"mean realized cost {rec.realized_cost.mean():.6f} over {rec.n_paths} paths")
    return 0


def cmd_evaluate(ctx: Context):
    a = ctx.args
    pol = ctx.policy(a.policy, a.value)
    n = a.n_paths or int(ctx.cfg["simulate"].get("n_paths", 100000))
    cfg = ctx.sim_config(mode=a.mode, n_steps=a.n_steps)
    est = estimate_cost(ctx.model, ctx.prior, pol, a.t, _x0(a), n, cfg, threads=ctx.threads)
    out = ctx.header(policy=a.policy, t=a.t, a=a.a, upsilon=a.upsilon, gamma=a.gamma, **est.__dict__)
    _write_json(ctx.path("evaluate.json"), out)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_compare(ctx: Context):
    spec = ctx.cfg["compare"]
    sweep = dict(spec["sweep"])
    n = ctx.args.n_paths or int(spec.get("n_paths", 100000))
    pols = {name: ctx.policy(name) for name in ("naive", "ce", "adaptive")}
    cfg = ctx.sim_config(n_steps=ctx.args.n_steps)
    report = compare(ctx.model, ctx.prior, pols, sweep, n, cfg, threads=ctx.threads, metadata=ctx.header())
    emit_report(report, "csv", ctx.path("compare.csv"))
    emit_report(report, "json", ctx.path("compare.json"))
    sys.stdout.write(open(ctx.path("compare.csv")).read())
    return 0


def cmd_query(ctx: Context):
    a = ctx.args
    vt, ft = ctx.tables()
    val = float(value_query(vt, a.t, a.a, a.upsilon, a.gamma))
    u = float(policy_from_table(ft)(a.t, np.array([a.a]), np.array([a.upsilon]), np.array([a.gamma]))[0])
    out = {"t": a.t, "a": a.a, "upsilon": a.upsilon, "gamma": a.gamma, "value": val, "control": u}
    print(json.dumps(out, sort_keys=True))
    return 0


# --------------------------------------------------------------------------


def _state_args(p, with_tables=False):
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--upsilon", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    if with_tables:
        p.add_argument("--tables", help="tables.npz written by 'solve'")


def _policy_args(p):
    p.add_argument("--policy", choices=POLICIES, default="ce")
    p.add_argument("--value", type=float, default=0.0, help="control of the 'constant' policy")
    p.add_argument("--mode", choices=("physical", "innovations"), default=None)
    p.add_argument("--n-paths", type=int, default=None)
    p.add_argument("--n-steps", type=int, default=None)


def build_parser():
    p = argparse.ArgumentParser(prog="adaptive-control", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="backward induction; writes tables.npz and its JSON header")
    s.add_argument("--n-dyadic", type=int, default=None)
    s.set_defaults(fn=cmd_solve)

    s = sub.add_parser("riccati", help="print f1/f2 samples as CSV")
    s.add_argument("--lambda", dest="lam", type=float, default=None, help="parameter value (default: prior mean)")
    s.add_argument("--n-ode-steps", type=int, default=1024)
    s.add_argument("--every", type=int, default=1, help="print every k-th sample")
    s.set_defaults(fn=cmd_riccati)

    s = sub.add_parser("simulate", help="simulate paths and write CSV")
    _state_args(s, with_tables=True)
    _policy_args(s)
    s.set_defaults(n_paths=1)
    s.add_argument("--per-path", action="store_true", help="one CSV per path instead of a summary")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("evaluate", help="Monte Carlo cost of one policy")
    _state_args(s, with_tables=True)
    _policy_args(s)
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("compare", help="naive / CE / adaptive cost sweep")
    s.add_argument("--tables", help="tables.npz written by 'solve'")
    s.add_argument("--n-paths", type=int, default=None)
    s.add_argument("--n-steps", type=int, default=None)
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("query", help="value and feedback at one extended state")
    _state_args(s, with_tables=True)
    s.set_defaults(fn=cmd_query)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        ctx = Context(args)
        return args.fn(ctx)
    except (InvalidArgument, InfeasibleTarget, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
