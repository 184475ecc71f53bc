"""Configuration documents.

A configuration is one JSON object with the sections ``prior``, ``model``,
``grid``, ``simulate`` and ``compare``. Missing sections fall back to the
wind-tunnel defaults below. Every output embeds :func:`config_hash` of the
fully resolved document.
"""
from __future__ import annotations

import copy
import hashlib
import json

from .errors import InvalidArgument

__all__ = ["DEFAULT_CONFIG", "load_config", "resolve_config", "config_hash"]

DEFAULT_CONFIG = {
    "seed": 0,
    "prior": {"type": "uniform", "lo": 0.0, "hi": 1.0, "nodes": 64},
    "model": {
        "model": "wind-tunnel",
        "sigma0": 1.0,
        "T": 1.0,
        "rho": 2.0,
        "c": 2.0,
        "C": 5.0,
        "u_max": 4.0,
        "n_controls": 41,
        "riccati_denominator": "rho",
    },
    "grid": {
        "n_dyadic": 7,
        "a_axis": {"min": -4.0, "max": 4.0, "count": 97},
        "upsilon_axis": {"min": -8.0, "max": 8.0, "count": 33},
        "gamma_axis": {"min": 0.0, "max": 16.0, "count": 17},
        "quad_nodes": 9,
        "substeps": 1,
        "a_scale": "signed_square",
        "cost_rule": "trapezoid",
    },
    "simulate": {"n_steps": 256, "t0": 0.0, "mode": "physical", "n_paths": 100000, "chunk_size": 16384},
    "compare": {
        "sweep": {"variable": "state_y", "values": [-2.0, -1.0, 0.0, 1.0, 2.0], "t": 0.0},
        "n_paths": 100000,
    },
}

SECTIONS = ("prior", "model", "grid", "simulate", "compare")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "prior":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(cfg: dict | None = None, seed: int | None = None) -> dict:
    """Merge ``cfg`` over the defaults; a given ``seed`` overrides the file's."""
    cfg = dict(cfg or {})
    unknown = set(cfg) - set(SECTIONS) - {"seed"}
    if unknown:
        raise InvalidArgument(f"unknown config sections: {sorted(unknown)}")
    out = _merge(DEFAULT_CONFIG, cfg)
    if seed is not None:
        out["seed"] = int(seed)
    return out


def load_config(path=None, seed=None) -> dict:
    if path is None:
        return resolve_config(None, seed)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: {exc}") from None
    return resolve_config(raw, seed)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form (first 16 hex digits)."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
