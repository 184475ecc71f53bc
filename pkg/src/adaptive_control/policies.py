"""Feedback policies on the extended state.

A policy is any callable ``policy(t, a, upsilon, gamma) -> u`` evaluated on
arrays of paths at a common time ``t`` (``m == 1`` shape convention: one
entry per path). Policies never clip; the simulator clips to the control
box and records where that happened.
"""
from __future__ import annotations

import numpy as np


class Policy:
    """Base class; subclasses implement :meth:`__call__`."""

    name = "policy"

    def __call__(self, t, a, upsilon, gamma):  # pragma: no cover - interface
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class ConstantPolicy(Policy):
    """Applies the same control everywhere."""

    def __init__(self, value: float, name: str | None = None):
        self.value = float(value)
        self.name = name or f"constant({self.value:g})"

    def __call__(self, t, a, upsilon, gamma):
        return np.full(np.shape(a), self.value)


class FunctionPolicy(Policy):
    """Wraps a plain vectorized function of ``(t, a, upsilon, gamma)``."""

    def __init__(self, fn, name="function"):
        self.fn = fn
        self.name = name

    def __call__(self, t, a, upsilon, gamma):
        return np.broadcast_to(np.asarray(self.fn(t, a, upsilon, gamma), dtype=float), np.shape(a))
