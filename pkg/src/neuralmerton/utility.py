"""Isoelastic (CRRA) utility and its derivative."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UtilitySpec:
    """Relative risk aversion ``eta >= 0``; ``eta == 1`` is log utility."""

    eta: float

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError(f"risk aversion must be >= 0, got {self.eta}")

    def __call__(self, w):
        return isoelastic_utility(w, self.eta)

    def derivative(self, w):
        return np.asarray(w, dtype=float) ** (-self.eta)


def isoelastic_utility(w, eta: float):
    """``(w**(1-eta) - 1) / (1-eta)``, or ``log(w)`` at ``eta == 1``.

    The power branch is evaluated via ``expm1`` so it converges smoothly to
    the log branch as ``eta -> 1``.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("utility is defined for positive wealth only")
    lw = np.log(w)
    if eta == 1:
        out = lw
    else:
        a = 1.0 - eta
        out = np.expm1(a * lw) / a
    return out if out.ndim else float(out)
