"""Economic and risk settings plus the quantile-trapezoid CVaR."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, EvaluationError

# level comparisons tolerate decimal round-off (0.57 vs 0.5700000000000001)
_TAU_TOL = 1e-9


@dataclass(frozen=True)
class EconSpec:
    lambda_ppa: float = 60.0
    c_line: float = 5000.0
    hours_per_year: float = 8760.0
    total_turbines: int = 40

    def __post_init__(self):
        if min(self.lambda_ppa, self.c_line, self.hours_per_year, self.total_turbines) < 0:
            raise ConfigurationError("economic parameters must be non-negative")


@dataclass(frozen=True)
class RiskSpec:
    one_minus_alpha: float = 1.0

    def __post_init__(self):
        if not 0 < self.one_minus_alpha <= 1:
            raise ConfigurationError("one_minus_alpha must lie in (0, 1]")


def cvar_weights(taus, one_minus_alpha):
    """Per-quantile weights ``w`` with ``cvar = w @ Q``.

    Pair ``(o, o+1)`` contributes ``(Q_o + Q_{o+1})/2 * (tau_{o+1} - tau_o)``
    when ``tau_{o+1} <= 1 - alpha``; the sum is divided by ``1 - alpha``.
    """
    taus = np.asarray(taus, dtype=float)
    beta = float(one_minus_alpha)
    if not 0 < beta <= 1:
        raise ConfigurationError("one_minus_alpha must lie in (0, 1]")
    w = np.zeros(taus.size)
    dt = np.diff(taus)
    pairs = np.flatnonzero(taus[1:] <= beta + _TAU_TOL)
    if pairs.size == 0:
        raise EvaluationError(
            f"no quantile pair lies below 1-alpha={beta}; CVaR sum is empty"
        )
    for o in pairs:
        w[o] += 0.5 * dt[o]
        w[o + 1] += 0.5 * dt[o]
    return w / beta


def cvar_from_quantiles(Q, taus, one_minus_alpha):
    """Trapezoid CVaR (same units as ``Q``); ``Q`` may be ``(O,)`` or ``(n, O)``."""
    Q = np.asarray(Q, dtype=float)
    w = cvar_weights(taus, one_minus_alpha)
    if Q.shape[-1] != w.size:
        raise ValueError("quantile vector length differs from ladder")
    out = Q @ w
    return float(out) if out.ndim == 0 else out


def covered_mass(taus, one_minus_alpha):
    """Probability mass spanned by the included pairs."""
    taus = np.asarray(taus, dtype=float)
    pairs = np.flatnonzero(taus[1:] <= one_minus_alpha + _TAU_TOL)
    return float(np.diff(taus)[pairs].sum())
