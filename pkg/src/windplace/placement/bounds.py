"""Interval bound propagation for big-M constants."""

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class NeuronBounds:
    """Pre-activation bounds ``z_lo[l] <= z[l] <= z_hi[l]`` for every layer.

    ``box_lo``/``box_hi`` is the scaled input box the bounds are valid over.
    """

    z_lo: list
    z_hi: list
    box_lo: np.ndarray
    box_hi: np.ndarray
    model_id: str

    @property
    def m_minus(self):
        return [np.minimum(lo, 0.0) for lo in self.z_lo]

    @property
    def m_plus(self):
        return [np.maximum(hi, 0.0) for hi in self.z_hi]

    def covers(self, lo, hi, tol=1e-9):
        return bool(np.all(self.box_lo <= np.asarray(lo) + tol)
                    and np.all(np.asarray(hi) <= self.box_hi + tol))


def propagate_bounds(model, lo=None, hi=None):
    """Sound interval bounds over the scaled input box ``[lo, hi]``
    (default ``[0, 1]^d``), propagated layer by layer through ReLU."""
    d = model.layers[0]
    lo = np.zeros(d) if lo is None else np.asarray(lo, dtype=float)
    hi = np.ones(d) if hi is None else np.asarray(hi, dtype=float)
    a_lo, a_hi = lo, hi
    z_los, z_his = [], []
    for w, b in zip(model.weights, model.biases):
        wp = np.maximum(w, 0.0)
        wn = np.minimum(w, 0.0)
        z_lo = wp @ a_lo + wn @ a_hi + b
        z_hi = wp @ a_hi + wn @ a_lo + b
        z_los.append(z_lo)
        z_his.append(z_hi)
        a_lo, a_hi = np.maximum(z_lo, 0.0), np.maximum(z_hi, 0.0)
    return NeuronBounds(z_los, z_his, lo.copy(), hi.copy(), model.fingerprint())
