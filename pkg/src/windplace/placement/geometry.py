"""Planar distances between sites and substations."""

import math

import numpy as np

KM_PER_DEG_LON_EQUATOR = 111.32
KM_PER_DEG_LAT = 110.57


def km_factors(ref_lat):
    """(km per degree longitude, km per degree latitude) at ``ref_lat``."""
    return KM_PER_DEG_LON_EQUATOR * math.cos(math.radians(ref_lat)), KM_PER_DEG_LAT


def distance_km(a, b, ref_lat):
    """Equirectangular distance with longitude scaled by ``cos(ref_lat)``."""
    kx, ky = km_factors(ref_lat)
    dx = kx * (a[1] - b[1])
    dy = ky * (a[0] - b[0])
    return math.hypot(dx, dy)


def cut_directions(K=16):
    theta = 2 * math.pi * np.arange(K) / K
    return np.cos(theta), np.sin(theta)


def polyhedral_distance_km(a, b, ref_lat, K=16):
    """Largest of the ``K`` tangent cuts ``cos(t) dx + sin(t) dy``.

    This is the value the MILP assigns to a connected distance; it
    underestimates :func:`distance_km` by at most a factor ``cos(pi/K)``.
    """
    kx, ky = km_factors(ref_lat)
    dx = kx * (np.asarray(a)[..., 1] - b[1])
    dy = ky * (np.asarray(a)[..., 0] - b[0])
    c, s = cut_directions(K)
    cuts = np.multiply.outer(dx, c) + np.multiply.outer(dy, s)
    return np.maximum(cuts.max(axis=-1), 0.0)
