"""Seeded synthetic fields used by the regression scenarios and the CI profile."""

from dataclasses import dataclass

import numpy as np

from .wind_field import SynthFieldSpec, synth_field


def rough_field_spec(n=7, hours=2000, seed=3):
    """Small field whose center vertices are poorly served by interpolation.

    Idiosyncratic noise is nearly independent between neighbouring nodes
    (short correlation length), so averaging four corners understates the
    spread of the series at the center.
    """
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    amp = 1.5 * np.sin(np.pi * i / (n - 1)) * np.cos(np.pi * j / (n - 1))
    return SynthFieldSpec(
        shape=(n, n), hours=hours, base_mean=7.5, amplitude=amp, autocorrelation=0.7,
        correlation_length=0.05, noise_std=2.5, seed=seed, name="rough",
    )


def rough_field(**kwargs):
    return synth_field(rough_field_spec(**kwargs))


@dataclass(frozen=True)
class ZoneLayout:
    """Zone geometry of :func:`two_zone_field`, as grid index blocks."""

    shape: tuple = (3, 8)
    zone_a: tuple = (slice(0, 3), slice(0, 3))
    zone_b: tuple = (slice(0, 3), slice(5, 8))
    dominant: tuple = (slice(2, 3), slice(3, 5))
    substation_nodes: tuple = ((0, 6), (2, 6))

    def mask(self, block):
        m = np.zeros(self.shape, dtype=bool)
        m[block] = True
        return m


def two_zone_spec(hours=3000, seed=0, layout=None, gain=1.2, spread=2.7):
    """Two anticorrelated zones plus a dominant block.

    Zone A (west) loads positively on the common factor, zone B (east)
    negatively. Within A the mean and the idiosyncratic noise both grow
    westward, so steady hedging partners for B lie near its eastern edge
    while the best stand-alone sites lie far west. Substations sit inside B.
    """
    lay = layout or ZoneLayout()
    n_lat, n_lon = lay.shape
    col = np.broadcast_to(np.arange(n_lon, dtype=float), lay.shape)
    a_cols = lay.zone_a[1]
    east = a_cols.stop - 1
    t = (east - col) / east  # 0 at the eastern edge of A, 1 at the western
    amp = np.zeros(lay.shape)
    load = np.zeros(lay.shape)
    noise = np.ones(lay.shape)
    a = lay.mask(lay.zone_a)
    b = lay.mask(lay.zone_b)
    amp[a] = (2.0 + gain * t)[a]
    load[a] = 1.0
    noise[a] = (0.3 + spread * t)[a]
    amp[b] = 1.8
    load[b] = -1.0
    noise[b] = 0.3
    amp[lay.dominant] = 9.0
    return SynthFieldSpec(
        shape=lay.shape, hours=hours, base_mean=5.0, amplitude=amp, autocorrelation=0.8,
        correlation_length=0.15, seed=seed, noise_std=1.0, loading=load,
        noise_scale=noise, common_std=3.0, name="two_zone",
    )


def two_zone_field(**kwargs):
    return synth_field(two_zone_spec(**kwargs))


def two_zone_candidates(field, layout=None):
    """All grid nodes outside the dominant block."""
    lay = layout or ZoneLayout()
    keep = ~lay.mask(lay.dominant).ravel()
    return [tuple(map(float, x)) for x, k in zip(field.nodes(), keep) if k]


def two_zone_substations(field, layout=None):
    lay = layout or ZoneLayout()
    return [(float(field.lat_axis[i]), float(field.lon_axis[j]))
            for i, j in lay.substation_nodes]
