"""Dyson ring geometry: ring elements, station phases and slow equinoctial elements."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .astrokernel import CONST, Constants, KeplerianElements

__all__ = ["RingConfig"]


@dataclass(frozen=True)
class RingConfig:
    a_D: float  # AU
    i_D: float = 0.0
    raan_D: float = 0.0
    phi_S1: float = 0.0
    n_stations: int = 12

    def __post_init__(self):
        # the 0.65 AU floor is a mission constraint checked by check() and the validator
        if not self.a_D > 0:
            raise ValueError(f"ring radius must be positive, got {self.a_D}")
        if self.n_stations < 1:
            raise ValueError("ring needs at least one station")

    def check(self, const: Constants = CONST) -> None:
        if self.a_D < const.a_d_min:
            raise ValueError(f"ring radius {self.a_D} AU is below the {const.a_d_min} AU minimum")

    def mean_motion(self, const: Constants = CONST) -> float:
        """Ring angular rate in rad/day."""
        a_km = self.a_D * const.au
        return math.sqrt(const.mu_sun / a_km**3) * const.day

    def station_phase(self, station: int, t, const: Constants = CONST):
        """Argument of latitude of ``station`` (1-based) at epoch ``t`` (MJD)."""
        if not 1 <= station <= self.n_stations:
            raise ValueError(f"station index {station} outside 1..{self.n_stations}")
        return (self.phi_S1 + (station - 1) * 2 * math.pi / self.n_stations
                + self.mean_motion(const) * (np.asarray(t) - const.t_start))

    def station_elements(self, station: int, const: Constants = CONST) -> KeplerianElements:
        """Circular orbit of ``station``; argp = 0 so M0 is the argument of latitude at t_start."""
        M0 = (self.phi_S1 + (station - 1) * 2 * math.pi / self.n_stations) % (2 * math.pi)
        return KeplerianElements(self.a_D, 0.0, self.i_D, self.raan_D % (2 * math.pi), 0.0, M0, const.t_start)

    def slow_mee(self, const: Constants = CONST) -> np.ndarray:
        """[p (km), f, g, h, k] shared by every station."""
        ti = math.tan(self.i_D / 2)
        return np.array([self.a_D * const.au, 0.0, 0.0, ti * math.cos(self.raan_D), ti * math.sin(self.raan_D)])

    def station_longitude(self, station: int, t, const: Constants = CONST):
        """True longitude L = raan + argument of latitude, for circular station orbits."""
        return self.raan_D + self.station_phase(station, t, const)
