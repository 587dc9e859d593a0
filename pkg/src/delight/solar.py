"""Topocentric sun direction from geotag and UTC timestamp.

Low-precision Meeus solar position: mean longitude and anomaly, equation of
center, apparent ecliptic longitude with nutation-in-longitude correction,
obliquity, right ascension / declination, Greenwich sidereal time, then the
local hour angle gives azimuth and elevation.  Good to well under 0.05
degrees against the NREL SPA ephemeris for 1950-2050, which moves shadows
by less than a pixel at aerial ground sampling distances.

No atmospheric refraction: at flight-time sun elevations the correction is
below 0.02 degrees and it would not apply to the geometric shadow test rays
anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from delight.scene_io import CaptureMeta

__all__ = ["SunDirection", "sun_direction", "sun_below_horizon"]

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class SunDirection:
    """Unit sun vector in the East-North-Up world frame.

    azimuth is degrees clockwise from North (x_east = sin az * cos el,
    y_north = cos az * cos el), elevation is degrees above the horizon.
    """

    vector: np.ndarray
    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("sun vector must be unit length")
        el = math.degrees(math.asin(np.clip(v[2], -1.0, 1.0)))
        if abs(el - self.elevation_deg) > math.degrees(1e-6):
            raise ValueError("vector inconsistent with elevation")
        az = math.degrees(math.atan2(v[0], v[1])) % 360.0
        if math.cos(self.elevation_deg * _DEG) > 1e-9:
            d_az = (az - self.azimuth_deg + 180.0) % 360.0 - 180.0
            if abs(d_az) * math.cos(self.elevation_deg * _DEG) > math.degrees(1e-6):
                raise ValueError("vector inconsistent with azimuth")
        object.__setattr__(self, "vector", v)

    @classmethod
    def from_angles(cls, azimuth_deg: float, elevation_deg: float) -> "SunDirection":
        az, el = azimuth_deg * _DEG, elevation_deg * _DEG
        v = np.array([math.sin(az) * math.cos(el),
                      math.cos(az) * math.cos(el),
                      math.sin(el)])
        v /= np.linalg.norm(v)
        return cls(vector=v, azimuth_deg=azimuth_deg % 360.0, elevation_deg=elevation_deg)


def _julian_day(ts: datetime) -> float:
    """Julian day from a UTC datetime (proleptic Gregorian)."""
    year, month = ts.year, ts.month
    day = (ts.day + ts.hour / 24.0 + ts.minute / 1440.0
           + (ts.second + ts.microsecond * 1e-6) / 86400.0)
    if month <= 2:
        year -= 1
        month += 12
    a = year // 100
    b = 2 - a + a // 4
    return math.floor(365.25 * (year + 4716)) + math.floor(30.6001 * (month + 1)) + day + b - 1524.5


def sun_direction(meta: CaptureMeta) -> SunDirection:
    """Compute the topocentric sun direction for a capture's time and place."""
    ts = meta.timestamp_utc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    if not 1900 <= ts.year <= 2100:
        raise ValueError(f"timestamp year {ts.year} outside supported range 1900-2100")

    jd = _julian_day(ts)
    t = (jd - 2451545.0) / 36525.0  # Julian centuries since J2000.0

    mean_long = (280.46646 + 36000.76983 * t + 0.0003032 * t * t) % 360.0
    mean_anom = (357.52911 + 35999.05029 * t - 0.0001537 * t * t) % 360.0
    m = mean_anom * _DEG
    center = ((1.914602 - 0.004817 * t - 0.000014 * t * t) * math.sin(m)
              + (0.019993 - 0.000101 * t) * math.sin(2 * m)
              + 0.000289 * math.sin(3 * m))
    true_long = mean_long + center
    omega = (125.04 - 1934.136 * t) * _DEG
    apparent_long = (true_long - 0.00569 - 0.00478 * math.sin(omega)) * _DEG

    obliq0 = (23.0 + 26.0 / 60.0 + 21.448 / 3600.0
              - (46.8150 * t + 0.00059 * t * t - 0.001813 * t ** 3) / 3600.0)
    obliq = (obliq0 + 0.00256 * math.cos(omega)) * _DEG

    ra = math.atan2(math.cos(obliq) * math.sin(apparent_long), math.cos(apparent_long))
    dec = math.asin(math.sin(obliq) * math.sin(apparent_long))

    gmst = (280.46061837 + 360.98564736629 * (jd - 2451545.0)
            + 0.000387933 * t * t - t ** 3 / 38710000.0) % 360.0
    hour_angle = (gmst + meta.longitude - math.degrees(ra)) * _DEG

    lat = meta.latitude * _DEG
    sin_el = (math.sin(lat) * math.sin(dec)
              + math.cos(lat) * math.cos(dec) * math.cos(hour_angle))
    elevation = math.degrees(math.asin(np.clip(sin_el, -1.0, 1.0)))
    az_south = math.atan2(math.sin(hour_angle),
                          math.cos(hour_angle) * math.sin(lat) - math.tan(dec) * math.cos(lat))
    azimuth = (math.degrees(az_south) + 180.0) % 360.0

    return SunDirection.from_angles(azimuth, elevation)


def sun_below_horizon(direction: SunDirection) -> bool:
    """True when elevation <= 0 degrees (the boundary counts as below).

    The pipeline refuses illumination estimation in that case: without
    sunlit pixels the sun/sky ratio is undefined.
    """
    return direction.elevation_deg <= 0.0
