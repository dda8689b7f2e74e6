"""Spherical distance and local tangent-plane helpers.

All distances use the haversine formula on a 6,371,000 m sphere. The
local plane maps (lat, lon) degrees to east/north meters around a fixed
reference latitude; at the sub-kilometer scales handled here the mapping
error is far below GPS noise.
"""

from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
_DEG = np.pi / 180.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; accepts scalars or arrays."""
    phi1 = np.asarray(lat1) * _DEG
    phi2 = np.asarray(lat2) * _DEG
    dphi = phi2 - phi1
    dlmb = (np.asarray(lon2) - np.asarray(lon1)) * _DEG
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def meters_per_degree(ref_lat: float) -> tuple[float, float]:
    """(north, east) meters spanned by one degree at `ref_lat`."""
    north = EARTH_RADIUS_M * _DEG
    east = EARTH_RADIUS_M * _DEG * np.cos(ref_lat * _DEG)
    return north, float(east)


def to_local_xy(lat, lon, ref_lat: float, ref_lon: float):
    """Project degrees to (x east, y north) meters around a reference."""
    m_north, m_east = meters_per_degree(ref_lat)
    x = (np.asarray(lon) - ref_lon) * m_east
    y = (np.asarray(lat) - ref_lat) * m_north
    return x, y


def from_local_xy(x, y, ref_lat: float, ref_lon: float):
    """Inverse of `to_local_xy`."""
    m_north, m_east = meters_per_degree(ref_lat)
    lat = ref_lat + np.asarray(y) / m_north
    lon = ref_lon + np.asarray(x) / m_east
    return lat, lon
