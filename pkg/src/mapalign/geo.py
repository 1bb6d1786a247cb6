"""Geodesy helpers shared across the package."""

from __future__ import annotations

import math

EARTH_RADIUS_M = 6_371_000.0

# Metres per degree of latitude under the small-displacement spherical
# approximation; longitude additionally scales with cos(lat).
METERS_PER_DEGREE = 111_320.0


def great_circle_distance(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Haversine distance in metres on a sphere of mean Earth radius."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(max(0.0, a))))


def meters_to_degrees(north_m: float, east_m: float, lat: float) -> tuple[float, float]:
    """Convert a small (north, east) metre offset at latitude `lat` to (dlat, dlon)."""
    dlat = north_m / METERS_PER_DEGREE
    dlon = east_m / (METERS_PER_DEGREE * math.cos(math.radians(lat)))
    return dlat, dlon
