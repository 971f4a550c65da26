"""Gravity-law relative mobility from populations and distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0088


class GravityConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GravityConfig:
    alpha: float = 1e-6
    decay: float = 1.7
    eps: float = 9.0
    zero_diagonal: bool = False

    def __post_init__(self):
        for name in ("alpha", "decay", "eps"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise GravityConfigError(f"{name} must be positive, got {v!r}")


def great_circle(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """Pairwise haversine distances in km between points given in degrees."""
    phi = np.radians(np.asarray(lat, dtype=np.float64))
    lam = np.radians(np.asarray(lon, dtype=np.float64))
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    a = np.sin(dphi / 2) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def generate(population: np.ndarray, dist: np.ndarray, cfg: GravityConfig = GravityConfig()) -> np.ndarray:
    """Relative mobility ``alpha * P_n * P_m / (dist_nm ** decay + eps)``.

    The diagonal (zero distance) is kept unless ``cfg.zero_diagonal``.
    """
    pop = np.asarray(population, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(~np.isfinite(pop)) or np.any(pop <= 0):
        raise GravityConfigError("populations must be positive")
    if dist.shape != (pop.size, pop.size):
        raise GravityConfigError(f"distance matrix shape {dist.shape} does not match {pop.size} regions")
    if np.any(~np.isfinite(dist)) or np.any(dist < 0):
        raise GravityConfigError("distances must be finite and nonnegative")
    if not np.array_equal(dist, dist.T):
        raise GravityConfigError("distance matrix must be symmetric")
    if np.any(np.diag(dist) != 0):
        raise GravityConfigError("distance matrix must have a zero diagonal")
    m = cfg.alpha * np.outer(pop, pop) / (dist ** cfg.decay + cfg.eps)
    if cfg.zero_diagonal:
        np.fill_diagonal(m, 0.0)
    return m
