"""Inflow profiles and the analytic plane Poiseuille solution (SI units)."""

from __future__ import annotations

import numpy as np


def biquadratic_inflow(y, z, height: float, width: float, v_max: float = 1.0) -> np.ndarray:
    """Duct inflow speed for y in [-H/2, H/2] and z in [0, W]; peaks at v_max."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    half = 0.5 * height
    return 16.0 * v_max / (height**2 * width**2) * (half - y) * (half + y) * (width - z) * z


def parabolic_inflow(y, height: float, v_max: float = 1.0) -> np.ndarray:
    """2D channel inflow speed for y in [-H/2, H/2]; peaks at v_max on the centreline."""
    y = np.asarray(y, dtype=np.float64)
    half = 0.5 * height
    return 4.0 * v_max / height**2 * (half - y) * (half + y)


def poiseuille_solution(
    points,
    height: float,
    length: float,
    v_max: float = 1.0,
    mu: float = 0.02,
) -> tuple[np.ndarray, np.ndarray]:
    """Fully developed channel flow between walls at y = +-H/2, outlet at x = L with p = 0.

    Returns (velocity (N, 2), pressure (N,)).
    """
    points = np.asarray(points, dtype=np.float64)
    x, y = points[:, 0], points[:, 1]
    velocity = np.zeros((points.shape[0], 2))
    velocity[:, 0] = parabolic_inflow(y, height, v_max)
    pressure = 8.0 * mu * v_max / height**2 * (length - x)
    return velocity, pressure
