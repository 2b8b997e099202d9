"""Instantaneous fuel and CO2 surrogate based on tractive power demand.

Fuel rate = idle rate + fuel_per_joule * max(0, wheel power), with wheel
power from inertia, rolling resistance, and aerodynamic drag. CO2 is
proportional to fuel burned. Pure functions; freely shareable.
"""
from __future__ import annotations

from .config import EmissionParams

GRAVITY = 9.81


def instantaneous_fuel(v: float, a: float, p: EmissionParams) -> float:
    """Fuel rate in ml/s at speed ``v`` (m/s) and acceleration ``a`` (m/s^2)."""
    if v < 0:
        raise ValueError("speed must be non-negative")
    power = (p.mass * a * v
             + p.rolling_coeff * p.mass * GRAVITY * v
             + 0.5 * p.air_density * p.drag_area * v ** 3)
    return p.idle_fuel_rate + p.fuel_per_joule * max(0.0, power)


def instantaneous_co2(v: float, a: float, p: EmissionParams) -> float:
    """CO2 rate in g/s."""
    return p.co2_per_ml_fuel * instantaneous_fuel(v, a, p)


def accumulate(vehicle, dt: float, p: EmissionParams) -> None:
    """Add one timestep's fuel and CO2 to a vehicle's running totals."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    rate = instantaneous_fuel(vehicle.speed, vehicle.accel, p)
    vehicle.fuel_total += rate * dt
    vehicle.co2_total += p.co2_per_ml_fuel * rate * dt
