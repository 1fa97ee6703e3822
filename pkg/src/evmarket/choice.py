"""EV-side preference model: reachability, arrival SOC, waiting, utility."""

from __future__ import annotations

import math

import numpy as np

from .config import UtilityParams
from .errors import DomainError

UNREACHABLE = -math.inf


def esoc(soc: float, position_km: float, location_km: float, k_eff: float) -> float:
    """State of charge an EV will have on arrival at a station ahead of it.

    The result may be negative, which means the station is out of range.
    """
    if location_km < position_km:
        raise DomainError("station lies behind the EV")
    return soc - (location_km - position_km) / k_eff


def reachable(esoc_value: float, margin: float = 0.0) -> bool:
    return esoc_value >= margin


def expected_waiting_hours(free_slots: int, group: int, total_slots: int, k_ch: float) -> float:
    """Expected wait at a station given its free slots and tentative group.

    ``group`` counts the deciding EV itself.
    """
    if free_slots < 0 or free_slots > total_slots:
        raise DomainError(f"free slots {free_slots} outside [0, {total_slots}]")
    if group < 0:
        raise DomainError("group size must be non-negative")
    if free_slots > 0:
        if free_slots >= group:
            return 0.0
        return k_ch * group / (total_slots + free_slots)
    return k_ch * (abs(free_slots) + group) / total_slots


def electricity_cost(esoc_value: float, price: float, params: UtilityParams) -> float:
    """Price-dependent part of the disutility, in euro (positive number)."""
    delta = params.max_soc - esoc_value
    if delta <= 0:
        raise DomainError(f"EV already at or above max soc (esoc={esoc_value})")
    cost = (params.fixed_cost_euro + price * delta * params.energy_factor * params.battery_kwh) / delta
    if not params.waiting_enabled:
        cost *= params.k_s
    return cost


def waiting_cost(waiting_hours: float, params: UtilityParams) -> float:
    if not params.waiting_enabled:
        return 0.0
    return params.vtt_euro_per_hour * waiting_hours


def monetary_utility(esoc_value: float, price: float, waiting_hours: float,
                     params: UtilityParams) -> float:
    """Monetary utility of charging at a reachable station (negative euro)."""
    return -(electricity_cost(esoc_value, price, params) + waiting_cost(waiting_hours, params))


def electricity_cost_matrix(esoc_matrix: np.ndarray, prices: np.ndarray,
                            params: UtilityParams) -> np.ndarray:
    """Vectorised ``electricity_cost``; unreachable cells become +inf."""
    esoc_matrix = np.asarray(esoc_matrix, dtype=float)
    delta = params.max_soc - esoc_matrix
    ok = esoc_matrix >= 0
    if np.any(ok & (delta <= 0)):
        raise DomainError("EV already at or above max soc")
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = (params.fixed_cost_euro
                + prices * delta * params.energy_factor * params.battery_kwh) / delta
    if not params.waiting_enabled:
        cost = cost * params.k_s
    return np.where(ok, cost, np.inf)
