"""Discrete-time physics of a zoned greenhouse.

Each zone carries temperature, relative humidity, illuminance, soil moisture,
and pH. Zones relax toward ambient, couple to their 4-connected neighbors,
and respond to four actuators (heater, fan, pump, grow lamp). Integration is
forward Euler with an explicit stability bound enforced at config load:

    k_amb + 4 * k_nbr <= 1 / dt

The fan both boosts exchange with outside air (``fan_cool_gain`` scales the
ambient coupling) and provides evaporative-pad cooling (``fan_cool_rate``, a
direct degC/s pulldown), so it can hold a zone below a hot ambient. Light is
memoryless: shading of ambient light plus the lamp, no thermal-mass analog.
pH drifts on a slow scripted rate and has no actuator; it only ever triggers
notifications downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from agribot.devices import require_finite


@dataclass(frozen=True)
class ZoneState:
    temp_c: float
    humidity_pct: float
    light_lux: float
    moisture: float
    ph: float

    def clamped(self) -> "ZoneState":
        return ZoneState(
            temp_c=self.temp_c,
            humidity_pct=min(100.0, max(0.0, self.humidity_pct)),
            light_lux=max(0.0, self.light_lux),
            moisture=min(1.0, max(0.0, self.moisture)),
            ph=min(14.0, max(0.0, self.ph)),
        )


@dataclass(frozen=True)
class ZoneActuators:
    heater: bool = False
    fan: bool = False
    pump: bool = False
    lamp: bool = False


@dataclass(frozen=True)
class AmbientProfile:
    temp_c: float = 22.0
    humidity_pct: float = 50.0
    light_peak_lux: float = 50000.0
    day_length_s: float = 43200.0
    period_s: float = 86400.0

    def __post_init__(self):
        if self.light_peak_lux < 0:
            raise ValueError("light_peak_lux must be >= 0")
        if not 0 < self.day_length_s <= self.period_s:
            raise ValueError("need 0 < day_length_s <= period_s")


@dataclass(frozen=True)
class ModelParams:
    k_amb: float = 5e-4       # 1/s, relaxation toward ambient
    k_nbr: float = 1e-4       # 1/s, inter-zone coupling (per neighbor)
    heat_rate: float = 0.01   # degC/s while the heater is on
    fan_cool_gain: float = 1.0    # dimensionless boost of ambient coupling
    fan_cool_rate: float = 0.02   # degC/s evaporative pulldown while fan on
    irr_rate: float = 5e-4    # moisture fraction/s while the pump is on
    dry_rate: float = 1e-5    # 1/s baseline soil drying
    dry_temp_gain: float = 0.05   # 1/degC extra drying above 20 C
    evap_h_rate: float = 0.002    # %RH/s per unit soil moisture
    vent_rate: float = 0.002  # 1/s humidity venting while fan on
    lamp_lux: float = 10000.0
    shade_factor: float = 0.7
    ph_drift: float = 0.0     # pH/s scripted drift

    def __post_init__(self):
        for name in ("k_amb", "k_nbr", "heat_rate", "fan_cool_gain", "fan_cool_rate",
                     "irr_rate", "dry_rate", "dry_temp_gain", "evap_h_rate",
                     "vent_rate", "lamp_lux"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.shade_factor <= 1.0:
            raise ValueError("shade_factor must be in (0, 1]")

    def max_stable_dt(self) -> float:
        rate = self.k_amb + 4.0 * self.k_nbr
        return math.inf if rate == 0.0 else 1.0 / rate


@dataclass
class GreenhouseModel:
    rows: int
    cols: int
    grid: list[list[ZoneState]]
    params: ModelParams = field(default_factory=ModelParams)
    ambient: AmbientProfile = field(default_factory=AmbientProfile)

    @classmethod
    def uniform(cls, rows: int, cols: int, zone: ZoneState,
                params: ModelParams | None = None,
                ambient: AmbientProfile | None = None) -> "GreenhouseModel":
        if rows < 1 or cols < 1:
            raise ValueError("grid must be at least 1x1")
        grid = [[zone for _ in range(cols)] for _ in range(rows)]
        return cls(rows=rows, cols=cols, grid=grid,
                   params=params or ModelParams(),
                   ambient=ambient or AmbientProfile())

    def neighbors(self, r: int, c: int) -> list[ZoneState]:
        out = []
        if r > 0:
            out.append(self.grid[r - 1][c])
        if r < self.rows - 1:
            out.append(self.grid[r + 1][c])
        if c > 0:
            out.append(self.grid[r][c - 1])
        if c < self.cols - 1:
            out.append(self.grid[r][c + 1])
        return out


def ambient_light(t: float, profile: AmbientProfile) -> float:
    """Diurnal illuminance: a half-sine day followed by darkness.

    Continuous within the day window and zero outside it.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    tau = math.fmod(t, profile.period_s)
    if tau >= profile.day_length_s:
        return 0.0
    return profile.light_peak_lux * max(0.0, math.sin(math.pi * tau / profile.day_length_s))


def step_zone(z: ZoneState, neighbors: list[ZoneState], act: ZoneActuators,
              ambient_now: tuple[float, float, float], p: ModelParams,
              dt: float) -> ZoneState:
    """One Euler step of a single zone; clamps the result into range.

    ``ambient_now`` is (temp_c, humidity_pct, lux) outside the greenhouse at
    the start of the step. All neighbor reads are from the pre-step grid.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_amb, h_amb, lux_amb = ambient_now
    require_finite(temp_c=z.temp_c, humidity_pct=z.humidity_pct,
                   light_lux=z.light_lux, moisture=z.moisture, ph=z.ph,
                   ambient_temp=t_amb, ambient_humidity=h_amb, ambient_lux=lux_amb)
    for i, n in enumerate(neighbors):
        require_finite(**{f"neighbor{i}_temp": n.temp_c, f"neighbor{i}_humidity": n.humidity_pct})

    fan = 1.0 if act.fan else 0.0
    heater = 1.0 if act.heater else 0.0
    pump = 1.0 if act.pump else 0.0
    lamp = 1.0 if act.lamp else 0.0

    nbr_t = sum(n.temp_c - z.temp_c for n in neighbors)
    nbr_h = sum(n.humidity_pct - z.humidity_pct for n in neighbors)

    temp = z.temp_c + dt * (
        p.k_amb * (t_amb - z.temp_c) * (1.0 + fan * p.fan_cool_gain)
        + heater * p.heat_rate
        - fan * p.fan_cool_rate
        + p.k_nbr * nbr_t
    )
    hum = z.humidity_pct + dt * (
        p.k_amb * (h_amb - z.humidity_pct)
        + p.evap_h_rate * z.moisture
        - p.vent_rate * fan * (z.humidity_pct - h_amb)
        + p.k_nbr * nbr_h
    )
    moist = z.moisture + dt * (
        pump * p.irr_rate
        - p.dry_rate * (1.0 + p.dry_temp_gain * max(z.temp_c - 20.0, 0.0)) * z.moisture
    )
    light = p.shade_factor * lux_amb + lamp * p.lamp_lux
    ph = z.ph + dt * p.ph_drift

    return ZoneState(temp_c=temp, humidity_pct=hum, light_lux=light,
                     moisture=moist, ph=ph).clamped()


def step_greenhouse(m: GreenhouseModel, acts: list[list[ZoneActuators]],
                    t: float, dt: float) -> GreenhouseModel:
    """Step every zone simultaneously (all reads from the pre-step grid)."""
    amb = (m.ambient.temp_c, m.ambient.humidity_pct, ambient_light(t, m.ambient))
    new_grid = []
    for r in range(m.rows):
        row = []
        for c in range(m.cols):
            try:
                row.append(step_zone(m.grid[r][c], m.neighbors(r, c), acts[r][c], amb, m.params, dt))
            except ValueError as e:
                raise ValueError(f"zone ({r},{c}): {e}") from e
        new_grid.append(row)
    return GreenhouseModel(rows=m.rows, cols=m.cols, grid=new_grid,
                           params=m.params, ambient=m.ambient)
